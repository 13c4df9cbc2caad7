//! The four subcommands: data synthesis, reconstruction, verification and
//! error tables. Every command echoes its effective configuration into a
//! manifest so a run is reproducible from its artifacts; wall-clock timings
//! go to stdout only, keeping output files byte-stable across reruns.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use invsource::csv::{fmt_float, write_history, write_scalar_field, write_trace};
use invsource::diagnostics::{adjoint_energy, duality_gap, forward_energy};
use invsource::grid::{discrete_l2_norm, ScalarField, TimeAxis};
use invsource::objective::{assemble_mismatch, build_weights, gradient, observe, tikhonov};
use invsource::optimizer::{gamma_at, run_cga, step_size, RegularizationSchedule};
use invsource::pde::{
    build_cn_operator_with, solve_adjoint, solve_forward, solve_sensitivity, LinearSolveParams,
};
use invsource::synth::{add_noise, make_data, preset, preset_with_time, smooth_data, DataMode, NoiseSpec};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::problem::{build_problem, reconstruction_data, scalar_suffix, synthesize_data, theta_metric};

#[derive(Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: ToolInfo,
    config: &'a RunConfig,
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_manifest(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    let manifest = Manifest {
        tool: ToolInfo {
            name: "invsource",
            version: env!("CARGO_PKG_VERSION"),
        },
        config: cfg,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| CliError::Other(format!("manifest serialization failed: {e}")))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<fs::File>) -> CliResult<()>) -> CliResult<()> {
    let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------------ synth

pub fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let start = Instant::now();
    let built = build_problem(cfg)?;
    let data = synthesize_data(&built)?;
    let dir = out_dir(cfg)?;
    write_file(&dir, "clean_trace.csv", |w| Ok(write_trace(w, &data.clean)?))?;
    write_file(&dir, "noisy_trace.csv", |w| Ok(write_trace(w, &data.noisy)?))?;
    write_file(&dir, "smoothed_trace.csv", |w| Ok(write_trace(w, &data.smoothed)?))?;
    write_manifest(&dir, cfg)?;
    println!(
        "synth: wrote clean/noisy/smoothed traces to {} in {:.2}s",
        dir.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

// ------------------------------------------------------------ reconstruct

#[derive(Serialize)]
struct Summary {
    termination: String,
    iterations: usize,
    final_j: f64,
    final_gnorm: f64,
    final_theta: Option<f64>,
}

pub fn cmd_reconstruct(cfg: &RunConfig) -> CliResult<()> {
    let start = Instant::now();
    let built = build_problem(cfg)?;
    let data = reconstruction_data(cfg, &built)?;
    let res = run_cga(
        &built.spec,
        &data,
        &built.weights,
        &built.sched,
        &built.stop,
        &built.exec,
    )?;
    let theta = theta_metric(&built, &res.f_final);
    let dir = out_dir(cfg)?;
    write_file(&dir, "f_final.csv", |w| Ok(write_scalar_field(w, &res.f_final)?))?;
    write_file(&dir, "history.csv", |w| Ok(write_history(w, &res.history)?))?;
    let last = res.history.last();
    let summary = Summary {
        termination: res.termination.to_string(),
        iterations: res.history.len(),
        final_j: last.map_or(f64::NAN, |r| r.j),
        final_gnorm: last.map_or(f64::NAN, |r| r.grad_norm),
        final_theta: theta,
    };
    let text = toml::to_string_pretty(&summary)
        .map_err(|e| CliError::Other(format!("summary serialization failed: {e}")))?;
    fs::write(dir.join("summary.toml"), text)?;
    write_manifest(&dir, cfg)?;
    match theta {
        Some(t) => println!(
            "reconstruct: {} iterations, termination {}, theta {:.4} ({:.2}s)",
            res.history.len(),
            res.termination,
            t,
            start.elapsed().as_secs_f64()
        ),
        None => println!(
            "reconstruct: {} iterations, termination {} ({:.2}s)",
            res.history.len(),
            res.termination,
            start.elapsed().as_secs_f64()
        ),
    }
    Ok(())
}

// ----------------------------------------------------------------- verify

#[derive(Serialize)]
struct CheckEntry {
    name: String,
    pass: bool,
    measured: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct VerifyReport {
    passed: bool,
    checks: Vec<CheckEntry>,
}

fn check(name: &str, pass: bool, measured: BTreeMap<String, f64>) -> CheckEntry {
    println!("verify: {name}: {}", if pass { "PASS" } else { "FAIL" });
    CheckEntry {
        name: name.to_string(),
        pass,
        measured,
    }
}

fn verify_forward_mms() -> CliResult<CheckEntry> {
    let pi = std::f64::consts::PI;
    let mut errs = Vec::new();
    for l in 3..=5u32 {
        let (spec, f_true, _) = preset::<f64>(2, l)?;
        let op = build_cn_operator_with(spec.grid, &spec.a, spec.time.dt(), LinearSolveParams::default())?;
        let u = solve_forward(&op, spec.time, &f_true, &spec.g_mod)?;
        let mut max_err = 0.0f64;
        for n in 0..spec.time.n_levels() {
            let t = spec.time.time_at(n);
            let exact = ScalarField::from_fn(spec.grid, |x: [f64; 3]| {
                t * (pi * x[0]).cos() * (pi * x[1]).cos()
            });
            max_err = max_err.max(discrete_l2_norm(&u.level(n).sub(&exact)));
        }
        errs.push(max_err);
    }
    let mut measured = BTreeMap::new();
    let mut pass = true;
    for (i, w) in errs.windows(2).enumerate() {
        let order = (w[0] / w[1]).log2();
        measured.insert(format!("order_l{}_l{}", i + 3, i + 4), order);
        pass &= order >= 1.8;
    }
    for (i, e) in errs.iter().enumerate() {
        measured.insert(format!("err_l{}", i + 3), *e);
    }
    Ok(check("forward solver convergence order >= 1.8", pass, measured))
}

fn verify_gradient() -> CliResult<CheckEntry> {
    let pi = std::f64::consts::PI;
    let time = TimeAxis::new(1.0f64, 64)?;
    let (spec, f_true, _) = preset_with_time::<f64>(1, 4, time)?;
    let op = build_cn_operator_with(spec.grid, &spec.a, time.dt(), LinearSolveParams::default())?;
    let data = observe(&solve_forward(&op, time, &f_true, &spec.g_mod)?);
    let w = build_weights(spec.grid, 1, 0.1f64)?;
    let f = spec.f0.clone();
    let gamma = 0.1;
    let u = solve_forward(&op, time, &f, &spec.g_mod)?;
    let mis = assemble_mismatch(&u, &data, &w)?;
    let lam = solve_adjoint(&op, time, &mis)?;
    let g = gradient(&lam, &spec.g_mod, &f, &spec.f0, gamma)?;

    let mut s = 31u64;
    let mut rng = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let coef: Vec<f64> = (0..9).map(|_| rng()).collect();
        let d = ScalarField::from_fn(spec.grid, |x: [f64; 3]| {
            let mut v = 0.0;
            for kx in 0..3 {
                for ky in 0..3 {
                    v += coef[3 * kx + ky] * (pi * kx as f64 * x[0]).cos() * (pi * ky as f64 * x[1]).cos();
                }
            }
            v
        });
        let mut fp = f.clone();
        fp.scaled_add(eps, &d);
        let mut fm = f.clone();
        fm.scaled_add(-eps, &d);
        let jp = tikhonov(&solve_forward(&op, time, &fp, &spec.g_mod)?, &data, &fp, &spec.f0, gamma, &w)?;
        let jm = tikhonov(&solve_forward(&op, time, &fm, &spec.g_mod)?, &data, &fm, &spec.f0, gamma, &w)?;
        let fd = (jp - jm) / (2.0 * eps);
        worst = worst.max(((fd - g.inner(&d)) / fd).abs());
    }
    let mut measured = BTreeMap::new();
    measured.insert("worst_rel_error".into(), worst);
    measured.insert("threshold".into(), 1e-3);
    Ok(check("gradient matches central differences (rel < 1e-3)", worst < 1e-3, measured))
}

fn verify_duality() -> CliResult<CheckEntry> {
    let pi = std::f64::consts::PI;
    let mut residuals = Vec::new();
    for l in 3..=5u32 {
        let (spec, f_true, _) = preset::<f64>(1, l)?;
        let op = build_cn_operator_with(spec.grid, &spec.a, spec.time.dt(), LinearSolveParams::default())?;
        let data = make_data(&spec, &f_true, DataMode::Computed)?;
        let w = build_weights(spec.grid, 1, 0.1f64)?;
        let d = ScalarField::from_fn(spec.grid, |x: [f64; 3]| {
            (pi * x[0]).cos() * (pi * x[1]).cos() + x[0] * x[1]
        });
        let gap = duality_gap(&op, &spec, &w, &data, &spec.f0, &d)?;
        residuals.push(gap.relative_residual());
    }
    let f1 = residuals[0] / residuals[1];
    let f2 = residuals[1] / residuals[2];
    let pass = f1 >= 3.0 && f2 >= 3.0;
    let mut measured = BTreeMap::new();
    for (i, r) in residuals.iter().enumerate() {
        measured.insert(format!("residual_l{}", i + 3), *r);
    }
    measured.insert("factor_l3_l4".into(), f1);
    measured.insert("factor_l4_l5".into(), f2);
    Ok(check("duality residual shrinks >= 3x per refinement", pass, measured))
}

fn verify_line_search() -> CliResult<CheckEntry> {
    let (spec, f_true, _) = preset::<f64>(1, 4)?;
    let clean = make_data(&spec, &f_true, DataMode::Computed)?;
    let noise = NoiseSpec {
        delta_percent: 1.0,
        seed: 42,
        smooth_halfwidth: 2,
    };
    let data = smooth_data(&add_noise(&clean, &noise)?, 2);
    let w = build_weights(spec.grid, 1, 0.1f64)?;
    // tighter inner solves so the vertex comparison is solver-noise free
    let op = build_cn_operator_with(spec.grid, &spec.a, spec.time.dt(), LinearSolveParams::new(1e-12, 20_000)?)?;
    let sched = RegularizationSchedule::new(0.1f64, 0.5, false)?;
    let mut f = spec.f0.clone();
    let mut g_prev_sq: Option<f64> = None;
    let mut d_prev: Option<ScalarField<f64>> = None;
    let mut worst = 0.0f64;
    for m in 0..5 {
        let u = solve_forward(&op, spec.time, &f, &spec.g_mod)?;
        let mis = assemble_mismatch(&u, &data, &w)?;
        let lam = solve_adjoint(&op, spec.time, &mis)?;
        let gamma = gamma_at(&sched, m);
        let g = gradient(&lam, &spec.g_mod, &f, &spec.f0, gamma)?;
        let g_sq = g.inner(&g);
        let d = match (&d_prev, g_prev_sq) {
            (Some(dp), Some(prev)) => {
                let mut d = g.clone();
                d.scaled_add(g_sq / prev, dp);
                d
            }
            _ => g.clone(),
        };
        let du = solve_sensitivity(&op, spec.time, &d, &spec.g_mod)?;
        let alpha = step_size(&u, &data, &du, &f, &spec.f0, &d, gamma, &w)?;
        let j_at = |s: f64| -> CliResult<f64> {
            let mut fs = f.clone();
            fs.scaled_add(-s, &d);
            let us = solve_forward(&op, spec.time, &fs, &spec.g_mod)?;
            Ok(tikhonov(&us, &data, &fs, &spec.f0, gamma, &w)?)
        };
        let sv = [0.0, alpha / 2.0, alpha, 1.5 * alpha];
        let mut jv = Vec::new();
        for &v in &sv {
            jv.push(j_at(v)?);
        }
        let denom = (sv[0] - sv[1]) * (sv[0] - sv[2]) * (sv[1] - sv[2]);
        let a2 = (sv[2] * (jv[1] - jv[0]) + sv[1] * (jv[0] - jv[2]) + sv[0] * (jv[2] - jv[1])) / denom;
        let b1 = (sv[2] * sv[2] * (jv[0] - jv[1]) + sv[1] * sv[1] * (jv[2] - jv[0]) + sv[0] * sv[0] * (jv[1] - jv[2])) / denom;
        let vertex = -b1 / (2.0 * a2);
        worst = worst.max(((vertex - alpha) / alpha).abs());
        f.scaled_add(-alpha, &d);
        g_prev_sq = Some(g_sq);
        d_prev = Some(d);
    }
    let mut measured = BTreeMap::new();
    measured.insert("worst_vertex_deviation".into(), worst);
    measured.insert("threshold".into(), 1e-8);
    Ok(check("exact line search (vertex = alpha to 1e-8)", worst < 1e-8, measured))
}

fn verify_energy() -> CliResult<CheckEntry> {
    let mut measured = BTreeMap::new();
    let mut pass = true;
    for id in 1..=6u32 {
        let (spec, f_true, _) = preset::<f64>(id, 4)?;
        let op = build_cn_operator_with(spec.grid, &spec.a, spec.time.dt(), LinearSolveParams::default())?;
        let u = solve_forward(&op, spec.time, &f_true, &spec.g_mod)?;
        let fwd = forward_energy(&spec, &f_true, &u, 1.0);
        let clean = observe(&u);
        let noise = NoiseSpec {
            delta_percent: 1.0,
            seed: 42,
            smooth_halfwidth: 2,
        };
        let data = smooth_data(&add_noise(&clean, &noise)?, 2);
        let w = build_weights(spec.grid, 1, 0.1f64)?;
        let u0 = solve_forward(&op, spec.time, &spec.f0, &spec.g_mod)?;
        let mis = assemble_mismatch(&u0, &data, &w)?;
        let lam = solve_adjoint(&op, spec.time, &mis)?;
        let adj = adjoint_energy(&spec, &lam, &mis, 1.0);
        pass &= fwd.holds() && adj.holds();
        measured.insert(format!("e{id}_forward_lhs"), fwd.lhs);
        measured.insert(format!("e{id}_forward_rhs"), fwd.rhs);
        measured.insert(format!("e{id}_adjoint_lhs"), adj.lhs);
        measured.insert(format!("e{id}_adjoint_rhs"), adj.rhs);
    }
    Ok(check("discrete energy inequalities (all presets, l=4)", pass, measured))
}

pub fn cmd_verify(cfg: &RunConfig) -> CliResult<()> {
    let start = Instant::now();
    let checks = vec![
        verify_forward_mms()?,
        verify_gradient()?,
        verify_duality()?,
        verify_line_search()?,
        verify_energy()?,
    ];
    let passed = checks.iter().all(|c| c.pass);
    let report = VerifyReport { passed, checks };
    let dir = out_dir(cfg)?;
    let text = toml::to_string_pretty(&report)
        .map_err(|e| CliError::Other(format!("report serialization failed: {e}")))?;
    fs::write(dir.join("verify_report.toml"), text)?;
    write_manifest(&dir, cfg)?;
    println!(
        "verify: {} in {:.2}s, report at {}",
        if passed { "all checks passed" } else { "FAILURES (see report)" },
        start.elapsed().as_secs_f64(),
        dir.join("verify_report.toml").display()
    );
    Ok(())
}

// ------------------------------------------------------------------ table

pub fn cmd_table(cfg: &RunConfig) -> CliResult<()> {
    let start = Instant::now();
    let t = &cfg.table;
    for &exp in &t.experiments {
        if !(1..=6).contains(&exp) {
            return Err(CliError::Config(format!("table.experiments: unknown experiment {exp}")));
        }
        let lmax = if exp == 6 { 4 } else { 6 };
        if t.level_max > lmax {
            return Err(CliError::Config(format!(
                "table.level_max: experiment {exp} supports levels 2..={lmax}, got {}",
                t.level_max
            )));
        }
        if t.level_min < 2 {
            return Err(CliError::Config("table.level_min: levels start at 2".into()));
        }
    }
    for &d in &t.deltas {
        if !(0.0..100.0).contains(&d) {
            return Err(CliError::Config(format!("table.deltas: noise level {d} out of [0, 100)")));
        }
    }

    let levels: Vec<u32> = (t.level_min..=t.level_max).collect();
    let mut jobs = Vec::new();
    for &l in &levels {
        for &exp in &t.experiments {
            for &delta in &t.deltas {
                jobs.push((l, exp, delta));
            }
        }
    }

    let run_one = |&(l, exp, delta): &(u32, u32, f64)| -> CliResult<f64> {
        let mut job_cfg = cfg.clone();
        job_cfg.problem.experiment = exp;
        job_cfg.problem.level = l;
        job_cfg.noise.delta_percent = delta;
        let built = build_problem(&job_cfg)?;
        let data = synthesize_data(&built)?.smoothed;
        let res = run_cga(&built.spec, &data, &built.weights, &built.sched, &built.stop, &built.exec)?;
        theta_metric(&built, &res.f_final)
            .ok_or_else(|| CliError::Other("table runs need an exact source for the error metric".into()))
    };

    let thetas: Vec<f64> = if t.workers == 1 {
        jobs.iter().map(run_one).collect::<CliResult<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(t.workers)
            .build()
            .map_err(|e| CliError::Other(format!("worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run_one).collect::<CliResult<_>>())?
    };

    let dir = out_dir(cfg)?;
    write_file(&dir, "table.csv", |w| {
        write!(w, "l,h")?;
        for &exp in &t.experiments {
            for &delta in &t.deltas {
                write!(w, ",theta_e{}_d{}", exp, scalar_suffix(delta))?;
            }
        }
        writeln!(w)?;
        let per_level = t.experiments.len() * t.deltas.len();
        for (i, &l) in levels.iter().enumerate() {
            write!(w, "{},{}", l, fmt_float(1.0 / (1u64 << l) as f64))?;
            for k in 0..per_level {
                write!(w, ",{}", fmt_float(thetas[i * per_level + k]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    write_manifest(&dir, cfg)?;
    println!(
        "table: {} runs over levels {}..={} in {:.2}s, {}",
        jobs.len(),
        t.level_min,
        t.level_max,
        start.elapsed().as_secs_f64(),
        dir.join("table.csv").display()
    );
    Ok(())
}
