//! CSV serialization for fields, boundary traces and convergence histories.
//!
//! Floats are written with 17 significant digits (`{:.16e}`) so every file
//! round-trips bitwise. Readers are strict: they validate the header, the
//! row count and the node coordinates against the expected grid.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, TimeAxis};
use crate::objective::BoundaryTrace;
use crate::optimizer::IterationRecord;
use crate::scalar::Scalar;

/// 17-significant-digit float formatting (bitwise round-trip for f64).
pub fn fmt_float<T: Scalar>(x: T) -> String {
    format!("{x:.16e}")
}

fn parse_float<T: Scalar>(s: &str, path: &str, line: usize) -> Result<T> {
    s.trim().parse::<T>().map_err(|e| Error::Csv {
        path: path.to_string(),
        line,
        msg: format!("bad float {s:?}: {e}"),
    })
}

pub fn write_scalar_field<T: Scalar>(w: &mut impl Write, f: &ScalarField<T>) -> Result<()> {
    let grid = f.grid();
    if grid.dim() == 2 {
        writeln!(w, "x,y,value")?;
    } else {
        writeln!(w, "x,y,z,value")?;
    }
    for idx in 0..grid.node_count() {
        let x = grid.node_coords::<T>(idx);
        for ax in 0..grid.dim() {
            write!(w, "{},", fmt_float(x[ax]))?;
        }
        writeln!(w, "{}", fmt_float(f.values()[idx]))?;
    }
    Ok(())
}

pub fn read_scalar_field<T: Scalar>(
    r: &mut impl BufRead,
    grid: Grid,
    path: &str,
) -> Result<ScalarField<T>> {
    let want_header = if grid.dim() == 2 { "x,y,value" } else { "x,y,z,value" };
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| csv_err(path, 1, "empty file"))??;
    if header.trim() != want_header {
        return Err(csv_err(path, 1, &format!("expected header {want_header:?}, got {header:?}")));
    }
    let mut values = Vec::with_capacity(grid.node_count());
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let lineno = lineno + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != grid.dim() + 1 {
            return Err(csv_err(path, lineno, &format!("expected {} columns", grid.dim() + 1)));
        }
        let idx = values.len();
        if idx >= grid.node_count() {
            return Err(csv_err(path, lineno, "more rows than grid nodes"));
        }
        let want = grid.node_coords::<T>(idx);
        for ax in 0..grid.dim() {
            let got: T = parse_float(cols[ax], path, lineno)?;
            if got != want[ax] {
                return Err(csv_err(
                    path,
                    lineno,
                    &format!("coordinate {got} does not match grid node {}", want[ax]),
                ));
            }
        }
        values.push(parse_float(cols[grid.dim()], path, lineno)?);
    }
    if values.len() != grid.node_count() {
        return Err(csv_err(
            path,
            0,
            &format!("{} rows for {} grid nodes", values.len(), grid.node_count()),
        ));
    }
    ScalarField::from_values(grid, values)
}

pub fn write_trace<T: Scalar>(w: &mut impl Write, tr: &BoundaryTrace<T>) -> Result<()> {
    let grid = tr.grid();
    if grid.dim() == 2 {
        writeln!(w, "t,x,value")?;
    } else {
        writeln!(w, "t,x,y,value")?;
    }
    let time = tr.time();
    for n in 0..time.n_levels() {
        let t = time.time_at(n);
        for k in 0..tr.n_nodes() {
            let x = grid.node_coords::<T>(grid.top_layer_node(k));
            write!(w, "{},", fmt_float(t))?;
            for ax in 0..grid.dim() - 1 {
                write!(w, "{},", fmt_float(x[ax]))?;
            }
            writeln!(w, "{}", fmt_float(tr.get(n, k)))?;
        }
    }
    Ok(())
}

pub fn read_trace<T: Scalar>(
    r: &mut impl BufRead,
    grid: Grid,
    time: TimeAxis<T>,
    path: &str,
) -> Result<BoundaryTrace<T>> {
    let want_header = if grid.dim() == 2 { "t,x,value" } else { "t,x,y,value" };
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| csv_err(path, 1, "empty file"))??;
    if header.trim() != want_header {
        return Err(csv_err(path, 1, &format!("expected header {want_header:?}, got {header:?}")));
    }
    let n_nodes = grid.top_layer_len();
    let total = n_nodes * time.n_levels();
    let mut values: Vec<T> = Vec::with_capacity(total);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let lineno = lineno + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != grid.dim() + 1 {
            return Err(csv_err(path, lineno, &format!("expected {} columns", grid.dim() + 1)));
        }
        let idx = values.len();
        if idx >= total {
            return Err(csv_err(path, lineno, "more rows than trace entries"));
        }
        let (level, k) = (idx / n_nodes, idx % n_nodes);
        let t_want = time.time_at(level);
        let t_got: T = parse_float(cols[0], path, lineno)?;
        if t_got != t_want {
            return Err(csv_err(path, lineno, &format!("time {t_got} does not match level {level}")));
        }
        let x_want = grid.node_coords::<T>(grid.top_layer_node(k));
        for ax in 0..grid.dim() - 1 {
            let got: T = parse_float(cols[1 + ax], path, lineno)?;
            if got != x_want[ax] {
                return Err(csv_err(path, lineno, &format!("coordinate {got} does not match node {k}")));
            }
        }
        values.push(parse_float(cols[grid.dim()], path, lineno)?);
    }
    if values.len() != total {
        return Err(csv_err(path, 0, &format!("{} rows for {} trace entries", values.len(), total)));
    }
    BoundaryTrace::from_values(grid, time, values)
}

/// Convergence history: one row per executed iteration, NaN for fields that
/// a terminal row does not have.
pub fn write_history<T: Scalar>(w: &mut impl Write, history: &[IterationRecord<T>]) -> Result<()> {
    writeln!(w, "m,J,gnorm,alpha,beta,gamma,e_m,theta_m")?;
    let opt = |v: Option<T>| fmt_float(v.unwrap_or_else(T::nan));
    for rec in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            rec.m,
            fmt_float(rec.j),
            fmt_float(rec.grad_norm),
            opt(rec.alpha),
            opt(rec.beta),
            fmt_float(rec.gamma),
            opt(rec.change),
            opt(rec.theta),
        )?;
    }
    Ok(())
}

fn csv_err(path: &str, line: usize, msg: &str) -> Error {
    Error::Csv {
        path: path.to_string(),
        line,
        msg: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;

    #[test]
    fn field_round_trips_bitwise() {
        let grid = make_grid(2, &[5, 3]).unwrap();
        let f = ScalarField::from_fn(grid, |x: [f64; 3]| (31.7 * x[0] + 11.1 * x[1]).sin() / 3.0);
        let mut buf = Vec::new();
        write_scalar_field(&mut buf, &f).unwrap();
        let back = read_scalar_field::<f64>(&mut buf.as_slice(), grid, "mem").unwrap();
        assert_eq!(f.values(), back.values());
    }

    #[test]
    fn field_reader_rejects_mismatches() {
        let grid = make_grid(2, &[4, 4]).unwrap();
        let f = ScalarField::constant(grid, 1.0f64);
        let mut buf = Vec::new();
        write_scalar_field(&mut buf, &f).unwrap();

        let other = make_grid(2, &[5, 5]).unwrap();
        assert!(read_scalar_field::<f64>(&mut buf.as_slice(), other, "mem").is_err());

        let text = String::from_utf8(buf).unwrap();
        let tampered = text.replace("x,y,value", "a,b,c");
        assert!(read_scalar_field::<f64>(&mut tampered.as_bytes(), grid, "mem").is_err());
    }

    #[test]
    fn three_dimensional_field_round_trips() {
        let grid = make_grid(3, &[2, 3, 2]).unwrap();
        let f = ScalarField::from_fn(grid, |x: [f64; 3]| x[0] - 2.0 * x[1] + 0.7 * x[2]);
        let mut buf = Vec::new();
        write_scalar_field(&mut buf, &f).unwrap();
        assert!(buf.starts_with(b"x,y,z,value"));
        let back = read_scalar_field::<f64>(&mut buf.as_slice(), grid, "mem").unwrap();
        assert_eq!(f.values(), back.values());
    }

    #[test]
    fn trace_round_trips_bitwise() {
        let grid = make_grid(3, &[3, 4, 2]).unwrap();
        let time = TimeAxis::new(1.0f64, 3).unwrap();
        let tr = BoundaryTrace::from_fn(grid, time, |x, t| x[0] * 7.3 + x[1] - t / 3.0);
        let mut buf = Vec::new();
        write_trace(&mut buf, &tr).unwrap();
        let back = read_trace::<f64>(&mut buf.as_slice(), grid, time, "mem").unwrap();
        assert_eq!(tr.values(), back.values());
    }

    #[test]
    fn history_header_and_nan_handling() {
        let hist = vec![IterationRecord {
            m: 0,
            j: 1.5f64,
            grad_norm: 0.25,
            alpha: None,
            beta: None,
            gamma: 0.1,
            change: Some(0.0),
            theta: None,
        }];
        let mut buf = Vec::new();
        write_history(&mut buf, &hist).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "m,J,gnorm,alpha,beta,gamma,e_m,theta_m");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,"));
        assert!(row.contains("NaN"));
    }

    proptest! {
        #[test]
        fn arbitrary_field_values_round_trip(seed in 0u64..5000) {
            let grid = make_grid(2, &[3, 3]).unwrap();
            let mut s = seed.wrapping_add(1);
            let values: Vec<f64> = (0..grid.node_count())
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    // spread over many magnitudes, keep finite
                    let u = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                    let e = ((s >> 3) % 600) as i32 - 300;
                    u * 2f64.powi(e)
                })
                .collect();
            let f = ScalarField::from_values(grid, values).unwrap();
            let mut buf = Vec::new();
            write_scalar_field(&mut buf, &f).unwrap();
            let back = read_scalar_field::<f64>(&mut buf.as_slice(), grid, "mem").unwrap();
            prop_assert_eq!(f.values(), back.values());
        }
    }
}
