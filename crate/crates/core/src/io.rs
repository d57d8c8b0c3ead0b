//! Tidy CSV formats for snapshots, couplings and point clouds.
//!
//! - transport snapshots: `iter,particle,x0..x{d-1},y0..y{d-1}`
//! - barycenter snapshots: `iter,particle,block,x0..x{d-1}`
//! - point clouds: `particle,x0..x{d-1}` (optionally with a leading `t`)
//!
//! Floats are written in Rust's shortest round-trip form, so identical runs
//! produce byte-identical files.

use std::io::{BufRead, Write};

use crate::barycenter::BarycenterSnapshot;
use crate::diagnostics::Coupling;
use crate::dynamics::Snapshot;
use crate::error::{OtError, Result};
use crate::points::Points;

fn coord_header(prefix: &str, d: usize) -> String {
    (0..d).map(|k| format!(",{prefix}{k}")).collect()
}

fn write_row(w: &mut impl Write, lead: &str, coords: &[&[f64]]) -> std::io::Result<()> {
    w.write_all(lead.as_bytes())?;
    for block in coords {
        for v in *block {
            write!(w, ",{v:?}")?;
        }
    }
    writeln!(w)
}

pub fn write_transport_snapshots(w: &mut impl Write, snapshots: &[Snapshot]) -> Result<()> {
    let d = snapshots.first().map_or(1, |s| s.x.dim());
    writeln!(w, "iter,particle{}{}", coord_header("x", d), coord_header("y", d))?;
    for s in snapshots {
        for (i, (x, y)) in s.x.rows().zip(s.y.rows()).enumerate() {
            write_row(w, &format!("{},{i}", s.iter), &[x, y])?;
        }
    }
    Ok(())
}

/// Writes a single-iteration snapshot file holding the pairs of `c`.
pub fn write_coupling(w: &mut impl Write, iter: usize, c: &Coupling) -> Result<()> {
    write_transport_snapshots(
        w,
        &[Snapshot {
            iter,
            x: c.x.clone(),
            y: c.y.clone(),
        }],
    )
}

pub fn write_barycenter_snapshots(w: &mut impl Write, snapshots: &[BarycenterSnapshot]) -> Result<()> {
    let d = snapshots.first().map_or(1, |s| s.blocks[0].dim());
    writeln!(w, "iter,particle,block{}", coord_header("x", d))?;
    for s in snapshots {
        for i in 0..s.blocks[0].len() {
            for (j, b) in s.blocks.iter().enumerate() {
                write_row(w, &format!("{},{i},{j}", s.iter), &[b.row(i)])?;
            }
        }
    }
    Ok(())
}

/// `particle,x0..` or, with `t = Some(_)`, `t,particle,x0..`.
pub fn write_points(w: &mut impl Write, pts: &Points, t: Option<f64>) -> Result<()> {
    let d = pts.dim();
    match t {
        Some(_) => writeln!(w, "t,particle{}", coord_header("x", d))?,
        None => writeln!(w, "particle{}", coord_header("x", d))?,
    }
    for (i, r) in pts.rows().enumerate() {
        let lead = match t {
            Some(t) => format!("{t:?},{i}"),
            None => i.to_string(),
        };
        write_row(w, &lead, &[r])?;
    }
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> OtError {
    OtError::Parse {
        location: format!("line {line}"),
        message: message.into(),
    }
}

/// Reads a transport snapshot CSV and returns the coupling at its last
/// iteration. Files without an `iter` column are read whole.
pub fn read_coupling(r: impl BufRead) -> Result<Coupling> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let iter_col = cols.iter().position(|c| *c == "iter");
    let x_cols: Vec<usize> = (0..)
        .map_while(|k| cols.iter().position(|c| *c == format!("x{k}")))
        .collect();
    let y_cols: Vec<usize> = (0..)
        .map_while(|k| cols.iter().position(|c| *c == format!("y{k}")))
        .collect();
    if x_cols.is_empty() || x_cols.len() != y_cols.len() {
        return Err(parse_err(
            1,
            format!("expected matching x0.. and y0.. columns, found header {header:?}"),
        ));
    }
    let mut rows: Vec<(u64, Vec<f64>, Vec<f64>)> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let num = |c: usize| -> Result<f64> {
            fields[c]
                .parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("column {}: {e}", cols[c])))
        };
        let iter = match iter_col {
            Some(c) => fields[c]
                .parse::<u64>()
                .map_err(|e| parse_err(lineno, format!("iter: {e}")))?,
            None => 0,
        };
        let x = x_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let y = y_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        rows.push((iter, x, y));
    }
    let last = rows
        .iter()
        .map(|r| r.0)
        .max()
        .ok_or_else(|| parse_err(2, "no data rows"))?;
    let d = x_cols.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (_, x, y) in rows.into_iter().filter(|r| r.0 == last) {
        xs.extend(x);
        ys.extend(y);
    }
    Coupling::new(Points::new(d, xs)?, Points::new(d, ys)?)
}

/// Reads the `x0..` columns of a point-cloud CSV.
pub fn read_points(r: impl BufRead) -> Result<Points> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let x_cols: Vec<usize> = (0..)
        .map_while(|k| cols.iter().position(|c| *c == format!("x{k}")))
        .collect();
    if x_cols.is_empty() {
        return Err(parse_err(1, format!("no x0.. columns in header {header:?}")));
    }
    let mut data = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(idx + 2, "wrong number of fields"));
        }
        for &c in &x_cols {
            data.push(
                fields[c]
                    .parse::<f64>()
                    .map_err(|e| parse_err(idx + 2, format!("{}: {e}", cols[c])))?,
            );
        }
    }
    Points::new(x_cols.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_header_and_last_iteration() {
        let s0 = Snapshot {
            iter: 0,
            x: Points::from_rows(&[[0.0, 1.0], [2.0, 3.0]]).unwrap(),
            y: Points::from_rows(&[[4.0, 5.0], [6.0, 7.0]]).unwrap(),
        };
        let mut s1 = s0.clone();
        s1.iter = 10;
        s1.x.as_mut_slice()[0] = 0.1;
        s1.y.as_mut_slice()[3] = 1e-300;
        let mut buf = Vec::new();
        write_transport_snapshots(&mut buf, &[s0, s1.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iter,particle,x0,x1,y0,y1\n0,0,0.0,1.0,4.0,5.0\n"));
        let c = read_coupling(buf.as_slice()).unwrap();
        assert_eq!(c.x, s1.x);
        assert_eq!(c.y, s1.y);
    }

    #[test]
    fn barycenter_layout() {
        let s = BarycenterSnapshot {
            iter: 3,
            blocks: vec![
                Points::from_scalars(&[0.5, 1.5]),
                Points::from_scalars(&[-1.0, -2.0]),
                Points::from_scalars(&[1.0, 2.0]),
            ],
        };
        let mut buf = Vec::new();
        write_barycenter_snapshots(&mut buf, &[s]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,particle,block,x0");
        assert_eq!(lines[1], "3,0,0,0.5");
        assert_eq!(lines[3], "3,0,2,1.0");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn points_round_trip_and_errors() {
        let p = Points::from_rows(&[[0.25, -3.0], [1e-7, 8.5]]).unwrap();
        let mut buf = Vec::new();
        write_points(&mut buf, &p, Some(0.5)).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("t,particle,x0,x1\n0.5,0,"));
        assert_eq!(read_points(buf.as_slice()).unwrap(), p);
        assert!(read_coupling("iter,particle,x0\n0,0,1.0\n".as_bytes()).is_err());
        assert!(read_coupling("iter,particle,x0,y0\n0,0,abc,1\n".as_bytes()).is_err());
        assert!(read_coupling("iter,particle,x0,y0\n".as_bytes()).is_err());
    }
}
