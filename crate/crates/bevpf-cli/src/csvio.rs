//! Trajectory and diagnostics CSV formats.
//!
//! Trajectories use the header `t,x,y,theta` with shortest-roundtrip f64
//! formatting, UTF-8 and LF line endings, so identical runs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use bevpf_core::se2::Pose2;

use crate::error::CmdError;

pub fn format_trajectory(rows: &[(f64, Pose2)]) -> String {
    let mut out = String::with_capacity(rows.len() * 48 + 16);
    out.push_str("t,x,y,theta\n");
    for (t, p) in rows {
        let _ = writeln!(out, "{},{},{},{}", t, p.x, p.y, p.theta);
    }
    out
}

pub fn write_trajectory(path: &Path, rows: &[(f64, Pose2)]) -> Result<(), CmdError> {
    std::fs::write(path, format_trajectory(rows))?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<(f64, Pose2)>, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "t,x,y,theta" => {}
        Some((_, header)) => {
            return Err(CmdError::Data(format!(
                "{}: expected header 't,x,y,theta', found '{header}'",
                path.display()
            )))
        }
        None => return Err(CmdError::Data(format!("{}: empty file", path.display()))),
    }
    let mut rows = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CmdError::Data(format!(
                "{}:{}: expected 4 fields, found {}",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 4];
        for (i, (field, name)) in fields.iter().zip(["t", "x", "y", "theta"]).enumerate() {
            vals[i] = field.trim().parse().map_err(|e| {
                CmdError::Data(format!(
                    "{}:{}: field '{name}' = '{field}': {e}",
                    path.display(),
                    ln + 1
                ))
            })?;
        }
        rows.push((vals[0], Pose2::new(vals[1], vals[2], vals[3])));
    }
    if rows.is_empty() {
        return Err(CmdError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Per-step filter health record.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub ess: f64,
    pub resampled: bool,
    pub score_mean: f64,
    pub score_min: f64,
    pub score_max: f64,
}

pub fn format_diagnostics(rows: &[DiagnosticsRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64 + 48);
    out.push_str("t,ess,resampled,score_mean,score_min,score_max\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t, r.ess, r.resampled as u8, r.score_mean, r.score_min, r.score_max
        );
    }
    out
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticsRow]) -> Result<(), CmdError> {
    std::fs::write(path, format_diagnostics(rows))?;
    Ok(())
}

pub fn write_cdf(path: &Path, cdf: &[(f64, f64)]) -> Result<(), CmdError> {
    let mut out = String::with_capacity(cdf.len() * 24 + 24);
    out.push_str("threshold,fraction\n");
    for (t, f) in cdf {
        let _ = writeln!(out, "{},{}", t, f);
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            (0.0, Pose2::new(500_000.123456789, 4_500_000.987654321, -3.0000001)),
            (0.25, Pose2::new(1.0 / 3.0, 2.0 / 7.0, 0.1)),
        ];
        write_trajectory(&path, &rows).unwrap();
        let back = read_trajectory(&path).unwrap();
        for ((t0, p0), (t1, p1)) in rows.iter().zip(&back) {
            assert_eq!(t0.to_bits(), t1.to_bits());
            assert_eq!(p0.x.to_bits(), p1.x.to_bits());
            assert_eq!(p0.y.to_bits(), p1.y.to_bits());
            assert_eq!(p0.theta.to_bits(), p1.theta.to_bits());
        }
    }

    #[test]
    fn parse_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x,y,theta\n0.0,oops,2.0,3.0\n").unwrap();
        let err = read_trajectory(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'x'") && msg.contains(":2"), "{msg}");
    }
}
