//! Delimited text files for pulses and simulated profiles.
//!
//! Numbers are written with 17 significant digits so a read after a write
//! reproduces every `f64` exactly. Files are written to a sibling temporary
//! file first and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat3::Vec3;
use crate::metrics::transverse_magnitude;
use crate::model::{ControlWaveform, GradientWaveform, SpaceGrid};

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("output path", format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pulse file body. The gradient covers all `N` steps; controls beyond the
/// control interval are written as zeros.
pub fn format_pulse(u: &ControlWaveform, gradient: &GradientWaveform) -> String {
    let dt = u.dt();
    let mut out = String::new();
    let _ = writeln!(out, "# rf pulse: t[s] u_x u_y G_z[T/m]");
    let _ = writeln!(out, "# dt = {}", num(dt));
    let _ = writeln!(out, "# steps = {}", gradient.len());
    let _ = writeln!(out, "# control_steps = {}", u.len());
    let _ = writeln!(out, "# t is the end of each interval; u and G_z are constant on it");
    for m in 1..=gradient.len() {
        let v = u.at_step(m);
        let _ = writeln!(
            out,
            "{} {} {} {}",
            num(m as f64 * dt),
            num(v[0]),
            num(v[1]),
            num(gradient.at_step(m))
        );
    }
    out
}

pub fn write_pulse_file(path: &Path, u: &ControlWaveform, gradient: &GradientWaveform) -> Result<()> {
    if u.len() > gradient.len() {
        return Err(Error::invalid(
            "pulse",
            format!("{} control steps exceed {} gradient steps", u.len(), gradient.len()),
        ));
    }
    write_atomic(path, &format_pulse(u, gradient))
}

struct Table {
    header: Vec<(String, String)>,
    rows: Vec<(usize, Vec<f64>)>,
}

fn parse_table(path: &Path, text: &str, columns: usize) -> Result<Table> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((key, value)) = meta.split_once('=') {
                header.push((key.trim().to_string(), value.trim().to_string()));
            }
            continue;
        }
        let row = k + 1;
        let values = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Format {
                    path: path.to_path_buf(),
                    row,
                    message: format!("not a number: {s:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != columns {
            return Err(Error::Format {
                path: path.to_path_buf(),
                row,
                message: format!("expected {columns} columns, found {}", values.len()),
            });
        }
        rows.push((row, values));
    }
    Ok(Table { header, rows })
}

fn header_value<T: std::str::FromStr>(path: &Path, table: &Table, key: &str) -> Result<T> {
    table
        .header
        .iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            row: 0,
            message: format!("missing or malformed header entry '{key}'"),
        })
}

pub fn parse_pulse(path: &Path, text: &str) -> Result<(ControlWaveform, GradientWaveform)> {
    let table = parse_table(path, text, 4)?;
    let dt: f64 = header_value(path, &table, "dt")?;
    let steps: usize = header_value(path, &table, "steps")?;
    let control_steps: usize = header_value(path, &table, "control_steps")?;
    let format_err = |row, message: String| Error::Format {
        path: path.to_path_buf(),
        row,
        message,
    };
    if table.rows.len() != steps {
        let row = table.rows.last().map_or(0, |r| r.0);
        return Err(format_err(
            row,
            format!("header announces {steps} rows, found {}", table.rows.len()),
        ));
    }
    if control_steps == 0 || control_steps > steps {
        return Err(format_err(0, format!("control_steps = {control_steps} is out of range")));
    }
    let controls = table.rows[..control_steps].iter().map(|(_, v)| [v[1], v[2]]).collect();
    let gradient = table.rows.iter().map(|(_, v)| v[3]).collect();
    let u = ControlWaveform::with_dt(dt, controls)?;
    let grid = crate::model::TimeGrid::new(steps, control_steps, dt)?;
    let g = GradientWaveform::new(&grid, gradient, f64::INFINITY)?;
    Ok((u, g))
}

pub fn read_pulse_file(path: &Path) -> Result<(ControlWaveform, GradientWaveform)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pulse(path, &text)
}

pub fn format_profile(grid: &SpaceGrid, terminal: &[Vec3]) -> Result<String> {
    Error::check_len("profile", grid.points(), terminal.len())?;
    let mut out = String::new();
    let _ = writeln!(out, "# terminal magnetization: z[m] Mx My Mz Mxy");
    let _ = writeln!(out, "# points = {}", grid.points());
    let _ = writeln!(out, "# half_width = {}", num(grid.half_width()));
    for (i, m) in terminal.iter().enumerate() {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            num(grid.position(i)),
            num(m[0]),
            num(m[1]),
            num(m[2]),
            num(transverse_magnitude(*m))
        );
    }
    Ok(out)
}

pub fn write_profile_file(path: &Path, grid: &SpaceGrid, terminal: &[Vec3]) -> Result<()> {
    write_atomic(path, &format_profile(grid, terminal)?)
}

/// Positions and terminal vectors of a profile file.
pub fn read_profile_file(path: &Path) -> Result<(Vec<f64>, Vec<Vec3>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table = parse_table(path, &text, 5)?;
    let points: usize = header_value(path, &table, "points")?;
    if table.rows.len() != points {
        return Err(Error::Format {
            path: path.to_path_buf(),
            row: table.rows.last().map_or(0, |r| r.0),
            message: format!("header announces {points} rows, found {}", table.rows.len()),
        });
    }
    Ok(table
        .rows
        .iter()
        .map(|(_, v)| (v[0], [v[1], v[2], v[3]]))
        .unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;

    #[test]
    fn pulse_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        let t = TimeGrid::new(7, 5, 5e-6).unwrap();
        let u = ControlWaveform::new(
            &t,
            (0..5).map(|k| [0.1 * k as f64 + 1.0 / 3.0, -1e-300 * k as f64]).collect(),
        )
        .unwrap();
        let g = GradientWaveform::constant(&t, 1.0 / 7.0);
        write_pulse_file(&path, &u, &g).unwrap();
        let (u2, g2) = read_pulse_file(&path).unwrap();
        assert_eq!(u, u2);
        assert_eq!(g.samples(), g2.samples());
        assert!(!dir.path().join(".p.txt.tmp").exists());
    }

    #[test]
    fn truncated_pulse_names_row() {
        let t = TimeGrid::new(5, 4, 1e-5).unwrap();
        let text = format_pulse(&ControlWaveform::zeros(&t), &GradientWaveform::zeros(&t));
        let cut: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
        let err = parse_pulse(Path::new("x"), &cut).unwrap_err();
        assert!(matches!(err, Error::Format { row: 7, .. }), "{err}");
        let bad = text.replace("0.0000000000000000e0 0.0000000000000000e0 0.0000000000000000e0\n", "0 zero\n");
        assert!(parse_pulse(Path::new("x"), &bad).is_err());
    }

    #[test]
    fn profile_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let grid = SpaceGrid::new(0.5, 11).unwrap();
        let m: Vec<Vec3> = (0..11).map(|i| [0.0, 0.0, 1.0 - i as f64 / 3.0]).collect();
        write_profile_file(&path, &grid, &m).unwrap();
        let (z, m2) = read_profile_file(&path).unwrap();
        assert_eq!(m, m2);
        assert_eq!(z, grid.positions());
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().filter(|l| !l.starts_with('#')).all(|l| l.ends_with("0.0000000000000000e0")));
    }
}
