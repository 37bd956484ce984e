//! Profile errors, RF power figures and comparison tables.
//!
//! Units: `b1_peak` is reported in µT and `b1_energy` in (µT)²·ms, so a
//! pulse with a constant 1 µT over 1 ms has energy 1.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mat3::{self, Vec3};
use crate::model::{ControlWaveform, PhysicalConstants, TargetProfile};

/// Root-mean-square vector error over the grid points.
pub fn rmse(terminal: &[Vec3], reference: &TargetProfile) -> Result<f64> {
    Error::check_len("reference profile", terminal.len(), reference.len())?;
    if terminal.is_empty() {
        return Err(Error::invalid("rmse", "empty profile"));
    }
    let sum: f64 = terminal
        .iter()
        .zip(&reference.values)
        .map(|(m, r)| {
            let d = mat3::sub(*m, *r);
            mat3::dot(d, d)
        })
        .sum();
    Ok((sum / terminal.len() as f64).sqrt())
}

/// Root-mean-square error of the transverse magnitude against the ideal
/// pattern's transverse magnitude.
pub fn rmse_transverse(mxy: &[f64], ideal: &TargetProfile) -> Result<f64> {
    Error::check_len("ideal profile", mxy.len(), ideal.len())?;
    if mxy.is_empty() {
        return Err(Error::invalid("rmse", "empty profile"));
    }
    let sum: f64 = mxy
        .iter()
        .zip(&ideal.values)
        .map(|(m, d)| (m - transverse_magnitude(*d)).powi(2))
        .sum();
    Ok((sum / mxy.len() as f64).sqrt())
}

pub fn transverse_magnitude(v: Vec3) -> f64 {
    v[0].hypot(v[1])
}

/// Mean absolute transverse-magnitude error inside and outside the slices.
/// Either half is `None` when the mask has no points there; an all-false
/// mask is an error.
pub fn mae_split(
    mxy: &[f64],
    ideal: &TargetProfile,
    mask: &[bool],
) -> Result<(Option<f64>, Option<f64>)> {
    Error::check_len("ideal profile", mxy.len(), ideal.len())?;
    Error::check_len("slice mask", mxy.len(), mask.len())?;
    if !mask.iter().any(|&b| b) {
        return Err(Error::invalid("slice mask", "no grid point lies inside a slice"));
    }
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for ((&m, d), &inside) in mxy.iter().zip(&ideal.values).zip(mask) {
        let k = usize::from(!inside);
        sums[k] += (m - transverse_magnitude(*d)).abs();
        counts[k] += 1;
    }
    let mean = |k: usize| (counts[k] > 0).then(|| sums[k] / counts[k] as f64);
    Ok((mean(0), mean(1)))
}

/// `sum_m dt (B1 u_x)^2` in (µT)²·ms.
pub fn b1_energy(u: &ControlWaveform, consts: &PhysicalConstants) -> f64 {
    let s = consts.b1_scale * 1e6;
    u.samples().iter().map(|v| (s * v[0]).powi(2)).sum::<f64>() * u.dt() * 1e3
}

/// `max_m |B1 u_x|` in µT.
pub fn b1_peak(u: &ControlWaveform, consts: &PhysicalConstants) -> f64 {
    consts.b1_scale * 1e6 * u.peak_x()
}

/// `max_m |B1 u_y|` in µT.
pub fn b1_peak_y(u: &ControlWaveform, consts: &PhysicalConstants) -> f64 {
    consts.b1_scale * 1e6 * u.peak_y()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DesignReport {
    pub cost: f64,
    /// Against the optimization target.
    pub rmse: f64,
    /// Transverse magnitude against the unfiltered rectangular pattern.
    pub rmse_ideal_xy: f64,
    pub mae_in: Option<f64>,
    pub mae_out: Option<f64>,
    pub b1_energy: f64,
    pub b1_peak: f64,
    pub b1_peak_y: f64,
    pub newton_iters: usize,
    pub total_cg_steps: usize,
    /// Seconds; never written to deterministic artifacts.
    pub wall_time: f64,
}

/// Rendered table plus comma-separated records with a header line.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub table: String,
    pub records: String,
}

fn sci(x: f64) -> String {
    format!("{x:.4e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), sci)
}

fn render(header: &[&str], rows: &[Vec<String>]) -> Comparison {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut table = String::new();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(table, "{}", line(header.to_vec()));
    let _ = writeln!(table, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for r in rows {
        let _ = writeln!(table, "{}", line(r.iter().map(String::as_str).collect()));
    }
    let mut records = header.join(",");
    records.push('\n');
    for r in rows {
        records.push_str(&r.join(","));
        records.push('\n');
    }
    Comparison { table, records }
}

fn check_label(label: &str) -> Result<()> {
    if label.trim().is_empty() || label.contains(',') {
        return Err(Error::invalid("label", format!("{label:?} must be non-empty and contain no comma")));
    }
    Ok(())
}

/// One row per labeled report, in input order.
pub fn render_comparison(reports: &[(String, DesignReport)]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(Error::invalid("comparison", "no reports"));
    }
    let rows = reports
        .iter()
        .map(|(label, r)| {
            check_label(label)?;
            Ok(vec![
                label.clone(),
                sci(r.b1_energy),
                sci(r.b1_peak),
                opt(r.mae_in),
                opt(r.mae_out),
                sci(r.rmse),
                sci(r.cost),
                r.newton_iters.to_string(),
                r.total_cg_steps.to_string(),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let header = [
        "label", "energy_au", "peak_uT", "mae_in", "mae_out", "rmse", "cost", "newton", "cg",
    ];
    Ok(render(&header, &rows))
}

/// Side-by-side optimized versus conventional rows: four metrics for each
/// pulse family, followed by both RMSE values.
pub fn render_paired_comparison(rows: &[(String, DesignReport, DesignReport)]) -> Result<Comparison> {
    if rows.is_empty() {
        return Err(Error::invalid("comparison", "no reports"));
    }
    let cells = rows
        .iter()
        .map(|(label, oc, conv)| {
            check_label(label)?;
            Ok(vec![
                label.clone(),
                sci(oc.b1_energy),
                sci(conv.b1_energy),
                sci(oc.b1_peak),
                sci(conv.b1_peak),
                opt(oc.mae_in),
                opt(conv.mae_in),
                opt(oc.mae_out),
                opt(conv.mae_out),
                sci(oc.rmse),
                sci(conv.rmse),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let header = [
        "label",
        "energy_oc",
        "energy_conv",
        "peak_oc",
        "peak_conv",
        "mae_in_oc",
        "mae_in_conv",
        "mae_out_oc",
        "mae_out_conv",
        "rmse_oc",
        "rmse_conv",
    ];
    Ok(render(&header, &cells))
}
