//! Pipelines behind the command-line verbs: design, simulate, compare and
//! the finite-difference derivative check.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::mat3::Vec3;
use crate::metrics::{self, Comparison, DesignReport};
use crate::model::{
    ControlWaveform, GradientWaveform, PhysicalConstants, RelaxationParams, TargetProfile, TimeGrid,
};
use crate::objective::{inner_product, Objective};
use crate::optimizer::{trust_region_newton, IterationRecord, TrustRegionOutcome};
use crate::solvers::BlochSystem;
use crate::targets::{self, GradientSpec, SliceSpec};

/// Everything needed to optimize or evaluate pulses for one configuration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: BlochSystem,
    pub slices: SliceSpec,
    pub gradient: GradientSpec,
    /// Unfiltered rectangular pattern.
    pub ideal: TargetProfile,
    /// The optimization target (filtered unless disabled).
    pub target: TargetProfile,
    pub mask: Vec<bool>,
    pub alpha: f64,
}

impl Problem {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let time = config.time_grid()?;
        let gradient = config.gradient_spec()?;
        let waveform = targets::build_gradient_waveform(&gradient, &time)?;
        Self::with_gradient(config, time, gradient, waveform)
    }

    fn with_gradient(
        config: &RunConfig,
        time: TimeGrid,
        gradient: GradientSpec,
        waveform: GradientWaveform,
    ) -> Result<Self> {
        let system = BlochSystem::new(time, config.space, config.consts, config.relax, waveform)?
            .with_workers(config.workers)?;
        let ideal = targets::build_sms_target(&config.slices, &config.space)?;
        let target = match config.filter_fwhm {
            Some(fwhm) => targets::gaussian_filter(&ideal, fwhm, &config.space)?,
            None => ideal.clone(),
        };
        Ok(Problem {
            system,
            slices: config.slices,
            gradient,
            mask: config.slices.mask(&config.space),
            ideal,
            target,
            alpha: config.alpha,
        })
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::new(self.system.clone(), self.target.clone(), self.alpha)
    }

    /// Simulates `u` and collects every metric; iteration counts are left at 0.
    pub fn evaluate(&self, u: &ControlWaveform) -> Result<(Vec<Vec3>, DesignReport)> {
        let mut objective = self.objective()?;
        let cost = objective.cost(u)?;
        let terminal = objective.terminal(u)?;
        let mxy: Vec<f64> = terminal.iter().map(|m| metrics::transverse_magnitude(*m)).collect();
        let (mae_in, mae_out) = if self.mask.iter().any(|&b| b) {
            metrics::mae_split(&mxy, &self.ideal, &self.mask)?
        } else {
            // no grid point inside a slice: everything is out-of-slice
            let sum: f64 = mxy
                .iter()
                .zip(&self.ideal.values)
                .map(|(m, d)| (m - metrics::transverse_magnitude(*d)).abs())
                .sum();
            (None, Some(sum / mxy.len() as f64))
        };
        let consts = self.system.consts();
        let report = DesignReport {
            cost,
            rmse: metrics::rmse(&terminal, &self.target)?,
            rmse_ideal_xy: metrics::rmse_transverse(&mxy, &self.ideal)?,
            mae_in,
            mae_out,
            b1_energy: metrics::b1_energy(u, consts),
            b1_peak: metrics::b1_peak(u, consts),
            b1_peak_y: metrics::b1_peak_y(u, consts),
            ..DesignReport::default()
        };
        Ok((terminal, report))
    }
}

#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub control: ControlWaveform,
    pub gradient: GradientWaveform,
    pub terminal: Vec<Vec3>,
    pub report: DesignReport,
    pub log: Vec<IterationRecord>,
    pub diagnostic: Option<String>,
}

/// Optimizes a pulse from `u = 0`.
pub fn design(problem: &Problem, config: &RunConfig) -> Result<DesignOutcome> {
    let start = Instant::now();
    let mut objective = problem.objective()?;
    let u0 = ControlWaveform::zeros(problem.system.time());
    let TrustRegionOutcome {
        control,
        log,
        diagnostic,
        ..
    } = trust_region_newton(&mut objective, &u0, &config.optimizer)?;
    let (terminal, mut report) = problem.evaluate(&control)?;
    report.newton_iters = log.len();
    report.total_cg_steps = log.iter().map(|r| r.cg_iterations).sum();
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(DesignOutcome {
        control,
        gradient: problem.system.gradient().clone(),
        terminal,
        report,
        log,
        diagnostic,
    })
}

/// The calibrated superposed-sinc reference pulse for the same problem.
pub fn conventional(problem: &Problem) -> Result<DesignOutcome> {
    let start = Instant::now();
    let control =
        targets::build_conventional_sms_pulse(&problem.slices, &problem.system, problem.gradient.amplitude)?;
    let (terminal, mut report) = problem.evaluate(&control)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(DesignOutcome {
        control,
        gradient: problem.system.gradient().clone(),
        terminal,
        report,
        log: Vec::new(),
        diagnostic: None,
    })
}

/// `key = value` lines of a report; wall time is excluded.
pub fn format_report(report: &DesignReport) -> String {
    let opt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.16e}"));
    let mut out = String::new();
    let _ = writeln!(out, "# energy in (uT)^2 ms, peaks in uT");
    let _ = writeln!(out, "cost = {:.16e}", report.cost);
    let _ = writeln!(out, "rmse = {:.16e}", report.rmse);
    let _ = writeln!(out, "rmse_ideal_xy = {:.16e}", report.rmse_ideal_xy);
    let _ = writeln!(out, "mae_in = {}", opt(report.mae_in));
    let _ = writeln!(out, "mae_out = {}", opt(report.mae_out));
    let _ = writeln!(out, "b1_energy = {:.16e}", report.b1_energy);
    let _ = writeln!(out, "b1_peak = {:.16e}", report.b1_peak);
    let _ = writeln!(out, "b1_peak_y = {:.16e}", report.b1_peak_y);
    let _ = writeln!(out, "newton_iters = {}", report.newton_iters);
    let _ = writeln!(out, "total_cg_steps = {}", report.total_cg_steps);
    out
}

pub fn format_log(log: &[IterationRecord]) -> String {
    let mut out = String::from(
        "# k grad_norm cost cg_steps cg_status actual_decrease predicted_decrease radius_before radius_after step_norm accepted\n",
    );
    for r in log {
        let _ = writeln!(
            out,
            "{} {:.16e} {:.16e} {} {} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {}",
            r.iteration,
            r.gradient_norm,
            r.cost,
            r.cg_iterations,
            r.cg_status,
            r.actual_decrease,
            r.predicted_decrease,
            r.radius_before,
            r.radius_after,
            r.step_norm,
            r.accepted
        );
    }
    out
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_meta(dir: &Path, config: &RunConfig, seconds: f64) -> Result<()> {
    io::write_atomic(
        &dir.join("meta.txt"),
        &format!(
            "wall_time_s = {seconds:.3}\nworkers = {}\nversion = {}\n",
            config.workers,
            env!("CARGO_PKG_VERSION")
        ),
    )
}

/// Designs a pulse and writes `pulse.txt`, `profile.txt`, `iterations.txt`,
/// `report.txt` and `meta.txt` into `out`.
pub fn run_design(config: &RunConfig, out: &Path) -> Result<DesignOutcome> {
    ensure_dir(out)?;
    let problem = Problem::new(config)?;
    info!(
        "designing {} slice(s): Z = {}, N = {}, dt = {:.1e} s",
        config.slices.count,
        config.space.points(),
        problem.system.time().steps(),
        problem.system.time().dt()
    );
    let outcome = design(&problem, config)?;
    if let Some(d) = &outcome.diagnostic {
        log::warn!("{d}");
    }
    io::write_pulse_file(&out.join("pulse.txt"), &outcome.control, &outcome.gradient)?;
    io::write_profile_file(&out.join("profile.txt"), &config.space, &outcome.terminal)?;
    io::write_atomic(&out.join("iterations.txt"), &format_log(&outcome.log))?;
    io::write_atomic(&out.join("report.txt"), &format_report(&outcome.report))?;
    write_meta(out, config, outcome.report.wall_time)?;
    info!(
        "done: {} Newton iterations, {} CG steps, J = {:.4e}",
        outcome.report.newton_iters, outcome.report.total_cg_steps, outcome.report.cost
    );
    Ok(outcome)
}

/// Simulates the pulse file named by `simulate.pulse` and writes
/// `profile.txt` and `report.txt`.
pub fn run_simulate(config: &RunConfig, out: &Path) -> Result<DesignReport> {
    let path = config
        .simulate_pulse
        .as_ref()
        .ok_or_else(|| Error::invalid("simulate.pulse", "no pulse file given"))?;
    ensure_dir(out)?;
    let start = Instant::now();
    let (u, waveform) = io::read_pulse_file(path)?;
    let time = TimeGrid::new(waveform.len(), u.len(), u.dt())?;
    let gradient = GradientSpec {
        amplitude: waveform.samples().iter().fold(0.0, |m, g| m.max(g.abs())),
        max_slew: config.max_slew,
    };
    let problem = Problem::with_gradient(config, time, gradient, waveform)?;
    let (terminal, report) = problem.evaluate(&u)?;
    io::write_profile_file(&out.join("profile.txt"), &config.space, &terminal)?;
    io::write_atomic(&out.join("report.txt"), &format_report(&report))?;
    write_meta(out, config, start.elapsed().as_secs_f64())?;
    Ok(report)
}

/// Optimized versus conventional pulses for every count in
/// `compare.counts`, or an alpha sweep when `compare.alphas` is set. Writes
/// `comparison.txt` and `comparison.csv`.
pub fn run_compare(config: &RunConfig, out: &Path) -> Result<Comparison> {
    config.validate_compare()?;
    ensure_dir(out)?;
    let start = Instant::now();
    let comparison = if config.compare.alphas.is_empty() {
        let mut rows = Vec::new();
        for &count in &config.compare.counts {
            let row = config.comparison_row(count);
            let problem = Problem::new(&row)?;
            info!("comparison row: {count} slice(s)");
            let oc = design(&problem, &row)?;
            let conv = conventional(&problem)?;
            rows.push((count.to_string(), oc.report, conv.report));
        }
        metrics::render_paired_comparison(&rows)?
    } else {
        let mut rows = Vec::new();
        for &alpha in &config.compare.alphas {
            let mut row = config.comparison_row(config.slices.count);
            row.alpha = alpha;
            info!("alpha sweep: {alpha:e}");
            let outcome = design(&Problem::new(&row)?, &row)?;
            rows.push((format!("{alpha:e}"), outcome.report));
        }
        metrics::render_comparison(&rows)?
    };
    io::write_atomic(&out.join("comparison.txt"), &comparison.table)?;
    io::write_atomic(&out.join("comparison.csv"), &comparison.records)?;
    write_meta(out, config, start.elapsed().as_secs_f64())?;
    Ok(comparison)
}

/// Finite-difference check results for one relaxation setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCase {
    pub relaxation: bool,
    /// `max |dJ/du - central difference| / max |central difference|`.
    pub gradient_error: f64,
    /// Same measure for `H v` against differenced gradients.
    pub hessian_error: f64,
    /// `|<v, H w> - <w, H v>| / max(|<v, H w>|, |<w, H v>|)`.
    pub symmetry_defect: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub cases: Vec<DerivativeCase>,
}

impl DerivativeCheck {
    pub fn worst(&self) -> (f64, f64, f64) {
        self.cases.iter().fold((0.0, 0.0, 0.0), |(g, h, s), c| {
            (g.max(c.gradient_error), h.max(c.hessian_error), s.max(c.symmetry_defect))
        })
    }

    pub fn passed(&self, tol: f64) -> bool {
        let (g, h, s) = self.worst();
        g <= tol && h <= tol && s <= tol
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let _ = writeln!(
                out,
                "relaxation={:<5}  gradient_error={:.3e}  hessian_error={:.3e}  symmetry_defect={:.3e}  gradient_norm={:.3e}",
                c.relaxation, c.gradient_error, c.hessian_error, c.symmetry_defect, c.gradient_norm
            );
        }
        out
    }
}

fn relative_max_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

fn flat(u: &ControlWaveform) -> Vec<f64> {
    u.samples().iter().flatten().copied().collect()
}

fn random_control(time: &TimeGrid, rng: &mut ChaCha8Rng) -> Result<ControlWaveform> {
    let samples = (0..time.control_steps())
        .map(|_| [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)])
        .collect();
    ControlWaveform::new(time, samples)
}

fn unit_vector(len: usize, k: usize, dt: f64) -> Result<ControlWaveform> {
    let mut samples = vec![[0.0; 2]; len];
    samples[k / 2][k % 2] = 1.0;
    ControlWaveform::with_dt(dt, samples)
}

/// Constants of the derivative check: one control unit is 1 µT, so random
/// controls in `[-1, 1]` rotate by tenths of a radian and exercise the
/// nonlinearity.
pub const CHECK_B1_SCALE: f64 = 1e-6;

fn check_case(config: &RunConfig, relax: RelaxationParams) -> Result<DerivativeCase> {
    let check = &config.check;
    let time = check.time;
    let consts = PhysicalConstants::new(config.consts.gamma, CHECK_B1_SCALE)?;
    let bandwidth = config.time_bandwidth / time.control_duration();
    let spec = GradientSpec::for_slice(config.slices.width, bandwidth, consts.gamma, config.max_slew);
    let gradient = targets::build_gradient_waveform(&spec, &time)?;
    let system = BlochSystem::new(time, check.space, consts, relax, gradient)?.with_workers(config.workers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let (u, target) = if check.zero_control {
        let u = ControlWaveform::zeros(&time);
        let reached = system.forward(&u)?.terminal_values();
        (u, TargetProfile { values: reached, slices: Vec::new() })
    } else {
        let slice = SliceSpec::single(config.slices.width, config.slices.flip);
        (
            random_control(&time, &mut rng)?,
            targets::build_single_slice_target(&slice, &check.space)?,
        )
    };
    let mut objective = Objective::new(system, target, config.alpha)?;
    if check.corrupt_sign {
        objective.corrupt_coupling_sign(true);
    }

    let dt = time.dt();
    let n = 2 * time.control_steps();
    let g = objective.gradient(&u)?;
    let gradient_norm = g.norm();
    let analytic: Vec<f64> = flat(&g).iter().map(|v| v * dt).collect();
    let h = 1e-5;
    let mut fd = Vec::with_capacity(n);
    for k in 0..n {
        let e = unit_vector(time.control_steps(), k, dt)?;
        let plus = objective.cost(&u.add_scaled(h, &e))?;
        let minus = objective.cost(&u.add_scaled(-h, &e))?;
        fd.push((plus - minus) / (2.0 * h));
    }
    let gradient_error = relative_max_error(&analytic, &fd);

    let v = random_control(&time, &mut rng)?;
    let w = random_control(&time, &mut rng)?;
    let hv = objective.hessian_action(&u, &v)?;
    let hw = objective.hessian_action(&u, &w)?;
    let hd = 1e-6;
    let gp = objective.gradient(&u.add_scaled(hd, &v))?;
    let gm = objective.gradient(&u.add_scaled(-hd, &v))?;
    let fd_hv: Vec<f64> = flat(&gp)
        .iter()
        .zip(flat(&gm))
        .map(|(a, b)| (a - b) / (2.0 * hd))
        .collect();
    let hessian_error = relative_max_error(&flat(&hv), &fd_hv);

    let vhw = inner_product(&v, &hw)?;
    let whv = inner_product(&w, &hv)?;
    let scale = vhw.abs().max(whv.abs());
    let symmetry_defect = if scale == 0.0 { 0.0 } else { (vhw - whv).abs() / scale };

    Ok(DerivativeCase {
        relaxation: relax.enabled(),
        gradient_error,
        hessian_error,
        symmetry_defect,
        gradient_norm,
    })
}

/// Central-difference checks of the gradient and Hessian action on the
/// small `check.*` instance, without and with relaxation.
pub fn run_check_derivatives(config: &RunConfig) -> Result<DerivativeCheck> {
    let [t1, t2, m0] = config.relaxation_times;
    let with_relaxation = RelaxationParams::from_times(t1, t2, m0)?;
    let cases = [RelaxationParams::disabled(), with_relaxation]
        .into_iter()
        .map(|relax| check_case(config, relax))
        .collect::<Result<Vec<_>>>()?;
    Ok(DerivativeCheck { cases })
}
