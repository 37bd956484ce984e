//! Run configuration: flat `section.key = value` text with unit suffixes.
//!
//! Every key has a default, so an empty document is a complete single-slice
//! design. Quantities accept a bare number in SI base units or one of the
//! listed suffixes (`25mm`, `20 us`, `180 T/m/s`, `90deg`, ...). Lines may
//! hold several assignments separated by commas; `#` starts a comment.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::{PhysicalConstants, RelaxationParams, SpaceGrid, TimeGrid};
use crate::optimizer::TrustRegionParams;
use crate::targets::{GradientSpec, PhasePattern, SliceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Number,
    Count,
    Flag,
    Length,
    Duration,
    Gradient,
    Slew,
    Angle,
    Field,
    Pattern,
    Path,
    CountList,
    NumberList,
}

impl Kind {
    fn units(self) -> &'static str {
        match self {
            Kind::Length => "m, cm, mm, um",
            Kind::Duration => "s, ms, us",
            Kind::Gradient => "T/m, mT/m",
            Kind::Slew => "T/m/s",
            Kind::Angle => "rad, deg",
            Kind::Field => "T, mT, uT",
            Kind::Pattern => "uniform | alternating_pi | quadrature_shift",
            Kind::Flag => "true | false",
            Kind::CountList | Kind::NumberList => "comma-separated",
            _ => "",
        }
    }
}

struct KeySpec {
    key: &'static str,
    kind: Kind,
    default: &'static str,
    /// Where the default comes from: the published experiments, or a choice
    /// made here because the value is not stated anywhere.
    origin: &'static str,
    help: &'static str,
}

const PUBLISHED: &str = "published";
const CHOSEN: &str = "chosen";

const KEYS: &[KeySpec] = &[
    KeySpec { key: "alpha", kind: Kind::Number, default: "1e-4", origin: PUBLISHED, help: "control cost weight" },
    KeySpec { key: "grid.points", kind: Kind::Count, default: "5001", origin: PUBLISHED, help: "spatial grid points Z" },
    KeySpec { key: "grid.half_width", kind: Kind::Length, default: "0.5 m", origin: PUBLISHED, help: "domain [-a, a]" },
    KeySpec { key: "time.steps", kind: Kind::Count, default: "697", origin: PUBLISHED, help: "time steps N" },
    KeySpec { key: "time.control_steps", kind: Kind::Count, default: "512", origin: PUBLISHED, help: "control steps N_u" },
    KeySpec { key: "time.dt", kind: Kind::Duration, default: "auto", origin: PUBLISHED, help: "step; auto = 5 us for one slice, 20 us otherwise" },
    KeySpec { key: "physics.gamma", kind: Kind::Number, default: "2.675222e8", origin: PUBLISHED, help: "gyromagnetic ratio in rad/(s T)" },
    KeySpec { key: "physics.b1_scale", kind: Kind::Field, default: "0.136 uT", origin: CHOSEN, help: "B1 amplitude of one control unit" },
    KeySpec { key: "relaxation.enabled", kind: Kind::Flag, default: "false", origin: PUBLISHED, help: "include T1/T2 relaxation" },
    KeySpec { key: "relaxation.t1", kind: Kind::Duration, default: "102 ms", origin: PUBLISHED, help: "longitudinal relaxation time" },
    KeySpec { key: "relaxation.t2", kind: Kind::Duration, default: "81 ms", origin: PUBLISHED, help: "transverse relaxation time" },
    KeySpec { key: "relaxation.m0", kind: Kind::Number, default: "1", origin: CHOSEN, help: "equilibrium magnetization" },
    KeySpec { key: "slices.count", kind: Kind::Count, default: "1", origin: PUBLISHED, help: "number of slices" },
    KeySpec { key: "slices.width", kind: Kind::Length, default: "5 mm", origin: PUBLISHED, help: "slice thickness" },
    KeySpec { key: "slices.separation", kind: Kind::Length, default: "25 mm", origin: PUBLISHED, help: "center-to-center distance" },
    KeySpec { key: "slices.flip", kind: Kind::Angle, default: "90 deg", origin: PUBLISHED, help: "flip angle" },
    KeySpec { key: "slices.pattern", kind: Kind::Pattern, default: "uniform", origin: PUBLISHED, help: "transverse phase schedule" },
    KeySpec { key: "target.filter_fwhm", kind: Kind::Length, default: "1.6 mm", origin: PUBLISHED, help: "Gaussian smoothing of the target; 0 disables" },
    KeySpec { key: "gradient.time_bandwidth", kind: Kind::Number, default: "6.016", origin: PUBLISHED, help: "bandwidth times control duration (2.35 kHz x 2.56 ms)" },
    KeySpec { key: "gradient.amplitude", kind: Kind::Gradient, default: "auto", origin: CHOSEN, help: "plateau; auto = bandwidth / (gamma/2pi x width)" },
    KeySpec { key: "gradient.max_slew", kind: Kind::Slew, default: "180 T/m/s", origin: CHOSEN, help: "ramp slew rate" },
    KeySpec { key: "optimizer.tol_newton", kind: Kind::Number, default: "1e-9", origin: PUBLISHED, help: "gradient norm tolerance" },
    KeySpec { key: "optimizer.maxit_newton", kind: Kind::Count, default: "5", origin: PUBLISHED, help: "Newton iterations" },
    KeySpec { key: "optimizer.tol_cg", kind: Kind::Number, default: "1e-6", origin: PUBLISHED, help: "relative CG residual" },
    KeySpec { key: "optimizer.maxit_cg", kind: Kind::Count, default: "50", origin: PUBLISHED, help: "CG iterations per Newton step" },
    KeySpec { key: "optimizer.rho0", kind: Kind::Number, default: "1", origin: PUBLISHED, help: "initial trust radius" },
    KeySpec { key: "optimizer.rho_max", kind: Kind::Number, default: "2", origin: PUBLISHED, help: "maximal trust radius" },
    KeySpec { key: "optimizer.q", kind: Kind::Number, default: "2", origin: PUBLISHED, help: "radius scaling factor" },
    KeySpec { key: "optimizer.sigma1", kind: Kind::Number, default: "0.03", origin: PUBLISHED, help: "acceptance threshold" },
    KeySpec { key: "optimizer.sigma2", kind: Kind::Number, default: "0.25", origin: PUBLISHED, help: "shrink threshold" },
    KeySpec { key: "optimizer.sigma3", kind: Kind::Number, default: "0.7", origin: PUBLISHED, help: "growth threshold" },
    KeySpec { key: "optimizer.epsilon_rel", kind: Kind::Number, default: "1e-12", origin: CHOSEN, help: "round-off guard, relative to max(1, |J|)" },
    KeySpec { key: "workers", kind: Kind::Count, default: "0", origin: CHOSEN, help: "worker threads; 0 = all cores" },
    KeySpec { key: "simulate.pulse", kind: Kind::Path, default: "", origin: CHOSEN, help: "pulse file for the simulate command" },
    KeySpec { key: "compare.counts", kind: Kind::CountList, default: "1,2,3,4,5,6", origin: PUBLISHED, help: "slice counts of the comparison table" },
    KeySpec { key: "compare.alphas", kind: Kind::NumberList, default: "", origin: PUBLISHED, help: "if set, sweep alpha at slices.count instead" },
    KeySpec { key: "compare.dt", kind: Kind::Duration, default: "20 us", origin: PUBLISHED, help: "time step of every comparison row" },
    KeySpec { key: "check.points", kind: Kind::Count, default: "21", origin: CHOSEN, help: "derivative check grid points" },
    KeySpec { key: "check.half_width", kind: Kind::Length, default: "25 mm", origin: CHOSEN, help: "derivative check domain" },
    KeySpec { key: "check.steps", kind: Kind::Count, default: "60", origin: CHOSEN, help: "derivative check time steps" },
    KeySpec { key: "check.control_steps", kind: Kind::Count, default: "48", origin: CHOSEN, help: "derivative check control steps" },
    KeySpec { key: "check.dt", kind: Kind::Duration, default: "50 us", origin: CHOSEN, help: "derivative check time step" },
    KeySpec { key: "check.seed", kind: Kind::Count, default: "7", origin: CHOSEN, help: "seed of the random test control" },
    KeySpec { key: "check.zero_control", kind: Kind::Flag, default: "false", origin: CHOSEN, help: "check at u = 0 with a reachable target" },
    KeySpec { key: "check.corrupt_sign", kind: Kind::Flag, default: "false", origin: CHOSEN, help: "flip the gradient coupling sign (self-test)" },
];

/// Small derivative-check instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    pub space: SpaceGrid,
    pub time: TimeGrid,
    pub seed: u64,
    pub zero_control: bool,
    pub corrupt_sign: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub counts: Vec<usize>,
    pub alphas: Vec<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub space: SpaceGrid,
    pub steps: usize,
    pub control_steps: usize,
    /// `None` picks the step from the slice count.
    pub dt: Option<f64>,
    pub consts: PhysicalConstants,
    pub relax: RelaxationParams,
    /// `[T1, T2, M0]` as configured, also when relaxation is disabled.
    pub relaxation_times: [f64; 3],
    pub slices: SliceSpec,
    pub filter_fwhm: Option<f64>,
    pub time_bandwidth: f64,
    /// `None` derives the plateau from the bandwidth and slice width.
    pub gradient_amplitude: Option<f64>,
    pub max_slew: f64,
    pub optimizer: TrustRegionParams,
    pub workers: usize,
    pub simulate_pulse: Option<PathBuf>,
    pub compare: CompareConfig,
    pub check: CheckConfig,
}

impl RunConfig {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        let dt = self
            .dt
            .unwrap_or(if self.slices.count == 1 { 5e-6 } else { 20e-6 });
        TimeGrid::new(self.steps, self.control_steps, dt)
    }

    pub fn gradient_spec(&self) -> Result<GradientSpec> {
        let spec = match self.gradient_amplitude {
            Some(amplitude) => GradientSpec {
                amplitude,
                max_slew: self.max_slew,
            },
            None => {
                let bandwidth = self.time_bandwidth / self.time_grid()?.control_duration();
                GradientSpec::for_slice(self.slices.width, bandwidth, self.consts.gamma, self.max_slew)
            }
        };
        spec.layout(&self.time_grid()?)?;
        Ok(spec)
    }

    /// The same problem with `count` slices on the comparison time step.
    pub fn comparison_row(&self, count: usize) -> RunConfig {
        let mut row = self.clone();
        row.slices.count = count;
        row.dt = Some(self.compare.dt);
        row
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("must be positive, got {}", self.alpha)));
        }
        self.slices.validate(&self.space)?;
        self.gradient_spec()?;
        self.optimizer.validate()?;
        if let Some(f) = self.filter_fwhm {
            if !(f > 0.0) {
                return Err(Error::invalid("target.filter_fwhm", "must be positive"));
            }
        }
        if !(self.time_bandwidth > 0.0) {
            return Err(Error::invalid("gradient.time_bandwidth", "must be positive"));
        }
        if self.compare.counts.is_empty() || self.compare.counts.contains(&0) {
            return Err(Error::invalid("compare.counts", "needs positive slice counts"));
        }
        if self.compare.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::invalid("compare.alphas", "values must be positive"));
        }
        Ok(())
    }

    /// Checks that every comparison row fits the domain and time grid; only
    /// the compare command needs this.
    pub fn validate_compare(&self) -> Result<()> {
        let counts = if self.compare.alphas.is_empty() {
            self.compare.counts.clone()
        } else {
            vec![self.slices.count]
        };
        for count in counts {
            let row = self.comparison_row(count);
            row.slices.validate(&row.space)?;
            row.gradient_spec()?;
        }
        Ok(())
    }
}

fn scaled(text: &str, units: &[(&str, f64)], key: &str) -> std::result::Result<f64, String> {
    let text = text.trim();
    let split = text
        .char_indices()
        .find(|&(i, c)| {
            c.is_alphabetic() && !(matches!(c, 'e' | 'E') && text[i + 1..].starts_with(|d: char| d.is_ascii_digit() || d == '-' || d == '+'))
        })
        .map_or(text.len(), |(i, _)| i);
    let (number, unit) = text.split_at(split);
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("{key}: cannot read a number from {text:?}"))?;
    let unit = unit.trim();
    if unit.is_empty() {
        return Ok(value);
    }
    units
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, f)| value * f)
        .ok_or_else(|| {
            let known: Vec<&str> = units.iter().map(|(u, _)| *u).collect();
            format!("{key}: unknown unit {unit:?} (expected one of {})", known.join(", "))
        })
}

enum Value {
    Number(f64),
    Auto,
    Count(usize),
    Flag(bool),
    Pattern(PhasePattern),
    Text(String),
    Counts(Vec<usize>),
    Numbers(Vec<f64>),
}

fn parse_value(spec: &KeySpec, text: &str) -> std::result::Result<Value, String> {
    let key = spec.key;
    let text = text.trim();
    let units: &[(&str, f64)] = match spec.kind {
        Kind::Length => &[("m", 1.0), ("cm", 1e-2), ("mm", 1e-3), ("um", 1e-6)],
        Kind::Duration => &[("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("µs", 1e-6)],
        Kind::Gradient => &[("T/m", 1.0), ("mT/m", 1e-3)],
        Kind::Slew => &[("T/m/s", 1.0), ("mT/m/ms", 1.0)],
        Kind::Angle => &[("rad", 1.0), ("deg", PI / 180.0)],
        Kind::Field => &[("T", 1.0), ("mT", 1e-3), ("uT", 1e-6), ("µT", 1e-6)],
        _ => &[],
    };
    match spec.kind {
        Kind::Duration | Kind::Gradient if text == "auto" => Ok(Value::Auto),
        Kind::Number | Kind::Length | Kind::Duration | Kind::Gradient | Kind::Slew | Kind::Angle | Kind::Field => {
            let v = scaled(text, units, key)?;
            if v.is_finite() {
                Ok(Value::Number(v))
            } else {
                Err(format!("{key}: value must be finite"))
            }
        }
        Kind::Count => text
            .parse()
            .map(Value::Count)
            .map_err(|_| format!("{key}: expected a non-negative integer, got {text:?}")),
        Kind::Flag => match text {
            "true" | "yes" | "on" => Ok(Value::Flag(true)),
            "false" | "no" | "off" => Ok(Value::Flag(false)),
            _ => Err(format!("{key}: expected true or false, got {text:?}")),
        },
        Kind::Pattern => match text {
            "uniform" => Ok(Value::Pattern(PhasePattern::Uniform)),
            "alternating_pi" => Ok(Value::Pattern(PhasePattern::AlternatingPi)),
            "quadrature_shift" => Ok(Value::Pattern(PhasePattern::QuadratureShift)),
            _ => Err(format!("{key}: unknown phase pattern {text:?}")),
        },
        Kind::Path => Ok(Value::Text(text.to_string())),
        Kind::CountList => list(text, |s| s.parse::<usize>().ok()).map(Value::Counts).ok_or_else(|| format!("{key}: expected integers, got {text:?}")),
        Kind::NumberList => list(text, |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .map(Value::Numbers)
            .ok_or_else(|| format!("{key}: expected numbers, got {text:?}")),
    }
}

fn list<T>(text: &str, item: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

/// Raw values before cross-field validation.
struct Builder {
    numbers: std::collections::HashMap<&'static str, Value>,
}

impl Builder {
    fn set(&mut self, key: &'static str, value: Value) {
        self.numbers.insert(key, value);
    }

    fn num(&self, key: &str) -> f64 {
        match self.numbers.get(key) {
            Some(Value::Number(v)) => *v,
            _ => f64::NAN,
        }
    }

    fn maybe(&self, key: &str) -> Option<f64> {
        match self.numbers.get(key) {
            Some(Value::Number(v)) => Some(*v),
            _ => None,
        }
    }

    fn count(&self, key: &str) -> usize {
        match self.numbers.get(key) {
            Some(Value::Count(v)) => *v,
            _ => 0,
        }
    }

    fn flag(&self, key: &str) -> bool {
        matches!(self.numbers.get(key), Some(Value::Flag(true)))
    }

    fn build(&self) -> Result<RunConfig> {
        let relax = if self.flag("relaxation.enabled") {
            RelaxationParams::from_times(
                self.num("relaxation.t1"),
                self.num("relaxation.t2"),
                self.num("relaxation.m0"),
            )?
        } else {
            RelaxationParams::disabled()
        };
        let pattern = match self.numbers.get("slices.pattern") {
            Some(Value::Pattern(p)) => *p,
            _ => PhasePattern::Uniform,
        };
        let fwhm = self.num("target.filter_fwhm");
        let optimizer = TrustRegionParams {
            tol_newton: self.num("optimizer.tol_newton"),
            maxit_newton: self.count("optimizer.maxit_newton"),
            tol_cg: self.num("optimizer.tol_cg"),
            maxit_cg: self.count("optimizer.maxit_cg"),
            rho0: self.num("optimizer.rho0"),
            rho_max: self.num("optimizer.rho_max"),
            q: self.num("optimizer.q"),
            sigma1: self.num("optimizer.sigma1"),
            sigma2: self.num("optimizer.sigma2"),
            sigma3: self.num("optimizer.sigma3"),
            epsilon_rel: self.num("optimizer.epsilon_rel"),
        };
        let simulate_pulse = match self.numbers.get("simulate.pulse") {
            Some(Value::Text(p)) if !p.is_empty() => Some(PathBuf::from(p)),
            _ => None,
        };
        let counts = match self.numbers.get("compare.counts") {
            Some(Value::Counts(c)) => c.clone(),
            _ => Vec::new(),
        };
        let alphas = match self.numbers.get("compare.alphas") {
            Some(Value::Numbers(a)) => a.clone(),
            _ => Vec::new(),
        };
        let config = RunConfig {
            alpha: self.num("alpha"),
            space: SpaceGrid::new(self.num("grid.half_width"), self.count("grid.points"))?,
            steps: self.count("time.steps"),
            control_steps: self.count("time.control_steps"),
            dt: self.maybe("time.dt"),
            consts: PhysicalConstants::new(self.num("physics.gamma"), self.num("physics.b1_scale"))?,
            relax,
            relaxation_times: [
                self.num("relaxation.t1"),
                self.num("relaxation.t2"),
                self.num("relaxation.m0"),
            ],
            slices: SliceSpec {
                count: self.count("slices.count"),
                width: self.num("slices.width"),
                separation: self.num("slices.separation"),
                flip: self.num("slices.flip"),
                pattern,
            },
            filter_fwhm: (fwhm != 0.0).then_some(fwhm),
            time_bandwidth: self.num("gradient.time_bandwidth"),
            gradient_amplitude: self.maybe("gradient.amplitude"),
            max_slew: self.num("gradient.max_slew"),
            optimizer,
            workers: self.count("workers"),
            simulate_pulse,
            compare: CompareConfig {
                counts,
                alphas,
                dt: self.num("compare.dt"),
            },
            check: CheckConfig {
                space: SpaceGrid::new(self.num("check.half_width"), self.count("check.points"))?,
                time: TimeGrid::new(
                    self.count("check.steps"),
                    self.count("check.control_steps"),
                    self.num("check.dt"),
                )?,
                seed: self.count("check.seed") as u64,
                zero_control: self.flag("check.zero_control"),
                corrupt_sign: self.flag("check.corrupt_sign"),
            },
        };
        config.validate()?;
        Ok(config)
    }
}

fn assignments(line: &str) -> Vec<&str> {
    if line.matches('=').count() > 1 {
        line.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    } else {
        vec![line]
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut builder = Builder {
        numbers: Default::default(),
    };
    for spec in KEYS {
        let value = parse_value(spec, spec.default).expect("defaults parse");
        builder.set(spec.key, value);
    }
    let mut seen = HashSet::new();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        for assignment in assignments(line) {
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let (key, value) = assignment
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected 'key = value', got {assignment:?}")))?;
            let key = key.trim();
            let spec = KEYS
                .iter()
                .find(|s| s.key == key)
                .ok_or_else(|| parse_err(format!("unknown key {key:?}")))?;
            if !seen.insert(spec.key) {
                return Err(parse_err(format!("{key} is set twice")));
            }
            let value = parse_value(spec, value).map_err(parse_err)?;
            builder.set(spec.key, value);
        }
    }
    builder.build()
}

/// Every key with its default, accepted units and origin.
pub fn reference() -> String {
    let mut out = String::new();
    let width = KEYS.iter().map(|k| k.key.len()).max().unwrap_or(0);
    for spec in KEYS {
        let default = if spec.default.is_empty() { "(unset)" } else { spec.default };
        let units = spec.kind.units();
        let _ = write!(out, "{:<width$}  {:<12}  {:<9}  {}", spec.key, default, spec.origin, spec.help);
        if !units.is_empty() {
            let _ = write!(out, " [{units}]");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_published_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.alpha, 1e-4);
        assert_eq!(c.space.points(), 5001);
        assert_eq!(c.space.half_width(), 0.5);
        assert_eq!((c.steps, c.control_steps), (697, 512));
        assert_eq!(c.time_grid().unwrap().dt(), 5e-6);
        assert_eq!(c.slices.count, 1);
        assert_eq!(c.filter_fwhm, Some(1.6e-3));
        assert_eq!(c.optimizer, TrustRegionParams::default());
        let g = c.gradient_spec().unwrap();
        assert!((g.amplitude - 11.04e-3).abs() < 0.01e-3);
    }

    #[test]
    fn sms_document() {
        let c = parse_config("slices.count = 6, slices.separation = 25mm\n").unwrap();
        assert_eq!(c.slices.count, 6);
        assert!((c.slices.separation - 0.025).abs() < 1e-15);
        assert_eq!(c.time_grid().unwrap().dt(), 20e-6);
        let c = parse_config("slices.count = 6\nslices.separation = 25 mm # comment\n").unwrap();
        assert_eq!(c.slices.count, 6);
    }

    #[test]
    fn units_are_converted() {
        let c = parse_config(
            "time.dt = 20us\nslices.flip = 30 deg\ngradient.amplitude = 2.5 mT/m\nphysics.b1_scale = 0.5uT\ngrid.half_width = 10 cm",
        )
        .unwrap();
        assert!((c.dt.unwrap() - 20e-6).abs() < 1e-20);
        assert!((c.slices.flip - PI / 6.0).abs() < 1e-15);
        assert!((c.gradient_amplitude.unwrap() - 2.5e-3).abs() < 1e-18);
        assert!((c.consts.b1_scale - 0.5e-6).abs() < 1e-21);
        assert!((c.space.half_width() - 0.1).abs() < 1e-15);
        assert_eq!(parse_config("alpha = 2e-3").unwrap().alpha, 2e-3);
    }

    #[test]
    fn errors_name_line_and_constraint() {
        let e = parse_config("alpha = -1").unwrap_err();
        assert!(matches!(e, Error::Validation { what: "alpha", .. }), "{e}");
        let e = parse_config("\n\nbogus.key = 3").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_config("slices.width = 5 furlongs").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        assert!(parse_config("alpha = 1\nalpha = 2").is_err());
        assert!(parse_config("no equals sign").is_err());
        assert!(parse_config("optimizer.sigma1 = 0.5").is_err());
    }

    #[test]
    fn every_key_is_documented_with_its_default() {
        let doc = reference();
        for spec in KEYS {
            let line = doc.lines().find(|l| l.starts_with(spec.key)).unwrap();
            assert!(line.contains(spec.origin));
            parse_value(spec, spec.default).ok().unwrap();
        }
        assert_eq!(doc.lines().count(), KEYS.len());
    }
}
