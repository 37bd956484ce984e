//! Grids, physical constants, waveforms and trajectories shared by the solvers,
//! the objective and the optimizer.
//!
//! Time is discretized uniformly: `0 = t_0 < ... < t_N = T` with `t_m = m * dt`.
//! The RF control is piecewise constant on `(t_{m-1}, t_m]` for `m = 1..=N_u`
//! and zero afterwards; the slice gradient is piecewise constant on every
//! interval. Space is a uniform grid of `Z` points spanning `[-a, a]`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::mat3::{Mat3, Vec3};

/// Proton gyromagnetic ratio in rad/(s T).
pub const PROTON_GAMMA: f64 = 2.675222e8;

/// Default tesla per dimensionless control unit. Chosen so that the
/// small-tip curvature of the profile error per unit control,
/// `(gamma B1)^2 2 pi / (gamma G)`, is about 0.011 for the 20 µs multi-slice
/// setup, which reproduces the mild alpha sensitivity seen in practice
/// (energy drops by roughly 15% between alpha = 1e-5 and 1e-3). At 1 µT per
/// unit the same curvature is 0.6 and alpha would have almost no effect.
pub const DEFAULT_B1_SCALE: f64 = 0.136e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    control_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, control_steps: usize, dt: f64) -> Result<Self> {
        if control_steps == 0 || control_steps >= steps {
            return Err(Error::invalid(
                "time grid",
                format!("need 0 < control_steps < steps, got {control_steps} and {steps}"),
            ));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("time grid", format!("dt must be positive, got {dt}")));
        }
        Ok(TimeGrid {
            steps,
            control_steps,
            dt,
        })
    }

    /// Number of time steps `N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of control steps `N_u`.
    pub fn control_steps(&self) -> usize {
        self.control_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Read-out time `T = N dt`.
    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// End of the control interval `T_u = N_u dt`.
    pub fn control_duration(&self) -> f64 {
        self.control_steps as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    half_width: f64,
    points: usize,
}

impl SpaceGrid {
    pub fn new(half_width: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::invalid(
                "space grid",
                format!("need at least 2 points, got {points}"),
            ));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::invalid(
                "space grid",
                format!("half width must be positive, got {half_width}"),
            ));
        }
        Ok(SpaceGrid { half_width, points })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dz(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    /// Position of point `i`; the end points are exactly `-a` and `a`, and the
    /// grid is exactly symmetric about zero.
    pub fn position(&self, i: usize) -> f64 {
        let last = (self.points - 1) as f64;
        self.half_width * (2.0 * i as f64 - last) / last
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.position(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Gyromagnetic ratio in rad/(s T).
    pub gamma: f64,
    /// B1 amplitude in tesla per unit control.
    pub b1_scale: f64,
}

impl PhysicalConstants {
    pub fn new(gamma: f64, b1_scale: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(b1_scale > 0.0) || !gamma.is_finite() || !b1_scale.is_finite() {
            return Err(Error::invalid(
                "physical constants",
                format!("gamma and b1_scale must be positive, got {gamma} and {b1_scale}"),
            ));
        }
        Ok(PhysicalConstants { gamma, b1_scale })
    }

    /// Rotation rate per unit control, `gamma * B1` in rad/s.
    pub fn control_rate(&self) -> f64 {
        self.gamma * self.b1_scale
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            gamma: PROTON_GAMMA,
            b1_scale: DEFAULT_B1_SCALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationParams {
    inv_t1: f64,
    inv_t2: f64,
    m0_eq: f64,
    enabled: bool,
}

impl RelaxationParams {
    /// No relaxation: `A` is antisymmetric and the drive term vanishes.
    pub fn disabled() -> Self {
        RelaxationParams {
            inv_t1: 0.0,
            inv_t2: 0.0,
            m0_eq: 1.0,
            enabled: false,
        }
    }

    pub fn from_times(t1: f64, t2: f64, m0_eq: f64) -> Result<Self> {
        if !(t1 > 0.0) || !(t2 > 0.0) {
            return Err(Error::invalid(
                "relaxation",
                format!("T1 and T2 must be positive, got {t1} and {t2}"),
            ));
        }
        if !m0_eq.is_finite() {
            return Err(Error::invalid("relaxation", "M0 must be finite"));
        }
        Ok(RelaxationParams {
            inv_t1: 1.0 / t1,
            inv_t2: 1.0 / t2,
            m0_eq,
            enabled: true,
        })
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn inv_t1(&self) -> f64 {
        self.inv_t1
    }

    pub fn inv_t2(&self) -> f64 {
        self.inv_t2
    }

    pub fn m0_eq(&self) -> f64 {
        self.m0_eq
    }

    /// Constant drive `b = (0, 0, M0 / T1)`.
    pub fn drive(&self) -> Vec3 {
        [0.0, 0.0, self.m0_eq * self.inv_t1]
    }
}

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

/// Piecewise-constant RF control `(u_x, u_y)` on the control grid.
///
/// Every distinct value carries a revision number; objective caches are keyed
/// on it. Clones share the revision of their source, every mutation takes a
/// fresh one.
#[derive(Debug, Clone)]
pub struct ControlWaveform {
    dt: f64,
    samples: Vec<[f64; 2]>,
    revision: u64,
}

impl PartialEq for ControlWaveform {
    fn eq(&self, other: &Self) -> bool {
        self.dt == other.dt && self.samples == other.samples
    }
}

impl ControlWaveform {
    pub fn zeros(grid: &TimeGrid) -> Self {
        Self::from_raw(grid.dt(), vec![[0.0; 2]; grid.control_steps()])
    }

    pub fn new(grid: &TimeGrid, samples: Vec<[f64; 2]>) -> Result<Self> {
        Error::check_len("control samples", grid.control_steps(), samples.len())?;
        Self::with_dt(grid.dt(), samples)
    }

    /// A waveform that is not tied to a [`TimeGrid`]; used by test problems.
    pub fn with_dt(dt: f64, samples: Vec<[f64; 2]>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("control", format!("dt must be positive, got {dt}")));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("control", "samples must be finite"));
        }
        Ok(Self::from_raw(dt, samples))
    }

    pub(crate) fn from_raw(dt: f64, samples: Vec<[f64; 2]>) -> Self {
        ControlWaveform {
            dt,
            samples,
            revision: next_revision(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    /// Control on interval `m` (1-based); zero outside `1..=len`.
    #[inline]
    pub fn at_step(&self, m: usize) -> [f64; 2] {
        if m >= 1 && m <= self.samples.len() {
            self.samples[m - 1]
        } else {
            [0.0; 2]
        }
    }

    pub fn map_samples(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self::from_raw(self.dt, self.samples.iter().map(|&s| f(s)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map_samples(|[x, y]| [c * x, c * y])
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &ControlWaveform) -> Self {
        debug_assert_eq!(self.len(), other.len());
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| [a[0] + c * b[0], a[1] + c * b[1]])
            .collect();
        Self::from_raw(self.dt, samples)
    }

    /// In-place `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &ControlWaveform) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            a[0] += c * b[0];
            a[1] += c * b[1];
        }
        self.revision = next_revision();
    }

    /// Scaled inner product `sum_m dt (a_x b_x + a_y b_y)`, without shape checks.
    pub fn dot(&self, other: &ControlWaveform) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.dt
            * self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
                .sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Largest `|u_x|`.
    pub fn peak_x(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s[0].abs()))
    }

    /// Largest `|u_y|`.
    pub fn peak_y(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s[1].abs()))
    }
}

/// Slice-selective gradient `G_z` in T/m, one value per time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientWaveform {
    samples: Vec<f64>,
}

impl GradientWaveform {
    pub fn zeros(grid: &TimeGrid) -> Self {
        GradientWaveform {
            samples: vec![0.0; grid.steps()],
        }
    }

    pub fn constant(grid: &TimeGrid, value: f64) -> Self {
        GradientWaveform {
            samples: vec![value; grid.steps()],
        }
    }

    /// Validates length, finiteness and the slew limit between adjacent
    /// samples (including the step up from zero before the first sample).
    pub fn new(grid: &TimeGrid, samples: Vec<f64>, max_slew: f64) -> Result<Self> {
        Error::check_len("gradient samples", grid.steps(), samples.len())?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gradient", "samples must be finite"));
        }
        let limit = max_slew * grid.dt() * (1.0 + 1e-9);
        let mut prev = 0.0;
        for (m, &g) in samples.iter().enumerate() {
            if (g - prev).abs() > limit {
                return Err(Error::invalid(
                    "gradient",
                    format!(
                        "slew {:.4e} T/m/s at interval {} exceeds {max_slew:.4e}",
                        (g - prev).abs() / grid.dt(),
                        m + 1
                    ),
                ));
            }
            prev = g;
        }
        Ok(GradientWaveform { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Gradient on interval `m` (1-based).
    #[inline]
    pub fn at_step(&self, m: usize) -> f64 {
        self.samples[m - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    State,
    Adjoint,
    LinearizedState,
    LinearizedAdjoint,
}

/// Vectors `V_{m,i}` for `m = 0..=N` and every spatial point, stored point-major
/// so that each point's history is contiguous. Adjoint-type trajectories only
/// use `m = 1..=N`; their `m = 0` slot is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    kind: TrajectoryKind,
    steps: usize,
    points: usize,
    data: Vec<Vec3>,
}

impl Trajectory {
    pub(crate) fn zeros(kind: TrajectoryKind, steps: usize, points: usize) -> Self {
        Trajectory {
            kind,
            steps,
            points,
            data: vec![[0.0; 3]; (steps + 1) * points],
        }
    }

    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    /// Number of time steps `N` (the trajectory holds `N + 1` slots per point).
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn points(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn at(&self, m: usize, i: usize) -> Vec3 {
        self.data[i * (self.steps + 1) + m]
    }

    /// History of point `i`, indexed by time step.
    pub fn point(&self, i: usize) -> &[Vec3] {
        let n = self.steps + 1;
        &self.data[i * n..(i + 1) * n]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Vec3] {
        &mut self.data
    }

    pub fn terminal(&self, i: usize) -> Vec3 {
        self.at(self.steps, i)
    }

    pub fn terminal_values(&self) -> Vec<Vec3> {
        (0..self.points).map(|i| self.terminal(i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

/// Transverse direction of an excited slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlicePhase {
    PlusY,
    MinusY,
    PlusX,
    MinusX,
}

impl SlicePhase {
    /// Excited magnetization for flip angle `theta`.
    pub fn excited(self, theta: f64) -> Vec3 {
        let (s, c) = theta.sin_cos();
        match self {
            SlicePhase::PlusY => [0.0, s, c],
            SlicePhase::MinusY => [0.0, -s, c],
            SlicePhase::PlusX => [s, 0.0, c],
            SlicePhase::MinusX => [-s, 0.0, c],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDescriptor {
    pub center: f64,
    pub width: f64,
    pub phase: SlicePhase,
}

/// Desired terminal magnetization `M_d(z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetProfile {
    pub values: Vec<Vec3>,
    pub slices: Vec<SliceDescriptor>,
}

impl TargetProfile {
    pub fn equilibrium(points: usize) -> Self {
        TargetProfile {
            values: vec![[0.0, 0.0, 1.0]; points],
            slices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// System matrix `A(u; z)` of the rotating-frame Bloch equation for one time
/// interval.
pub fn bloch_matrix(
    u: [f64; 2],
    z: f64,
    consts: &PhysicalConstants,
    relax: &RelaxationParams,
    gradient: f64,
) -> Mat3 {
    let w = consts.gamma * gradient * z;
    let bx = consts.control_rate() * u[0];
    let by = consts.control_rate() * u[1];
    let r2 = relax.inv_t2;
    let r1 = relax.inv_t1;
    [[-r2, w, by], [-w, -r2, bx], [-by, -bx, -r1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grid_examples() {
        let g = TimeGrid::new(697, 512, 5e-6).unwrap();
        assert!((g.duration() - 3.485e-3).abs() < 1e-15);
        assert!((g.control_duration() - 2.56e-3).abs() < 1e-15);

        let g = TimeGrid::new(697, 512, 20e-6).unwrap();
        assert!((g.duration() - 13.94e-3).abs() < 1e-15);
        assert!((g.control_duration() - 10.24e-3).abs() < 1e-15);

        let g = TimeGrid::new(2, 1, 1.0).unwrap();
        assert_eq!((g.duration(), g.control_duration()), (2.0, 1.0));
    }

    #[test]
    fn time_grid_rejects_bad_input() {
        assert!(TimeGrid::new(10, 10, 1e-6).is_err());
        assert!(TimeGrid::new(10, 0, 1e-6).is_err());
        assert!(TimeGrid::new(10, 5, 0.0).is_err());
        assert!(TimeGrid::new(10, 5, -1.0).is_err());
    }

    #[test]
    fn space_grid_examples() {
        let g = SpaceGrid::new(0.5, 5001).unwrap();
        assert!((g.dz() - 2e-4).abs() < 1e-16);
        assert_eq!(g.position(0), -0.5);
        assert_eq!(g.position(5000), 0.5);
        assert_eq!(g.position(2500), 0.0);

        let g = SpaceGrid::new(0.5, 2).unwrap();
        assert_eq!(g.positions(), vec![-0.5, 0.5]);
        assert_eq!(g.dz(), 1.0);

        let g = SpaceGrid::new(0.05, 501).unwrap();
        assert!((g.dz() - 2e-4).abs() < 1e-16);

        assert!(SpaceGrid::new(0.5, 1).is_err());
    }

    #[test]
    fn space_grid_is_symmetric() {
        let g = SpaceGrid::new(0.025, 21).unwrap();
        for i in 0..21 {
            assert_eq!(g.position(i), -g.position(20 - i));
        }
    }

    #[test]
    fn bloch_matrix_zero_and_rotation() {
        let c = PhysicalConstants::default();
        let r = RelaxationParams::disabled();
        assert_eq!(bloch_matrix([0.0, 0.0], 0.3, &c, &r, 0.0), [[0.0; 3]; 3]);

        let omega = 1234.0;
        let z = 0.01;
        let gz = omega / (c.gamma * z);
        let a = bloch_matrix([0.0, 0.0], z, &c, &r, gz);
        assert!((a[0][1] - omega).abs() < 1e-9);
        assert!((a[1][0] + omega).abs() < 1e-9);
        for (rr, row) in a.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if !((rr, k) == (0, 1) || (rr, k) == (1, 0)) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn bloch_matrix_with_relaxation() {
        let c = PhysicalConstants::default();
        let r = RelaxationParams::from_times(0.102, 0.081, 1.0).unwrap();
        let a = bloch_matrix([1.0, 0.0], 0.0, &c, &r, 0.0);
        let gb = c.gamma * c.b1_scale;
        assert_eq!(a[1][2], gb);
        assert_eq!(a[2][1], -gb);
        assert_eq!(a[0][2], 0.0);
        assert_eq!(a[2][0], 0.0);
        assert_eq!([a[0][0], a[1][1], a[2][2]], [-1.0 / 0.081, -1.0 / 0.081, -1.0 / 0.102]);
    }

    #[test]
    fn disabled_relaxation_has_no_drive() {
        assert_eq!(RelaxationParams::disabled().drive(), [0.0; 3]);
    }

    #[test]
    fn revisions_change_on_mutation() {
        let g = TimeGrid::new(4, 2, 1.0).unwrap();
        let mut u = ControlWaveform::zeros(&g);
        let v = u.clone();
        assert_eq!(u.revision(), v.revision());
        u.axpy(1.0, &v);
        assert_ne!(u.revision(), v.revision());
    }

    #[test]
    fn gradient_slew_is_checked() {
        let g = TimeGrid::new(3, 1, 1e-5).unwrap();
        assert!(GradientWaveform::new(&g, vec![1e-3, 2e-3, 1e-3], 180.0).is_ok());
        assert!(GradientWaveform::new(&g, vec![1e-3, 5e-3, 1e-3], 180.0).is_err());
        assert!(GradientWaveform::new(&g, vec![0.0; 2], 180.0).is_err());
    }
}
