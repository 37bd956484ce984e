//! Crank–Nicolson integrators for the Bloch equation and its adjoint,
//! linearized and linearized-adjoint companions.
//!
//! With `L_m = I - dt/2 A(u_m)` and `R_m = I + dt/2 A(u_m)` the four schemes are
//!
//! ```text
//! state:              L_m M_m    = R_m M_{m-1} + dt b                        m = 1..N
//! adjoint:            L_N^T P_N  = M_N - M_d
//!                     L_m^T P_m  = R_{m+1}^T P_{m+1}                         m = N-1..1
//! linearized state:   L_m dM_m   = R_m dM_{m-1} + dt A'(h_m) Mbar_m           dM_0 = 0
//! linearized adjoint: L_N^T dP_N = dM_N + dt/2 A'(h_N)^T P_N
//!                     L_m^T dP_m = R_{m+1}^T dP_{m+1}
//!                                  + dt/2 A'(h_m)^T P_m + dt/2 A'(h_{m+1})^T P_{m+1}
//! ```
//!
//! where `Mbar_m = (M_m + M_{m-1}) / 2` and `A'(h)` is the derivative of `A`
//! with respect to the control in direction `h`. These are exact derivatives
//! of the discrete state map, so gradients and Hessian actions assembled from
//! them agree with finite differences of the discrete cost down to round-off.
//!
//! Every spatial point is integrated independently; the point loop runs on a
//! rayon pool and the results do not depend on the number of workers.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};
use crate::mat3::{self, Mat3, Vec3};
use crate::model::{
    bloch_matrix, ControlWaveform, GradientWaveform, PhysicalConstants, RelaxationParams,
    SpaceGrid, TimeGrid, Trajectory, TrajectoryKind,
};

/// Solves `[I - dt/2 A] x = rhs`.
pub fn cn_step_solve(a: &Mat3, dt: f64, rhs: Vec3) -> Result<Vec3> {
    mat3::solve(&mat3::identity_plus(-0.5 * dt, a), rhs)
}

/// `A'(h) v` for control direction `h`, with `rate = gamma * B1`.
#[inline]
fn dir_apply(rate: f64, h: [f64; 2], v: Vec3) -> Vec3 {
    [
        rate * h[1] * v[2],
        rate * h[0] * v[2],
        -rate * (h[1] * v[0] + h[0] * v[1]),
    ]
}

/// `A'(h)^T v`.
#[inline]
fn dir_apply_t(rate: f64, h: [f64; 2], v: Vec3) -> Vec3 {
    [
        -rate * h[1] * v[2],
        -rate * h[0] * v[2],
        rate * (h[1] * v[0] + h[0] * v[1]),
    ]
}

/// `x + c * m v`.
#[inline]
fn explicit_half(x: Vec3, c: f64, m: &Mat3, v: Vec3) -> Vec3 {
    mat3::add(x, mat3::scale(c, mat3::mat_vec(m, v)))
}

/// Discretized Bloch system: grids, physics and the fixed slice gradient.
#[derive(Debug, Clone)]
pub struct BlochSystem {
    time: TimeGrid,
    space: SpaceGrid,
    consts: PhysicalConstants,
    relax: RelaxationParams,
    gradient: GradientWaveform,
    positions: Vec<f64>,
    initial: Vec<Vec3>,
    pool: Option<Arc<ThreadPool>>,
}

impl BlochSystem {
    /// Starts every point at equilibrium `M0 (0, 0, 1)`.
    pub fn new(
        time: TimeGrid,
        space: SpaceGrid,
        consts: PhysicalConstants,
        relax: RelaxationParams,
        gradient: GradientWaveform,
    ) -> Result<Self> {
        Error::check_len("gradient samples", time.steps(), gradient.len())?;
        let positions = space.positions();
        let initial = vec![[0.0, 0.0, relax.m0_eq()]; space.points()];
        Ok(BlochSystem {
            time,
            space,
            consts,
            relax,
            gradient,
            positions,
            initial,
            pool: None,
        })
    }

    pub fn with_initial(mut self, initial: Vec<Vec3>) -> Result<Self> {
        Error::check_len("initial magnetization", self.space.points(), initial.len())?;
        self.initial = initial;
        Ok(self)
    }

    /// Runs the point loops on a dedicated pool of `workers` threads;
    /// `0` uses the global rayon pool.
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.pool = if workers == 0 {
            None
        } else {
            let pool = ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::invalid("worker count", e.to_string()))?;
            Some(Arc::new(pool))
        };
        Ok(self)
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn consts(&self) -> &PhysicalConstants {
        &self.consts
    }

    pub fn relax(&self) -> &RelaxationParams {
        &self.relax
    }

    pub fn gradient(&self) -> &GradientWaveform {
        &self.gradient
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn initial(&self) -> &[Vec3] {
        &self.initial
    }

    pub(crate) fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    fn check_control(&self, what: &'static str, u: &ControlWaveform) -> Result<()> {
        Error::check_len(what, self.time.control_steps(), u.len())?;
        if u.dt() != self.time.dt() {
            return Err(Error::invalid(
                "control",
                format!("{what} has dt {} but the grid uses {}", u.dt(), self.time.dt()),
            ));
        }
        Ok(())
    }

    fn check_trajectory(&self, what: &'static str, t: &Trajectory) -> Result<()> {
        Error::check_len(what, self.time.steps(), t.steps())?;
        Error::check_len(what, self.space.points(), t.points())
    }

    #[inline]
    fn matrix(&self, u: &ControlWaveform, m: usize, z: f64) -> Mat3 {
        bloch_matrix(
            u.at_step(m),
            z,
            &self.consts,
            &self.relax,
            self.gradient.at_step(m),
        )
    }

    fn integrate_state(&self, u: &ControlWaveform, z: f64, m0: Vec3, out: &mut [Vec3]) -> Result<()> {
        let half = 0.5 * self.time.dt();
        let drive = mat3::scale(self.time.dt(), self.relax.drive());
        out[0] = m0;
        for m in 1..=self.time.steps() {
            let a = self.matrix(u, m, z);
            let rhs = mat3::add(explicit_half(out[m - 1], half, &a, out[m - 1]), drive);
            out[m] = mat3::solve(&mat3::identity_plus(-half, &a), rhs)?;
        }
        Ok(())
    }

    pub(crate) fn state_point(&self, u: &ControlWaveform, i: usize, out: &mut [Vec3]) -> Result<()> {
        self.integrate_state(u, self.positions[i], self.initial[i], out)
    }

    pub(crate) fn adjoint_point(
        &self,
        u: &ControlWaveform,
        i: usize,
        residual: Vec3,
        out: &mut [Vec3],
    ) -> Result<()> {
        let n = self.time.steps();
        let half = 0.5 * self.time.dt();
        let z = self.positions[i];
        let mut at_next = mat3::transpose(&self.matrix(u, n, z));
        out[0] = mat3::ZERO3;
        out[n] = mat3::solve(&mat3::identity_plus(-half, &at_next), residual)?;
        for m in (1..n).rev() {
            let at = mat3::transpose(&self.matrix(u, m, z));
            let rhs = explicit_half(out[m + 1], half, &at_next, out[m + 1]);
            out[m] = mat3::solve(&mat3::identity_plus(-half, &at), rhs)?;
            at_next = at;
        }
        Ok(())
    }

    pub(crate) fn linearized_state_point(
        &self,
        u: &ControlWaveform,
        h: &ControlWaveform,
        i: usize,
        state: &[Vec3],
        out: &mut [Vec3],
    ) -> Result<()> {
        let dt = self.time.dt();
        let half = 0.5 * dt;
        let rate = self.consts.control_rate();
        let z = self.positions[i];
        out[0] = mat3::ZERO3;
        for m in 1..=self.time.steps() {
            let a = self.matrix(u, m, z);
            let mbar = mat3::midpoint(state[m], state[m - 1]);
            let source = mat3::scale(dt, dir_apply(rate, h.at_step(m), mbar));
            let rhs = mat3::add(explicit_half(out[m - 1], half, &a, out[m - 1]), source);
            out[m] = mat3::solve(&mat3::identity_plus(-half, &a), rhs)?;
        }
        Ok(())
    }

    pub(crate) fn linearized_adjoint_point(
        &self,
        u: &ControlWaveform,
        h: &ControlWaveform,
        i: usize,
        adjoint: &[Vec3],
        delta_terminal: Vec3,
        out: &mut [Vec3],
    ) -> Result<()> {
        let n = self.time.steps();
        let half = 0.5 * self.time.dt();
        let rate = self.consts.control_rate();
        let z = self.positions[i];
        let mut at_next = mat3::transpose(&self.matrix(u, n, z));
        let mut src_next = mat3::scale(half, dir_apply_t(rate, h.at_step(n), adjoint[n]));
        out[0] = mat3::ZERO3;
        out[n] = mat3::solve(
            &mat3::identity_plus(-half, &at_next),
            mat3::add(delta_terminal, src_next),
        )?;
        for m in (1..n).rev() {
            let at = mat3::transpose(&self.matrix(u, m, z));
            let src = mat3::scale(half, dir_apply_t(rate, h.at_step(m), adjoint[m]));
            let rhs = mat3::add(
                explicit_half(out[m + 1], half, &at_next, out[m + 1]),
                mat3::add(src, src_next),
            );
            out[m] = mat3::solve(&mat3::identity_plus(-half, &at), rhs)?;
            at_next = at;
            src_next = src;
        }
        Ok(())
    }

    /// Magnetization history for control `u` (zero beyond `N_u`).
    pub fn forward(&self, u: &ControlWaveform) -> Result<Trajectory> {
        self.check_control("control", u)?;
        let n = self.time.steps();
        let mut traj = Trajectory::zeros(TrajectoryKind::State, n, self.space.points());
        self.install(|| {
            traj.data_mut()
                .par_chunks_mut(n + 1)
                .enumerate()
                .try_for_each(|(i, out)| self.state_point(u, i, out))
        })?;
        Ok(traj)
    }

    /// Adjoint history for terminal residuals `M_N - M_d`.
    pub fn adjoint(&self, u: &ControlWaveform, residual: &[Vec3]) -> Result<Trajectory> {
        self.check_control("control", u)?;
        Error::check_len("terminal residual", self.space.points(), residual.len())?;
        let n = self.time.steps();
        let mut traj = Trajectory::zeros(TrajectoryKind::Adjoint, n, self.space.points());
        self.install(|| {
            traj.data_mut()
                .par_chunks_mut(n + 1)
                .enumerate()
                .try_for_each(|(i, out)| self.adjoint_point(u, i, residual[i], out))
        })?;
        Ok(traj)
    }

    /// Directional derivative `dM` of the state in direction `h`.
    pub fn linearized_forward(
        &self,
        u: &ControlWaveform,
        h: &ControlWaveform,
        state: &Trajectory,
    ) -> Result<Trajectory> {
        self.check_control("control", u)?;
        self.check_control("direction", h)?;
        self.check_trajectory("state trajectory", state)?;
        let n = self.time.steps();
        let mut traj = Trajectory::zeros(TrajectoryKind::LinearizedState, n, self.space.points());
        self.install(|| {
            traj.data_mut()
                .par_chunks_mut(n + 1)
                .enumerate()
                .try_for_each(|(i, out)| self.linearized_state_point(u, h, i, state.point(i), out))
        })?;
        Ok(traj)
    }

    /// Directional derivative `dP` of the adjoint in direction `h`, given the
    /// terminal linearized state `dM_N`.
    pub fn linearized_adjoint(
        &self,
        u: &ControlWaveform,
        h: &ControlWaveform,
        adjoint: &Trajectory,
        delta_terminal: &[Vec3],
    ) -> Result<Trajectory> {
        self.check_control("control", u)?;
        self.check_control("direction", h)?;
        self.check_trajectory("adjoint trajectory", adjoint)?;
        Error::check_len("terminal linearized state", self.space.points(), delta_terminal.len())?;
        let n = self.time.steps();
        let mut traj =
            Trajectory::zeros(TrajectoryKind::LinearizedAdjoint, n, self.space.points());
        self.install(|| {
            traj.data_mut()
                .par_chunks_mut(n + 1)
                .enumerate()
                .try_for_each(|(i, out)| {
                    self.linearized_adjoint_point(u, h, i, adjoint.point(i), delta_terminal[i], out)
                })
        })?;
        Ok(traj)
    }

    /// Terminal magnetization at arbitrary positions, starting from
    /// equilibrium. Used for flip-angle calibration.
    pub fn simulate_at(&self, u: &ControlWaveform, positions: &[f64]) -> Result<Vec<Vec3>> {
        self.check_control("control", u)?;
        let n = self.time.steps();
        let m0 = [0.0, 0.0, self.relax.m0_eq()];
        let mut scratch = vec![mat3::ZERO3; n + 1];
        positions
            .iter()
            .map(|&z| {
                self.integrate_state(u, z, m0, &mut scratch)?;
                Ok(scratch[n])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let x = cn_step_solve(&[[0.0; 3]; 3], 0.1, [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn hand_eliminated_rotation_step() {
        // omega dt / 2 = 1: [[1,-1,0],[1,1,0],[0,0,1]] x = (1,0,0)
        let a = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let x = cn_step_solve(&a, 2.0, [1.0, 0.0, 0.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!((x[1] + 0.5).abs() < 1e-15);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn direction_matrix_transpose_pair() {
        let h = [0.3, -1.7];
        let v = [0.2, 0.5, -0.9];
        let w = [-1.1, 0.4, 0.6];
        let lhs = mat3::dot(w, dir_apply(2.0, h, v));
        let rhs = mat3::dot(dir_apply_t(2.0, h, w), v);
        assert!((lhs - rhs).abs() < 1e-15);
    }
}
