//! Discrete cost functional with adjoint gradient and Hessian action.
//!
//! ```text
//! J(u)     = 1/2 dz sum_i |M_{N,i} - M_d(z_i)|^2 + alpha/2 dt sum_m |u_m|^2
//! g_m      = alpha u_m + gamma B1 dz sum_i ( P_m^T E_x Mbar_m , P_m^T E_y Mbar_m )
//! [H h]_m  = alpha h_m + gamma B1 dz sum_i ( dP_m^T E_x Mbar_m + P_m^T E_x dMbar_m , ... )
//! ```
//!
//! `E_x`, `E_y` are the unit-rate derivatives of `A` with respect to `u_x` and
//! `u_y`, i.e. `E_x = e2 e3^T - e3 e2^T` and `E_y = e1 e3^T - e3 e1^T`, so that
//! `P^T E_x M = P_y M_z - P_z M_y` and `P^T E_y M = P_x M_z - P_z M_x`. The
//! factor `gamma B1` enters exactly once. Gradient and Hessian are the Riesz
//! representatives in the scaled inner product `<a, b> = dt sum_m a_m . b_m`,
//! which is why no `dt` appears in front of the coupling sums.
//!
//! Reductions over spatial points run in fixed chunks whose partial sums are
//! combined in chunk order, so results are bitwise identical for any number of
//! workers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mat3::{self, Vec3};
use crate::model::{ControlWaveform, TargetProfile, Trajectory};
use crate::optimizer::SmoothObjective;
use crate::solvers::BlochSystem;

const REDUCTION_CHUNK: usize = 64;
const CACHE_SLOTS: usize = 2;

/// Scaled inner product `sum_m dt (a_x b_x + a_y b_y)`.
pub fn inner_product(a: &ControlWaveform, b: &ControlWaveform) -> Result<f64> {
    Error::check_len("inner product operand", a.len(), b.len())?;
    if a.dt() != b.dt() {
        return Err(Error::invalid("inner product", "operands live on different grids"));
    }
    Ok(a.dot(b))
}

/// Number of ODE solves performed, by kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveCounts {
    pub forward: usize,
    pub adjoint: usize,
    pub linearized_forward: usize,
    pub linearized_adjoint: usize,
}

struct CacheEntry {
    revision: u64,
    state: Trajectory,
    cost: f64,
    adjoint: Option<Trajectory>,
    gradient: Option<ControlWaveform>,
}

/// Objective of one design run: Bloch system, target and control weight,
/// plus a small cache of state and adjoint trajectories keyed by control
/// revision.
pub struct Objective {
    system: BlochSystem,
    target: TargetProfile,
    alpha: f64,
    cache: Vec<CacheEntry>,
    counts: SolveCounts,
    coupling_sign: f64,
}

impl Objective {
    pub fn new(system: BlochSystem, target: TargetProfile, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
        }
        Error::check_len("target profile", system.space().points(), target.len())?;
        Ok(Objective {
            system,
            target,
            alpha,
            cache: Vec::with_capacity(CACHE_SLOTS),
            counts: SolveCounts::default(),
            coupling_sign: 1.0,
        })
    }

    pub fn system(&self) -> &BlochSystem {
        &self.system
    }

    pub fn target(&self) -> &TargetProfile {
        &self.target
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn counts(&self) -> SolveCounts {
        self.counts
    }

    pub fn reset_counts(&mut self) {
        self.counts = SolveCounts::default();
    }

    /// Flips the sign of the adjoint coupling term in gradient and Hessian.
    /// Only for exercising the derivative checks.
    #[doc(hidden)]
    pub fn corrupt_coupling_sign(&mut self, corrupt: bool) {
        self.coupling_sign = if corrupt { -1.0 } else { 1.0 };
        for entry in &mut self.cache {
            entry.gradient = None;
        }
    }

    fn lookup(&mut self, revision: u64) -> Option<&mut CacheEntry> {
        let pos = self.cache.iter().position(|e| e.revision == revision)?;
        if pos != 0 {
            let entry = self.cache.remove(pos);
            self.cache.insert(0, entry);
        }
        self.cache.first_mut()
    }

    fn ensure_state(&mut self, u: &ControlWaveform) -> Result<&mut CacheEntry> {
        if self.lookup(u.revision()).is_none() {
            let state = self.system.forward(u)?;
            self.counts.forward += 1;
            let cost = self.cost_from_state(u, &state);
            self.cache.insert(
                0,
                CacheEntry {
                    revision: u.revision(),
                    state,
                    cost,
                    adjoint: None,
                    gradient: None,
                },
            );
            self.cache.truncate(CACHE_SLOTS);
        }
        Ok(&mut self.cache[0])
    }

    fn ensure_adjoint(&mut self, u: &ControlWaveform) -> Result<()> {
        let n = self.system.time().steps();
        self.ensure_state(u)?;
        if self.cache[0].adjoint.is_none() {
            let residual: Vec<Vec3> = self
                .target
                .values
                .iter()
                .enumerate()
                .map(|(i, &md)| mat3::sub(self.cache[0].state.at(n, i), md))
                .collect();
            let adjoint = self.system.adjoint(u, &residual)?;
            self.counts.adjoint += 1;
            self.cache[0].adjoint = Some(adjoint);
        }
        Ok(())
    }

    fn cost_from_state(&self, u: &ControlWaveform, state: &Trajectory) -> f64 {
        let dz = self.system.space().dz();
        let fidelity: f64 = self
            .target
            .values
            .iter()
            .enumerate()
            .map(|(i, &md)| {
                let e = mat3::sub(state.terminal(i), md);
                mat3::dot(e, e)
            })
            .sum();
        0.5 * dz * fidelity + 0.5 * self.alpha * u.dot(u)
    }

    /// Cost `J(u)`; runs a forward solve unless `u` is cached.
    pub fn cost(&mut self, u: &ControlWaveform) -> Result<f64> {
        Ok(self.ensure_state(u)?.cost)
    }

    /// State trajectory for `u`.
    pub fn state(&mut self, u: &ControlWaveform) -> Result<&Trajectory> {
        Ok(&self.ensure_state(u)?.state)
    }

    /// Terminal magnetization `M_N` at every grid point.
    pub fn terminal(&mut self, u: &ControlWaveform) -> Result<Vec<Vec3>> {
        Ok(self.ensure_state(u)?.state.terminal_values())
    }

    /// Sums per-point contributions over fixed chunks of points, then adds
    /// the chunk partials in chunk order.
    fn reduce_points<S, I, F>(&self, init: I, f: F) -> Result<Vec<[f64; 2]>>
    where
        S: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(usize, &mut S, &mut [[f64; 2]]) -> Result<()> + Sync + Send,
    {
        let points = self.system.space().points();
        let nu = self.system.time().control_steps();
        let chunks = points.div_ceil(REDUCTION_CHUNK);
        let partials: Vec<Vec<[f64; 2]>> = self.system.install(|| {
            (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut scratch = init();
                    let mut acc = vec![[0.0; 2]; nu];
                    let end = ((c + 1) * REDUCTION_CHUNK).min(points);
                    for i in c * REDUCTION_CHUNK..end {
                        f(i, &mut scratch, &mut acc)?;
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()
        })?;
        let mut total = vec![[0.0; 2]; nu];
        for part in &partials {
            for (t, p) in total.iter_mut().zip(part) {
                t[0] += p[0];
                t[1] += p[1];
            }
        }
        Ok(total)
    }

    fn assemble(&self, base: &ControlWaveform, coupling: &[[f64; 2]]) -> ControlWaveform {
        let c = self.coupling_sign * self.system.consts().control_rate() * self.system.space().dz();
        let samples = base
            .samples()
            .iter()
            .zip(coupling)
            .map(|(b, k)| [self.alpha * b[0] + c * k[0], self.alpha * b[1] + c * k[1]])
            .collect();
        ControlWaveform::from_raw(base.dt(), samples)
    }

    /// Gradient of `J` at `u` in the scaled inner product.
    pub fn gradient(&mut self, u: &ControlWaveform) -> Result<ControlWaveform> {
        self.ensure_adjoint(u)?;
        if let Some(g) = &self.cache[0].gradient {
            return Ok(g.clone());
        }
        let entry = &self.cache[0];
        let state = &entry.state;
        let adjoint = entry.adjoint.as_ref().expect("adjoint cached");
        let nu = self.system.time().control_steps();
        let coupling = self.reduce_points(
            || (),
            |i, _, acc| {
                let ms = state.point(i);
                let ps = adjoint.point(i);
                for m in 1..=nu {
                    let mb = mat3::midpoint(ms[m], ms[m - 1]);
                    let p = ps[m];
                    acc[m - 1][0] += p[1] * mb[2] - p[2] * mb[1];
                    acc[m - 1][1] += p[0] * mb[2] - p[2] * mb[0];
                }
                Ok(())
            },
        )?;
        let g = self.assemble(u, &coupling);
        self.cache[0].gradient = Some(g.clone());
        Ok(g)
    }

    /// Hessian action `H(u) h`: one linearized-state and one
    /// linearized-adjoint solve per call.
    pub fn hessian_action(
        &mut self,
        u: &ControlWaveform,
        h: &ControlWaveform,
    ) -> Result<ControlWaveform> {
        Error::check_len("direction", u.len(), h.len())?;
        self.ensure_adjoint(u)?;
        let entry = &self.cache[0];
        let state = &entry.state;
        let adjoint = entry.adjoint.as_ref().expect("adjoint cached");
        let system = &self.system;
        let n = system.time().steps();
        let nu = system.time().control_steps();
        let coupling = self.reduce_points(
            || (vec![mat3::ZERO3; n + 1], vec![mat3::ZERO3; n + 1]),
            |i, (dm, dp), acc| {
                let ms = state.point(i);
                let ps = adjoint.point(i);
                system.linearized_state_point(u, h, i, ms, dm)?;
                system.linearized_adjoint_point(u, h, i, ps, dm[n], dp)?;
                for m in 1..=nu {
                    let mb = mat3::midpoint(ms[m], ms[m - 1]);
                    let dmb = mat3::midpoint(dm[m], dm[m - 1]);
                    let p = ps[m];
                    let q = dp[m];
                    acc[m - 1][0] += (q[1] * mb[2] - q[2] * mb[1]) + (p[1] * dmb[2] - p[2] * dmb[1]);
                    acc[m - 1][1] += (q[0] * mb[2] - q[2] * mb[0]) + (p[0] * dmb[2] - p[2] * dmb[0]);
                }
                Ok(())
            },
        )?;
        self.counts.linearized_forward += 1;
        self.counts.linearized_adjoint += 1;
        Ok(self.assemble(h, &coupling))
    }
}

impl SmoothObjective for Objective {
    fn cost(&mut self, u: &ControlWaveform) -> Result<f64> {
        Objective::cost(self, u)
    }

    fn gradient(&mut self, u: &ControlWaveform) -> Result<ControlWaveform> {
        Objective::gradient(self, u)
    }

    fn hessian_action(&mut self, u: &ControlWaveform, h: &ControlWaveform) -> Result<ControlWaveform> {
        Objective::hessian_action(self, u, h)
    }
}
