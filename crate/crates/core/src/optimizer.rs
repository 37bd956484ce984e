//! Matrix-free trust-region CG-Newton method.
//!
//! The outer loop takes Newton steps `H du = -g` solved approximately by
//! Steihaug's truncated conjugate gradients, which stop on the trust-region
//! boundary or when negative curvature is detected. Steps are accepted on
//! sufficient decrease and the radius is adapted from the ratio of actual to
//! model decrease. All inner products are the scaled ones of
//! [`ControlWaveform::dot`].
//!
//! The CG step length is `|r|^2 / <p, Hp>`, the standard form that keeps the
//! residual and direction recurrences consistent.

use std::fmt;

use log::debug;

use crate::error::{Error, Result};
use crate::model::ControlWaveform;

/// Cost, gradient and Hessian action of a smooth function of the control.
pub trait SmoothObjective {
    fn cost(&mut self, u: &ControlWaveform) -> Result<f64>;
    fn gradient(&mut self, u: &ControlWaveform) -> Result<ControlWaveform>;
    fn hessian_action(&mut self, u: &ControlWaveform, h: &ControlWaveform) -> Result<ControlWaveform>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionParams {
    pub tol_newton: f64,
    pub maxit_newton: usize,
    pub tol_cg: f64,
    pub maxit_cg: usize,
    pub rho0: f64,
    pub rho_max: f64,
    /// Radius scaling factor, `> 1`.
    pub q: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    /// Relative round-off guard. The decrease test uses
    /// `epsilon_rel * max(1, |J(u_k)|)`; the curvature test compares
    /// `<p, Hp>` against that value times `<p, p>`.
    pub epsilon_rel: f64,
}

impl Default for TrustRegionParams {
    fn default() -> Self {
        default_params()
    }
}

pub fn default_params() -> TrustRegionParams {
    TrustRegionParams {
        tol_newton: 1e-9,
        maxit_newton: 5,
        tol_cg: 1e-6,
        maxit_cg: 50,
        rho0: 1.0,
        rho_max: 2.0,
        q: 2.0,
        sigma1: 0.03,
        sigma2: 0.25,
        sigma3: 0.7,
        epsilon_rel: 1e-12,
    }
}

impl TrustRegionParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Err(Error::invalid("trust-region parameters", reason));
        if !(self.q > 1.0) {
            return fail("q must exceed 1");
        }
        if !(0.0 < self.sigma1 && self.sigma1 < self.sigma2 && self.sigma2 < self.sigma3 && self.sigma3 < 1.0) {
            return fail("need 0 < sigma1 < sigma2 < sigma3 < 1");
        }
        if !(self.rho0 > 0.0 && self.rho0 <= self.rho_max) {
            return fail("need 0 < rho0 <= rho_max");
        }
        if !(self.tol_newton > 0.0 && self.tol_cg > 0.0 && self.epsilon_rel > 0.0) {
            return fail("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Converged,
    Boundary,
    NegativeCurvature,
    MaxIterations,
}

impl fmt::Display for CgStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CgStatus::Converged => "converged",
            CgStatus::Boundary => "boundary",
            CgStatus::NegativeCurvature => "negative_curvature",
            CgStatus::MaxIterations => "maxit",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CgStep {
    pub step: ControlWaveform,
    /// `H step`, accumulated from the CG recurrences without extra actions.
    pub hessian_step: ControlWaveform,
    pub status: CgStatus,
    /// Hessian actions performed.
    pub iterations: usize,
    /// `|r_final| / |r_0|`.
    pub relative_residual: f64,
}

/// Largest `tau >= 0` with `|x + tau p| <= rho`.
fn boundary_tau(x: &ControlWaveform, p: &ControlWaveform, rho: f64) -> f64 {
    let a = p.dot(p);
    let b = 2.0 * x.dot(p);
    let c = x.dot(x) - rho * rho;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    if b > 0.0 {
        // avoids cancellation in -b + sqrt(disc)
        (-2.0 * c / (b + disc.sqrt())).max(0.0)
    } else {
        ((-b + disc.sqrt()) / (2.0 * a)).max(0.0)
    }
}

/// Steihaug truncated CG for `H du = -g` inside the ball `|du| <= rho`.
pub fn steihaug_cg<F>(
    g: &ControlWaveform,
    mut hessian: F,
    rho: f64,
    tol_cg: f64,
    maxit_cg: usize,
    epsilon: f64,
) -> Result<CgStep>
where
    F: FnMut(&ControlWaveform) -> Result<ControlWaveform>,
{
    let mut r = g.scaled(-1.0);
    let mut p = r.clone();
    let mut step = g.scaled(0.0);
    let mut h_step = g.scaled(0.0);
    let mut rr = r.dot(&r);
    let r0 = rr.sqrt();
    let mut i = 0;
    let status = loop {
        if rr.sqrt() <= tol_cg * r0 {
            break CgStatus::Converged;
        }
        if i >= maxit_cg {
            break CgStatus::MaxIterations;
        }
        let hp = hessian(&p)?;
        i += 1;
        let curvature = p.dot(&hp);
        // relative to |p|^2 so late, short directions are not misread
        if curvature < epsilon * p.dot(&p) {
            let tau = boundary_tau(&step, &p, rho);
            step.axpy(tau, &p);
            h_step.axpy(tau, &hp);
            break CgStatus::NegativeCurvature;
        }
        let alpha = rr / curvature;
        let trial = step.add_scaled(alpha, &p);
        if trial.norm() >= rho {
            let tau = boundary_tau(&step, &p, rho);
            step.axpy(tau, &p);
            h_step.axpy(tau, &hp);
            break CgStatus::Boundary;
        }
        step = trial;
        h_step.axpy(alpha, &hp);
        r.axpy(-alpha, &hp);
        let rr_next = r.dot(&r);
        let beta = rr_next / rr;
        rr = rr_next;
        p = r.add_scaled(beta, &p);
    };
    let relative_residual = if r0 > 0.0 { rr.sqrt() / r0 } else { 0.0 };
    Ok(CgStep {
        step,
        hessian_step: h_step,
        status,
        iterations: i,
        relative_residual,
    })
}

/// One outer iteration of the trust-region method.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub gradient_norm: f64,
    pub cost: f64,
    pub cg_iterations: usize,
    pub cg_status: CgStatus,
    pub actual_decrease: f64,
    pub predicted_decrease: f64,
    pub radius_before: f64,
    pub radius_after: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct TrustRegionOutcome {
    pub control: ControlWaveform,
    pub cost: f64,
    pub gradient_norm: f64,
    pub log: Vec<IterationRecord>,
    /// Set when the run ended without accepting any step.
    pub diagnostic: Option<String>,
}

impl TrustRegionOutcome {
    pub fn newton_iterations(&self) -> usize {
        self.log.len()
    }

    pub fn total_cg_steps(&self) -> usize {
        self.log.iter().map(|r| r.cg_iterations).sum()
    }
}

pub fn trust_region_newton<O: SmoothObjective + ?Sized>(
    objective: &mut O,
    u0: &ControlWaveform,
    params: &TrustRegionParams,
) -> Result<TrustRegionOutcome> {
    params.validate()?;
    let mut u = u0.clone();
    let mut cost = objective.cost(&u)?;
    let mut rho = params.rho0;
    let mut log = Vec::new();
    let mut k = 0;
    let gradient_norm = loop {
        let g = objective.gradient(&u)?;
        let gnorm = g.norm();
        if !(gnorm > params.tol_newton) || k >= params.maxit_newton {
            break gnorm;
        }
        let epsilon = params.epsilon_rel * cost.abs().max(1.0);
        let cg = {
            let u_ref = &u;
            steihaug_cg(
                &g,
                |p| objective.hessian_action(u_ref, p),
                rho,
                params.tol_cg,
                params.maxit_cg,
                epsilon,
            )?
        };
        let trial = u.add_scaled(1.0, &cg.step);
        let trial_cost = objective.cost(&trial)?;
        let actual = cost - trial_cost;
        let predicted = -0.5 * cg.step.dot(&cg.hessian_step) - cg.step.dot(&g);
        let accepted = actual > epsilon && actual > params.sigma1 * predicted;
        let radius_before = rho;
        if actual > epsilon && (actual / predicted - 1.0).abs() <= 1.0 - params.sigma3 {
            rho = (params.q * rho).min(params.rho_max);
        } else if actual <= epsilon || actual < params.sigma2 * predicted {
            rho /= params.q;
        }
        let record = IterationRecord {
            iteration: k + 1,
            gradient_norm: gnorm,
            cost,
            cg_iterations: cg.iterations,
            cg_status: cg.status,
            actual_decrease: actual,
            predicted_decrease: predicted,
            radius_before,
            radius_after: rho,
            step_norm: cg.step.norm(),
            accepted,
        };
        debug!(
            "newton {}: J={:.6e} |g|={:.3e} cg={} ({}) dJa={:.3e} dJm={:.3e} rho={}->{} {}",
            record.iteration,
            cost,
            gnorm,
            cg.iterations,
            cg.status,
            actual,
            predicted,
            radius_before,
            rho,
            if accepted { "accepted" } else { "rejected" }
        );
        log.push(record);
        if accepted {
            u = trial;
            cost = trial_cost;
        }
        k += 1;
    };
    let diagnostic = if !log.is_empty() && log.iter().all(|r| !r.accepted) {
        Some(format!("no step accepted in {} iterations", log.len()))
    } else {
        None
    };
    Ok(TrustRegionOutcome {
        control: u,
        cost,
        gradient_norm,
        log,
        diagnostic,
    })
}

/// Quadratic `J(u) = 1/2 <u - c, D (u - c)> + offset` with a pointwise
/// diagonal operator `D`, used to exercise the optimizer in isolation.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub diagonal: Vec<[f64; 2]>,
    pub center: ControlWaveform,
    pub offset: f64,
}

impl QuadraticModel {
    fn apply(&self, h: &ControlWaveform) -> ControlWaveform {
        let samples = h
            .samples()
            .iter()
            .zip(&self.diagonal)
            .map(|(v, d)| [d[0] * v[0], d[1] * v[1]])
            .collect();
        ControlWaveform::from_raw(h.dt(), samples)
    }
}

impl SmoothObjective for QuadraticModel {
    fn cost(&mut self, u: &ControlWaveform) -> Result<f64> {
        Error::check_len("control", self.center.len(), u.len())?;
        let e = u.add_scaled(-1.0, &self.center);
        Ok(0.5 * e.dot(&self.apply(&e)) + self.offset)
    }

    fn gradient(&mut self, u: &ControlWaveform) -> Result<ControlWaveform> {
        Error::check_len("control", self.center.len(), u.len())?;
        Ok(self.apply(&u.add_scaled(-1.0, &self.center)))
    }

    fn hessian_action(&mut self, _u: &ControlWaveform, h: &ControlWaveform) -> Result<ControlWaveform> {
        Error::check_len("direction", self.center.len(), h.len())?;
        Ok(self.apply(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wf(v: &[[f64; 2]]) -> ControlWaveform {
        ControlWaveform::with_dt(1.0, v.to_vec()).unwrap()
    }

    #[test]
    fn defaults_match_published_settings() {
        let p = default_params();
        assert_eq!((p.sigma1, p.sigma2, p.sigma3), (0.03, 0.25, 0.7));
        assert_eq!((p.maxit_newton, p.maxit_cg), (5, 50));
        assert_eq!((p.tol_newton, p.tol_cg), (1e-9, 1e-6));
        assert_eq!((p.rho0, p.rho_max, p.q), (1.0, 2.0, 2.0));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = default_params();
        p.sigma2 = 0.8;
        assert!(p.validate().is_err());
        let mut p = default_params();
        p.q = 1.0;
        assert!(p.validate().is_err());
        let mut p = default_params();
        p.rho0 = 3.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn identity_operator_converges_in_one_step() {
        let g = wf(&[[1.0, -2.0], [0.5, 3.0]]);
        let cg = steihaug_cg(&g, |p| Ok(p.clone()), 1e6, 1e-6, 50, 1e-12).unwrap();
        assert_eq!(cg.status, CgStatus::Converged);
        assert_eq!(cg.iterations, 1);
        assert_eq!(cg.step, g.scaled(-1.0));
    }

    #[test]
    fn identity_operator_stops_on_boundary() {
        let g = wf(&[[6.0, 0.0], [0.0, 8.0]]);
        assert!((g.norm() - 10.0).abs() < 1e-12);
        let cg = steihaug_cg(&g, |p| Ok(p.clone()), 1.0, 1e-6, 50, 1e-12).unwrap();
        assert_eq!(cg.status, CgStatus::Boundary);
        let expected = g.scaled(-0.1);
        for (a, b) in cg.step.samples().iter().zip(expected.samples()) {
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn negative_curvature_goes_to_boundary() {
        let diag = [[-2.0, 1.0]];
        let g = wf(&[[0.7, 0.0]]);
        let cg = steihaug_cg(
            &g,
            |p| Ok(p.map_samples(|[x, y]| [diag[0][0] * x, diag[0][1] * y])),
            0.5,
            1e-6,
            50,
            1e-12,
        )
        .unwrap();
        assert_eq!(cg.status, CgStatus::NegativeCurvature);
        assert!((cg.step.norm() - 0.5).abs() < 1e-12);
        assert!(cg.step.samples()[0][0] < 0.0);
    }

    #[test]
    fn zero_gradient_returns_start() {
        let mut q = QuadraticModel {
            diagonal: vec![[1.0, 2.0]; 3],
            center: wf(&[[0.5, -0.5]; 3]),
            offset: 0.0,
        };
        let u0 = q.center.clone();
        let out = trust_region_newton(&mut q, &u0, &default_params()).unwrap();
        assert_eq!(out.newton_iterations(), 0);
        assert_eq!(out.control, u0);
    }

    #[test]
    fn boundary_root_is_on_sphere() {
        let x = wf(&[[0.3, 0.1]]);
        let p = wf(&[[1.0, 2.0]]);
        let tau = boundary_tau(&x, &p, 2.0);
        assert!((x.add_scaled(tau, &p).norm() - 2.0).abs() < 1e-14);
        let tau = boundary_tau(&x, &p.scaled(-1.0), 2.0);
        assert!((x.add_scaled(-tau, &p).norm() - 2.0).abs() < 1e-14);
    }
}
