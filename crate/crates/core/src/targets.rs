//! Desired slice profiles, target smoothing, the slice-selective gradient and
//! the conventional superposed-sinc multi-slice reference pulse.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mat3::{self, Vec3};
use crate::model::{
    ControlWaveform, GradientWaveform, SliceDescriptor, SlicePhase, SpaceGrid, TargetProfile,
    TimeGrid,
};
use crate::solvers::BlochSystem;

const EQUILIBRIUM: Vec3 = [0.0, 0.0, 1.0];

/// Transverse phase schedule across slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhasePattern {
    /// Every slice along +y.
    Uniform,
    /// +y, -y, +y, ...
    AlternatingPi,
    /// +x, -x, +x, ...
    QuadratureShift,
}

impl PhasePattern {
    fn phase(self, index: usize) -> SlicePhase {
        let even = index.is_multiple_of(2);
        match (self, even) {
            (PhasePattern::Uniform, _) => SlicePhase::PlusY,
            (PhasePattern::AlternatingPi, true) => SlicePhase::PlusY,
            (PhasePattern::AlternatingPi, false) => SlicePhase::MinusY,
            (PhasePattern::QuadratureShift, true) => SlicePhase::PlusX,
            (PhasePattern::QuadratureShift, false) => SlicePhase::MinusX,
        }
    }
}

/// Equidistant rectangular slices, symmetric about `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceSpec {
    pub count: usize,
    /// Slice thickness in meters.
    pub width: f64,
    /// Center-to-center distance in meters.
    pub separation: f64,
    /// Flip angle in radians.
    pub flip: f64,
    pub pattern: PhasePattern,
}

impl SliceSpec {
    pub fn single(width: f64, flip: f64) -> Self {
        SliceSpec {
            count: 1,
            width,
            separation: 0.0,
            flip,
            pattern: PhasePattern::Uniform,
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        let mid = (self.count as f64 - 1.0) / 2.0;
        (0..self.count)
            .map(|k| (k as f64 - mid) * self.separation)
            .collect()
    }

    pub fn validate(&self, grid: &SpaceGrid) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("slices", "count must be at least 1"));
        }
        if !(self.width > 0.0) {
            return Err(Error::invalid("slices", "width must be positive"));
        }
        if !(self.flip > 0.0 && self.flip <= PI) {
            return Err(Error::invalid("slices", "flip angle must lie in (0, pi]"));
        }
        if self.count > 1 && !(self.separation >= self.width) {
            return Err(Error::invalid(
                "slices",
                format!(
                    "slices overlap: separation {} is less than width {}",
                    self.separation, self.width
                ),
            ));
        }
        let extent = self.centers().iter().fold(0.0f64, |m, c| m.max(c.abs())) + 0.5 * self.width;
        if extent > grid.half_width() {
            return Err(Error::invalid(
                "slices",
                format!("pattern reaches |z| = {extent} outside the domain [-{0}, {0}]", grid.half_width()),
            ));
        }
        Ok(())
    }

    pub fn descriptors(&self) -> Vec<SliceDescriptor> {
        self.centers()
            .into_iter()
            .enumerate()
            .map(|(k, center)| SliceDescriptor {
                center,
                width: self.width,
                phase: self.pattern.phase(k),
            })
            .collect()
    }

    /// Index of the slice containing `z`; points on a slice edge are outside.
    pub fn slice_of(&self, z: f64) -> Option<usize> {
        let half = 0.5 * self.width * (1.0 - 1e-9);
        self.centers().iter().position(|c| (z - c).abs() < half)
    }

    /// In-slice flags of the ideal rectangular pattern.
    pub fn mask(&self, grid: &SpaceGrid) -> Vec<bool> {
        grid.positions().iter().map(|&z| self.slice_of(z).is_some()).collect()
    }
}

/// Single slice centered at zero; the in-slice value is `(0, sin θ, cos θ)`.
pub fn build_single_slice_target(spec: &SliceSpec, grid: &SpaceGrid) -> Result<TargetProfile> {
    let single = SliceSpec {
        count: 1,
        pattern: PhasePattern::Uniform,
        ..*spec
    };
    build_sms_target(&single, grid)
}

/// `count` rectangular slices with the layout's phase pattern, equilibrium elsewhere.
pub fn build_sms_target(spec: &SliceSpec, grid: &SpaceGrid) -> Result<TargetProfile> {
    spec.validate(grid)?;
    let slices = spec.descriptors();
    let values = grid
        .positions()
        .iter()
        .map(|&z| match spec.slice_of(z) {
            Some(k) => slices[k].phase.excited(spec.flip),
            None => EQUILIBRIUM,
        })
        .collect();
    Ok(TargetProfile { values, slices })
}

/// The two alternating CAIPIRINHA targets: the uniform-phase pattern, and a
/// pattern with every second slice shifted by pi (odd count) or by pi/2 and
/// alternating (even count).
pub fn build_caipirinha_pair(
    spec: &SliceSpec,
    grid: &SpaceGrid,
) -> Result<(TargetProfile, TargetProfile)> {
    if spec.count < 2 {
        return Err(Error::invalid("slices", "CAIPIRINHA needs at least two slices"));
    }
    let first = build_sms_target(
        &SliceSpec {
            pattern: PhasePattern::Uniform,
            ..*spec
        },
        grid,
    )?;
    let shifted = if spec.count % 2 == 1 {
        PhasePattern::AlternatingPi
    } else {
        PhasePattern::QuadratureShift
    };
    let second = build_sms_target(
        &SliceSpec {
            pattern: shifted,
            ..*spec
        },
        grid,
    )?;
    Ok((first, second))
}

/// Normalized Gaussian weights for offsets `-K..=K` grid cells, truncated at
/// four standard deviations.
pub fn gaussian_kernel(fwhm: f64, dz: f64) -> Vec<f64> {
    let sigma = fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let half = (4.0 * sigma / dz).ceil() as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|j| {
            let x = j as f64 * dz;
            (-0.5 * (x / sigma).powi(2)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Componentwise convolution with a normalized Gaussian of the given FWHM.
/// Outside the grid the profile is continued with the equilibrium vector.
pub fn gaussian_filter(profile: &TargetProfile, fwhm: f64, grid: &SpaceGrid) -> Result<TargetProfile> {
    if !(fwhm > 0.0) {
        return Err(Error::invalid("filter", format!("FWHM must be positive, got {fwhm}")));
    }
    Error::check_len("target profile", grid.points(), profile.len())?;
    let kernel = gaussian_kernel(fwhm, grid.dz());
    let half = (kernel.len() / 2) as i64;
    let n = profile.len() as i64;
    let values = (0..n)
        .map(|i| {
            kernel.iter().enumerate().fold([0.0; 3], |acc, (k, &w)| {
                let j = i + k as i64 - half;
                let v = if (0..n).contains(&j) {
                    profile.values[j as usize]
                } else {
                    EQUILIBRIUM
                };
                mat3::add(acc, mat3::scale(w, v))
            })
        })
        .collect();
    Ok(TargetProfile {
        values,
        slices: profile.slices.clone(),
    })
}

/// Trapezoidal slice-select lobe on `[0, T_u]` followed by a negative
/// refocusing lobe on `[T_u, T]`, both ramped at (at most) the maximal slew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSpec {
    /// Plateau amplitude of the selective lobe in T/m.
    pub amplitude: f64,
    /// Maximal slew rate in T/m/s.
    pub max_slew: f64,
}

impl GradientSpec {
    /// Amplitude that maps an RF bandwidth (Hz) onto a slice width (m).
    pub fn for_slice(width: f64, bandwidth: f64, gamma: f64, max_slew: f64) -> Self {
        GradientSpec {
            amplitude: 2.0 * PI * bandwidth / (gamma * width),
            max_slew,
        }
    }

    pub fn layout(&self, grid: &TimeGrid) -> Result<GradientLayout> {
        if !(self.max_slew > 0.0) || !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::invalid(
                "gradient",
                "amplitude must be non-negative and max slew positive",
            ));
        }
        let dt = grid.dt();
        let nu = grid.control_steps();
        let nr = grid.steps() - nu;
        let ramp = ((self.amplitude / (self.max_slew * dt)) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        if 2 * ramp > nu {
            return Err(Error::invalid(
                "gradient",
                format!("ramps of {ramp} steps do not fit into {nu} control steps"),
            ));
        }
        let selective_area = self.amplitude * dt * (nu - ramp) as f64;
        let target = 0.5 * selective_area;
        let mut rephase = None;
        if self.amplitude == 0.0 {
            rephase = Some((1, 0.0));
        } else {
            for r in 1..=nr / 2 {
                let g = target / (dt * (nr - r) as f64);
                if g <= self.max_slew * dt * r as f64 * (1.0 + 1e-12) {
                    rephase = Some((r, g));
                    break;
                }
            }
        }
        let (rephase_ramp, rephase_amplitude) = rephase.ok_or_else(|| {
            Error::invalid(
                "gradient",
                format!("refocusing area {target:.4e} T s/m is not reachable in {nr} steps"),
            )
        })?;
        Ok(GradientLayout {
            amplitude: self.amplitude,
            ramp_steps: ramp,
            plateau_steps: nu - 2 * ramp,
            rephase_steps: nr,
            rephase_ramp_steps: rephase_ramp,
            rephase_amplitude,
            selective_area,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientLayout {
    pub amplitude: f64,
    pub ramp_steps: usize,
    pub plateau_steps: usize,
    pub rephase_steps: usize,
    pub rephase_ramp_steps: usize,
    /// Magnitude of the (negative) refocusing plateau.
    pub rephase_amplitude: f64,
    /// Area of the selective lobe in T s/m.
    pub selective_area: f64,
}

/// Samples one trapezoid of `len` intervals: the interval averages of linear
/// ramps over `ramp` intervals on both sides.
fn trapezoid(len: usize, ramp: usize, amplitude: f64) -> impl Iterator<Item = f64> {
    (0..len).map(move |j| {
        if j < ramp {
            amplitude * (j as f64 + 0.5) / ramp as f64
        } else if j >= len - ramp {
            amplitude * ((len - j) as f64 - 0.5) / ramp as f64
        } else {
            amplitude
        }
    })
}

pub fn build_gradient_waveform(spec: &GradientSpec, grid: &TimeGrid) -> Result<GradientWaveform> {
    let layout = spec.layout(grid)?;
    let samples: Vec<f64> = trapezoid(grid.control_steps(), layout.ramp_steps, layout.amplitude)
        .chain(
            trapezoid(layout.rephase_steps, layout.rephase_ramp_steps, layout.rephase_amplitude)
                .map(|g| -g),
        )
        .collect();
    GradientWaveform::new(grid, samples, spec.max_slew)
}

/// `sum_k cos(omega_k tau)`: real multi-band modulation placing one copy of
/// the base pulse at every slice frequency `omega_k` (rad/s).
pub fn sms_modulation(frequencies: &[f64], tau: f64) -> f64 {
    frequencies.iter().map(|w| (w * tau).cos()).sum()
}

/// Precession rate that the Crank–Nicolson step reproduces for a true
/// off-resonance `omega`: one step rotates by `2 atan(omega dt / 2)`, not by
/// `omega dt`. At 20 µs and 60 mm off-center the difference moves a slice by
/// several millimeters, so modulation frequencies are warped to match.
pub fn discrete_resonance(omega: f64, dt: f64) -> f64 {
    2.0 * (0.5 * omega * dt).atan() / dt
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Flip angle of a magnetization vector relative to +z.
pub fn flip_angle(m: Vec3) -> f64 {
    (m[0].hypot(m[1])).atan2(m[2])
}

/// Conventional multi-slice pulse: a Hamming-apodized sinc whose bandwidth
/// matches the slice width under the plateau gradient, modulated onto every
/// slice center with uniform phase (at the discrete resonance, see
/// [`discrete_resonance`]), then scaled by bisection so that the
/// simulated flip at the center of the innermost slice equals the requested
/// angle.
///
/// The pulse center sits on a sample (`t = T_u/2 - dt/2`), so its peak is
/// exactly `count` times the base pulse peak.
pub fn build_conventional_sms_pulse(
    spec: &SliceSpec,
    system: &BlochSystem,
    plateau_gradient: f64,
) -> Result<ControlWaveform> {
    spec.validate(system.space())?;
    if !(plateau_gradient > 0.0) {
        return Err(Error::invalid("gradient", "plateau amplitude must be positive"));
    }
    let time = system.time();
    let consts = system.consts();
    let dt = time.dt();
    let nu = time.control_steps();
    let center_time = 0.5 * time.control_duration() - 0.5 * dt;
    let bandwidth = consts.gamma * plateau_gradient * spec.width / (2.0 * PI);
    let frequencies: Vec<f64> = spec
        .centers()
        .iter()
        .map(|c| discrete_resonance(consts.gamma * plateau_gradient * c, dt))
        .collect();
    let shape: Vec<f64> = (1..=nu)
        .map(|m| {
            let tau = (m as f64 - 0.5) * dt - center_time;
            let window = 0.54 + 0.46 * (2.0 * PI * tau / time.control_duration()).cos();
            sinc(bandwidth * tau) * window * sms_modulation(&frequencies, tau)
        })
        .collect();
    let unit = ControlWaveform::new(time, shape.iter().map(|&v| [v, 0.0]).collect())?;

    let probe = spec.centers().iter().fold(f64::INFINITY, |m, c| if c.abs() < m.abs() { *c } else { m });
    let flip_at = |scale: f64| -> Result<f64> {
        let m = system.simulate_at(&unit.scaled(scale), &[probe])?;
        Ok(flip_angle(m[0]))
    };

    // small-tip estimate from the base area
    let base_area: f64 = (1..=nu)
        .map(|m| {
            let tau = (m as f64 - 0.5) * dt - center_time;
            sinc(bandwidth * tau) * (0.54 + 0.46 * (2.0 * PI * tau / time.control_duration()).cos()) * dt
        })
        .sum();
    let estimate = spec.flip / (consts.control_rate() * base_area);
    let mut lo = 0.0;
    let mut hi = 1.25 * estimate;
    let mut tries = 0;
    while flip_at(hi)? < spec.flip {
        lo = hi;
        hi *= 1.25;
        tries += 1;
        if tries > 20 {
            return Err(Error::Calibration(format!(
                "flip of {:.2} deg not reached below amplitude {hi:.4e}",
                spec.flip.to_degrees()
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if flip_at(mid)? < spec.flip {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let scale = 0.5 * (lo + hi);
    let err = (flip_at(scale)? - spec.flip).abs();
    if err > 1e-6 {
        return Err(Error::Calibration(format!(
            "bisection stalled with flip error {:.3e} rad",
            err
        )));
    }
    Ok(unit.scaled(scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpaceGrid {
        SpaceGrid::new(0.5, 5001).unwrap()
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (0..3).all(|k| (a[k] - b[k]).abs() <= tol)
    }

    #[test]
    fn single_slice_values() {
        let g = grid();
        let spec = SliceSpec::single(5e-3, PI / 2.0);
        let t = build_single_slice_target(&spec, &g).unwrap();
        assert!(close(t.values[2500], [0.0, 1.0, 0.0], 1e-15));
        assert_eq!(t.values[2550], [0.0, 0.0, 1.0]); // z = 10 mm
        assert_eq!(t.values.iter().filter(|v| v[2] != 1.0).count(), 25);
    }

    #[test]
    fn zero_flip_limit_is_equilibrium() {
        let g = grid();
        let spec = SliceSpec::single(5e-3, 1e-300);
        let t = build_single_slice_target(&spec, &g).unwrap();
        assert!(t.values.iter().all(|v| close(*v, [0.0, 0.0, 1.0], 1e-200)));
    }

    #[test]
    fn six_slice_centers() {
        let spec = SliceSpec {
            count: 6,
            width: 5e-3,
            separation: 25e-3,
            flip: PI / 2.0,
            pattern: PhasePattern::Uniform,
        };
        let c = spec.centers();
        let expected = [-62.5e-3, -37.5e-3, -12.5e-3, 12.5e-3, 37.5e-3, 62.5e-3];
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let g = grid();
        let t = build_sms_target(&spec, &g).unwrap();
        for k in 0..6 {
            let n = g
                .positions()
                .iter()
                .filter(|&&z| spec.slice_of(z) == Some(k))
                .count();
            let measure = n as f64 * g.dz();
            assert!((measure - spec.width).abs() <= g.dz() + 1e-12, "slice {k}: {measure}");
            assert!(t.values.iter().any(|v| v[1] == 1.0));
        }
    }

    #[test]
    fn sms_with_one_slice_is_single_slice() {
        let g = grid();
        let spec = SliceSpec::single(5e-3, 1.0);
        let sms = SliceSpec {
            separation: 25e-3,
            ..spec
        };
        assert_eq!(
            build_sms_target(&sms, &g).unwrap().values,
            build_single_slice_target(&spec, &g).unwrap().values
        );
    }

    #[test]
    fn overlapping_and_oversized_patterns_fail() {
        let g = grid();
        let overlapping = SliceSpec {
            count: 3,
            width: 5e-3,
            separation: 4e-3,
            flip: 1.0,
            pattern: PhasePattern::Uniform,
        };
        assert!(build_sms_target(&overlapping, &g).is_err());
        let outside = SliceSpec {
            count: 2,
            width: 5e-3,
            separation: 0.999,
            ..overlapping
        };
        assert!(build_sms_target(&outside, &g).is_err());
    }

    #[test]
    fn caipirinha_patterns() {
        let g = grid();
        let theta = PI / 2.0;
        let odd = SliceSpec {
            count: 5,
            width: 5e-3,
            separation: 25e-3,
            flip: theta,
            pattern: PhasePattern::Uniform,
        };
        let (first, second) = build_caipirinha_pair(&odd, &g).unwrap();
        let z2 = odd.centers()[1];
        let i2 = ((z2 + 0.5) / g.dz()).round() as usize;
        assert!(close(first.values[i2], [0.0, 1.0, 0.0], 1e-15));
        assert!(close(second.values[i2], [0.0, -1.0, 0.0], 1e-15));

        let even = SliceSpec { count: 6, ..odd };
        let (_, second) = build_caipirinha_pair(&even, &g).unwrap();
        let idx = |z: f64| ((z + 0.5) / g.dz()).round() as usize;
        let c = even.centers();
        assert!(close(second.values[idx(c[0])], [1.0, 0.0, 0.0], 1e-15));
        assert!(close(second.values[idx(c[1])], [-1.0, 0.0, 0.0], 1e-15));

        let tiny = SliceSpec {
            count: 2,
            flip: 1e-300,
            ..odd
        };
        let (a, b) = build_caipirinha_pair(&tiny, &g).unwrap();
        assert!(a.values.iter().chain(&b.values).all(|v| close(*v, [0.0, 0.0, 1.0], 1e-200)));

        assert!(build_caipirinha_pair(&SliceSpec::single(5e-3, theta), &g).is_err());
    }

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel(1.6e-3, 2e-4);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len() % 2, 1);
    }

    #[test]
    fn filter_keeps_constant_and_wide_slice_center() {
        let g = grid();
        let flat = TargetProfile::equilibrium(g.points());
        let f = gaussian_filter(&flat, 1.6e-3, &g).unwrap();
        assert!(f.values.iter().all(|v| close(*v, [0.0, 0.0, 1.0], 1e-15)));

        let wide = build_single_slice_target(&SliceSpec::single(20e-3, PI / 2.0), &g).unwrap();
        let f = gaussian_filter(&wide, 1.6e-3, &g).unwrap();
        assert!(close(f.values[2500], [0.0, 1.0, 0.0], 1e-6));
        assert!(f.values.iter().all(|v| mat3::norm(*v) <= 1.0 + 1e-12));
    }

    #[test]
    fn default_gradient_timing() {
        let t = TimeGrid::new(697, 512, 5e-6).unwrap();
        let spec = GradientSpec::for_slice(5e-3, 2350.0, crate::model::PROTON_GAMMA, 180.0);
        assert!((spec.amplitude - 11.04e-3).abs() < 0.01e-3);
        let g = build_gradient_waveform(&spec, &t).unwrap();
        assert_eq!(g.len(), 697);
        assert!((g.len() as f64 * t.dt() - 3.485e-3).abs() < 1e-12);
        let sel: f64 = g.samples()[..512].iter().sum::<f64>() * t.dt();
        let reph: f64 = g.samples()[512..].iter().sum::<f64>() * t.dt();
        assert!((reph / sel + 0.5).abs() < 0.01);
    }

    #[test]
    fn zero_amplitude_gradient() {
        let t = TimeGrid::new(697, 512, 5e-6).unwrap();
        let g = build_gradient_waveform(&GradientSpec { amplitude: 0.0, max_slew: 180.0 }, &t).unwrap();
        assert!(g.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infeasible_slew_fails() {
        let t = TimeGrid::new(20, 10, 5e-6).unwrap();
        let spec = GradientSpec {
            amplitude: 0.1,
            max_slew: 180.0,
        };
        assert!(build_gradient_waveform(&spec, &t).is_err());
    }

    #[test]
    fn modulation_at_center() {
        assert_eq!(sms_modulation(&[-9.2e3, 9.2e3], 0.0), 2.0);
    }
}
