//! The repulsive-sheet trap: separable harmonic confinement in `x` and `z`,
//! a linear tilt along `y` from the net magnetic-plus-gravitational force,
//! and a thin Gaussian light sheet that diffracts along `z`.
//!
//! ```text
//! U(x, y, z) = ½m(ω_x²x² + ω_z²z²) − m g_eff (y − y₀)
//!            + U₀ (w₀/w(z))^p exp(−2(y − y₀)²/w(z)²) · f(x)
//! w(z) = w₀ √(1 + (z/z_R)²)
//! ```
//!
//! `f(x)` is one inside the flat scan region and rolls off with a cosine
//! taper outside it. Atoms sit on the `y < y₀` side and escape towards `+y`.

use core::f64::consts::PI;

use num_traits::Float;
use thiserror::Error;

use crate::units::constants::{MICROMETER, NANOKELVIN};
use crate::units::Species;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrapError {
    #[error("trap parameter `{field}` is invalid: {value}")]
    InvalidParameter { field: &'static str, value: f64 },
    #[error("barrier does not confine: a_b = {barrier_acceleration} m/s² is not positive")]
    NonConfining { barrier_acceleration: f64 },
    #[error("no barrier: U₀ = {0} nK")]
    NoBarrier(f64),
    #[error("could not bracket the {what}")]
    Bracket { what: &'static str },
    #[error("Newton iteration for the {what} did not converge (scaled gradient {residual:e})")]
    NoConvergence { what: &'static str, residual: f64 },
}

/// Trap parameters. Lengths in metres, frequencies in rad/s, `g_eff` in
/// m/s² and the barrier height in nK.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapConfig {
    pub omega_x: f64,
    pub omega_z: f64,
    /// Net acceleration towards `+y`.
    pub g_eff: f64,
    /// Peak barrier height `U₀`, nK.
    pub barrier_height: f64,
    /// 1/e² half-width of the sheet along `y` at focus.
    pub barrier_waist: f64,
    pub rayleigh_range: f64,
    /// Half-width of the flat region of the scanned sheet along `x`.
    pub flat_halfwidth: f64,
    /// Length of the cosine taper beyond the flat region.
    pub rolloff_length: f64,
    /// Sheet centre `y₀`.
    pub barrier_center: f64,
    /// Exponent `p` of the `(w₀/w(z))^p` amplitude decay; 1 for a scanned
    /// sheet, 2 for a static round beam.
    pub sheet_exponent: f64,
}

impl TrapConfig {
    /// Measured parameters of the experiment, with the given barrier height.
    pub fn standard(barrier_height: f64) -> Self {
        Self {
            omega_x: 2.0 * PI * 86.0,
            omega_z: 2.0 * PI * 43.0,
            g_eff: 8.4,
            barrier_height,
            barrier_waist: 1.3 * MICROMETER,
            rayleigh_range: 8.0 * MICROMETER,
            flat_halfwidth: 50.0 * MICROMETER,
            rolloff_length: 10.0 * MICROMETER,
            barrier_center: 0.0,
            sheet_exponent: 1.0,
        }
    }

    pub fn with_barrier_height(mut self, barrier_height: f64) -> Self {
        self.barrier_height = barrier_height;
        self
    }

    pub fn validate(&self) -> Result<(), TrapError> {
        let positive = [
            ("omega_x", self.omega_x),
            ("omega_z", self.omega_z),
            ("g_eff", self.g_eff),
            ("barrier_waist", self.barrier_waist),
            ("rayleigh_range", self.rayleigh_range),
            ("rolloff_length", self.rolloff_length),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(TrapError::InvalidParameter { field, value });
            }
        }
        let non_negative = [
            ("barrier_height", self.barrier_height),
            ("flat_halfwidth", self.flat_halfwidth),
        ];
        for (field, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(TrapError::InvalidParameter { field, value });
            }
        }
        if !self.barrier_center.is_finite() {
            return Err(TrapError::InvalidParameter {
                field: "barrier_center",
                value: self.barrier_center,
            });
        }
        if !(self.sheet_exponent == 1.0 || self.sheet_exponent == 2.0) {
            return Err(TrapError::InvalidParameter {
                field: "sheet_exponent",
                value: self.sheet_exponent,
            });
        }
        Ok(())
    }
}

/// Critical points of the potential in the `x = 0` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapGeometry {
    /// Position of the potential minimum, m.
    pub minimum: [f64; 3],
    /// `U` at the minimum, nK.
    pub minimum_energy: f64,
    /// The two saddle points, at `+z_s` and `−z_s`.
    pub saddles: [[f64; 3]; 2],
    /// `U` at the saddles, nK.
    pub saddle_energy: f64,
    /// `U_s`: saddle energy above the minimum, nK.
    pub trap_depth: f64,
    /// Local 1/e² half-width `w(z_s)` of the sheet at the saddles, m.
    pub saddle_waist: f64,
    /// `a_b`, m/s².
    pub barrier_acceleration: f64,
    /// `ā`, m/s².
    pub reduced_acceleration: f64,
}

/// A validated trap bound to an atomic mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestTrap {
    cfg: TrapConfig,
    mass: f64,
}

/// Barrier derivatives in the `x = 0` plane.
struct BarrierTerms {
    dy: f64,
    dz: f64,
    dyy: f64,
    dyz: f64,
    dzz: f64,
}

const SCAN_STEPS_PER_WAIST: f64 = 50.0;

impl RestTrap {
    pub fn new(cfg: TrapConfig, species: &Species) -> Result<Self, TrapError> {
        cfg.validate()?;
        if !(species.mass > 0.0) {
            return Err(TrapError::InvalidParameter {
                field: "mass",
                value: species.mass,
            });
        }
        Ok(Self {
            cfg,
            mass: species.mass,
        })
    }

    pub fn config(&self) -> &TrapConfig {
        &self.cfg
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn with_barrier_height(&self, barrier_height: f64) -> Self {
        Self {
            cfg: self.cfg.with_barrier_height(barrier_height),
            mass: self.mass,
        }
    }

    /// Local 1/e² half-width of the sheet, `w(z)`.
    pub fn waist_at(&self, z: f64) -> f64 {
        let s = z / self.cfg.rayleigh_range;
        self.cfg.barrier_waist * Float::sqrt(1.0 + s * s)
    }

    fn x_envelope(&self, x: f64) -> f64 {
        let ax = Float::abs(x);
        let h = self.cfg.flat_halfwidth;
        if ax <= h {
            1.0
        } else if ax >= h + self.cfg.rolloff_length {
            0.0
        } else {
            0.5 * (1.0 + Float::cos(PI * (ax - h) / self.cfg.rolloff_length))
        }
    }

    /// Sheet potential alone at barrier height `u0`, nK.
    pub fn barrier_potential(&self, point: [f64; 3], u0: f64) -> f64 {
        let [x, y, z] = point;
        let w = self.waist_at(z);
        let eta = y - self.cfg.barrier_center;
        let amp = Float::powf(self.cfg.barrier_waist / w, self.cfg.sheet_exponent);
        u0 * amp * Float::exp(-2.0 * eta * eta / (w * w)) * self.x_envelope(x)
    }

    /// Harmonic plus tilt part, nK.
    pub fn magnetic_potential(&self, point: [f64; 3]) -> f64 {
        let [x, y, z] = point;
        let c = &self.cfg;
        let e = 0.5 * self.mass * (c.omega_x * c.omega_x * x * x + c.omega_z * c.omega_z * z * z)
            - self.mass * c.g_eff * (y - c.barrier_center);
        e / NANOKELVIN
    }

    /// `U(x, y, z)` at the configured barrier height, nK.
    pub fn potential(&self, point: [f64; 3]) -> f64 {
        self.potential_with_height(point, self.cfg.barrier_height)
    }

    /// `U(x, y, z)` with the barrier height replaced by `u0`, nK.
    pub fn potential_with_height(&self, point: [f64; 3], u0: f64) -> f64 {
        self.magnetic_potential(point) + self.barrier_potential(point, u0)
    }

    fn barrier_terms(&self, y: f64, z: f64) -> BarrierTerms {
        let c = &self.cfg;
        let p = c.sheet_exponent;
        let w0sq = c.barrier_waist * c.barrier_waist;
        let zr2 = c.rayleigh_range * c.rayleigh_range;
        let s = w0sq * (1.0 + z * z / zr2);
        let s1 = 2.0 * w0sq * z / zr2;
        let s2 = 2.0 * w0sq / zr2;
        let eta = y - c.barrier_center;

        let value = c.barrier_height * Float::powf(w0sq / s, 0.5 * p) * Float::exp(-2.0 * eta * eta / s);
        // derivatives of ln B
        let ly = -4.0 * eta / s;
        let lz = -0.5 * p * s1 / s + 2.0 * eta * eta * s1 / (s * s);
        let lyy = -4.0 / s;
        let lyz = 4.0 * eta * s1 / (s * s);
        let lzz = -0.5 * p * (s2 / s - s1 * s1 / (s * s))
            + 2.0 * eta * eta * (s2 / (s * s) - 2.0 * s1 * s1 / (s * s * s));
        BarrierTerms {
            dy: value * ly,
            dz: value * lz,
            dyy: value * (lyy + ly * ly),
            dyz: value * (lyz + ly * lz),
            dzz: value * (lzz + lz * lz),
        }
    }

    /// `(∂U/∂y, ∂U/∂z)` at `x = 0`, nK/m.
    pub fn gradient_yz(&self, y: f64, z: f64) -> [f64; 2] {
        let b = self.barrier_terms(y, z);
        let m = self.mass / NANOKELVIN;
        [
            -m * self.cfg.g_eff + b.dy,
            m * self.cfg.omega_z * self.cfg.omega_z * z + b.dz,
        ]
    }

    /// Hessian in `(y, z)` at `x = 0`, nK/m².
    pub fn hessian_yz(&self, y: f64, z: f64) -> [[f64; 2]; 2] {
        let b = self.barrier_terms(y, z);
        let m = self.mass / NANOKELVIN;
        [
            [b.dyy, b.dyz],
            [b.dyz, m * self.cfg.omega_z * self.cfg.omega_z + b.dzz],
        ]
    }

    /// Linearised barrier acceleration `a_b = 2U₀/(m w₀ √e) − g_eff` and the
    /// reduced acceleration `ā = g_eff a_b / (g_eff + a_b)`, both m/s².
    pub fn barrier_acceleration(&self) -> Result<(f64, f64), TrapError> {
        let c = &self.cfg;
        let u0 = c.barrier_height * NANOKELVIN;
        let a_b = 2.0 * u0 / (self.mass * c.barrier_waist * Float::sqrt(core::f64::consts::E)) - c.g_eff;
        if !(a_b > 0.0) {
            return Err(TrapError::NonConfining {
                barrier_acceleration: a_b,
            });
        }
        Ok((a_b, c.g_eff * a_b / (c.g_eff + a_b)))
    }

    /// Locate the potential minimum and the two saddle points and derive
    /// the trap depth.
    pub fn find_geometry(&self) -> Result<TrapGeometry, TrapError> {
        let c = &self.cfg;
        if !(c.barrier_height > 0.0) {
            return Err(TrapError::NoBarrier(c.barrier_height));
        }
        let (a_b, a_bar) = self.barrier_acceleration()?;

        let (_, y_bottom) = self
            .ridge_and_bottom(0.0)
            .ok_or(TrapError::Bracket { what: "trap minimum" })?;
        let y_bottom = y_bottom.ok_or(TrapError::Bracket { what: "trap minimum" })?;
        let (ym, zm) = self.newton(y_bottom, 0.0, "trap minimum")?;
        let h = self.hessian_yz(ym, zm);
        if !(h[0][0] > 0.0 && h[0][0] * h[1][1] - h[0][1] * h[0][1] > 0.0) {
            return Err(TrapError::Bracket { what: "trap minimum" });
        }
        let minimum = [0.0, ym, zm];
        let minimum_energy = self.potential(minimum);

        // Ridge height along z; the saddle is its lowest point.
        let m = self.mass / NANOKELVIN;
        let z_max = Float::sqrt(2.0 * (c.barrier_height + minimum_energy.abs()) / (m * c.omega_z * c.omega_z))
            .max(4.0 * c.rayleigh_range);
        let dz = c.rayleigh_range / 40.0;
        let n = (z_max / dz).ceil() as usize;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut last_valid = 0usize;
        for i in 0..=n {
            let z = i as f64 * dz;
            let Some((Some(y_r), _)) = self.ridge_and_bottom(z) else {
                break;
            };
            last_valid = i;
            let u = self.potential([0.0, y_r, z]);
            if best.map_or(true, |(_, _, bu)| u < bu) {
                best = Some((i, y_r, u));
            }
        }
        let (i_best, y_r, _) = best.ok_or(TrapError::Bracket { what: "saddle point" })?;
        if i_best == last_valid && i_best != 0 {
            return Err(TrapError::Bracket { what: "saddle point" });
        }
        let (ys, zs) = if i_best == 0 {
            // Ridge is lowest on the axis; refine along y only.
            (self.newton(y_r, 0.0, "saddle point")?.0, 0.0)
        } else {
            let (ys, zs) = self.newton(y_r, i_best as f64 * dz, "saddle point")?;
            (ys, Float::abs(zs))
        };
        let h = self.hessian_yz(ys, zs);
        let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
        if zs > 0.0 && !(det < 0.0) {
            return Err(TrapError::Bracket { what: "saddle point" });
        }
        let saddle_energy = self.potential([0.0, ys, zs]);
        Ok(TrapGeometry {
            minimum,
            minimum_energy,
            saddles: [[0.0, ys, zs], [0.0, ys, -zs]],
            saddle_energy,
            trap_depth: saddle_energy - minimum_energy,
            saddle_waist: self.waist_at(zs),
            barrier_acceleration: a_b,
            reduced_acceleration: a_bar,
        })
    }

    /// Walk from the sheet centre towards `−y` at fixed `z`. Returns the
    /// ridge (local maximum of `U` along `y`) and the well bottom (local
    /// minimum) if they exist. `None` if not even a ridge is found.
    fn ridge_and_bottom(&self, z: f64) -> Option<(Option<f64>, Option<f64>)> {
        let c = &self.cfg;
        let dy = c.barrier_waist / SCAN_STEPS_PER_WAIST;
        let y_end = c.barrier_center - 20.0 * self.waist_at(z);
        let slope = |y: f64| self.gradient_yz(y, z)[0];

        let mut y_prev = c.barrier_center;
        let mut s_prev = slope(y_prev);
        let mut ridge = None;
        let mut y = y_prev - dy;
        while y > y_end {
            let s = slope(y);
            if ridge.is_none() && s_prev <= 0.0 && s > 0.0 {
                ridge = Some(bisect(&slope, y, y_prev));
            } else if ridge.is_some() && s_prev > 0.0 && s <= 0.0 {
                return Some((ridge, Some(bisect(&slope, y, y_prev))));
            }
            y_prev = y;
            s_prev = s;
            y -= dy;
        }
        ridge.map(|r| (Some(r), None))
    }

    /// Damped Newton on `∇U = 0` in `(y, z)`.
    fn newton(&self, y0: f64, z0: f64, what: &'static str) -> Result<(f64, f64), TrapError> {
        let ly = self.cfg.barrier_waist;
        let lz = self.cfg.rayleigh_range;
        let scale = self.cfg.barrier_height.max(1e-300);
        let resid = |y: f64, z: f64| {
            let g = self.gradient_yz(y, z);
            Float::hypot(g[0] * ly, g[1] * lz) / scale
        };
        let (mut y, mut z) = (y0, z0);
        let mut r = resid(y, z);
        for _ in 0..100 {
            if r < 1e-13 {
                break;
            }
            let g = self.gradient_yz(y, z);
            let h = self.hessian_yz(y, z);
            let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
            if det == 0.0 || !det.is_finite() {
                break;
            }
            let sy = -(h[1][1] * g[0] - h[0][1] * g[1]) / det;
            let sz = -(-h[0][1] * g[0] + h[0][0] * g[1]) / det;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let (yn, zn) = (y + t * sy, z + t * sz);
                let rn = resid(yn, zn);
                if rn < r {
                    y = yn;
                    z = zn;
                    r = rn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if r < 1e-9 {
            Ok((y, z))
        } else {
            Err(TrapError::NoConvergence { what, residual: r })
        }
    }
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let fm = f(m);
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::constants::MICROMETER as UM;
    use approx::assert_relative_eq;

    fn trap(u0: f64) -> RestTrap {
        RestTrap::new(TrapConfig::standard(u0), &Species::rubidium87()).unwrap()
    }

    #[test]
    fn origin_without_barrier_is_zero() {
        assert_eq!(trap(0.0).potential([0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn barrier_peak_value() {
        let t = trap(300.0);
        assert_relative_eq!(t.barrier_potential([0.0, 0.0, 0.0], 300.0), 300.0, max_relative = 1e-15);
    }

    #[test]
    fn barrier_at_rayleigh_range() {
        let t = trap(300.0);
        let zr = 8.0 * UM;
        let w = t.waist_at(zr);
        assert_relative_eq!(w, 1.3 * UM * 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(
            t.barrier_potential([0.0, 0.0, zr], 300.0),
            300.0 / 2f64.sqrt(),
            max_relative = 1e-14
        );
        // 1/e² point sits at y = w(z_R)
        assert_relative_eq!(
            t.barrier_potential([0.0, w, zr], 300.0),
            300.0 / 2f64.sqrt() * (-2f64).exp(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn mirror_symmetry_is_exact() {
        let t = trap(290.0);
        for &(x, y, z) in &[(3.0e-6, -1.2e-6, 7.5e-6), (1e-5, 0.3e-6, 2.2e-5), (0.0, -4e-6, 1e-7)] {
            assert_eq!(t.potential([x, y, z]), t.potential([x, y, -z]));
            assert_eq!(t.potential([x, y, z]), t.potential([-x, y, z]));
        }
    }

    #[test]
    fn rolloff_is_continuous() {
        let t = trap(300.0);
        let h = 50.0 * UM;
        let a = t.barrier_potential([h, 0.0, 0.0], 300.0);
        let b = t.barrier_potential([h + 1e-12, 0.0, 0.0], 300.0);
        assert!((a - b).abs() < 1e-6);
        assert_eq!(t.barrier_potential([h + 10.0 * UM, 0.0, 0.0], 300.0), 0.0);
        let mid = t.barrier_potential([h + 5.0 * UM, 0.0, 0.0], 300.0);
        assert_relative_eq!(mid, 150.0, max_relative = 1e-12);
    }

    #[test]
    fn acceleration_at_330() {
        // mpmath: a_b = 21.0592626547..., ā = 6.0048280356...
        let (a_b, a_bar) = trap(330.0).barrier_acceleration().unwrap();
        assert_relative_eq!(a_b, 21.059_262_654_780_27, max_relative = 1e-12);
        assert_relative_eq!(a_bar, 6.004_828_035_689_127, max_relative = 1e-12);
    }

    #[test]
    fn reduced_acceleration_limits() {
        let s = Species::rubidium87();
        let c = TrapConfig::standard(1.0);
        // U₀ with a_b = g_eff exactly
        let u0 = 2.0 * c.g_eff * s.mass * c.barrier_waist * core::f64::consts::E.sqrt() / 2.0 / NANOKELVIN;
        let t = RestTrap::new(c.with_barrier_height(u0), &s).unwrap();
        let (a_b, a_bar) = t.barrier_acceleration().unwrap();
        assert_relative_eq!(a_b, c.g_eff, max_relative = 1e-12);
        assert_relative_eq!(a_bar, c.g_eff / 2.0, max_relative = 1e-12);
        let (_, a_bar) = trap(1e9).barrier_acceleration().unwrap();
        assert_relative_eq!(a_bar, c.g_eff, max_relative = 1e-5);
    }

    #[test]
    fn weak_barrier_is_non_confining() {
        assert!(matches!(trap(50.0).barrier_acceleration(), Err(TrapError::NonConfining { .. })));
    }

    #[test]
    fn acceleration_matches_inflection_slope() {
        let t = trap(330.0);
        let s = Species::rubidium87();
        let eta = -0.5 * 1.3 * UM;
        let h = 1e-11;
        let d = (t.barrier_potential([0.0, eta + h, 0.0], 330.0) - t.barrier_potential([0.0, eta - h, 0.0], 330.0))
            / (2.0 * h);
        let (a_b, _) = t.barrier_acceleration().unwrap();
        let from_slope = d * NANOKELVIN / s.mass;
        assert_relative_eq!(from_slope, a_b + 8.4, max_relative = 1e-9);
        // the analytic gradient agrees too
        let analytic = t.barrier_terms(eta, 0.0).dy * NANOKELVIN / s.mass;
        assert_relative_eq!(analytic, a_b + 8.4, max_relative = 1e-12);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let t = trap(290.0);
        for &(y, z) in &[(-0.5e-6, 9e-6), (-1.4e-6, 0.0), (0.7e-6, -13e-6)] {
            let h = 1e-10;
            let u = |y: f64, z: f64| t.potential([0.0, y, z]);
            let g = t.gradient_yz(y, z);
            let gy = (u(y + h, z) - u(y - h, z)) / (2.0 * h);
            let gz = (u(y, z + h) - u(y, z - h)) / (2.0 * h);
            assert_relative_eq!(g[0], gy, max_relative = 1e-5);
            assert_relative_eq!(g[1], gz, max_relative = 1e-5, epsilon = 1e-2);
            let hs = t.hessian_yz(y, z);
            let hh = 1e-9;
            let hyy = (t.gradient_yz(y + hh, z)[0] - t.gradient_yz(y - hh, z)[0]) / (2.0 * hh);
            let hzz = (t.gradient_yz(y, z + hh)[1] - t.gradient_yz(y, z - hh)[1]) / (2.0 * hh);
            let hyz = (t.gradient_yz(y, z + hh)[0] - t.gradient_yz(y, z - hh)[0]) / (2.0 * hh);
            let sc = hs[0][0].abs().max(hs[1][1].abs());
            assert!((hs[0][0] - hyy).abs() < 1e-6 * sc);
            assert!((hs[1][1] - hzz).abs() < 1e-6 * sc);
            assert!((hs[0][1] - hyz).abs() < 1e-6 * sc);
        }
    }

    #[test]
    fn geometry_needs_a_barrier() {
        assert!(trap(0.0).find_geometry().is_err());
    }

    #[test]
    fn geometry_at_290() {
        let t = trap(290.0);
        let g = t.find_geometry().unwrap();
        // Cross-checked against an independent scipy Nelder-Mead/bounded search.
        assert_relative_eq!(g.trap_depth, 92.368, max_relative = 1e-4);
        assert_relative_eq!(g.minimum[1], -1.42777e-6, max_relative = 1e-4);
        assert_relative_eq!(g.saddles[0][2], 9.35765e-6, max_relative = 1e-4);
        assert!(g.trap_depth < 290.0 && g.trap_depth > 0.0);
        assert_eq!(g.saddles[0][2], -g.saddles[1][2]);
        assert_eq!(g.saddles[0][1], g.saddles[1][1]);
        assert_eq!(
            t.potential(g.saddles[0]),
            t.potential(g.saddles[1]),
        );
        for p in [g.minimum, g.saddles[0], g.saddles[1]] {
            let gr = t.gradient_yz(p[1], p[2]);
            let scaled = (gr[0] * 1.3e-6).hypot(gr[1] * 8e-6) / 290.0;
            assert!(scaled < 1e-9, "gradient {scaled:e}");
        }
    }

    #[test]
    fn saddle_has_one_negative_direction() {
        let t = trap(330.0);
        let g = t.find_geometry().unwrap();
        let [_, y, z] = g.saddles[0];
        // finite-difference Hessian of the potential itself
        let u = |y: f64, z: f64| t.potential([0.0, y, z]);
        let (hy, hz) = (2e-9, 2e-8);
        let hyy = (u(y + hy, z) - 2.0 * u(y, z) + u(y - hy, z)) / (hy * hy);
        let hzz = (u(y, z + hz) - 2.0 * u(y, z) + u(y, z - hz)) / (hz * hz);
        let hyz = (u(y + hy, z + hz) - u(y + hy, z - hz) - u(y - hy, z + hz) + u(y - hy, z - hz)) / (4.0 * hy * hz);
        let det = hyy * hzz - hyz * hyz;
        assert!(det < 0.0);
        let [_, ym, zm] = g.minimum;
        let hyy = (u(ym + hy, zm) - 2.0 * u(ym, zm) + u(ym - hy, zm)) / (hy * hy);
        let hzz = (u(ym, zm + hz) - 2.0 * u(ym, zm) + u(ym, zm - hz)) / (hz * hz);
        assert!(hyy > 0.0 && hzz > 0.0);
    }

    #[test]
    fn depth_is_monotone_in_barrier_height() {
        let mut prev = 0.0;
        let mut u0 = 200.0;
        while u0 <= 400.0 {
            let g = trap(u0).find_geometry().unwrap();
            assert!(g.trap_depth > prev, "U_s not increasing at {u0}");
            assert!(g.trap_depth <= u0);
            prev = g.trap_depth;
            u0 += 10.0;
        }
    }

    #[test]
    fn static_beam_exponent() {
        let s = Species::rubidium87();
        let c = TrapConfig {
            sheet_exponent: 2.0,
            ..TrapConfig::standard(290.0)
        };
        // the ridge dies out off axis before the harmonic wall catches it
        let t = RestTrap::new(c, &s).unwrap();
        assert!(matches!(t.find_geometry(), Err(TrapError::Bracket { .. })));
        let t = RestTrap::new(c.with_barrier_height(1500.0), &s).unwrap();
        let g = t.find_geometry().unwrap();
        assert!(g.trap_depth < trap(1500.0).find_geometry().unwrap().trap_depth);
        assert!(RestTrap::new(TrapConfig { sheet_exponent: 1.5, ..c }, &s).is_err());
    }
}
