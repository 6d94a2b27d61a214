//! Single-particle 1D tunneling through barrier profiles.
//!
//! Profiles are sampled at cell centres on a uniform grid and treated as
//! piecewise constant for the transfer-matrix method. In each cell the wave
//! is `A e^{ik(y−y_j)} + B e^{−ik(y−y_j)}` with `k = √(2m(E − V))/ħ`, purely
//! imaginary in forbidden cells. Matrix products are kept in a mantissa and
//! log-scale pair so thick barriers do not overflow.

use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;
use thiserror::Error;

use crate::linalg::fit_line;
use crate::quad::adaptive_simpson;
use crate::trap::TrapGeometry;
use crate::units::constants::{HBAR, NANOKELVIN};
use crate::units::Species;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransferError {
    #[error("profile needs at least 3 finite samples and a positive spacing")]
    BadProfile,
    #[error("energy {0} nK must be positive")]
    NonPositiveEnergy(f64),
    #[error("energy {energy} nK has no propagating mode in the leads ({left} nK, {right} nK)")]
    BelowAsymptote { energy: f64, left: f64, right: f64 },
    #[error("energy {energy} nK is not below the barrier peak {peak} nK")]
    AbovePeak { energy: f64, peak: f64 },
    #[error("transfer matrix became non-finite")]
    NonFinite,
    #[error("ln T not converged at {0} slabs")]
    NotConverged(usize),
    #[error("slope fit needs at least 5 distinct energies below the peak")]
    DegenerateFit,
}

/// How the "width" of a Gaussian barrier is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WidthConvention {
    /// 1/e² half-width, `V ∝ exp(−2y²/w²)`.
    #[default]
    Waist,
    /// Full width at half maximum.
    Fwhm,
}

impl WidthConvention {
    /// Convert a width in this convention to a 1/e² half-width.
    pub fn to_waist(self, width: f64) -> f64 {
        match self {
            Self::Waist => width,
            Self::Fwhm => width / Float::sqrt(2.0 * core::f64::consts::LN_2),
        }
    }
}

/// Potential samples `V(y)` in nK at cell centres `start + (i + ½) spacing`.
/// The first and last samples are the asymptotic lead levels.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierProfile1D {
    start: f64,
    spacing: f64,
    values: Vec<f64>,
}

impl BarrierProfile1D {
    pub fn from_samples(start: f64, spacing: f64, values: Vec<f64>) -> Result<Self, TransferError> {
        if values.len() < 3 || !(spacing > 0.0) || !start.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(TransferError::BadProfile);
        }
        Ok(Self { start, spacing, values })
    }

    /// Sample `f` at the centres of `cells` equal cells spanning `[lo, hi]`.
    pub fn from_fn(f: impl Fn(f64) -> f64, lo: f64, hi: f64, cells: usize) -> Result<Self, TransferError> {
        if !(hi > lo) || cells < 3 {
            return Err(TransferError::BadProfile);
        }
        let spacing = (hi - lo) / cells as f64;
        let values = (0..cells).map(|i| f(lo + (i as f64 + 0.5) * spacing)).collect();
        Self::from_samples(lo, spacing, values)
    }

    /// Gaussian barrier of peak `height` (nK) centred at zero, spanning
    /// five 1/e² half-widths on each side.
    pub fn gaussian(height: f64, width: f64, convention: WidthConvention, cells: usize) -> Result<Self, TransferError> {
        let w = convention.to_waist(width);
        Self::from_fn(|y| height * Float::exp(-2.0 * y * y / (w * w)), -5.0 * w, 5.0 * w, cells)
    }

    /// Rectangular barrier of `height` over `[0, width]` with flat zero
    /// leads of `pad` cells on each side, `cells_inside` cells across it.
    pub fn square(height: f64, width: f64, cells_inside: usize, pad: usize) -> Result<Self, TransferError> {
        let spacing = width / cells_inside as f64;
        let n = cells_inside + 2 * pad;
        let values = (0..n)
            .map(|i| if i >= pad && i < pad + cells_inside { height } else { 0.0 })
            .collect();
        Self::from_samples(-(pad as f64) * spacing, spacing, values)
    }

    /// Gaussian of height `U_s` and the local sheet width at the saddle.
    pub fn saddle_point(geometry: &TrapGeometry, convention: WidthConvention, cells: usize) -> Result<Self, TransferError> {
        let width = match convention {
            WidthConvention::Waist => geometry.saddle_waist,
            WidthConvention::Fwhm => geometry.saddle_waist,
        };
        Self::gaussian(geometry.trap_depth, width, convention, cells)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, i: usize) -> f64 {
        self.start + (i as f64 + 0.5) * self.spacing
    }

    pub fn leads(&self) -> (f64, f64) {
        (self.values[0], self.values[self.values.len() - 1])
    }

    /// Index and value of the highest sample.
    pub fn peak(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
    }

    /// Full width where the barrier (above its higher lead) falls to
    /// `e^{−1/2}` of its peak; equals the 1/e² half-width for a Gaussian.
    pub fn width_at_inv_sqrt_e(&self) -> f64 {
        let (ip, vp) = self.peak();
        let (l, r) = self.leads();
        let base = l.max(r);
        let level = base + (vp - base) * Float::exp(-0.5);
        let crossing = |range: &mut dyn Iterator<Item = usize>, step: isize| -> f64 {
            let mut prev = ip;
            for i in range {
                if self.values[i] < level {
                    let (y0, v0) = (self.position(prev), self.values[prev]);
                    let (y1, v1) = (self.position(i), self.values[i]);
                    return y0 + (y1 - y0) * (v0 - level) / (v0 - v1);
                }
                prev = i;
            }
            self.position(if step < 0 { 0 } else { self.values.len() - 1 })
        };
        let left = crossing(&mut (0..ip).rev(), -1);
        let right = crossing(&mut (ip + 1..self.values.len()), 1);
        right - left
    }

    /// Linear interpolation between cell centres, constant beyond the ends.
    pub fn value_at(&self, y: f64) -> f64 {
        let u = (y - self.start) / self.spacing - 0.5;
        let n = self.values.len();
        if u <= 0.0 {
            return self.values[0];
        }
        if u >= (n - 1) as f64 {
            return self.values[n - 1];
        }
        let i = Float::floor(u) as usize;
        let t = u - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Same profile with every cell split in two, resampled by linear
    /// interpolation.
    pub fn refined(&self) -> Self {
        let spacing = 0.5 * self.spacing;
        let n = 2 * self.values.len();
        let values = (0..n)
            .map(|i| self.value_at(self.start + (i as f64 + 0.5) * spacing))
            .collect();
        Self {
            start: self.start,
            spacing,
            values,
        }
    }

    /// Multiply all potential values by `energy` and all lengths by `length`.
    pub fn scaled(&self, energy: f64, length: f64) -> Self {
        Self {
            start: self.start * length,
            spacing: self.spacing * length,
            values: self.values.iter().map(|v| v * energy).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub t: f64,
    pub r: f64,
    pub ln_t: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransmissionCurve {
    pub energies: Vec<f64>,
    pub t: Vec<f64>,
    pub ln_t: Vec<f64>,
}

type Mat2 = [[Complex64; 2]; 2];

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Wavenumber `√(2m(E − V))/ħ` for energies in nK; imaginary when `V > E`.
fn wavenumber(mass: f64, kinetic_nk: f64) -> Complex64 {
    let de = if kinetic_nk == 0.0 { 1e-12 } else { kinetic_nk };
    Complex64::new(2.0 * mass * de * NANOKELVIN, 0.0).sqrt() / HBAR
}

/// Interface matrix from a region with wavenumber `ka` into one with `kb`.
fn interface(ka: Complex64, kb: Complex64) -> Mat2 {
    let r = ka / kb;
    let one = Complex64::new(1.0, 0.0);
    let p = (one + r) * 0.5;
    let m = (one - r) * 0.5;
    [[p, m], [m, p]]
}

fn propagation(k: Complex64, width: f64) -> Mat2 {
    let ph = Complex64::i() * k * width;
    let z = Complex64::new(0.0, 0.0);
    [[ph.exp(), z], [z, (-ph).exp()]]
}

/// Flux-normalised step into a slab of wavenumber `k_slab` and across it:
/// `√(k_slab/k_in) · P(k_slab, width) · I(k_in → k_slab)`, unit determinant.
pub fn flux_normalized_step(k_in: Complex64, k_slab: Complex64, width: f64) -> [[Complex64; 2]; 2] {
    let s = (k_slab / k_in).sqrt();
    let m = mul(&propagation(k_slab, width), &interface(k_in, k_slab));
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

/// Determinant of a 2×2 complex matrix.
pub fn det2(m: &[[Complex64; 2]; 2]) -> Complex64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Transmission and reflection probabilities at energy `energy` (nK).
pub fn transmission(profile: &BarrierProfile1D, energy: f64, species: &Species) -> Result<Transmission, TransferError> {
    if !(energy > 0.0) {
        return Err(TransferError::NonPositiveEnergy(energy));
    }
    let (left, right) = profile.leads();
    if !(energy > left && energy > right) {
        return Err(TransferError::BelowAsymptote { energy, left, right });
    }
    let m = species.mass;
    let k_left = wavenumber(m, energy - left);
    let k_right = wavenumber(m, energy - right);

    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut mat: Mat2 = [[one, zero], [zero, one]];
    let mut log_scale = 0.0;
    let mut k_prev = k_left;
    for &v in profile.values() {
        let k = wavenumber(m, energy - v);
        let step = mul(&propagation(k, profile.spacing), &interface(k_prev, k));
        mat = mul(&step, &mat);
        let big = mat
            .iter()
            .flatten()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        if !(big.is_finite() && big > 0.0) {
            return Err(TransferError::NonFinite);
        }
        for c in mat.iter_mut().flatten() {
            *c /= big;
        }
        log_scale += Float::ln(big);
        k_prev = k;
    }
    mat = mul(&interface(k_prev, k_right), &mat);

    let m22 = mat[1][1].norm();
    let m21 = mat[1][0].norm();
    if !(m22.is_finite() && m22 > 0.0) {
        return Err(TransferError::NonFinite);
    }
    // det M = k_L/k_R exactly, so t = det M / M22.
    let ln_t = Float::ln(k_left.re / k_right.re) - 2.0 * (log_scale + Float::ln(m22));
    let r = (m21 / m22) * (m21 / m22);
    Ok(Transmission {
        t: Float::exp(ln_t).min(1.0),
        r,
        ln_t,
    })
}

pub fn transmission_curve(
    profile: &BarrierProfile1D,
    energies: &[f64],
    species: &Species,
) -> Result<TransmissionCurve, TransferError> {
    let mut curve = TransmissionCurve::default();
    for &e in energies {
        let tr = transmission(profile, e, species)?;
        curve.energies.push(e);
        curve.t.push(tr.t);
        curve.ln_t.push(tr.ln_t);
    }
    Ok(curve)
}

/// `|ln T(refined) − ln T|` after splitting every slab in two.
pub fn refinement_delta(profile: &BarrierProfile1D, energy: f64, species: &Species) -> Result<f64, TransferError> {
    let a = transmission(profile, energy, species)?.ln_t;
    let b = transmission(&profile.refined(), energy, species)?.ln_t;
    Ok(Float::abs(b - a))
}

/// `ln T` for a potential given as a function, resampled on doubling slab
/// counts (starting from `cells`) until successive values differ by less
/// than `1e-6`. Returns `(ln T, cells used)`.
pub fn converged_log_transmission(
    v: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    cells: usize,
    energy: f64,
    species: &Species,
) -> Result<(f64, usize), TransferError> {
    const TOL: f64 = 1e-6;
    const MAX_CELLS: usize = 1 << 22;
    let mut n = cells.max(3);
    let mut prev = transmission(&BarrierProfile1D::from_fn(&v, lo, hi, n)?, energy, species)?.ln_t;
    while n < MAX_CELLS {
        n *= 2;
        let next = transmission(&BarrierProfile1D::from_fn(&v, lo, hi, n)?, energy, species)?.ln_t;
        if Float::abs(next - prev) < TOL {
            return Ok((next, n));
        }
        prev = next;
    }
    Err(TransferError::NotConverged(n))
}

/// Semiclassical `ln T = −2∫√(2m(V − E))/ħ dy` between the turning points
/// around the highest sample of `profile`.
pub fn wkb_log_transmission(profile: &BarrierProfile1D, energy: f64, species: &Species) -> Result<f64, TransferError> {
    let (ip, _) = profile.peak();
    let n = profile.len();
    let lo = profile.position(0);
    let hi = profile.position(n - 1);
    wkb_log_transmission_fn(|y| profile.value_at(y), lo, hi, profile.position(ip), energy, species)
}

/// WKB exponent for an arbitrary potential `v` (nK of metres), searching for
/// turning points outward from `peak` within `[lo, hi]`.
pub fn wkb_log_transmission_fn(
    v: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    peak: f64,
    energy: f64,
    species: &Species,
) -> Result<f64, TransferError> {
    let vp = v(peak);
    if !(energy < vp) {
        return Err(TransferError::AbovePeak { energy, peak: vp });
    }
    let excess = |y: f64| v(y) - energy;
    let scan = |to: f64| -> Result<f64, TransferError> {
        let steps = 4096;
        let mut prev = peak;
        for i in 1..=steps {
            let y = peak + (to - peak) * i as f64 / steps as f64;
            if excess(y) <= 0.0 {
                return Ok(bisect_root(&excess, prev, y));
            }
            prev = y;
        }
        Err(TransferError::AbovePeak { energy, peak: vp })
    };
    let a = scan(lo)?;
    let b = scan(hi)?;
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let k_scale = Float::sqrt(2.0 * species.mass * NANOKELVIN) / HBAR;
    // y = c − h cos θ removes the square-root behaviour at the endpoints.
    let integrand = |theta: f64| {
        let y = c - h * Float::cos(theta);
        Float::sqrt(excess(y).max(0.0)) * h * Float::sin(theta)
    };
    let rough = Float::sqrt(vp - energy) * 2.0 * h;
    let integral = adaptive_simpson(&integrand, 0.0, core::f64::consts::PI, 1e-11 * rough.max(1e-300));
    Ok(-2.0 * k_scale * integral)
}

fn bisect_root(f: &impl Fn(f64) -> f64, mut inside: f64, mut outside: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (inside + outside);
        if m == inside || m == outside {
            break;
        }
        if f(m) > 0.0 {
            inside = m;
        } else {
            outside = m;
        }
    }
    0.5 * (inside + outside)
}

/// Least-squares slope of `ln T` against `E` over `[e_lo, e_hi]` sampled at
/// `samples` energies, nK⁻¹.
pub fn beta_slope(
    profile: &BarrierProfile1D,
    e_lo: f64,
    e_hi: f64,
    samples: usize,
    species: &Species,
) -> Result<f64, TransferError> {
    let (_, peak) = profile.peak();
    if samples < 5 || !(e_hi > e_lo) {
        return Err(TransferError::DegenerateFit);
    }
    if e_hi > peak {
        return Err(TransferError::AbovePeak { energy: e_hi, peak });
    }
    let energies: Vec<f64> = (0..samples)
        .map(|i| e_lo + (e_hi - e_lo) * i as f64 / (samples - 1) as f64)
        .collect();
    let curve = transmission_curve(profile, &energies, species)?;
    fit_line(&curve.energies, &curve.ln_t)
        .map(|(_, slope)| slope)
        .filter(|s| s.is_finite())
        .ok_or(TransferError::DegenerateFit)
}

/// Order-of-magnitude rate `ν T` with attempt frequency `ν = ω̄/2π`. Not a
/// quantitative model; only useful for overlays.
pub fn qualitative_rate(ln_t: f64, omega_bar: f64) -> f64 {
    omega_bar / (2.0 * core::f64::consts::PI) * Float::exp(ln_t)
}
