//! Analysis of atom-number traces: local decay rates, the exponential
//! `Γ = Γ_bg + exp(α + βμ)` fit and spill / tunneling / background labels.
//!
//! Times are in ms, rates in s⁻¹ and chemical potentials in nK.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use thiserror::Error;

use crate::linalg::{fit_line, invert, solve};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservablesError {
    #[error("series lengths differ: {0} timestamps, {1} values")]
    LengthMismatch(usize, usize),
    #[error("timestamps must be finite and strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("value at index {0} must be positive")]
    NonPositive(usize),
    #[error("series are not sampled at the same times")]
    Misaligned,
    #[error("fit did not converge after {0} iterations")]
    NotConverged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    AtomNumber,
    ChemicalPotential,
    DecayRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    kind: ValueKind,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, kind: ValueKind) -> Result<Self, ObservablesError> {
        if times.len() != values.len() {
            return Err(ObservablesError::LengthMismatch(times.len(), values.len()));
        }
        for i in 0..times.len() {
            if !times[i].is_finite() || (i > 0 && !(times[i] > times[i - 1])) {
                return Err(ObservablesError::NotIncreasing(i));
            }
            if !values[i].is_finite() {
                return Err(ObservablesError::NonFinite(i));
            }
        }
        Ok(Self { times, values, kind })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Linear interpolation at `t`, clamped to the end values.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.len();
        if n == 0 {
            return f64::NAN;
        }
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&x| x <= t) - 1;
        let f = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }

    /// This series resampled on the timestamps of `other`.
    pub fn aligned_to(&self, other: &TimeSeries) -> TimeSeries {
        TimeSeries {
            times: other.times.clone(),
            values: other.times.iter().map(|&t| self.value_at(t)).collect(),
            kind: self.kind,
        }
    }
}

fn check_aligned(a: &TimeSeries, b: &TimeSeries) -> Result<(), ObservablesError> {
    if a.len() != b.len() {
        return Err(ObservablesError::Misaligned);
    }
    for (x, y) in a.times.iter().zip(&b.times) {
        if Float::abs(x - y) > 1e-9 * (1.0 + Float::abs(*x)) {
            return Err(ObservablesError::Misaligned);
        }
    }
    Ok(())
}

/// `Γ = −d ln N/dt` from least-squares parabolas through 5 consecutive
/// points, evaluated at the centre point. The first and last two samples
/// are dropped; the result is in s⁻¹.
pub fn decay_rate(series: &TimeSeries) -> Result<TimeSeries, ObservablesError> {
    let n = series.len();
    if n < 5 {
        return Err(ObservablesError::TooFewPoints { need: 5, got: n });
    }
    if let Some(i) = series.values.iter().position(|&v| !(v > 0.0)) {
        return Err(ObservablesError::NonPositive(i));
    }
    let ln: Vec<f64> = series.values.iter().map(|&v| Float::ln(v)).collect();
    let mut times = Vec::with_capacity(n - 4);
    let mut rates = Vec::with_capacity(n - 4);
    for i in 2..n - 2 {
        let tc = series.times[i];
        let scale = series.times[i + 2] - series.times[i - 2];
        // Normal equations in the scaled offset u = (t − t_i)/scale.
        let mut s = [0.0; 5];
        let mut r = [0.0; 3];
        for j in i - 2..=i + 2 {
            let u = (series.times[j] - tc) / scale;
            let mut p = 1.0;
            for (k, sk) in s.iter_mut().enumerate() {
                *sk += p;
                if k < 3 {
                    r[k] += p * ln[j];
                }
                p *= u;
            }
        }
        let a = [s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4]];
        let c = solve(&a, &r).ok_or(ObservablesError::NotIncreasing(i))?;
        times.push(tc);
        rates.push(-c[1] / (scale * 1e-3));
    }
    TimeSeries::new(times, rates, ValueKind::DecayRate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Fit `Γ_bg` as a third parameter instead of holding it fixed.
    pub free_background: bool,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            free_background: false,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// s⁻¹.
    pub gamma_bg: f64,
    pub alpha: f64,
    /// nK⁻¹.
    pub beta: f64,
    /// Covariance of `(Γ_bg, α, β)`; the `Γ_bg` row and column are zero
    /// when it is held fixed.
    pub covariance: [[f64; 3]; 3],
    /// `√(Σ r²)` over the points used.
    pub residual_norm: f64,
    /// Which input samples entered the fit.
    pub used: Vec<bool>,
    pub iterations: usize,
}

impl DecayFit {
    pub fn beta_stderr(&self) -> f64 {
        Float::sqrt(self.covariance[2][2])
    }

    pub fn alpha_stderr(&self) -> f64 {
        Float::sqrt(self.covariance[1][1])
    }

    pub fn model(&self, mu: f64) -> f64 {
        self.gamma_bg + Float::exp(self.alpha + self.beta * mu)
    }
}

/// Least squares of `Γ = Γ_bg + exp(α + βμ)` on the samples with `μ ≤ U_s`,
/// `Γ_bg` held fixed.
pub fn fit_gamma_mu(
    gammas: &TimeSeries,
    mus: &TimeSeries,
    gamma_bg: f64,
    u_s: f64,
) -> Result<DecayFit, ObservablesError> {
    fit_gamma_mu_with(gammas, mus, gamma_bg, u_s, &FitOptions::default())
}

/// [`fit_gamma_mu`] with explicit options. With a free background,
/// `gamma_bg` is the starting value.
pub fn fit_gamma_mu_with(
    gammas: &TimeSeries,
    mus: &TimeSeries,
    gamma_bg: f64,
    u_s: f64,
    opts: &FitOptions,
) -> Result<DecayFit, ObservablesError> {
    check_aligned(gammas, mus)?;
    let used: Vec<bool> = mus.values.iter().map(|&m| m <= u_s).collect();
    let x: Vec<f64> = mus.values.iter().zip(&used).filter(|p| *p.1).map(|p| *p.0).collect();
    let y: Vec<f64> = gammas.values.iter().zip(&used).filter(|p| *p.1).map(|p| *p.0).collect();
    let npar = if opts.free_background { 3 } else { 2 };
    let need = npar.max(4);
    if x.len() < need {
        return Err(ObservablesError::TooFewPoints { need, got: x.len() });
    }
    let mc = x.iter().sum::<f64>() / x.len() as f64;
    let xc: Vec<f64> = x.iter().map(|m| m - mc).collect();

    // Start from a line through ln(Γ − Γ_bg) where that is defined.
    let floor = 1e-12 * y.iter().fold(0.0f64, |a, &b| a.max(Float::abs(b)));
    let (lx, ly): (Vec<f64>, Vec<f64>) = xc
        .iter()
        .zip(&y)
        .filter(|(_, &g)| g - gamma_bg > floor)
        .map(|(&m, &g)| (m, Float::ln(g - gamma_bg)))
        .unzip();
    let (a0, b0) = fit_line(&lx, &ly).unwrap_or_else(|| {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        (Float::ln(Float::abs(mean - gamma_bg).max(1e-12)), 0.0)
    });

    // Parameters p = [a, β, Γ_bg] with model Γ_bg + exp(a + β(μ − μ_c)).
    let mut p = [a0, b0, gamma_bg];
    let cost = |p: &[f64; 3]| -> f64 {
        xc.iter()
            .zip(&y)
            .map(|(&m, &g)| {
                let r = g - p[2] - Float::exp(p[0] + p[1] * m);
                r * r
            })
            .sum()
    };
    let normal = |p: &[f64; 3]| -> (Vec<f64>, Vec<f64>) {
        let mut jtj = vec![0.0; npar * npar];
        let mut jtr = vec![0.0; npar];
        for (&m, &g) in xc.iter().zip(&y) {
            let e = Float::exp(p[0] + p[1] * m);
            let r = g - p[2] - e;
            let jrow = [e, e * m, 1.0];
            for i in 0..npar {
                jtr[i] += jrow[i] * r;
                for j in 0..npar {
                    jtj[i * npar + j] += jrow[i] * jrow[j];
                }
            }
        }
        (jtj, jtr)
    };

    let mut lambda = 1e-3;
    let mut c = cost(&p);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal(&p);
        let mut damped = jtj.clone();
        for i in 0..npar {
            damped[i * npar + i] += lambda * jtj[i * npar + i].max(1e-300);
        }
        let Some(step) = solve(&damped, &jtr) else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = p;
        for i in 0..npar {
            trial[i] += step[i];
        }
        let ct = cost(&trial);
        if ct.is_finite() && ct <= c {
            let small = step
                .iter()
                .zip(&p)
                .all(|(s, v)| Float::abs(*s) <= 1e-13 * (1.0 + Float::abs(*v)));
            p = trial;
            c = ct;
            lambda = (lambda * 0.3).max(1e-15);
            if small || c == 0.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                // No further descent is possible at machine precision.
                converged = true;
                break;
            }
        }
    }
    if !converged || !p.iter().all(|v| v.is_finite()) {
        return Err(ObservablesError::NotConverged(iterations));
    }

    // Undamped polishing steps: the cost is flat to rounding near the
    // optimum, but the Gauss-Newton step still locates it.
    for _ in 0..4 {
        let (jtj, jtr) = normal(&p);
        let Some(step) = solve(&jtj, &jtr) else { break };
        let mut trial = p;
        for i in 0..npar {
            trial[i] += step[i];
        }
        let ct = cost(&trial);
        if !(ct <= c * (1.0 + 1e-12)) {
            break;
        }
        p = trial;
        c = ct;
    }

    let (jtj, _) = normal(&p);
    let dof = (x.len() - npar).max(1) as f64;
    let s2 = c / dof;
    let inv = invert(&jtj, npar).unwrap_or_else(|| vec![f64::NAN; npar * npar]);
    let var = |i: usize, j: usize| s2 * inv[i * npar + j];
    // α = a − β μ_c.
    let (vaa, vab, vbb) = (var(0, 0), var(0, 1), var(1, 1));
    let mut cov = [[0.0; 3]; 3];
    cov[1][1] = vaa - 2.0 * mc * vab + mc * mc * vbb;
    cov[1][2] = vab - mc * vbb;
    cov[2][1] = cov[1][2];
    cov[2][2] = vbb;
    if opts.free_background {
        cov[0][0] = var(2, 2);
        cov[0][1] = var(2, 0) - mc * var(2, 1);
        cov[1][0] = cov[0][1];
        cov[0][2] = var(2, 1);
        cov[2][0] = cov[0][2];
    }
    Ok(DecayFit {
        gamma_bg: p[2],
        alpha: p[0] - p[1] * mc,
        beta: p[1],
        covariance: cov,
        residual_norm: Float::sqrt(c),
        used,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Spill,
    Tunneling,
    Background,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Spill => "spill",
            Self::Tunneling => "tunneling",
            Self::Background => "background",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeOptions {
    /// Uncertainty of the background rate, s⁻¹.
    pub sigma_bg: f64,
    /// Half-width of the background band in units of `sigma_bg`.
    pub band: f64,
    /// Consecutive in-band samples that mark the background onset.
    pub sustained: usize,
}

impl Default for RegimeOptions {
    fn default() -> Self {
        Self {
            sigma_bg: 0.02,
            band: 2.0,
            sustained: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub labels: Vec<Regime>,
    /// Time of the first sample with `μ < U_s`, ms.
    pub spill_end: Option<f64>,
    /// Start of the first sustained run of background samples, ms.
    pub background_start: Option<f64>,
}

pub fn classify_regimes(
    gammas: &TimeSeries,
    mus: &TimeSeries,
    u_s: f64,
    gamma_bg: f64,
) -> Result<RegimeReport, ObservablesError> {
    classify_regimes_with(gammas, mus, u_s, gamma_bg, &RegimeOptions::default())
}

pub fn classify_regimes_with(
    gammas: &TimeSeries,
    mus: &TimeSeries,
    u_s: f64,
    gamma_bg: f64,
    opts: &RegimeOptions,
) -> Result<RegimeReport, ObservablesError> {
    check_aligned(gammas, mus)?;
    let half = opts.band * opts.sigma_bg;
    let labels: Vec<Regime> = gammas
        .values
        .iter()
        .zip(&mus.values)
        .map(|(&g, &m)| {
            if m > u_s {
                Regime::Spill
            } else if Float::abs(g - gamma_bg) < half {
                Regime::Background
            } else {
                Regime::Tunneling
            }
        })
        .collect();
    let spill_end = mus.values.iter().position(|&m| m < u_s).map(|i| mus.times[i]);
    let run = opts.sustained.max(1);
    let background_start = (0..labels.len())
        .find(|&i| i + run <= labels.len() && labels[i..i + run].iter().all(|&l| l == Regime::Background))
        .map(|i| gammas.times[i]);
    Ok(RegimeReport {
        labels,
        spill_end,
        background_start,
    })
}

/// Straight-line fit of `y` against `x` on the masked samples:
/// `(intercept, slope, R²)`.
pub fn masked_line_fit(x: &[f64], y: &[f64], mask: &[bool]) -> Option<(f64, f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (a, b))
        .unzip();
    let (c0, c1) = fit_line(&xs, &ys)?;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(a, b)| {
            let r = b - c0 - c1 * a;
            r * r
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some((c0, c1, r2))
}
