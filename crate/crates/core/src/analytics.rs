//! Closed-form estimates for the sheet trap in the Thomas-Fermi limit.
//!
//! The well is approximated by two linear walls (effective gravity on one
//! side, the barrier's maximum slope on the other) and harmonic confinement
//! in `x` and `z`, which gives
//!
//! ```text
//! μ = {12 (ħω̄)² (m ā) (N a_s)}^{1/3},   ω̄ = √(ω_x ω_z)
//! ```
//!
//! The single-particle scale uses the dimensionally consistent form
//! `ε₀ = (ħ² m ā² / 2)^{1/3}`.

use num_traits::Float;

use crate::trap::{RestTrap, TrapError};
use crate::units::constants::{HBAR, NANOKELVIN};
use crate::units::{interaction_coupling, Species};

/// Bundle of the analytic estimates for one trap and atom number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticEstimates {
    /// Chemical potential, nK.
    pub mu: f64,
    /// Single-particle ground-state scale, nK.
    pub epsilon_0: f64,
    /// `<n²>`, m⁻⁶.
    pub mean_square_density: f64,
    /// Peak density `n₀ = μ/g`, m⁻³.
    pub peak_density: f64,
    /// Three-body loss rate, s⁻¹.
    pub gamma_3b: f64,
    /// Geometric mean of the harmonic frequencies, rad/s.
    pub omega_bar: f64,
}

pub fn omega_bar(trap: &RestTrap) -> f64 {
    let c = trap.config();
    Float::sqrt(c.omega_x * c.omega_z)
}

/// `12 (ħω̄)² m ā a_s`, i.e. `μ³/N` in J³.
fn mu_cubed_per_atom(trap: &RestTrap, species: &Species) -> Result<f64, TrapError> {
    let (_, a_bar) = trap.barrier_acceleration()?;
    let hw = HBAR * omega_bar(trap);
    Ok(12.0 * hw * hw * species.mass * a_bar * species.scattering_length)
}

/// Chemical potential from the linear-wall Thomas-Fermi model, nK.
pub fn mu_analytic(trap: &RestTrap, species: &Species, atom_number: f64) -> Result<f64, TrapError> {
    let k = mu_cubed_per_atom(trap, species)?;
    Ok(Float::cbrt(k * atom_number.max(0.0)) / NANOKELVIN)
}

/// Atom number whose [`mu_analytic`] is `mu` (nK).
pub fn n_from_mu(trap: &RestTrap, species: &Species, mu: f64) -> Result<f64, TrapError> {
    let k = mu_cubed_per_atom(trap, species)?;
    let e = mu.max(0.0) * NANOKELVIN;
    Ok(e * e * e / k)
}

/// `ε₀ = (ħ² m ā² / 2)^{1/3}`, nK.
pub fn epsilon_0(trap: &RestTrap, species: &Species) -> Result<f64, TrapError> {
    let (_, a_bar) = trap.barrier_acceleration()?;
    Ok(epsilon_0_for_acceleration(species, a_bar))
}

pub fn epsilon_0_for_acceleration(species: &Species, a_bar: f64) -> f64 {
    Float::cbrt(HBAR * HBAR * species.mass * a_bar * a_bar / 2.0) / NANOKELVIN
}

/// Peak density `n₀ = μ/g` for `mu` in nK, m⁻³.
pub fn peak_density(species: &Species, mu: f64) -> f64 {
    mu * NANOKELVIN / interaction_coupling(species)
}

/// `<n²> = (3/10) n₀²`, m⁻⁶.
pub fn mean_square_density(species: &Species, mu: f64) -> f64 {
    let n0 = peak_density(species, mu);
    0.3 * n0 * n0
}

/// `Γ_3b = L <n²>`, s⁻¹.
pub fn three_body_rate(species: &Species, mu: f64) -> f64 {
    species.three_body_loss * mean_square_density(species, mu)
}

pub fn estimates(trap: &RestTrap, species: &Species, atom_number: f64) -> Result<AnalyticEstimates, TrapError> {
    let mu = mu_analytic(trap, species, atom_number)?;
    Ok(AnalyticEstimates {
        mu,
        epsilon_0: epsilon_0(trap, species)?,
        mean_square_density: mean_square_density(species, mu),
        peak_density: peak_density(species, mu),
        gamma_3b: three_body_rate(species, mu),
        omega_bar: omega_bar(trap),
    })
}
