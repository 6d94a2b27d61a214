//! Physical constants, atomic species and unit conversions.
//!
//! All user-facing energies are in nanokelvin (`k_B · 1 nK`), lengths in
//! micrometres and times in milliseconds. Internally the solver works in
//! harmonic-oscillator units of a reference trap frequency, see
//! [`UnitSystem::oscillator`].

use core::f64::consts::PI;
use core::str::FromStr;

use alloc::string::{String, ToString};

use num_traits::Float;
use thiserror::Error;

/// CODATA 2018 constants (SI).
pub mod constants {
    /// Reduced Planck constant, J s.
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Boltzmann constant, J/K.
    pub const K_B: f64 = 1.380_649e-23;
    /// Unified atomic mass unit, kg.
    pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
    /// Bohr radius, m.
    pub const BOHR_RADIUS: f64 = 5.291_772_109_03e-11;

    /// One nanokelvin expressed as an energy, J.
    pub const NANOKELVIN: f64 = K_B * 1e-9;
    pub const MICROMETER: f64 = 1e-6;
    pub const MILLISECOND: f64 = 1e-3;
}

use constants::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitsError {
    #[error("unknown quantity kind `{0}`")]
    UnknownKind(String),
    #[error("species field `{field}` must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
}

/// An atomic species as seen by the mean-field model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Species {
    /// Mass, kg.
    pub mass: f64,
    /// s-wave scattering length, m.
    pub scattering_length: f64,
    /// Three-body loss constant `L` in `dN/dt = -L <n²> N`, m⁶/s.
    pub three_body_loss: f64,
}

impl Species {
    /// ⁸⁷Rb in |F=2, m_F=2⟩: a_s = 98.98 a₀ and L = 1.8e-29 cm⁶/s.
    pub fn rubidium87() -> Self {
        Self {
            mass: 86.909_180_527 * ATOMIC_MASS_UNIT,
            scattering_length: 98.98 * BOHR_RADIUS,
            three_body_loss: 1.8e-41,
        }
    }

    pub fn validate(&self) -> Result<(), UnitsError> {
        for (field, value) in [
            ("mass", self.mass),
            ("scattering_length", self.scattering_length),
            ("three_body_loss", self.three_body_loss),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(UnitsError::NonPositive { field, value });
            }
        }
        Ok(())
    }
}

impl Default for Species {
    fn default() -> Self {
        Self::rubidium87()
    }
}

/// Contact coupling `g = 4πħ²a_s/m`, J m³.
pub fn interaction_coupling(species: &Species) -> f64 {
    4.0 * PI * HBAR * HBAR * species.scattering_length / species.mass
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantityKind {
    Energy,
    Length,
    Time,
    Frequency,
    Acceleration,
    /// Number density, m⁻³.
    Density,
}

impl QuantityKind {
    pub const ALL: [QuantityKind; 6] = [
        QuantityKind::Energy,
        QuantityKind::Length,
        QuantityKind::Time,
        QuantityKind::Frequency,
        QuantityKind::Acceleration,
        QuantityKind::Density,
    ];
}

impl FromStr for QuantityKind {
    type Err = UnitsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "energy" => Self::Energy,
            "length" => Self::Length,
            "time" => Self::Time,
            "frequency" => Self::Frequency,
            "acceleration" => Self::Acceleration,
            "density" => Self::Density,
            other => return Err(UnitsError::UnknownKind(other.to_string())),
        })
    }
}

/// A choice of base units, each stored as "SI value of one unit".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSystem {
    /// J per unit energy.
    pub energy: f64,
    /// m per unit length.
    pub length: f64,
    /// s per unit time.
    pub time: f64,
}

impl UnitSystem {
    /// nK, μm, ms.
    pub fn lab() -> Self {
        Self {
            energy: NANOKELVIN,
            length: MICROMETER,
            time: MILLISECOND,
        }
    }

    /// Oscillator units of frequency `omega` (rad/s): energy ħω, length
    /// √(ħ/mω), time 1/ω. In these units ħ = m = ω = 1.
    pub fn oscillator(mass: f64, omega: f64) -> Self {
        Self {
            energy: HBAR * omega,
            length: Float::sqrt(HBAR / (mass * omega)),
            time: 1.0 / omega,
        }
    }

    /// SI value of one unit of `kind`.
    pub fn scale(&self, kind: QuantityKind) -> f64 {
        match kind {
            QuantityKind::Energy => self.energy,
            QuantityKind::Length => self.length,
            QuantityKind::Time => self.time,
            QuantityKind::Frequency => 1.0 / self.time,
            QuantityKind::Acceleration => self.length / (self.time * self.time),
            QuantityKind::Density => 1.0 / (self.length * self.length * self.length),
        }
    }

    /// Convert an SI value into this unit system.
    pub fn to_dimensionless(&self, si_value: f64, kind: QuantityKind) -> f64 {
        si_value / self.scale(kind)
    }

    /// Inverse of [`Self::to_dimensionless`].
    pub fn from_dimensionless(&self, value: f64, kind: QuantityKind) -> f64 {
        value * self.scale(kind)
    }
}

/// Energy in J to nK.
#[inline]
pub fn joule_to_nk(e: f64) -> f64 {
    e / NANOKELVIN
}

/// Energy in nK to J.
#[inline]
pub fn nk_to_joule(e: f64) -> f64 {
    e * NANOKELVIN
}
