//! Mean-field model of a Bose-Einstein condensate escaping from a single
//! trapping well through a thin repulsive light sheet.
//!
//! This crate is `no_std` (it needs `alloc`) and holds the parts of the model
//! that are pure numerics on small data:
//!
//! - [`units`]: constants, atomic species and unit conversions.
//! - [`trap`]: the sheet-trap potential, its minimum, saddle points and depth.
//! - [`analytics`]: closed-form chemical potential, single-particle scale and
//!   three-body loss estimates.
//! - [`transfer`]: 1D transmission through barrier profiles (transfer matrix
//!   and WKB) and the slope of `ln T` against energy.
//! - [`observables`]: decay-rate extraction from `N(t)`, the
//!   `Γ = Γ_bg + exp(α + βμ)` fit and regime classification.
//!
//! Grid fields, the split-step solver and all IO live in the `resttrap` crate.

#![no_std]

extern crate alloc;

pub mod analytics;
pub mod observables;
pub mod transfer;
pub mod trap;
pub mod units;

mod linalg;
mod quad;

pub use analytics::AnalyticEstimates;
pub use observables::{DecayFit, Regime, RegimeReport, TimeSeries, ValueKind};
pub use transfer::{BarrierProfile1D, Transmission, TransmissionCurve, WidthConvention};
pub use trap::{RestTrap, TrapConfig, TrapError, TrapGeometry};
pub use units::{QuantityKind, Species, UnitSystem};
