//! Run configuration: a TOML file layered over a named preset.
//!
//! Values are in lab units (μm, ms, μs, nK, Hz) and carry the unit in the
//! key name. Every table rejects unknown keys. A file may name its preset
//! with a top-level `preset = "..."`; the command line can override it.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use resttrap_core::transfer::WidthConvention;
use resttrap_core::units::constants::{ATOMIC_MASS_UNIT, BOHR_RADIUS, MICROMETER};
use resttrap_core::{RestTrap, Species, TrapConfig, TrapError, TrapGeometry};

use crate::gpe::{AbsorberConfig, RampSchedule, SoftFloor, SolverConfig};
use crate::grid::{Axis, AxisName, Grid};

const DESK: &str = include_str!("../presets/desk.toml");
const PAPER3D: &str = include_str!("../presets/paper3d.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown preset `{0}` (expected desk or paper3d)")]
    UnknownPreset(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("trap at U0 = {height} nK: {source}")]
    Trap { height: f64, source: TrapError },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper3d,
}

impl Preset {
    pub fn source(self) -> &'static str {
        match self {
            Self::Desk => DESK,
            Self::Paper3d => PAPER3D,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Paper3d => "paper3d",
        }
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper3d" => Ok(Self::Paper3d),
            other => Err(ConfigError::UnknownPreset(other.into())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    pub mass_amu: f64,
    pub scattering_length_a0: f64,
    pub three_body_loss_cm6_per_s: f64,
}

impl SpeciesSection {
    pub fn species(&self) -> Species {
        Species {
            mass: self.mass_amu * ATOMIC_MASS_UNIT,
            scattering_length: self.scattering_length_a0 * BOHR_RADIUS,
            three_body_loss: self.three_body_loss_cm6_per_s * 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    pub omega_x_hz: f64,
    pub omega_z_hz: f64,
    /// m/s².
    pub g_eff: f64,
    pub waist_um: f64,
    pub rayleigh_range_um: f64,
    pub flat_halfwidth_um: f64,
    pub rolloff_um: f64,
    pub center_um: f64,
    pub sheet_exponent: f64,
}

impl TrapSection {
    pub fn trap_config(&self, barrier_height: f64) -> TrapConfig {
        TrapConfig {
            omega_x: 2.0 * PI * self.omega_x_hz,
            omega_z: 2.0 * PI * self.omega_z_hz,
            g_eff: self.g_eff,
            barrier_height,
            barrier_waist: self.waist_um * MICROMETER,
            rayleigh_range: self.rayleigh_range_um * MICROMETER,
            flat_halfwidth: self.flat_halfwidth_um * MICROMETER,
            rolloff_length: self.rolloff_um * MICROMETER,
            barrier_center: self.center_um * MICROMETER,
            sheet_exponent: self.sheet_exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomsSection {
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    pub name: AxisName,
    pub points: usize,
    pub extent_um: f64,
    /// First grid coordinate; centred on zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_um: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub axes: Vec<AxisSection>,
}

fn build_grid(axes: &[AxisSection], field: &str) -> Result<Grid, ConfigError> {
    let mut out = Vec::new();
    for a in axes {
        let extent = a.extent_um * MICROMETER;
        let axis = match a.origin_um {
            Some(o) => Axis::new(a.name, a.points, extent, o * MICROMETER),
            None => Axis::centered(a.name, a.points, extent),
        }
        .map_err(|e| invalid(field, e.to_string()))?;
        out.push(axis);
    }
    let grid = Grid::new(out).map_err(|e| invalid(field, e.to_string()))?;
    if grid.axis(AxisName::Y).is_none() {
        return Err(invalid(field, "the y axis (across the barrier) is required"));
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dt_us: f64,
    pub dt_imag_us: f64,
    pub max_steps: usize,
    pub snapshot_interval_ms: f64,
    pub tolerance: f64,
    pub check_interval: usize,
    pub three_body: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSection {
    /// Barrier height during ground-state preparation.
    pub initial_nk: f64,
    pub duration_ms: f64,
    /// Default final height when no sweep overrides it.
    pub final_nk: f64,
    /// Propagation horizon measured from the start of the ramp.
    pub hold_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorberSection {
    pub onset_um: f64,
    pub ramp_um: f64,
    pub peak_nk: f64,
    pub exponent: f64,
    pub edge_um: f64,
}

impl AbsorberSection {
    pub fn absorber(&self) -> AbsorberConfig {
        AbsorberConfig {
            onset: self.onset_um * MICROMETER,
            ramp_length: self.ramp_um * MICROMETER,
            peak: self.peak_nk,
            exponent: self.exponent,
            edge_depth: self.edge_um * MICROMETER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorSection {
    pub enabled: bool,
    /// Floor level below the trap minimum at the final barrier height.
    pub below_minimum_nk: f64,
    pub softness_nk: f64,
}

impl FloorSection {
    pub fn floor(&self, geometry: &TrapGeometry) -> Option<SoftFloor> {
        self.enabled.then(|| SoftFloor {
            level: geometry.minimum_energy - self.below_minimum_nk,
            softness: self.softness_nk,
        })
    }
}

/// Extra potential `height · clamp((y − y₀)/length, 0, 1)²` used only while
/// relaxing the ground state, so it cannot leak past the barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSection {
    pub height_nk: f64,
    pub length_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesSection {
    pub gamma_bg: f64,
    pub sigma_bg: f64,
    pub band: f64,
    pub sustained: usize,
    pub free_background: bool,
    /// Multiply the simulated trapped number by `exp(−Γ_bg t)`.
    pub analytic_background: bool,
    /// Relative Gaussian noise injected into N(t); zero disables it.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub barrier_heights_nk: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig2Section {
    pub barrier_heights_nk: Vec<f64>,
    pub atom_numbers: Vec<f64>,
    pub dt_imag_us: f64,
    pub tolerance: f64,
    pub axes: Vec<AxisSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthName {
    Waist,
    Fwhm,
}

impl From<WidthName> for WidthConvention {
    fn from(w: WidthName) -> Self {
        match w {
            WidthName::Waist => WidthConvention::Waist,
            WidthName::Fwhm => WidthConvention::Fwhm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub cells: usize,
    pub samples: usize,
    /// β fit window below the saddle energy.
    pub window_nk: f64,
    /// `[first, last, step]` of barrier heights for the smooth β curve.
    pub scan_nk: [f64; 3],
    pub width_convention: WidthName,
}

impl TransferSection {
    pub fn scan(&self) -> Vec<f64> {
        let [lo, hi, step] = self.scan_nk;
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub seed: u64,
    pub species: SpeciesSection,
    pub trap: TrapSection,
    pub atoms: AtomsSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub ramp: RampSection,
    pub absorber: AbsorberSection,
    pub floor: FloorSection,
    pub wall: WallSection,
    pub observables: ObservablesSection,
    pub sweep: SweepSection,
    pub fig2: Fig2Section,
    pub transfer: TransferSection,
}

fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Recursive merge; tables merge key by key, everything else is replaced.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        Self::layered(Some(p), None).expect("built-in presets are valid")
    }

    /// The preset named by `preset` (or by the overlay, or desk) with the
    /// TOML `overlay` merged on top.
    pub fn layered(preset: Option<Preset>, overlay: Option<&str>) -> Result<Self, ConfigError> {
        let over = overlay.map(parse_table).transpose()?;
        let named = match over.as_ref().and_then(|t| t.get("preset")) {
            Some(toml::Value::String(s)) => Some(s.parse::<Preset>()?),
            Some(other) => return Err(invalid("preset", format!("expected a string, got {other}"))),
            None => None,
        };
        let chosen = preset.or(named).unwrap_or(Preset::Desk);
        let mut table = parse_table(chosen.source())?;
        if let Some(o) = over {
            merge(&mut table, o);
        }
        table.insert("preset".into(), toml::Value::String(chosen.as_str().into()));
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::layered(preset, Some(&text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON form without the label and preset
    /// name, so cosmetic edits and key order do not change it.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("label");
            m.remove("preset");
        }
        let canonical = canonical_json(&v);
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn species(&self) -> Species {
        self.species.species()
    }

    pub fn trap(&self, barrier_height: f64) -> Result<RestTrap, ConfigError> {
        RestTrap::new(self.trap.trap_config(barrier_height), &self.species()).map_err(|source| ConfigError::Trap {
            height: barrier_height,
            source,
        })
    }

    pub fn geometry(&self, barrier_height: f64) -> Result<TrapGeometry, ConfigError> {
        self.trap(barrier_height)?
            .find_geometry()
            .map_err(|source| ConfigError::Trap {
                height: barrier_height,
                source,
            })
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        build_grid(&self.grid.axes, "grid.axes")
    }

    pub fn fig2_grid(&self) -> Result<Grid, ConfigError> {
        build_grid(&self.fig2.axes, "fig2.axes")
    }

    pub fn solver(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            dt: s.dt_us * 1e-3,
            dt_imag: s.dt_imag_us * 1e-3,
            max_steps: s.max_steps,
            snapshot_interval: s.snapshot_interval_ms,
            tolerance: s.tolerance,
            check_interval: s.check_interval,
            three_body: s.three_body,
        }
    }

    pub fn fig2_solver(&self) -> SolverConfig {
        SolverConfig {
            dt_imag: self.fig2.dt_imag_us * 1e-3,
            dt: self.fig2.dt_imag_us * 1e-3,
            tolerance: self.fig2.tolerance,
            ..self.solver()
        }
    }

    pub fn ramp(&self, final_height: f64) -> Result<RampSchedule, ConfigError> {
        RampSchedule::linear(self.ramp.initial_nk, final_height, self.ramp.duration_ms)
            .map_err(|e| invalid("ramp", e.to_string()))
    }

    /// Barrier heights for decay and β sweeps; the ramp's final height
    /// when the sweep is empty.
    pub fn sweep_heights(&self) -> Vec<f64> {
        if self.sweep.barrier_heights_nk.is_empty() {
            vec![self.ramp.final_nk]
        } else {
            self.sweep.barrier_heights_nk.clone()
        }
    }

    /// Check everything that can be checked without running the solver.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.species()
            .validate()
            .map_err(|e| invalid("species", e.to_string()))?;
        if !(self.atoms.n > 0.0 && self.atoms.n.is_finite()) {
            return Err(invalid("atoms.n", "must be positive"));
        }
        let mass = self.species().mass;
        let grid = self.grid()?;
        self.solver()
            .validate(&grid, mass)
            .map_err(|e| invalid("solver", e.to_string()))?;
        let fig2 = self.fig2_grid()?;
        self.fig2_solver()
            .validate(&fig2, mass)
            .map_err(|e| invalid("fig2", e.to_string()))?;
        if !(self.ramp.hold_ms > self.ramp.duration_ms) {
            return Err(invalid("ramp.hold_ms", "must exceed the ramp duration"));
        }
        let absorber = self.absorber.absorber();
        absorber.validate().map_err(|e| invalid("absorber", e.to_string()))?;
        if !(self.wall.height_nk >= 0.0 && self.wall.length_um > 0.0) {
            return Err(invalid("wall", "height must be non-negative and length positive"));
        }
        if self.floor.enabled && !(self.floor.softness_nk > 0.0) {
            return Err(invalid("floor.softness_nk", "must be positive"));
        }
        let o = &self.observables;
        if !(o.gamma_bg >= 0.0 && o.sigma_bg >= 0.0 && o.band >= 0.0 && o.noise >= 0.0) {
            return Err(invalid("observables", "rates, band and noise must be non-negative"));
        }
        let t = &self.transfer;
        if t.cells < 16 || t.samples < 2 || !(t.window_nk > 0.0) || !(t.scan_nk[2] > 0.0 && t.scan_nk[1] >= t.scan_nk[0]) {
            return Err(invalid(
                "transfer",
                "need cells ≥ 16, samples ≥ 2, positive window and an increasing scan",
            ));
        }
        if self.fig2.atom_numbers.iter().any(|n| !(*n >= 0.0)) || self.fig2.barrier_heights_nk.is_empty() {
            return Err(invalid("fig2", "atom numbers must be non-negative and heights non-empty"));
        }

        let mut heights = self.sweep_heights();
        heights.push(self.ramp.initial_nk);
        heights.extend(&self.fig2.barrier_heights_nk);
        let (_, y_axis) = grid.axis(AxisName::Y).expect("checked in build_grid");
        let y_end = y_axis.origin + y_axis.extent;
        let y0 = self.trap.center_um * MICROMETER;
        for &h in &heights {
            let geo = self.geometry(h)?;
            // The absorber must stay clear of the cloud and of the saddles.
            let margin = 3.0 * geo.saddle_waist;
            let onset = y0 + absorber.onset;
            if onset < geo.saddles[0][1] + margin || onset < geo.minimum[1] + margin {
                return Err(invalid(
                    "absorber.onset_um",
                    format!("onset at {:.2} μm overlaps the trap region at U0 = {h} nK", onset / MICROMETER),
                ));
            }
            if geo.minimum[1] <= y_axis.origin || onset + absorber.ramp_length > y_end + 1e-12 {
                return Err(invalid(
                    "grid.axes",
                    "y axis must contain the trap minimum and the full absorber ramp",
                ));
            }
        }
        Ok(())
    }
}

/// JSON with object keys sorted at every level.
fn canonical_json(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Object(m) => {
            let sorted: BTreeMap<_, _> = m.iter().collect();
            let body: Vec<String> = sorted
                .into_iter()
                .map(|(k, v)| format!("{}:{}", serde_json::Value::String(k.clone()), canonical_json(v)))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        serde_json::Value::Array(a) => {
            let body: Vec<String> = a.iter().map(canonical_json).collect();
            format!("[{}]", body.join(","))
        }
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for p in [Preset::Desk, Preset::Paper3d] {
            let cfg = RunConfig::preset(p);
            cfg.validate().unwrap();
            assert_eq!(cfg.preset, Some(p));
        }
    }

    #[test]
    fn merge_replaces_leaves_and_keeps_siblings() {
        let cfg = RunConfig::layered(None, Some("[atoms]\nn = 1234.0\n[ramp]\nfinal_nk = 300.0\n")).unwrap();
        assert_eq!(cfg.atoms.n, 1234.0);
        assert_eq!(cfg.ramp.final_nk, 300.0);
        assert_eq!(cfg.ramp.initial_nk, 550.0);
        assert_eq!(cfg.preset, Some(Preset::Desk));
        let p = RunConfig::layered(None, Some("preset = \"paper3d\"\n")).unwrap();
        assert_eq!(p.atoms.n, 150_000.0);
        let forced = RunConfig::layered(Some(Preset::Desk), Some("preset = \"paper3d\"\n")).unwrap();
        assert_eq!(forced.atoms.n, 20_000.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::layered(None, Some("[atoms]\nnn = 3.0\n")),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(RunConfig::layered(None, Some("bogus = 1\n")), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::layered(None, Some("preset = \"huge\"\n")),
            Err(ConfigError::UnknownPreset(_))
        ));
    }

    #[test]
    fn hash_ignores_label_and_tracks_physics() {
        let a = RunConfig::preset(Preset::Desk);
        let mut b = a.clone();
        b.label = "other".into();
        assert_eq!(a.hash(), b.hash());
        b.trap.waist_um = 1.31;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.solver.dt_us = 50.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.absorber.onset_um = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.sweep.barrier_heights_nk = vec![5.0];
        assert!(matches!(cfg.validate(), Err(ConfigError::Trap { .. })));
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.atoms.n = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scan_is_inclusive() {
        let cfg = RunConfig::preset(Preset::Desk);
        let s = cfg.transfer.scan();
        assert_eq!(s.len(), 13);
        assert_eq!(s[0], 230.0);
        assert_eq!(*s.last().unwrap(), 350.0);
    }
}
