//! Split-step Fourier propagation of the Gross-Pitaevskii equation
//!
//! ```text
//! iħ ∂ψ/∂t = [−ħ²∇²/2m + V(r, t) − iW(r) + g|ψ|² − i(ħL/2)|ψ|⁴] ψ
//! ```
//!
//! in real time (Strang splitting, adjacent kinetic half steps fused) and
//! imaginary time (renormalised after every step). Energies in the public
//! API are in nK, times in ms; the stepping itself works in SI.
//!
//! On reduced grids the missing axes are integrated out with harmonic
//! ground-state profiles, which rescales `g` and `L`; see [`Couplings`].

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use resttrap_core::units::constants::{HBAR, MILLISECOND, NANOKELVIN};
use resttrap_core::units::{interaction_coupling, Species};
use resttrap_core::RestTrap;

use crate::grid::{kinetic_factors, AxisName, FieldState, Grid, GridError, Region, SpectralPlan};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid solver setting `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("no transverse confinement along {0:?} to integrate out")]
    NoTransverseConfinement(AxisName),
    #[error("imaginary-time iteration did not converge in {steps} steps (last relative change {change:e})")]
    NotConverged { steps: usize, change: f64 },
    #[error("instability at t = {time} ms: norm grew by {growth:e} in one step")]
    Unstable { time: f64, growth: f64 },
    #[error("non-finite field at t = {0} ms")]
    NonFinite(f64),
    #[error("region holds no atoms")]
    EmptyRegion,
    #[error("total norm increased between snapshots at t = {0} ms")]
    NormIncrease(f64),
}

/// An external potential split as `base(r) + U₀ · shape(r)`, both in nK.
pub trait PotentialModel: Sync {
    fn base(&self, p: [f64; 3]) -> f64;

    /// Barrier profile per nK of barrier height.
    fn barrier_shape(&self, _p: [f64; 3]) -> f64 {
        0.0
    }

    /// Harmonic frequency along `axis`, rad/s, if the confinement is
    /// separable and harmonic there.
    fn transverse_frequency(&self, axis: AxisName) -> Option<f64>;
}

impl PotentialModel for RestTrap {
    fn base(&self, p: [f64; 3]) -> f64 {
        self.magnetic_potential(p)
    }

    fn barrier_shape(&self, p: [f64; 3]) -> f64 {
        self.barrier_potential(p, 1.0)
    }

    fn transverse_frequency(&self, axis: AxisName) -> Option<f64> {
        match axis {
            // The sheet only varies slowly along x inside its flat region.
            AxisName::X => Some(self.config().omega_x),
            AxisName::Z => Some(self.config().omega_z),
            AxisName::Y => None,
        }
    }
}

/// Isotropic or anisotropic harmonic trap `½ m Σ ω_i² r_i²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub mass: f64,
    /// rad/s along x, y, z.
    pub omega: [f64; 3],
}

impl PotentialModel for Harmonic {
    fn base(&self, p: [f64; 3]) -> f64 {
        let e: f64 = (0..3).map(|i| 0.5 * self.mass * self.omega[i].powi(2) * p[i] * p[i]).sum();
        e / NANOKELVIN
    }

    fn transverse_frequency(&self, axis: AxisName) -> Option<f64> {
        Some(self.omega[axis.index()]).filter(|w| *w > 0.0)
    }
}

/// Smooth lower bound `F + s·ln(1 + e^{(V−F)/s})`. Keeps the energy gained
/// by atoms falling past the barrier within the grid's momentum range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftFloor {
    /// nK.
    pub level: f64,
    /// nK.
    pub softness: f64,
}

impl SoftFloor {
    pub fn apply(&self, v: f64) -> f64 {
        let u = (v - self.level) / self.softness;
        let sp = if u > 30.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
        self.level + self.softness * sp
    }
}

/// An external potential sampled on a grid, nK.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    base: Vec<f64>,
    shape: Vec<f64>,
    floor: Option<SoftFloor>,
    wall: Option<Vec<f64>>,
}

impl PotentialField {
    pub fn sample(model: &dyn PotentialModel, grid: &Grid) -> Self {
        let base = grid.points().map(|p| model.base(p)).collect();
        let shape = grid.points().map(|p| model.barrier_shape(p)).collect();
        Self {
            base,
            shape,
            floor: None,
            wall: None,
        }
    }

    pub fn with_floor(mut self, floor: SoftFloor) -> Self {
        self.floor = Some(floor);
        self
    }

    /// Add a fixed potential on top of the (floored) values.
    pub fn with_wall(mut self, wall: Vec<f64>) -> Self {
        self.wall = Some(wall);
        self
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Potential at barrier height `height` (nK), nK.
    pub fn values(&self, height: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .base
            .iter()
            .zip(&self.shape)
            .map(|(b, s)| {
                let u = b + height * s;
                match &self.floor {
                    Some(f) => f.apply(u),
                    None => u,
                }
            })
            .collect();
        if let Some(w) = &self.wall {
            for (a, b) in v.iter_mut().zip(w) {
                *a += b;
            }
        }
        v
    }
}

/// Contact and three-body constants on the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Couplings {
    /// J m^d.
    pub g: f64,
    /// m^{2d}/s.
    pub three_body: f64,
}

impl Couplings {
    /// Integrate the axes missing from `grid` over harmonic ground states:
    /// `g_d = g Π 1/(√(2π) a_i)` and `L_d = L Π 1/(√3 π a_i²)` with
    /// `a_i = √(ħ/mω_i)`.
    pub fn reduced(species: &Species, grid: &Grid, model: &dyn PotentialModel) -> Result<Self, SolverError> {
        let mut g = interaction_coupling(species);
        let mut l = species.three_body_loss;
        for axis in grid.missing_axes() {
            let w = model
                .transverse_frequency(axis)
                .ok_or(SolverError::NoTransverseConfinement(axis))?;
            let a = (HBAR / (species.mass * w)).sqrt();
            g /= (2.0 * PI).sqrt() * a;
            l /= 3f64.sqrt() * PI * a * a;
        }
        Ok(Self { g, three_body: l })
    }

    pub fn with_g(self, g: f64) -> Self {
        Self { g, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSegment {
    /// ms.
    pub duration: f64,
    /// nK.
    pub start: f64,
    /// nK.
    pub end: f64,
}

/// Barrier height against time: linear segments, then a constant hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    segments: Vec<RampSegment>,
    hold: f64,
}

impl RampSchedule {
    pub fn new(segments: Vec<RampSegment>, hold: f64) -> Result<Self, SolverError> {
        for s in &segments {
            if !(s.duration >= 0.0 && s.duration.is_finite()) {
                return Err(SolverError::Invalid {
                    field: "ramp.duration",
                    reason: format!("{} ms is negative", s.duration),
                });
            }
            if !(s.start >= 0.0 && s.end >= 0.0) {
                return Err(SolverError::Invalid {
                    field: "ramp.height",
                    reason: format!("heights {} / {} nK must be non-negative", s.start, s.end),
                });
            }
        }
        if !(hold >= 0.0) {
            return Err(SolverError::Invalid {
                field: "ramp.hold",
                reason: format!("{hold} nK"),
            });
        }
        Ok(Self { segments, hold })
    }

    pub fn constant(height: f64) -> Self {
        Self {
            segments: Vec::new(),
            hold: height,
        }
    }

    /// One linear segment `from → to` over `duration` ms, then hold at `to`.
    pub fn linear(from: f64, to: f64, duration: f64) -> Result<Self, SolverError> {
        Self::new(
            vec![RampSegment {
                duration,
                start: from,
                end: to,
            }],
            to,
        )
    }

    pub fn segments(&self) -> &[RampSegment] {
        &self.segments
    }

    pub fn final_height(&self) -> f64 {
        self.hold
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Height at `t` ms; before zero the first segment's start.
    pub fn height_at(&self, t: f64) -> f64 {
        let mut t0 = 0.0;
        for s in &self.segments {
            if t < t0 + s.duration {
                let f = if s.duration > 0.0 { ((t - t0) / s.duration).max(0.0) } else { 1.0 };
                return s.start + (s.end - s.start) * f;
            }
            t0 += s.duration;
        }
        self.hold
    }
}

/// Complex absorbing potential `−iW`. The main absorber sits on the escape
/// side, `W = peak · clamp((y − y₀ − onset)/ramp_length, 0, 1)^exponent`;
/// thin layers of depth `edge_depth` line every other face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorberConfig {
    /// Distance of the onset beyond the barrier centre, m.
    pub onset: f64,
    /// m.
    pub ramp_length: f64,
    /// nK.
    pub peak: f64,
    pub exponent: f64,
    /// m; zero disables the edge layers.
    pub edge_depth: f64,
}

impl AbsorberConfig {
    pub fn disabled() -> Self {
        Self {
            onset: 0.0,
            ramp_length: 1.0,
            peak: 0.0,
            exponent: 4.0,
            edge_depth: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |field, reason: &str| {
            Err(SolverError::Invalid {
                field,
                reason: reason.into(),
            })
        };
        if !(self.peak >= 0.0 && self.peak.is_finite()) {
            return bad("absorber.peak", "must be non-negative");
        }
        if !(self.ramp_length > 0.0) {
            return bad("absorber.ramp_length", "must be positive");
        }
        if !(self.exponent >= 1.0) {
            return bad("absorber.exponent", "must be at least 1");
        }
        if !(self.edge_depth >= 0.0 && self.onset.is_finite()) {
            return bad("absorber.edge_depth", "must be non-negative");
        }
        Ok(())
    }

    /// `W` on the grid, nK.
    pub fn profile(&self, grid: &Grid, barrier_center: f64) -> Vec<f64> {
        if self.peak == 0.0 {
            return vec![0.0; grid.len()];
        }
        let ramp = |s: f64| self.peak * s.clamp(0.0, 1.0).powf(self.exponent);
        let has_y = grid.axis(AxisName::Y).is_some();
        grid.points()
            .map(|p| {
                let mut w = if has_y {
                    ramp((p[1] - barrier_center - self.onset) / self.ramp_length)
                } else {
                    0.0
                };
                if self.edge_depth > 0.0 {
                    for a in grid.axes() {
                        let c = p[a.name.index()];
                        let lo = c - a.origin;
                        let hi = a.origin + a.extent - a.spacing() - c;
                        w = w.max(ramp((self.edge_depth - lo) / self.edge_depth));
                        if a.name != AxisName::Y {
                            w = w.max(ramp((self.edge_depth - hi) / self.edge_depth));
                        }
                    }
                }
                w
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Real-time step, ms.
    pub dt: f64,
    /// Imaginary-time step, ms.
    pub dt_imag: f64,
    /// Imaginary-time step budget.
    pub max_steps: usize,
    /// ms between snapshots in real time.
    pub snapshot_interval: f64,
    /// `|Δμ|/μ` per imaginary-time step at convergence.
    pub tolerance: f64,
    /// Imaginary-time steps between convergence checks.
    pub check_interval: usize,
    pub three_body: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.5e-3,
            dt_imag: 1e-3,
            max_steps: 200_000,
            snapshot_interval: 1.0,
            tolerance: 1e-8,
            check_interval: 20,
            three_body: false,
        }
    }
}

impl SolverConfig {
    /// Largest admissible step, ms: `0.5 · h_min² m/(πħ)`.
    pub fn stability_limit(grid: &Grid, mass: f64) -> f64 {
        let h = grid.min_spacing();
        0.5 * h * h * mass / (PI * HBAR) / MILLISECOND
    }

    pub fn validate(&self, grid: &Grid, mass: f64) -> Result<(), SolverError> {
        let limit = Self::stability_limit(grid, mass);
        for (field, dt) in [("solver.dt", self.dt), ("solver.dt_imag", self.dt_imag)] {
            if !(dt > 0.0 && dt < limit) {
                return Err(SolverError::Invalid {
                    field,
                    reason: format!("{dt} ms must be in (0, {limit:.4e}) ms for this grid"),
                });
            }
        }
        if !(self.snapshot_interval >= self.dt) {
            return Err(SolverError::Invalid {
                field: "solver.snapshot_interval",
                reason: "must be at least one step".into(),
            });
        }
        if !(self.tolerance > 0.0) || self.check_interval == 0 || self.max_steps == 0 {
            return Err(SolverError::Invalid {
                field: "solver.tolerance",
                reason: "tolerance, check_interval and max_steps must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundState {
    pub state: FieldState,
    /// Chemical potential from the energy functional, nK.
    pub mu: f64,
    /// Convergence checks performed.
    pub checks: usize,
    pub steps: usize,
}

/// Observables recorded during real-time propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snapshot {
    /// ms.
    pub time: f64,
    /// nK.
    pub barrier_height: f64,
    pub n_total: f64,
    pub n_trapped: f64,
    /// nK, absolute energy scale of the potential.
    pub mu_trapped: f64,
}

/// Everything that defines a real-time run apart from the initial state.
pub struct RealTimeRun<'a> {
    pub potential: &'a PotentialField,
    pub ramp: &'a RampSchedule,
    /// `W` per grid point, nK.
    pub absorber: &'a [f64],
    pub trapped: Region,
    /// Run length, ms.
    pub horizon: f64,
}

/// Whether to keep stepping after an observer callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Split-step solver bound to one grid.
pub struct Solver {
    grid: Grid,
    plan: SpectralPlan,
    mass: f64,
    couplings: Couplings,
    work: Vec<Complex64>,
}

impl Solver {
    pub fn new(grid: Grid, mass: f64, couplings: Couplings) -> Self {
        let plan = SpectralPlan::new(&grid);
        let work = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self {
            grid,
            plan,
            mass,
            couplings,
            work,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn couplings(&self) -> Couplings {
        self.couplings
    }

    /// `Tψ` into the work buffer.
    fn kinetic_into_work(&mut self, state: &FieldState) {
        self.work.copy_from_slice(state.values());
        self.plan.forward(&mut self.work);
        let c = HBAR * HBAR / (2.0 * self.mass);
        for (v, k2) in self.work.iter_mut().zip(self.plan.k_squared()) {
            *v *= c * k2;
        }
        self.plan.inverse(&mut self.work);
    }

    /// `∫_R ψ*(T + V + g|ψ|²)ψ / ∫_R |ψ|²` with `V` in nK; result in nK.
    pub fn chemical_potential(&mut self, state: &FieldState, potential: &[f64], region: &Region) -> Result<f64, SolverError> {
        let mask = region.mask(&self.grid);
        self.chemical_potential_masked(state, potential, &mask)
    }

    pub fn chemical_potential_masked(&mut self, state: &FieldState, potential: &[f64], mask: &[bool]) -> Result<f64, SolverError> {
        self.kinetic_into_work(state);
        let g = self.couplings.g;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..state.values().len() {
            if !mask[i] {
                continue;
            }
            let psi = state.values()[i];
            let n = psi.norm_sqr();
            num += (psi.conj() * self.work[i]).re + (potential[i] * NANOKELVIN + g * n) * n;
            den += n;
        }
        if !(den > 0.0) {
            return Err(SolverError::EmptyRegion);
        }
        Ok(num / den / NANOKELVIN)
    }

    /// GPE energy `∫ ψ*Tψ + V|ψ|² + (g/2)|ψ|⁴`, J.
    pub fn energy(&mut self, state: &FieldState, potential: &[f64]) -> f64 {
        self.kinetic_into_work(state);
        let g = self.couplings.g;
        let mut e = 0.0;
        for (i, psi) in state.values().iter().enumerate() {
            let n = psi.norm_sqr();
            e += (psi.conj() * self.work[i]).re + (potential[i] * NANOKELVIN + 0.5 * g * n) * n;
        }
        e * self.grid.cell_volume()
    }

    /// Instantaneous three-body rate `L ∫|ψ|⁶ / ∫|ψ|²`, s⁻¹.
    pub fn three_body_rate(&self, state: &FieldState) -> f64 {
        let (mut n6, mut n2) = (0.0, 0.0);
        for v in state.values() {
            let n = v.norm_sqr();
            n6 += n * n * n;
            n2 += n;
        }
        if n2 > 0.0 {
            self.couplings.three_body * n6 / n2
        } else {
            0.0
        }
    }

    /// Thomas-Fermi profile for `atoms` in `potential` (nK), or a Gaussian
    /// around the potential minimum when interactions vanish.
    pub fn initial_guess(&self, potential: &[f64], atoms: f64) -> FieldState {
        let dv = self.grid.cell_volume();
        let g = self.couplings.g;
        let vmin = potential.iter().copied().fold(f64::INFINITY, f64::min);
        let count = |mu: f64| potential.iter().map(|v| (mu - v).max(0.0)).sum::<f64>() * NANOKELVIN * dv / g;
        let mut values = Vec::new();
        if g > 0.0 {
            let (mut lo, mut hi) = (vmin, vmin + 1.0);
            while count(hi) < atoms && hi - vmin < 1e9 {
                hi = vmin + 2.0 * (hi - vmin);
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count(mid) < atoms {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mu = hi;
            values = potential
                .iter()
                .map(|v| Complex64::new(((mu - v).max(0.0) * NANOKELVIN / g).sqrt(), 0.0))
                .collect();
        }
        let occupied = values.iter().filter(|v: &&Complex64| v.re > 0.0).count();
        if occupied < 2 {
            let imin = potential
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a })
                .0;
            let c = self.grid.point(imin);
            let widths: Vec<(usize, f64)> = self
                .grid
                .axes()
                .iter()
                .map(|a| (a.name.index(), a.extent / 8.0))
                .collect();
            values = self
                .grid
                .points()
                .map(|p| {
                    let r2: f64 = widths.iter().map(|&(i, w)| ((p[i] - c[i]) / w).powi(2)).sum();
                    Complex64::new((-0.5 * r2).exp(), 0.0)
                })
                .collect();
        }
        let mut s = FieldState::new(self.grid.clone(), values).expect("finite guess");
        s.renormalize(atoms);
        s
    }

    /// Imaginary-time relaxation to the lowest state in `potential` at
    /// barrier height `height` with `atoms` atoms. `seed` replaces the
    /// Thomas-Fermi initial guess.
    pub fn ground_state(
        &mut self,
        potential: &PotentialField,
        height: f64,
        atoms: f64,
        cfg: &SolverConfig,
        seed: Option<FieldState>,
    ) -> Result<GroundState, SolverError> {
        if !(atoms > 0.0) {
            return Err(SolverError::Invalid {
                field: "atoms",
                reason: format!("{atoms} must be positive"),
            });
        }
        let v = potential.values(height);
        let mut state = match seed {
            Some(s) => {
                let mut s = s;
                s.renormalize(atoms);
                s
            }
            None => self.initial_guess(&v, atoms),
        };
        let tau = cfg.dt_imag * MILLISECOND;
        let half = kinetic_factors(self.plan.k_squared(), 0.5 * tau, self.mass, true);
        let decay: Vec<f64> = v.iter().map(|x| x * NANOKELVIN * tau / HBAR).collect();
        let g_tau = self.couplings.g * tau / HBAR;
        let full_mask = vec![true; self.grid.len()];
        let len = self.grid.len() as f64;
        let dv = self.grid.cell_volume();

        let mut mu_prev = self.chemical_potential_masked(&state, &v, &full_mask)?;
        let mut checks = 0;
        let mut steps = 0;
        let mut change = f64::INFINITY;

        // State lives in k-space between potential steps; each step is
        // K½ P K½ followed by renormalisation, computed via Parseval.
        let mut psi = state.values().to_vec();
        self.plan.forward(&mut psi);
        apply(&mut psi, &half);
        let parseval = |p: &[Complex64]| p.iter().map(|c| c.norm_sqr()).sum::<f64>() / len * dv;
        let s = (atoms / parseval(&psi)).sqrt();
        scale(&mut psi, s);
        self.plan.inverse(&mut psi);

        while steps < cfg.max_steps {
            for (p, d) in psi.iter_mut().zip(&decay) {
                *p *= (-(d + g_tau * p.norm_sqr())).exp();
            }
            self.plan.forward(&mut psi);
            apply(&mut psi, &half);
            let s = (atoms / parseval(&psi)).sqrt();
            scale(&mut psi, s);
            steps += 1;
            let check = steps % cfg.check_interval == 0;
            if check {
                let mut out = psi.clone();
                self.plan.inverse(&mut out);
                state.values_mut().copy_from_slice(&out);
                if !state.is_finite() {
                    return Err(SolverError::NonFinite(0.0));
                }
                let mu = self.chemical_potential_masked(&state, &v, &full_mask)?;
                checks += 1;
                change = ((mu - mu_prev) / mu.abs().max(1e-300)).abs() / cfg.check_interval as f64;
                mu_prev = mu;
                if change < cfg.tolerance {
                    state.barrier_height = height;
                    state.time = 0.0;
                    return Ok(GroundState {
                        state,
                        mu,
                        checks,
                        steps,
                    });
                }
            }
            apply(&mut psi, &half);
            self.plan.inverse(&mut psi);
        }
        Err(SolverError::NotConverged { steps, change })
    }

    /// Real-time propagation of `state` for `run.horizon` ms. The observer
    /// sees every snapshot (including `t = t₀`) and may stop the run early.
    pub fn propagate(
        &mut self,
        state: &mut FieldState,
        run: &RealTimeRun<'_>,
        cfg: &SolverConfig,
        mut observer: impl FnMut(&Snapshot, &FieldState) -> Flow,
    ) -> Result<Vec<Snapshot>, SolverError> {
        let dt = cfg.dt * MILLISECOND;
        let nsteps = (run.horizon / cfg.dt).round() as usize;
        let every = ((cfg.snapshot_interval / cfg.dt).round() as usize).max(1);
        let t0 = state.time;
        let half = kinetic_factors(self.plan.k_squared(), 0.5 * dt, self.mass, false);
        let full = kinetic_factors(self.plan.k_squared(), dt, self.mass, false);
        let mask = run.trapped.mask(&self.grid);
        let absorbing = run.absorber.iter().any(|&w| w > 0.0);
        let damping: Vec<f64> = run
            .absorber
            .iter()
            .map(|w| (-w * NANOKELVIN * dt / HBAR).exp())
            .collect();
        let g_dt = self.couplings.g * dt / HBAR;
        let l_dt = if cfg.three_body { self.couplings.three_body * dt } else { 0.0 };

        let mut snapshots = Vec::new();
        let mut height = run.ramp.height_at(t0);
        let mut v_nk = run.potential.values(height);
        let mut phase: Vec<f64> = v_nk.iter().map(|v| v * NANOKELVIN * dt / HBAR).collect();

        let first = self.snapshot(state, run, &mask, t0)?;
        snapshots.push(first);
        state.barrier_height = height;
        if observer(&first, state) == Flow::Stop || nsteps == 0 {
            return Ok(snapshots);
        }

        let mut norm = state.total_norm();
        let mut last_total = first.n_total;
        let mut psi = std::mem::take(state.values_mut_vec());
        self.plan.apply_diagonal(&mut psi, &half);
        for step in 0..nsteps {
            let t_mid = t0 + (step as f64 + 0.5) * cfg.dt;
            let h = run.ramp.height_at(t_mid);
            if h != height {
                height = h;
                v_nk = run.potential.values(height);
                phase = v_nk.iter().map(|v| v * NANOKELVIN * dt / HBAR).collect();
            }
            let mut new_norm = 0.0;
            for i in 0..psi.len() {
                let p = psi[i];
                let n0 = p.norm_sqr();
                let mut amp = damping[i];
                if l_dt > 0.0 {
                    amp /= (1.0 + 2.0 * l_dt * n0 * n0).sqrt().sqrt();
                }
                let n1 = n0 * amp * amp;
                let theta = phase[i] + g_dt * 0.5 * (n0 + n1);
                psi[i] = p * Complex64::from_polar(amp, -theta);
                new_norm += n1;
            }
            new_norm *= self.grid.cell_volume();
            let time = t0 + (step + 1) as f64 * cfg.dt;
            if !new_norm.is_finite() {
                return Err(SolverError::NonFinite(time));
            }
            if new_norm > norm * (1.0 + 1e-6) {
                return Err(SolverError::Unstable {
                    time,
                    growth: new_norm / norm - 1.0,
                });
            }
            norm = new_norm;

            let at_snapshot = (step + 1) % every == 0 || step + 1 == nsteps;
            if !at_snapshot {
                self.plan.apply_diagonal(&mut psi, &full);
                continue;
            }
            self.plan.apply_diagonal(&mut psi, &half);
            *state.values_mut_vec() = psi;
            state.time = time;
            state.barrier_height = run.ramp.height_at(time);
            let snap = self.snapshot(state, run, &mask, time)?;
            if absorbing && snap.n_total > last_total * (1.0 + 1e-10) {
                return Err(SolverError::NormIncrease(time));
            }
            last_total = snap.n_total;
            snapshots.push(snap);
            if observer(&snap, state) == Flow::Stop || step + 1 == nsteps {
                return Ok(snapshots);
            }
            psi = std::mem::take(state.values_mut_vec());
            self.plan.apply_diagonal(&mut psi, &half);
        }
        *state.values_mut_vec() = psi;
        Ok(snapshots)
    }

    fn snapshot(&mut self, state: &FieldState, run: &RealTimeRun<'_>, mask: &[bool], time: f64) -> Result<Snapshot, SolverError> {
        if !state.is_finite() {
            return Err(SolverError::NonFinite(time));
        }
        let h = run.ramp.height_at(time);
        let v = run.potential.values(h);
        let n_trapped = state.norm_squared_masked(mask);
        let mu_trapped = if n_trapped > 0.0 {
            self.chemical_potential_masked(state, &v, mask)?
        } else {
            f64::NAN
        };
        Ok(Snapshot {
            time,
            barrier_height: h,
            n_total: state.total_norm(),
            n_trapped,
            mu_trapped,
        })
    }
}

fn apply(data: &mut [Complex64], factors: &[Complex64]) {
    for (v, f) in data.iter_mut().zip(factors) {
        *v *= f;
    }
}

fn scale(data: &mut [Complex64], s: f64) {
    for v in data.iter_mut() {
        *v *= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use approx::assert_relative_eq;

    #[test]
    fn soft_floor_limits() {
        let f = SoftFloor { level: 10.0, softness: 2.0 };
        assert_relative_eq!(f.apply(100.0), 100.0, max_relative = 1e-12);
        assert_relative_eq!(f.apply(-1e4), 10.0, max_relative = 1e-12);
        assert!(f.apply(10.0) > 10.0);
        assert!(f.apply(1e6).is_finite());
    }

    #[test]
    fn ramp_interpolation() {
        let r = RampSchedule::linear(550.0, 290.0, 5.0).unwrap();
        assert_eq!(r.height_at(-1.0), 550.0);
        assert_eq!(r.height_at(0.0), 550.0);
        assert_relative_eq!(r.height_at(2.5), 420.0);
        assert_eq!(r.height_at(5.0), 290.0);
        assert_eq!(r.height_at(100.0), 290.0);
        assert!(RampSchedule::linear(550.0, -1.0, 5.0).is_err());
        assert!(RampSchedule::linear(550.0, 290.0, -5.0).is_err());
        let two = RampSchedule::new(
            vec![
                RampSegment { duration: 1.0, start: 10.0, end: 20.0 },
                RampSegment { duration: 0.0, start: 20.0, end: 5.0 },
                RampSegment { duration: 2.0, start: 5.0, end: 1.0 },
            ],
            1.0,
        )
        .unwrap();
        assert_relative_eq!(two.height_at(0.5), 15.0);
        assert_relative_eq!(two.height_at(2.0), 3.0);
        assert_eq!(two.duration(), 3.0);
    }

    #[test]
    fn absorber_profile_shape() {
        let g = Grid::new(vec![
            Axis::new(AxisName::Y, 64, 64e-6, -16e-6).unwrap(),
            Axis::centered(AxisName::Z, 32, 32e-6).unwrap(),
        ])
        .unwrap();
        let a = AbsorberConfig {
            onset: 15e-6,
            ramp_length: 10e-6,
            peak: 500.0,
            exponent: 4.0,
            edge_depth: 2e-6,
        };
        let w = a.profile(&g, 0.0);
        let at = |y: f64, z: f64| {
            let i = g.points().position(|p| (p[1] - y).abs() < 1e-9 && (p[2] - z).abs() < 1e-9).unwrap();
            w[i]
        };
        assert_eq!(at(0.0, 0.0), 0.0);
        assert!(at(15e-6, 0.0) < 1e-30);
        assert_relative_eq!(at(20e-6, 0.0), 500.0 / 16.0, max_relative = 1e-12);
        assert_eq!(at(30e-6, 0.0), 500.0);
        assert!(at(0.0, -16e-6) == 500.0);
        assert_eq!(at(0.0, -13e-6), 0.0);
        assert!(AbsorberConfig::disabled().profile(&g, 0.0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reduced_couplings() {
        let s = Species::rubidium87();
        let h = Harmonic {
            mass: s.mass,
            omega: [2.0 * PI * 86.0, 2.0 * PI * 10.0, 2.0 * PI * 43.0],
        };
        let g1 = Grid::new(vec![Axis::centered(AxisName::Y, 16, 1e-5).unwrap()]).unwrap();
        let c = Couplings::reduced(&s, &g1, &h).unwrap();
        let ax = (HBAR / (s.mass * h.omega[0])).sqrt();
        let az = (HBAR / (s.mass * h.omega[2])).sqrt();
        assert_relative_eq!(c.g, interaction_coupling(&s) / (2.0 * PI * ax * az), max_relative = 1e-12);
        assert_relative_eq!(
            c.three_body,
            s.three_body_loss / (3.0 * PI * PI * ax * ax * az * az),
            max_relative = 1e-12
        );
        let trap = RestTrap::new(resttrap_core::TrapConfig::standard(290.0), &s).unwrap();
        let gx = Grid::new(vec![Axis::centered(AxisName::X, 16, 1e-5).unwrap()]).unwrap();
        assert!(matches!(
            Couplings::reduced(&s, &gx, &trap),
            Err(SolverError::NoTransverseConfinement(AxisName::Y))
        ));
    }

    #[test]
    fn stability_limit_enforced() {
        let s = Species::rubidium87();
        let g = Grid::new(vec![Axis::centered(AxisName::Y, 256, 80e-6).unwrap()]).unwrap();
        let lim = SolverConfig::stability_limit(&g, s.mass);
        assert!(lim > 0.02 && lim < 0.022, "{lim}");
        let mut cfg = SolverConfig { dt: 0.01, dt_imag: 0.005, ..Default::default() };
        assert!(cfg.validate(&g, s.mass).is_ok());
        cfg.dt = 0.03;
        assert!(cfg.validate(&g, s.mass).is_err());
    }
}
