//! Experiment pipelines: ground-state μ(N) curves, decay runs with the full
//! observables chain, and the GPE vs transfer-matrix β comparison. Each
//! writes plot-ready CSV and JSON under an output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use resttrap_core::analytics::{self, mu_analytic};
use resttrap_core::observables::{
    classify_regimes_with, decay_rate, fit_gamma_mu_with, masked_line_fit, FitOptions, ObservablesError, RegimeOptions,
};
use resttrap_core::transfer::{beta_slope, transmission, wkb_log_transmission, BarrierProfile1D, TransferError};
use resttrap_core::units::constants::MICROMETER;
use resttrap_core::{DecayFit, Regime, RegimeReport, RestTrap, TimeSeries, TrapGeometry, ValueKind};

use crate::config::{ConfigError, RunConfig};
use crate::gpe::{Couplings, Flow, PotentialField, RealTimeRun, Snapshot, Solver, SolverError};
use crate::grid::{AxisName, Grid, Region};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("analysis: {0}")]
    Observables(#[from] ObservablesError),
    #[error("transfer matrix: {0}")]
    Transfer(#[from] TransferError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 1 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 1,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A grid with the trap potential sampled on it and the matching couplings.
pub struct Scene {
    pub trap: RestTrap,
    pub geometry: TrapGeometry,
    pub grid: Grid,
    /// Real-time potential.
    pub potential: PotentialField,
    /// Potential used for relaxation: real-time potential plus the wall.
    pub relax_potential: PotentialField,
    pub couplings: Couplings,
}

impl Scene {
    /// `final_height` fixes the geometry used for the floor and for the
    /// reference energies.
    pub fn new(cfg: &RunConfig, grid: Grid, final_height: f64) -> Result<Self, HarnessError> {
        let trap = cfg.trap(final_height)?;
        let geometry = cfg.geometry(final_height)?;
        let mut potential = PotentialField::sample(&trap, &grid);
        if let Some(f) = cfg.floor.floor(&geometry) {
            potential = potential.with_floor(f);
        }
        let y0 = cfg.trap.center_um * MICROMETER;
        let (h, l) = (cfg.wall.height_nk, cfg.wall.length_um * MICROMETER);
        let wall: Vec<f64> = grid
            .points()
            .map(|p| h * ((p[1] - y0) / l).clamp(0.0, 1.0).powi(2))
            .collect();
        let relax_potential = potential.clone().with_wall(wall);
        let couplings = Couplings::reduced(&cfg.species(), &grid, &trap)?;
        Ok(Self {
            trap,
            geometry,
            grid,
            potential,
            relax_potential,
            couplings,
        })
    }

    pub fn solver(&self, cfg: &RunConfig) -> Solver {
        Solver::new(self.grid.clone(), cfg.species().mass, self.couplings)
    }

    /// Atoms on the trap side of the barrier centre.
    pub fn trapped_region(cfg: &RunConfig) -> Region {
        Region::Below {
            axis: AxisName::Y,
            bound: cfg.trap.center_um * MICROMETER,
        }
    }
}

/// One point of the μ(N) dataset. μ values are measured from the trap
/// minimum, nK.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig2Row {
    pub atoms: f64,
    pub mu_analytic: f64,
    pub mu_gpe: f64,
    pub barrier_height: f64,
}

/// Analytic and ground-state chemical potentials over the `[fig2]` sweep.
pub fn run_figure2(cfg: &RunConfig) -> Result<Vec<Fig2Row>, HarnessError> {
    cfg.validate()?;
    let grid = cfg.fig2_grid()?;
    let solver_cfg = cfg.fig2_solver();
    let species = cfg.species();
    let jobs: Vec<(f64, f64)> = cfg
        .fig2
        .barrier_heights_nk
        .iter()
        .flat_map(|&h| cfg.fig2.atom_numbers.iter().map(move |&n| (h, n)))
        .collect();
    jobs.par_iter()
        .map(|&(h, n)| {
            let scene = Scene::new(cfg, grid.clone(), h)?;
            let analytic = mu_analytic(&scene.trap, &species, n).map_err(|source| ConfigError::Trap { height: h, source })?;
            let gpe = if n > 0.0 {
                let gs = scene
                    .solver(cfg)
                    .ground_state(&scene.relax_potential, h, n, &solver_cfg, None)?;
                gs.mu - scene.geometry.minimum_energy
            } else {
                0.0
            };
            Ok(Fig2Row {
                atoms: n,
                mu_analytic: analytic,
                mu_gpe: gpe,
                barrier_height: h,
            })
        })
        .collect()
}

/// Everything produced by one decay run.
#[derive(Debug, Clone)]
pub struct DecayRun {
    pub barrier_height: f64,
    pub geometry: TrapGeometry,
    /// Ground-state μ above the minimum of the preparation trap, nK.
    pub ground_mu: f64,
    pub ground_steps: usize,
    pub snapshots: Vec<Snapshot>,
    /// N(t) after the optional background factor and noise.
    pub atoms: TimeSeries,
    /// μ(t) above the final trap minimum, nK.
    pub mu: TimeSeries,
    /// Γ(t), s⁻¹, on the interior sample times.
    pub gammas: TimeSeries,
    /// μ on the Γ sample times.
    pub gamma_mu: TimeSeries,
    pub regimes: RegimeReport,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
}

/// Scalar results of a decay run, written as `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct DecaySummary {
    pub barrier_height: f64,
    pub trap_depth: f64,
    pub minimum_energy: f64,
    pub ground_mu: f64,
    pub ground_steps: usize,
    pub spill_end_ms: Option<f64>,
    pub background_start_ms: Option<f64>,
    pub gamma_50ms: f64,
    pub gamma_500ms: f64,
    pub tunneling_samples: usize,
    pub tunneling_mu_max: Option<f64>,
    pub ln_gamma_slope: Option<f64>,
    pub ln_gamma_r2: Option<f64>,
    pub fit_beta: Option<f64>,
    pub fit_beta_stderr: Option<f64>,
    pub fit_alpha: Option<f64>,
    pub fit_gamma_bg: Option<f64>,
    pub fit_points: usize,
    pub fit_error: Option<String>,
}

impl DecayRun {
    pub fn tunneling_mask(&self) -> Vec<bool> {
        self.regimes
            .labels
            .iter()
            .zip(self.gammas.values())
            .map(|(&l, &g)| l == Regime::Tunneling && g > 0.0)
            .collect()
    }

    /// Straight line `ln Γ = c₀ + c₁μ` over the tunneling samples:
    /// `(slope, R²)`.
    pub fn ln_gamma_line(&self) -> Option<(f64, f64)> {
        let mask = self.tunneling_mask();
        let ln: Vec<f64> = self.gammas.values().iter().map(|g| g.max(f64::MIN_POSITIVE).ln()).collect();
        masked_line_fit(self.gamma_mu.values(), &ln, &mask).map(|(_, s, r2)| (s, r2))
    }

    pub fn summary(&self) -> DecaySummary {
        let mask = self.tunneling_mask();
        let line = self.ln_gamma_line();
        let mu_max = self
            .gamma_mu
            .values()
            .iter()
            .zip(&mask)
            .filter(|p| *p.1)
            .map(|p| *p.0)
            .fold(None, |a: Option<f64>, m| Some(a.map_or(m, |a| a.max(m))));
        DecaySummary {
            barrier_height: self.barrier_height,
            trap_depth: self.geometry.trap_depth,
            minimum_energy: self.geometry.minimum_energy,
            ground_mu: self.ground_mu,
            ground_steps: self.ground_steps,
            spill_end_ms: self.regimes.spill_end,
            background_start_ms: self.regimes.background_start,
            gamma_50ms: self.gammas.value_at(50.0),
            gamma_500ms: self.gammas.value_at(500.0),
            tunneling_samples: mask.iter().filter(|m| **m).count(),
            tunneling_mu_max: mu_max,
            ln_gamma_slope: line.map(|l| l.0),
            ln_gamma_r2: line.map(|l| l.1),
            fit_beta: self.fit.as_ref().map(|f| f.beta),
            fit_beta_stderr: self.fit.as_ref().map(|f| f.beta_stderr()),
            fit_alpha: self.fit.as_ref().map(|f| f.alpha),
            fit_gamma_bg: self.fit.as_ref().map(|f| f.gamma_bg),
            fit_points: self.fit.as_ref().map_or(0, |f| f.used.iter().filter(|u| **u).count()),
            fit_error: self.fit_error.clone(),
        }
    }
}

/// Knobs that differ between otherwise identical decay runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecayOverrides {
    /// Absorber onset, μm.
    pub absorber_onset_um: Option<f64>,
    /// Propagation horizon, ms.
    pub horizon_ms: Option<f64>,
}

/// Ground state at the preparation height, ramp to `barrier_height`,
/// propagate, then the observables chain. With `out`, snapshot rows are
/// flushed to `out/snapshots.csv` while running, so an aborted run leaves
/// its partial trace behind.
pub fn run_decay(
    cfg: &RunConfig,
    barrier_height: f64,
    overrides: DecayOverrides,
    out: Option<&Path>,
) -> Result<DecayRun, HarnessError> {
    let scene = Scene::new(cfg, cfg.grid()?, barrier_height)?;
    let solver_cfg = cfg.solver();
    let mut solver = scene.solver(cfg);
    let initial = cfg.ramp.initial_nk;
    let gs = solver.ground_state(&scene.relax_potential, initial, cfg.atoms.n, &solver_cfg, None)?;
    let prep_min = cfg.geometry(initial)?.minimum_energy;

    let mut absorber_cfg = cfg.absorber.absorber();
    if let Some(o) = overrides.absorber_onset_um {
        absorber_cfg.onset = o * MICROMETER;
    }
    let absorber = absorber_cfg.profile(&scene.grid, cfg.trap.center_um * MICROMETER);
    let ramp = cfg.ramp(barrier_height)?;
    let run = RealTimeRun {
        potential: &scene.potential,
        ramp: &ramp,
        absorber: &absorber,
        trapped: Scene::trapped_region(cfg),
        horizon: overrides.horizon_ms.unwrap_or(cfg.ramp.hold_ms),
    };

    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("snapshots.csv");
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            writeln!(w, "time_ms,barrier_nk,n_total,n_trapped,mu_trapped_nk").map_err(io_err(&path))?;
            Some((w, path))
        }
        None => None,
    };
    let mut write_failure = None;
    let mut state = gs.state.clone();
    let result = solver.propagate(&mut state, &run, &solver_cfg, |s, _| {
        if let Some((w, path)) = writer.as_mut() {
            let r = writeln!(
                w,
                "{},{},{},{},{}",
                s.time, s.barrier_height, s.n_total, s.n_trapped, s.mu_trapped
            )
            .and_then(|_| w.flush());
            if let Err(e) = r {
                write_failure = Some(HarnessError::Io {
                    path: path.display().to_string(),
                    source: e,
                });
                return Flow::Stop;
            }
        }
        Flow::Continue
    });
    if let Some(e) = write_failure {
        return Err(e);
    }
    let snapshots = result?;
    analyse(cfg, barrier_height, &scene.geometry, gs.mu - prep_min, gs.steps, snapshots)
}

/// Turn a snapshot trace into N(t), μ(t), Γ(t), regimes and the fit.
pub fn analyse(
    cfg: &RunConfig,
    barrier_height: f64,
    geometry: &TrapGeometry,
    ground_mu: f64,
    ground_steps: usize,
    snapshots: Vec<Snapshot>,
) -> Result<DecayRun, HarnessError> {
    let o = &cfg.observables;
    let times: Vec<f64> = snapshots.iter().map(|s| s.time).collect();
    let mut atoms: Vec<f64> = snapshots
        .iter()
        .map(|s| {
            if o.analytic_background {
                s.n_trapped * (-o.gamma_bg * s.time * 1e-3).exp()
            } else {
                s.n_trapped
            }
        })
        .collect();
    if o.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ barrier_height.to_bits());
        for n in &mut atoms {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *n *= (1.0 + o.noise * xi).max(1e-6);
        }
    }
    let mu: Vec<f64> = snapshots.iter().map(|s| s.mu_trapped - geometry.minimum_energy).collect();
    let atoms = TimeSeries::new(times.clone(), atoms, ValueKind::AtomNumber)?;
    let mu = TimeSeries::new(times, mu, ValueKind::ChemicalPotential)?;
    let gammas = decay_rate(&atoms)?;
    let gamma_mu = mu.aligned_to(&gammas);
    let regime_opts = RegimeOptions {
        sigma_bg: o.sigma_bg,
        band: o.band,
        sustained: o.sustained,
    };
    let u_s = geometry.trap_depth;
    let regimes = classify_regimes_with(&gammas, &gamma_mu, u_s, o.gamma_bg, &regime_opts)?;
    let fit_opts = FitOptions {
        free_background: o.free_background,
        ..FitOptions::default()
    };
    let (fit, fit_error) = match fit_gamma_mu_with(&gammas, &gamma_mu, o.gamma_bg, u_s, &fit_opts) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(DecayRun {
        barrier_height,
        geometry: *geometry,
        ground_mu,
        ground_steps,
        snapshots,
        atoms,
        mu,
        gammas,
        gamma_mu,
        regimes,
        fit,
        fit_error,
    })
}

/// Transfer-matrix β on the saddle-point profile for one barrier height.
pub fn transfer_beta(cfg: &RunConfig, barrier_height: f64) -> Result<f64, HarnessError> {
    let geo = cfg.geometry(barrier_height)?;
    let t = &cfg.transfer;
    let profile = BarrierProfile1D::saddle_point(&geo, t.width_convention.into(), t.cells)?;
    let (_, peak) = profile.peak();
    Ok(beta_slope(&profile, peak - t.window_nk, peak, t.samples, &cfg.species())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaRow {
    pub barrier_height: f64,
    pub beta_gpe: f64,
    pub beta_gpe_stderr: f64,
    pub beta_transfer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaCurvePoint {
    pub barrier_height: f64,
    pub beta: f64,
}

/// Transfer-matrix β at every height of the `[transfer] scan`.
pub fn transfer_beta_curve(cfg: &RunConfig) -> Result<Vec<BetaCurvePoint>, HarnessError> {
    cfg.transfer
        .scan()
        .par_iter()
        .map(|&h| {
            Ok(BetaCurvePoint {
                barrier_height: h,
                beta: transfer_beta(cfg, h)?,
            })
        })
        .collect()
}

/// Pair each decay run's fitted β with the transfer-matrix β.
pub fn beta_rows(cfg: &RunConfig, runs: &[DecayRun]) -> Result<Vec<BetaRow>, HarnessError> {
    runs.iter()
        .map(|r| {
            Ok(BetaRow {
                barrier_height: r.barrier_height,
                beta_gpe: r.fit.as_ref().map_or(f64::NAN, |f| f.beta),
                beta_gpe_stderr: r.fit.as_ref().map_or(f64::NAN, |f| f.beta_stderr()),
                beta_transfer: transfer_beta(cfg, r.barrier_height)?,
            })
        })
        .collect()
}

/// Decay runs over the sweep heights, each in its own directory under
/// `out`, returned in sweep order.
pub fn run_decay_sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<DecayRun>, HarnessError> {
    cfg.validate()?;
    cfg.sweep_heights()
        .par_iter()
        .map(|&h| {
            let dir = out.map(|o| o.join(decay_dir_name(h)));
            let run = run_decay(cfg, h, DecayOverrides::default(), dir.as_deref())?;
            if let Some(d) = &dir {
                write_decay_outputs(d, &run)?;
            }
            Ok(run)
        })
        .collect()
}

pub fn decay_dir_name(height: f64) -> String {
    format!("decay_U{}", fmt_height(height))
}

fn fmt_height(h: f64) -> String {
    if h.fract() == 0.0 {
        format!("{}", h as i64)
    } else {
        format!("{h}").replace('.', "p")
    }
}

/// Minimal CSV writer: header row, comma separated, floats in shortest
/// round-trip form.
pub struct CsvWriter {
    inner: BufWriter<File>,
    path: PathBuf,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, HarnessError> {
        let mut inner = BufWriter::new(File::create(path).map_err(io_err(path))?);
        writeln!(inner, "{}", header.join(",")).map_err(io_err(path))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), HarnessError> {
        writeln!(self.inner, "{}", fields.join(",")).map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<PathBuf, HarnessError> {
        self.inner.flush().map_err(io_err(&self.path))?;
        Ok(self.path)
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<PathBuf, HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serialisable");
    fs::write(path, text + "\n").map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

/// `series.csv` (N, μ, Γ, regime per sample) and `summary.json`.
pub fn write_decay_outputs(dir: &Path, run: &DecayRun) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = CsvWriter::create(
        &dir.join("series.csv"),
        &["time_ms", "n", "mu_nk", "gamma_per_s", "regime", "fit_used"],
    )?;
    let offset = 2;
    let used = run.fit.as_ref().map(|f| f.used.clone());
    for i in 0..run.atoms.len() {
        let (gamma, regime, u) = if i >= offset && i - offset < run.gammas.len() {
            let j = i - offset;
            (
                f(run.gammas.values()[j]),
                run.regimes.labels[j].as_str().to_string(),
                used.as_ref().map_or(String::new(), |u| u8::from(u[j]).to_string()),
            )
        } else {
            (String::new(), String::new(), String::new())
        };
        w.row(&[
            f(run.atoms.times()[i]),
            f(run.atoms.values()[i]),
            f(run.mu.values()[i]),
            gamma,
            regime,
            u,
        ])?;
    }
    let series = w.finish()?;
    let summary = write_json(&dir.join("summary.json"), &run.summary())?;
    Ok(vec![dir.join("snapshots.csv"), series, summary])
}

pub fn write_fig2(dir: &Path, rows: &[Fig2Row]) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = CsvWriter::create(&dir.join("fig2.csv"), &["N", "mu_analytic", "mu_gpe", "U0"])?;
    for r in rows {
        w.row(&[f(r.atoms), f(r.mu_analytic), f(r.mu_gpe), f(r.barrier_height)])?;
    }
    w.finish()
}

pub fn write_beta(dir: &Path, rows: &[BetaRow], curve: &[BetaCurvePoint]) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = CsvWriter::create(
        &dir.join("beta.csv"),
        &["U0", "beta_gpe", "beta_gpe_stderr", "beta_transfer"],
    )?;
    for r in rows {
        w.row(&[f(r.barrier_height), f(r.beta_gpe), f(r.beta_gpe_stderr), f(r.beta_transfer)])?;
    }
    let a = w.finish()?;
    let mut w = CsvWriter::create(&dir.join("beta_transfer_scan.csv"), &["U0", "beta_transfer"])?;
    for p in curve {
        w.row(&[f(p.barrier_height), f(p.beta)])?;
    }
    Ok(vec![a, w.finish()?])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticsRow {
    pub barrier_height: f64,
    pub atoms: f64,
    pub minimum_energy: f64,
    pub trap_depth: f64,
    pub barrier_acceleration: f64,
    pub reduced_acceleration: f64,
    pub omega_bar: f64,
    pub mu: f64,
    pub epsilon_0: f64,
    pub peak_density: f64,
    pub gamma_3b: f64,
}

/// Closed-form estimates at every sweep height for the configured N.
pub fn run_analytics(cfg: &RunConfig) -> Result<Vec<AnalyticsRow>, HarnessError> {
    let species = cfg.species();
    let mut heights = cfg.sweep_heights();
    heights.sort_by(f64::total_cmp);
    heights.dedup();
    heights
        .iter()
        .map(|&h| {
            let trap = cfg.trap(h)?;
            let geo = cfg.geometry(h)?;
            let e = analytics::estimates(&trap, &species, cfg.atoms.n)
                .map_err(|source| ConfigError::Trap { height: h, source })?;
            Ok(AnalyticsRow {
                barrier_height: h,
                atoms: cfg.atoms.n,
                minimum_energy: geo.minimum_energy,
                trap_depth: geo.trap_depth,
                barrier_acceleration: geo.barrier_acceleration,
                reduced_acceleration: geo.reduced_acceleration,
                omega_bar: e.omega_bar,
                mu: e.mu,
                epsilon_0: e.epsilon_0,
                peak_density: e.peak_density,
                gamma_3b: e.gamma_3b,
            })
        })
        .collect()
}

pub fn write_analytics(dir: &Path, rows: &[AnalyticsRow]) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = CsvWriter::create(
        &dir.join("analytics.csv"),
        &[
            "U0",
            "N",
            "U_min_nk",
            "U_s_nk",
            "a_b",
            "a_bar",
            "omega_bar",
            "mu_nk",
            "epsilon0_nk",
            "n0_per_m3",
            "gamma_3b_per_s",
        ],
    )?;
    for r in rows {
        w.row(&[
            f(r.barrier_height),
            f(r.atoms),
            f(r.minimum_energy),
            f(r.trap_depth),
            f(r.barrier_acceleration),
            f(r.reduced_acceleration),
            f(r.omega_bar),
            f(r.mu),
            f(r.epsilon_0),
            f(r.peak_density),
            f(r.gamma_3b),
        ])?;
    }
    w.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransmissionRow {
    pub barrier_height: f64,
    pub energy: f64,
    pub t: f64,
    pub ln_t: f64,
    pub ln_t_wkb: Option<f64>,
    pub rate: f64,
}

/// T(E) through the saddle-point profile at each sweep height, for
/// energies across the `window` below the saddle.
pub fn run_transmission(cfg: &RunConfig) -> Result<Vec<TransmissionRow>, HarnessError> {
    let species = cfg.species();
    let t = &cfg.transfer;
    let mut rows = Vec::new();
    for h in cfg.sweep_heights() {
        let geo = cfg.geometry(h)?;
        let trap = cfg.trap(h)?;
        let omega = analytics::omega_bar(&trap);
        let profile = BarrierProfile1D::saddle_point(&geo, t.width_convention.into(), t.cells)?;
        let (_, peak) = profile.peak();
        let n = 4 * t.samples;
        for i in 0..n {
            // Stop just short of the peak where WKB has no turning points.
            let e = peak - 3.0 * t.window_nk + 3.0 * t.window_nk * i as f64 / n as f64;
            if e <= 0.0 {
                continue;
            }
            let tr = transmission(&profile, e, &species)?;
            rows.push(TransmissionRow {
                barrier_height: h,
                energy: e,
                t: tr.t,
                ln_t: tr.ln_t,
                ln_t_wkb: wkb_log_transmission(&profile, e, &species).ok(),
                rate: resttrap_core::transfer::qualitative_rate(tr.ln_t, omega),
            });
        }
    }
    Ok(rows)
}

pub fn write_transmission(dir: &Path, rows: &[TransmissionRow]) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = CsvWriter::create(
        &dir.join("transmission.csv"),
        &["U0", "E_nk", "T", "ln_T", "ln_T_wkb", "rate_per_s"],
    )?;
    for r in rows {
        w.row(&[f(r.barrier_height), f(r.energy), f(r.t), f(r.ln_t), opt(r.ln_t_wkb), f(r.rate)])?;
    }
    w.finish()
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Index of a command's outputs, written last and atomically.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub label: String,
    pub config_hash: String,
    pub tool_version: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub threads: usize,
    pub files: Vec<ManifestFile>,
    pub diagnostics: serde_json::Value,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, started: f64) -> Self {
        Self {
            command: command.into(),
            label: cfg.label.clone(),
            config_hash: cfg.hash(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_unix_s: started,
            finished_unix_s: started,
            threads: rayon::current_num_threads(),
            files: Vec::new(),
            diagnostics: serde_json::Value::Null,
        }
    }

    /// Record `paths` relative to `root` with their digests.
    pub fn add_files(&mut self, root: &Path, paths: &[PathBuf]) -> Result<(), HarnessError> {
        for p in paths {
            let data = fs::read(p).map_err(io_err(p))?;
            let rel = p.strip_prefix(root).unwrap_or(p);
            self.files.push(ManifestFile {
                path: rel.display().to_string(),
                sha256: Sha256::digest(&data).iter().map(|b| format!("{b:02x}")).collect(),
                bytes: data.len() as u64,
            });
        }
        Ok(())
    }

    /// Write `manifest.json` via a temporary file and a rename.
    pub fn write(mut self, root: &Path) -> Result<PathBuf, HarnessError> {
        self.finished_unix_s = unix_now();
        fs::create_dir_all(root).map_err(io_err(root))?;
        let tmp = root.join(".manifest.json.tmp");
        let target = root.join("manifest.json");
        write_json(&tmp, &self)?;
        fs::rename(&tmp, &target).map_err(io_err(&target))?;
        Ok(target)
    }
}
