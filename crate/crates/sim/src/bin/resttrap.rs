use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use resttrap::config::{ConfigError, Preset, RunConfig};
use resttrap::harness::{
    self, beta_rows, decay_dir_name, run_analytics, run_decay_sweep, run_figure2, run_transmission, transfer_beta_curve,
    unix_now, CsvWriter, DecayRun, HarnessError, RunManifest,
};

#[derive(Parser)]
#[command(name = "resttrap", version, about = "Condensate escape from a light-sheet trap: GPE runs and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base parameter set; overrides a `preset` key in the config file.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for noise injection; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Chemical potential against atom number: analytic and ground state.
    Fig2,
    /// Decay runs over the barrier-height sweep.
    Decay,
    /// β from the decay fits next to the transfer-matrix β.
    Beta,
    /// Closed-form estimates for the configured trap.
    Analytics,
    /// Transmission through the saddle-point barrier profile.
    Transmission,
    /// Resolve and check the configuration without running anything.
    ValidateConfig,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Fig2 => "fig2",
            Self::Decay => "decay",
            Self::Beta => "beta",
            Self::Analytics => "analytics",
            Self::Transmission => "transmission",
            Self::ValidateConfig => "validate-config",
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p, cli.preset)?,
        None => RunConfig::layered(cli.preset, None)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn decay_outputs(out: &Path, runs: &[DecayRun]) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = Vec::new();
    for r in runs {
        let dir = out.join(decay_dir_name(r.barrier_height));
        files.push(dir.join("snapshots.csv"));
        files.push(dir.join("series.csv"));
        files.push(dir.join("summary.json"));
    }
    // All N(t) curves side by side; the runs share their sample times.
    if let Some(first) = runs.first() {
        let mut header = vec!["time_ms".to_string()];
        header.extend(runs.iter().map(|r| format!("n_U{}", r.barrier_height)));
        let cols: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut w = CsvWriter::create(&out.join("decay_curves.csv"), &cols)?;
        for (i, t) in first.atoms.times().iter().enumerate() {
            let mut row = vec![format!("{t}")];
            row.extend(runs.iter().map(|r| r.atoms.values().get(i).map_or(String::new(), |n| format!("{n}"))));
            w.row(&row)?;
        }
        files.push(w.finish()?);
    }
    Ok(files)
}

fn decay_diagnostics(runs: &[DecayRun]) -> serde_json::Value {
    json!(runs
        .iter()
        .map(|r| json!({
            "barrier_height": r.barrier_height,
            "ground_state_steps": r.ground_steps,
            "snapshots": r.snapshots.len(),
            "fit_iterations": r.fit.as_ref().map(|f| f.iterations),
            "fit_error": r.fit_error,
        }))
        .collect::<Vec<_>>())
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<(), HarnessError> {
    let started = unix_now();
    let out = cli.out.as_path();
    let mut manifest = RunManifest::new(cli.command.name(), cfg, started);
    match cli.command {
        Command::ValidateConfig => unreachable!("handled before execution"),
        Command::Fig2 => {
            let rows = run_figure2(cfg)?;
            let file = harness::write_fig2(out, &rows)?;
            manifest.add_files(out, &[file])?;
        }
        Command::Decay => {
            let runs = run_decay_sweep(cfg, Some(out))?;
            let files = decay_outputs(out, &runs)?;
            manifest.add_files(out, &files)?;
            manifest.diagnostics = decay_diagnostics(&runs);
        }
        Command::Beta => {
            let runs = run_decay_sweep(cfg, Some(out))?;
            let mut files = decay_outputs(out, &runs)?;
            let rows = beta_rows(cfg, &runs)?;
            let curve = transfer_beta_curve(cfg)?;
            files.extend(harness::write_beta(out, &rows, &curve)?);
            manifest.add_files(out, &files)?;
            manifest.diagnostics = decay_diagnostics(&runs);
        }
        Command::Analytics => {
            let rows = run_analytics(cfg)?;
            let file = harness::write_analytics(out, &rows)?;
            manifest.add_files(out, &[file])?;
        }
        Command::Transmission => {
            let rows = run_transmission(cfg)?;
            let file = harness::write_transmission(out, &rows)?;
            manifest.add_files(out, &[file])?;
        }
    }
    let path = manifest.write(out)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match load(&cli).and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Command::ValidateConfig = cli.command {
        println!("# config hash {}", cfg.hash());
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    match execute(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
