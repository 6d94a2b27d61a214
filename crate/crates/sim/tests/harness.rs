use std::fs;
use std::process::Command;

use resttrap::config::{Preset, RunConfig};
use resttrap::gpe::Snapshot;
use resttrap::harness::{
    analyse, run_decay, run_figure2, transfer_beta, transfer_beta_curve, DecayOverrides, RunManifest,
};

fn desk() -> RunConfig {
    RunConfig::preset(Preset::Desk)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resttrap"))
}

#[test]
fn hash_is_stable_under_key_order() {
    let a = RunConfig::layered(None, Some("[atoms]\nn = 5000.0\n[ramp]\nfinal_nk = 300.0\nhold_ms = 50.0\n")).unwrap();
    let b = RunConfig::layered(None, Some("[ramp]\nhold_ms = 50.0\nfinal_nk = 300.0\n[atoms]\nn = 5000.0\n")).unwrap();
    assert_eq!(a.hash(), b.hash());
    let c = RunConfig::layered(None, Some("[ramp]\nhold_ms = 50.0\nfinal_nk = 300.0\n[atoms]\nn = 5001.0\n")).unwrap();
    assert_ne!(a.hash(), c.hash());
    // Round trip through the printed form keeps the meaning.
    let again = RunConfig::layered(None, Some(&a.to_toml())).unwrap();
    assert_eq!(again, a);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[solver]\ndt_us = 500.0\n").unwrap();
    let out = bin().args(["validate-config", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    fs::write(&bad, "[solver]\ntypo = 1\n").unwrap();
    let out = bin().args(["decay", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["validate-config", "--config"]).arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["validate-config", "--preset", "paper3d"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n = 150000.0"));
    let seeded = bin().args(["validate-config", "--seed", "7"]).output().unwrap();
    assert!(String::from_utf8(seeded.stdout).unwrap().contains("seed = 7"));
}

#[test]
fn cli_numeric_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    // Valid configuration whose ground state cannot converge in 3 steps.
    fs::write(&cfg, "[solver]\nmax_steps = 3\n[sweep]\nbarrier_heights_nk = [290.0]\n").unwrap();
    let out = bin().args(["decay", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_outputs_are_deterministic_and_indexed() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["analytics", "transmission"] {
        let a = dir.path().join(format!("{cmd}_a"));
        let b = dir.path().join(format!("{cmd}_b"));
        for d in [&a, &b] {
            let st = bin().arg(cmd).arg("--out").arg(d).arg("--threads").arg("2").status().unwrap();
            assert!(st.success());
        }
        let name = format!("{cmd}.csv");
        let x = fs::read_to_string(a.join(&name)).unwrap();
        assert_eq!(x, fs::read_to_string(b.join(&name)).unwrap());
        let header = x.lines().next().unwrap();
        assert!(header.split(',').count() >= 5);
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["files"][0]["path"], name.as_str());
        assert_eq!(manifest["config_hash"], desk().hash());
        assert!(!a.join(".manifest.json.tmp").exists());
    }
}

#[test]
fn manifest_lists_files_with_digests() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.csv");
    fs::write(&f, "a,b\n1,2\n").unwrap();
    let mut m = RunManifest::new("test", &desk(), 0.0);
    m.add_files(dir.path(), &[f]).unwrap();
    let path = m.write(dir.path()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["files"][0]["path"], "x.csv");
    assert_eq!(v["files"][0]["bytes"], 8);
    assert_eq!(v["files"][0]["sha256"].as_str().unwrap().len(), 64);
}

fn synthetic_snapshots() -> Vec<Snapshot> {
    (0..200)
        .map(|i| {
            let t = i as f64;
            Snapshot {
                time: t,
                barrier_height: 290.0,
                n_total: 2e4,
                n_trapped: 2e4 * (-(t / 40.0).sqrt()).exp(),
                mu_trapped: 151.3 + 100.0 - 10.0 * (t + 1.0).ln(),
            }
        })
        .collect()
}

#[test]
fn noise_injection_is_seeded() {
    let mut cfg = desk();
    cfg.observables.noise = 0.01;
    let geo = cfg.geometry(290.0).unwrap();
    let a = analyse(&cfg, 290.0, &geo, 0.0, 0, synthetic_snapshots()).unwrap();
    let b = analyse(&cfg, 290.0, &geo, 0.0, 0, synthetic_snapshots()).unwrap();
    assert_eq!(a.atoms, b.atoms);
    cfg.seed = 99;
    let c = analyse(&cfg, 290.0, &geo, 0.0, 0, synthetic_snapshots()).unwrap();
    assert_ne!(a.atoms.values(), c.atoms.values());
    cfg.observables.noise = 0.0;
    let clean = analyse(&cfg, 290.0, &geo, 0.0, 0, synthetic_snapshots()).unwrap();
    // Background factor applied analytically.
    let s = &clean.snapshots[100];
    let expect = s.n_trapped * (-0.31 * s.time * 1e-3).exp();
    assert!((clean.atoms.values()[100] / expect - 1.0).abs() < 1e-15);
}

#[test]
fn transfer_beta_sweep_curve() {
    let cfg = desk();
    let curve = transfer_beta_curve(&cfg).unwrap();
    assert_eq!(curve.len(), 13);
    let b: Vec<f64> = curve.iter().map(|p| p.beta).collect();
    for x in &b {
        assert!((0.15..=0.3).contains(x), "{x}");
    }
    // Smooth: no kinks in the second difference relative to the first.
    let d1: Vec<f64> = b.windows(2).map(|w| w[1] - w[0]).collect();
    let d2: Vec<f64> = d1.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = d1.iter().map(|d| d.abs()).fold(0.0, f64::max);
    assert!(d1.iter().all(|d| *d < 0.0), "{d1:?}");
    assert!(d2.iter().all(|d| d.abs() < 0.5 * scale), "{d2:?}");
    // Ordering across thread counts.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let again = pool.install(|| transfer_beta_curve(&cfg).unwrap());
    assert_eq!(curve, again);
    // Doubling the sheet waist thickens the barrier.
    let mut thick = cfg.clone();
    thick.trap.waist_um *= 2.0;
    assert!(transfer_beta(&thick, 290.0).unwrap() > transfer_beta(&cfg, 290.0).unwrap());
}

/// Desk decay runs shortened to `horizon` ms.
fn short_run(cfg: &RunConfig, height: f64, horizon: f64) -> resttrap::harness::DecayRun {
    run_decay(
        cfg,
        height,
        DecayOverrides {
            horizon_ms: Some(horizon),
            ..Default::default()
        },
        None,
    )
    .unwrap()
}

#[test]
fn decay_curves_ordered_by_barrier_height() {
    let cfg = desk();
    let runs: Vec<_> = [240.0, 290.0, 330.0].iter().map(|&h| short_run(&cfg, h, 200.0)).collect();
    for i in 10..runs[0].atoms.len() {
        let n: Vec<f64> = runs.iter().map(|r| r.atoms.values()[i]).collect();
        assert!(n[0] < n[1] && n[1] < n[2], "t = {}: {n:?}", runs[0].atoms.times()[i]);
    }
}

#[test]
fn halving_time_step_changes_little() {
    let cfg = desk();
    let coarse = short_run(&cfg, 290.0, 100.0);
    let mut fine_cfg = cfg.clone();
    fine_cfg.solver.dt_us /= 2.0;
    fine_cfg.solver.dt_imag_us /= 2.0;
    let fine = short_run(&fine_cfg, 290.0, 100.0);
    let a = coarse.snapshots.last().unwrap().n_trapped;
    let b = fine.snapshots.last().unwrap().n_trapped;
    assert!((a / b - 1.0).abs() <= 1e-3, "{a} vs {b}");
}

#[test]
fn high_barrier_holds_atoms() {
    let mut cfg = desk();
    cfg.ramp.hold_ms = 1500.0;
    cfg.observables.analytic_background = false;
    let run = short_run(&cfg, 700.0, 1500.0);
    let n0 = run.snapshots[0].n_trapped;
    let worst = run
        .snapshots
        .iter()
        .map(|s| (s.n_trapped / n0 - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst < 5e-3, "N_trapped varies by {worst}");
}

#[test]
fn figure2_small_sweep() {
    let mut cfg = desk();
    cfg.fig2.barrier_heights_nk = vec![240.0, 290.0, 330.0];
    cfg.fig2.atom_numbers = vec![0.0, 10_000.0];
    let rows = run_figure2(&cfg).unwrap();
    assert_eq!(rows.len(), 6);
    let zero: Vec<_> = rows.iter().filter(|r| r.atoms == 0.0).collect();
    assert!(zero.iter().all(|r| r.mu_analytic == 0.0 && r.mu_gpe == 0.0));
    let mus: Vec<f64> = rows.iter().filter(|r| r.atoms > 0.0).map(|r| r.mu_gpe).collect();
    assert!(mus[0] < mus[1] && mus[1] < mus[2], "{mus:?}");
    for r in rows.iter().filter(|r| r.atoms > 0.0) {
        assert!(r.mu_gpe < r.mu_analytic, "{r:?}");
    }
}
