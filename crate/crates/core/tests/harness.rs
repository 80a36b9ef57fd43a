use twinsched::harness::cli::run_cli;
use twinsched::harness::policy::PolicyKind;
use twinsched::harness::sweeps::{
    discovery_point, energy_plot_data, latency_plot_data, ENERGY_HEADER, LATENCY_HEADER,
};
use twinsched::harness::{energy_sweep, latency_sweep, ExperimentConfig, RunMode, ScenarioKind};

fn quick() -> ExperimentConfig {
    ExperimentConfig {
        n_publishers: 6,
        episodes: 10,
        seeds: vec![1, 2],
        volume_points: vec![50_000, 1_000_000, 8_000_000],
        discovery_cutover_bytes: 1_000_000,
        publisher_counts: vec![0, 9],
        energy_days: 3,
        ddpg: twinsched::ddpg::Hyperparams {
            batch_size: 16,
            buffer_capacity: 200,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn latency_sweep_phases_split_at_cutover() {
    let cfg = quick();
    let t = latency_sweep(&cfg).unwrap();
    for r in &t.rows {
        assert_eq!(
            r.phase,
            RunMode::for_volume(r.volume_bytes, cfg.discovery_cutover_bytes)
        );
        assert_eq!(r.p95.n, 2);
        assert!(r.p95.min <= r.p95.mean && r.p95.mean <= r.p95.max);
        if r.phase == RunMode::DiscoveryOnly {
            assert_eq!(r.policy, "discovery");
        }
    }
    for kind in [ScenarioKind::OneService, ScenarioKind::ThreeService] {
        assert!(t.find(kind, "discovery", 50_000).is_some());
        assert!(t.find(kind, "ddpg", 50_000).is_none());
        let lo = t
            .find(kind, "periodic_synchronized", 1_000_000)
            .unwrap()
            .p95
            .mean;
        let hi = t
            .find(kind, "periodic_synchronized", 8_000_000)
            .unwrap()
            .p95
            .mean;
        assert!(hi >= lo);
    }
    let csv = t.csv();
    assert!(csv.starts_with(LATENCY_HEADER));
    assert_eq!(csv.lines().count(), 1 + t.rows.len());
    assert!(latency_plot_data(&t, ScenarioKind::ThreeService)
        .starts_with("# volume_bytes discovery ddpg"));
    assert_eq!(t, latency_sweep(&cfg).unwrap());
}

#[test]
fn zero_volume_has_no_samples() {
    assert!(discovery_point(&quick(), ScenarioKind::OneService, 0, 1).is_err());
}

#[test]
fn energy_sweep_normalizes_per_point() {
    let cfg = quick();
    let policies = [
        PolicyKind::Ddpg,
        PolicyKind::PeriodicSynchronized,
        PolicyKind::UniformRandom,
        PolicyKind::AlwaysActive,
    ];
    let t = energy_sweep(&cfg, &policies).unwrap();
    for k in policies {
        let r = t.find(0, k).unwrap();
        assert_eq!(r.consumed_pct.mean, 0.0);
        assert!(r.normalized.is_none());
    }
    let norms: Vec<f64> = policies
        .iter()
        .map(|k| t.find(9, *k).unwrap().normalized.unwrap())
        .collect();
    assert_eq!(norms.iter().filter(|v| **v == 1.0).count(), 1);
    assert!(norms.iter().all(|v| *v > 0.0 && *v <= 1.0));
    assert_eq!(
        t.find(9, PolicyKind::AlwaysActive).unwrap().normalized,
        Some(1.0)
    );
    assert!(t.max_conservation_error < 1e-9);
    assert!(t.csv().starts_with(ENERGY_HEADER));
    assert!(energy_plot_data(&t).contains("\n9 "));
}

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["twinsched"];
    argv.extend_from_slice(args);
    run_cli(argv)
}

#[test]
fn cli_validates_configs() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(
        &good,
        "scenario = \"one_service\"\nn_publishers = 12\n[ddpg]\ntau = 0.05\n",
    )
    .unwrap();
    assert_eq!(
        cli(&["validate-config", "--config", good.to_str().unwrap()]),
        0
    );
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n_publishers = 900\n").unwrap();
    assert_eq!(
        cli(&["validate-config", "--config", bad.to_str().unwrap()]),
        1
    );
    let missing = dir.path().join("missing.toml");
    assert_eq!(
        cli(&["validate-config", "--config", missing.to_str().unwrap()]),
        1
    );
    assert_eq!(cli(&["validate-config"]), 0);
}

#[test]
fn cli_usage_errors_exit_2() {
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["train", "--no-such-flag"]), 2);
    assert_eq!(cli(&[]), 2);
    assert_eq!(cli(&["--seed", "x", "train"]), 2);
}

#[test]
fn cli_train_and_sweeps_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, quick().to_toml().unwrap()).unwrap();
    let out = dir.path().join("out");
    let (c, o) = (cfg_path.to_str().unwrap(), out.to_str().unwrap());
    assert_eq!(
        cli(&[
            "train",
            "--config",
            c,
            "--out-dir",
            o,
            "--seed",
            "3",
            "--episodes",
            "6"
        ]),
        0
    );
    for f in [
        "manifest.toml",
        "checkpoint.json",
        "learning_curve.csv",
        "trace.log",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(out.join("trace.log")).unwrap();
    assert!(trace.lines().next().unwrap().starts_with("t_ms="));
    assert!(trace.contains("primitive=PUBLISH"));
    assert_eq!(cli(&["replay", "--out-dir", o]), 0);
    std::fs::write(out.join("learning_curve.csv"), "tampered\n").unwrap();
    assert_eq!(cli(&["replay", "--out-dir", o]), 1);

    assert_eq!(cli(&["energy-sweep", "--config", c, "--out-dir", o]), 0);
    assert!(out.join("energy.csv").exists() && out.join("energy.dat").exists());
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = ExperimentConfig::load(&dir.join("default.toml")).unwrap();
    assert_eq!(
        default.to_toml().unwrap(),
        ExperimentConfig::default().to_toml().unwrap()
    );
    let desk = ExperimentConfig::load(&dir.join("desk.toml")).unwrap();
    desk.validate().unwrap();
    assert_eq!(desk.n_publishers, 30);
}
