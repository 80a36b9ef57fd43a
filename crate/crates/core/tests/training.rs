use twinsched::ddpg::{curve_csv, train, Hyperparams, Trainer};
use twinsched::harness::policy::continue_training;
use twinsched::harness::{build_scenario, ExperimentConfig, ScenarioKind};
use twinsched::scheduler::{Env, WhatIfRanges};

fn env(n: usize) -> Env {
    build_scenario(
        &ExperimentConfig::default(),
        ScenarioKind::ThreeService,
        n,
        1,
        false,
    )
    .unwrap()
    .env
}

fn small_hp() -> Hyperparams {
    Hyperparams {
        batch_size: 32,
        buffer_capacity: 500,
        ..Default::default()
    }
}

#[test]
fn zero_episodes_leaves_fresh_networks() {
    let mut e = env(3);
    let t = train(&mut e, small_hp(), 0, 5).unwrap();
    let fresh = Trainer::new(3, small_hp(), 0, 5, WhatIfRanges::default()).unwrap();
    assert!(t.curve.is_empty());
    assert_eq!(t.agent, fresh.agent);
}

#[test]
fn same_seed_same_curve() {
    let a = train(&mut env(4), small_hp(), 30, 11).unwrap();
    let b = train(&mut env(4), small_hp(), 30, 11).unwrap();
    assert_eq!(curve_csv(&a.curve), curve_csv(&b.curve));
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = train(&mut env(4), small_hp(), 30, 12).unwrap();
    assert_ne!(curve_csv(&a.curve), curve_csv(&c.curve));
}

#[test]
fn learning_curve_has_header_and_rows() {
    let t = train(&mut env(2), small_hp(), 12, 3).unwrap();
    let csv = curve_csv(&t.curve);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "episode,r_total,r_energy,r_timeliness,r_consecutive,epsilon,critic_loss"
    );
    assert_eq!(lines.len(), 13);
    // batch 32 needs 8 episodes of 4 transitions before the first update
    assert!(lines[1].ends_with(','));
    assert!(!lines[12].ends_with(','));
    assert!(t.agent.actor.is_finite() && t.agent.critic.is_finite());
}

#[test]
fn resumed_checkpoint_matches_uninterrupted_run() {
    let cfg = ExperimentConfig {
        ddpg: small_hp(),
        episodes: 24,
        dt_min_final_minutes: Some(60.0),
        ..Default::default()
    };
    let mut e = env(3);
    let mut full = Trainer::new(3, cfg.ddpg.clone(), cfg.episodes, 9, cfg.whatif).unwrap();
    continue_training(&cfg, &mut e, &mut full).unwrap();

    let mut e = env(3);
    let mut part = Trainer::new(3, cfg.ddpg.clone(), cfg.episodes, 9, cfg.whatif).unwrap();
    for _ in 0..10 {
        twinsched::harness::policy::train_episode(&cfg, &mut e, &mut part).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    part.save(&path).unwrap();
    let mut resumed = Trainer::load(&path).unwrap();
    let mut e = env(3);
    continue_training(&cfg, &mut e, &mut resumed).unwrap();
    assert_eq!(resumed.to_json().unwrap(), full.to_json().unwrap());
}

#[test]
fn checkpoint_version_is_checked() {
    let t = Trainer::new(2, small_hp(), 1, 0, WhatIfRanges::default()).unwrap();
    let text = t
        .to_json()
        .unwrap()
        .replacen("\"version\":1", "\"version\":99", 1);
    assert!(Trainer::from_json(&text).is_err());
}
