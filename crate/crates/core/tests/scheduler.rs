use proptest::prelude::*;
use twinsched::harness::{build_scenario, ExperimentConfig, ScenarioKind};
use twinsched::netsim::percentile;
use twinsched::rtps::Phase;
use twinsched::scheduler::*;

fn c(dt: f64) -> ScheduleConstraint {
    ScheduleConstraint::new(dt).unwrap()
}

#[test]
fn interval_examples() {
    assert_eq!(
        enforce_min_interval(&[100.0], &[50.0], &c(30.0)),
        vec![130.0]
    );
    assert_eq!(
        enforce_min_interval(&[100.0], &[200.0], &c(30.0)),
        vec![200.0]
    );
    assert_eq!(
        enforce_min_interval(&[37.5, 900.0], &[0.0, 0.0], &c(0.0)),
        vec![37.5, 900.0]
    );
    assert!(ScheduleConstraint::new(1440.0).is_err());
    assert!(ScheduleConstraint::new(-1.0).is_err());
}

#[test]
fn reward_term_examples() {
    assert_eq!(reward_energy(&[100.0, 100.0]), 200.0);
    assert_eq!(reward_energy(&[80.0, 60.5, 10.0]), 150.5);
    assert_eq!(reward_energy(&[]), 0.0);
    assert_eq!(reward_timeliness(&[100.0, 150.0], 180.0), 0.0);
    assert_eq!(reward_timeliness(&[200.0, 150.0, 190.0], 180.0), -30.0);
    assert_eq!(reward_timeliness(&[180.0], 180.0), 0.0);
    assert_eq!(reward_consecutive(&[100.0], &[130.0], &c(30.0), 0.3), 0.0);
    assert!((reward_consecutive(&[100.0], &[110.0], &c(30.0), 0.3) + 6.0).abs() < 1e-12);
    assert_eq!(
        reward_consecutive(&[100.0, 5.0], &[100.0, 5.0], &c(30.0), 0.0),
        0.0
    );
    let r = reward_total(150.5, -30.0, -6.0, 180.0, 0.3);
    assert!((r.r_total - 114.5).abs() < 1e-12);
    assert_eq!(reward_total(0.0, 0.0, 0.0, 180.0, 0.3).r_total, 0.0);
}

#[test]
fn whatif_examples() {
    let ranges = WhatIfRanges::default();
    let one = whatif_generate(3, 1, 2, &ranges).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].batteries, vec![50.0, 50.0]);
    assert_eq!(one[0].last_tx_min, vec![720.0, 720.0]);

    let ten = whatif_generate(8, 10, 3, &ranges).unwrap();
    for dev in 0..3 {
        let mut deciles: Vec<usize> = ten
            .iter()
            .map(|s| (s.batteries[dev] / 10.0).floor() as usize)
            .collect();
        deciles.sort();
        assert_eq!(deciles, (0..10).collect::<Vec<_>>());
        let mut slots: Vec<usize> = ten
            .iter()
            .map(|s| (s.last_tx_min[dev] / 144.0).floor() as usize)
            .collect();
        slots.sort();
        assert_eq!(slots, (0..10).collect::<Vec<_>>());
    }
    assert_eq!(ten, whatif_generate(8, 10, 3, &ranges).unwrap());
    assert_ne!(ten, whatif_generate(9, 10, 3, &ranges).unwrap());
    assert!(whatif_generate(1, 0, 3, &ranges).is_err());
    let bad = WhatIfRanges {
        battery: (60.0, 20.0),
        ..ranges
    };
    assert!(whatif_generate(1, 4, 3, &bad).is_err());
}

fn env(n: usize, payload: u64, seed: u64) -> Env {
    let cfg = ExperimentConfig {
        payload_bytes: payload,
        ..Default::default()
    };
    build_scenario(&cfg, ScenarioKind::OneService, n, seed, false)
        .unwrap()
        .env
}

fn start(n: usize) -> StateVector {
    StateVector {
        batteries: vec![100.0; n],
        last_tx_min: vec![0.0; n],
    }
}

#[test]
fn uninitialized_env_errors() {
    let mut e = Env::default();
    assert!(e.step(&ActionVector(vec![1.0])).is_err());
    assert!(e.observe().is_err());
}

#[test]
fn single_small_publish_is_timely() {
    let mut e = env(1, 200, 1);
    e.load_state(&start(1)).unwrap();
    let out = e.step(&ActionVector(vec![300.0])).unwrap();
    assert_eq!(out.reward.r_timeliness, 0.0);
    assert_eq!(out.tx_minutes, vec![330.0]);
    assert!(out.delays_ms[0] > 0.0 && out.delays_ms[0] < 180.0);
    // 100 - 0.0005 * 330 - 0.2 - 0.3 * 0.2
    assert!((out.battery_after_tx[0] - (100.0 - 0.165 - 0.2 - 0.06)).abs() < 1e-9);
    assert!((out.s_next.batteries[0] - (100.0 - 0.72 - 0.26)).abs() < 1e-9);
    assert_eq!(out.s_next.last_tx_min, vec![330.0]);
}

#[test]
fn action_is_clamped() {
    let mut e = env(2, 200, 1);
    e.load_state(&start(2)).unwrap();
    let out = e.step(&ActionVector(vec![-50.0, f64::NAN])).unwrap();
    assert_eq!(out.tx_minutes, vec![30.0, 30.0]);
    assert!(e.step(&ActionVector(vec![1.0])).is_err());
}

#[test]
fn staggering_reduces_queueing() {
    let p95 = |a: Vec<f64>| {
        let mut e = env(6, 2_000_000, 4);
        e.load_state(&start(6)).unwrap();
        let out = e.step(&ActionVector(a)).unwrap();
        let xs: Vec<f64> = out
            .samples
            .iter()
            .filter(|s| s.phase == Phase::DataExchange)
            .map(|s| s.d_ms)
            .collect();
        (percentile(&xs, 95.0).unwrap(), out.delays_ms)
    };
    let (same, d_same) = p95(vec![200.0; 6]);
    let (apart, d_apart) = p95((0..6).map(|k| 200.0 + 10.0 * k as f64).collect());
    assert!(apart < same, "{apart} vs {same} {d_same:?} {d_apart:?}");
    assert!(d_same.iter().sum::<f64>() > d_apart.iter().sum::<f64>());
}

#[test]
fn step_is_deterministic() {
    let run = || {
        let mut e = env(3, 1000, 2);
        e.load_state(&start(3)).unwrap();
        let o = e.step(&ActionVector(vec![10.0, 700.0, 1400.0])).unwrap();
        (o.s_next, o.reward, o.delays_ms)
    };
    assert_eq!(run(), run());
}

#[test]
fn chained_days_respect_previous_transmission() {
    let mut e = env(1, 1000, 2);
    e.load_state(&StateVector {
        batteries: vec![90.0],
        last_tx_min: vec![1430.0],
    })
    .unwrap();
    // previous send 10 minutes before midnight: a' = max(0 + 30, -10) = 30
    let out = e.step(&ActionVector(vec![0.0])).unwrap();
    assert_eq!(out.tx_minutes, vec![30.0]);
    assert_eq!(out.reward.r_consecutive, 0.0);
    let out = e.step(&ActionVector(vec![0.0])).unwrap();
    assert_eq!(out.tx_minutes, vec![30.0]);
    assert!(e.conservation_error().unwrap() < 1e-9);
}

proptest! {
    #[test]
    fn total_monotone_in_delay_and_battery(
        b in proptest::collection::vec(0.0f64..100.0, 1..8),
        d in proptest::collection::vec(0.0f64..1000.0, 1..8),
        i in 0usize..8,
        bump in 0.0f64..500.0,
    ) {
        let base = |b: &[f64], d: &[f64]| reward_total(reward_energy(b), reward_timeliness(d, 180.0), 0.0, 180.0, 0.3).r_total;
        let r0 = base(&b, &d);
        let mut d2 = d.clone();
        d2[i % d.len()] += bump;
        prop_assert!(base(&b, &d2) <= r0);
        let mut b2 = b.clone();
        b2[i % b.len()] += bump;
        prop_assert!(base(&b2, &d) >= r0);
    }

    #[test]
    fn enforced_actions_are_never_penalized(
        a in proptest::collection::vec(0.0f64..1440.0, 1..10),
        last in proptest::collection::vec(-1440.0f64..1440.0, 10),
        dt in 0.0f64..120.0,
        lambda in 0.0f64..1.0,
    ) {
        let con = c(dt);
        let ap = enforce_min_interval(&a, &last[..a.len()], &con);
        prop_assert_eq!(reward_consecutive(&a, &ap, &con, lambda), 0.0);
        prop_assert!(reward_consecutive(&a, &a, &con, lambda) <= 0.0);
    }
}
