use super::*;
use crate::config::TrainConfig;
use crate::env::EnvConfig;
use crate::shaping::LengthControl;

fn small_cfg() -> TrainConfig {
    TrainConfig::from_text(
        "steps = 5\nG = 8\nproblems_per_batch = 4\ntrain_problems = 8\neval_problems = 4\n\
         cap = 24\neval_samples = 16\nlr = 0.05\npolicy.init_length = 8\n",
    )
    .unwrap()
}

fn run(cfg: &TrainConfig, threads: Option<usize>, steps: usize) -> (Trainer, Vec<StepRecord>) {
    let mut t = Trainer::new(cfg.clone(), threads).unwrap();
    let records = (0..steps).map(|_| t.train_step().unwrap()).collect();
    (t, records)
}

#[test]
fn near_target_init_follows_schedule() {
    let cfg = small_cfg();
    let p = init_params(&cfg, 24).unwrap();
    assert!(p.drift_probabilities(0)[1] > 0.9);
    assert!(p.drift_probabilities(15)[0] > 0.9);
    assert!((p.stop_probability(8) - 0.5).abs() < 1e-12);
    assert!(p.stop_probability(2) < 0.1);

    let mut uniform = cfg.clone();
    uniform.policy.mode = InitMode::Uniform;
    let u = init_params(&uniform, 24).unwrap();
    assert!(u
        .drift_probabilities(0)
        .iter()
        .all(|&q| (q - 0.5).abs() < 1e-12));
}

#[test]
fn on_policy_prob_gap_is_zero() {
    let (_, records) = run(&small_cfg(), None, 5);
    for r in records.iter().filter(|r| r.updated) {
        assert_eq!(r.prob_gaps, vec![0.0]);
    }
    assert!(records.iter().any(|r| r.updated));
}

#[test]
fn stale_updates_have_positive_gap() {
    let mut cfg = small_cfg();
    cfg.surrogate.updates_per_batch = 3;
    let (_, records) = run(&cfg, None, 4);
    let r = records.iter().find(|r| r.updated).unwrap();
    assert_eq!(r.prob_gaps.len(), 3);
    assert_eq!(r.prob_gaps[0], 0.0);
    assert!(r.prob_gaps[1] > 0.0);
}

#[test]
fn zero_strength_shaping_matches_baseline() {
    let base = small_cfg();
    let (b, base_records) = run(&base, None, 5);
    for method in [
        LengthControl::Alp {
            beta: 0.0,
            acc_mode: crate::shaping::AccuracyMode::Ema,
        },
        LengthControl::RlooLp { alpha: 0.0 },
    ] {
        let mut cfg = base.clone();
        cfg.shaping.method = method;
        let (t, records) = run(&cfg, None, 5);
        assert_eq!(t.params(), b.params(), "{method:?}");
        for (x, y) in records.iter().zip(&base_records) {
            assert_eq!(x.batch, y.batch);
            assert_eq!(x.prob_gaps, y.prob_gaps);
        }
    }
}

#[test]
fn uniform_rewards_leave_parameters_unchanged() {
    let mut cfg = small_cfg();
    // Every answered response lands inside the window; nothing truncates.
    cfg.env = EnvConfig::GaussianWalk {
        distance: 10.0,
        distance_jitter: 0.0,
        delta: 1e6,
        sigma_step: 1.0,
        bin_width: Some(1e7),
        drift_values: vec![0.0, 1.0],
        reward: crate::env::RewardMode::Binary,
    };
    cfg.policy.init_length = 2.0;
    cfg.policy.init_length_spread = 0.5;
    let mut t = Trainer::new(cfg, None).unwrap();
    let before = t.params().clone();
    let r = t.train_step().unwrap();
    assert_eq!(r.batch.truncation_rate, 0.0);
    assert_eq!(r.dropped_groups, 4);
    assert!(!r.updated);
    assert!(r.prob_gaps.is_empty());
    assert_eq!(t.params(), &before);

    let eval = t.evaluate().unwrap().report;
    assert_eq!(eval.accuracy, 1.0);
    assert_eq!(eval.answer_entropy, 0.0);
    assert_eq!(eval.mode_accuracy, 1.0);
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = small_cfg();
    cfg.shaping.method = LengthControl::Alp {
        beta: 0.01,
        acc_mode: crate::shaping::AccuracyMode::Ema,
    };
    let (a, ra) = run(&cfg, Some(1), 4);
    let (b, rb) = run(&cfg, Some(4), 4);
    assert_eq!(a.state(), b.state());
    assert_eq!(ra, rb);
    assert_eq!(a.evaluate().unwrap(), b.evaluate().unwrap());
}

#[test]
fn every_method_trains() {
    for method in [
        LengthControl::RlooLp { alpha: 0.3 },
        LengthControl::Drpo {
            lambda: 0.5,
            tau: 1.0,
        },
        LengthControl::Gfpo {
            k: 3,
            drop_incorrect: false,
        },
    ] {
        let mut cfg = small_cfg();
        cfg.shaping.method = method;
        let (t, records) = run(&cfg, None, 3);
        assert!(records.iter().any(|r| r.updated), "{method:?}");
        assert!(
            records.iter().all(|r| r.shaping_diag.is_some()),
            "{method:?}"
        );
        assert_ne!(t.params(), &init_params(&cfg, 24).unwrap());
    }
}

#[test]
fn pilot_cap_keeps_truncation_low() {
    let mut cfg = small_cfg();
    cfg.cap = 60;
    cfg.cap_auto = true;
    let t = Trainer::new(cfg.clone(), None).unwrap();
    assert!(t.cap() < 60);
    let r = t.evaluate().unwrap().report;
    assert!(r.truncation_rate < 0.1, "{}", r.truncation_rate);

    let mut capped = cfg.clone();
    capped.cap = t.cap() - 1;
    capped.cap_auto = false;
    let lengths: Vec<usize> = {
        let params = init_params(&cfg, 60).unwrap();
        let p = &t.train_set()[0];
        let key = StreamKey::new(0, Domain::Oracle, 0, 0);
        sample_trajectories(&params, p, 2000, 60, &key, 1.0)
            .unwrap()
            .iter()
            .map(|x| x.length)
            .collect()
    };
    assert!(metrics::truncation_rate(&lengths, capped.cap) >= 0.03);
}

#[test]
fn held_out_set_is_disjoint() {
    let t = Trainer::new(small_cfg(), None).unwrap();
    for e in t.eval_set() {
        assert!(t.train_set().iter().all(|p| p.id != e.id));
    }
}
