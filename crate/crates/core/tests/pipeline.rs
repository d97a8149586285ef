use lengthlab_core::experiment::{evaluate_run, RunOptions, METRICS_FILE};
use lengthlab_core::{run_training, RunManifest, RunStatus, TrainConfig};
use proptest::prelude::*;

const SMALL: &str = "G = 4\nproblems_per_batch = 2\ntrain_problems = 4\neval_problems = 3\n\
                     cap = 16\neval_samples = 8\npolicy.init_length = 6\nsteps = 4\neval_every = 2\n";

fn method_lines() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("shaping.method = none\n".to_string()),
        (0.0..0.99f64).prop_map(|a| format!("shaping.method = RLOO_LP\nshaping.alpha = {a}\n")),
        (0.0..1.0f64, prop::bool::ANY).prop_map(|(b, e)| format!(
            "shaping.method = ALP\nshaping.beta = {b}\nshaping.acc_mode = {}\n",
            if e { "ema" } else { "per_batch" }
        )),
        (0.01..5.0f64, 0.1..3.0f64).prop_map(|(l, t)| format!(
            "shaping.method = DRPO\nshaping.lambda = {l}\nshaping.tau = {t}\n"
        )),
        (1usize..8, prop::bool::ANY).prop_map(|(k, d)| format!(
            "shaping.method = GFPO\nshaping.k = {k}\nshaping.drop_incorrect = {d}\n"
        )),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        method in method_lines(),
        chain in prop::bool::ANY,
        lr in 1e-4..1.0f64,
        sample_avg in prop::bool::ANY,
        tis in prop::option::of(1.0..10.0f64),
    ) {
        let env = if chain { "env.kind = arithmetic_chain\nenv.n_ops = 5\n" } else { "env.delta = 1.5\n" };
        let mut text = format!("seed = {seed}\nlr = {lr}\n{env}{method}");
        if sample_avg {
            text.push_str("surrogate.norm = sample_avg\n");
        }
        if let Some(c) = tis {
            text.push_str(&format!("surrogate.tis_cap = {c}\n"));
        }
        let cfg = TrainConfig::from_text(&text).unwrap();
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), cfg.to_text());
    }
}

#[test]
fn chain_environment_trains_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig::from_text(&format!(
        "{SMALL}env.kind = arithmetic_chain\nenv.n_ops = 4\n"
    ))
    .unwrap();
    let m = run_training(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    let report = m.final_eval.unwrap();
    assert!((0.0..=1.0).contains(&report.accuracy));
    assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
    assert_eq!(evaluate_run(dir.path()).unwrap().report, report);
}

#[test]
fn rerun_into_same_directory_overwrites_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig::from_text(SMALL).unwrap();
    run_training(&cfg, dir.path(), &RunOptions::default()).unwrap();
    let first = std::fs::read(dir.path().join(METRICS_FILE)).unwrap();
    run_training(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(std::fs::read(dir.path().join(METRICS_FILE)).unwrap(), first);
}
