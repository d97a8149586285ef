use super::*;
use crate::metrics::CvDecomposition;

const BASE: &str = "G = 4\nproblems_per_batch = 2\ntrain_problems = 4\neval_problems = 3\n\
                    cap = 20\neval_samples = 8\npolicy.init_length = 8\n";

fn cfg_with(extra: &str) -> TrainConfig {
    TrainConfig::from_text(&format!("{BASE}{extra}")).unwrap()
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn zero_step_run_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_training(&cfg_with("steps = 0\n"), dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    let (header, rows) = read_rows(&dir.path().join(METRICS_FILE));
    assert_eq!(header, METRIC_COLUMNS);
    assert!(rows.is_empty());
}

#[test]
fn eval_cadence() {
    let dir = tempfile::tempdir().unwrap();
    run_training(
        &cfg_with("steps = 100\neval_every = 10\n"),
        dir.path(),
        &RunOptions::default(),
    )
    .unwrap();
    let (_, rows) = read_rows(&dir.path().join(METRICS_FILE));
    let train = rows.iter().filter(|r| r[1] == "train").count();
    let eval: Vec<&String> = rows
        .iter()
        .filter(|r| r[1] == "eval")
        .map(|r| &r[0])
        .collect();
    assert_eq!(train, 100);
    assert_eq!(eval.len(), 10);
    assert_eq!(eval[0], "10");
    assert_eq!(eval[9], "100");

    let dir = tempfile::tempdir().unwrap();
    run_training(
        &cfg_with("steps = 7\neval_every = 3\n"),
        dir.path(),
        &RunOptions::default(),
    )
    .unwrap();
    let (_, rows) = read_rows(&dir.path().join(METRICS_FILE));
    let eval: Vec<&String> = rows
        .iter()
        .filter(|r| r[1] == "eval")
        .map(|r| &r[0])
        .collect();
    assert_eq!(eval, ["3", "6", "7"]);
}

#[test]
fn undefined_values_are_empty_fields() {
    let dir = tempfile::tempdir().unwrap();
    run_training(
        &cfg_with("steps = 2\neval_every = 1\n"),
        dir.path(),
        &RunOptions::default(),
    )
    .unwrap();
    let (header, rows) = read_rows(&dir.path().join(METRICS_FILE));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for r in rows.iter().filter(|r| r[1] == "eval") {
        assert_eq!(r[col("mean_reward")], "");
        assert_eq!(r[col("dropped_groups")], "");
        assert_eq!(r[col("prob_gap")], "");
        assert_eq!(r[col("alpha")], "");
    }
    for r in rows.iter().filter(|r| r[1] == "train") {
        assert!(!r[col("mean_reward")].is_empty());
    }

    let mut report = DispersionReport {
        accuracy: 0.0,
        mean_length: 3.0,
        mode_accuracy: 0.0,
        answer_entropy: 0.5,
        mode_share: 0.5,
        length_bias: None,
        cv: None,
        truncation_rate: 0.0,
        prob_gap: None,
    };
    let row = eval_row(&LengthControl::None, &EvalReport { step: 1, report });
    assert_eq!(row[15], "");
    report.cv = Some(CvDecomposition {
        overall: 0.5,
        within: 0.25,
        between: 0.125,
    });
    let row = eval_row(&LengthControl::None, &EvalReport { step: 1, report });
    assert_eq!(&row[16..19], ["0.5", "0.25", "0.125"]);
}

#[test]
fn run_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cfg_with("steps = 3\nshaping.method = ALP\n");
    let m = run_training(&cfg, dir.path(), &RunOptions::default()).unwrap();
    for a in m.artifacts.values() {
        assert!(dir.path().join(a).exists(), "{a}");
    }
    assert_eq!(
        TrainConfig::load(&dir.path().join(CONFIG_FILE)).unwrap(),
        cfg
    );
    let loaded = RunManifest::load(dir.path()).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(m.method, "ALP");
    assert_eq!(m.hyperparameter, Some(("beta".to_string(), 1e-3)));
    assert!(m.end_time.is_some());
    assert_eq!(m.resolved_cap, Some(20));
    let id = &m.run_id;
    assert_eq!(id.rsplit('-').next().unwrap().len(), 8);

    let eval = evaluate_run(dir.path()).unwrap();
    assert_eq!(Some(eval.report), m.final_eval);
    assert!(dir.path().join(EVAL_FILE).exists());
}

#[test]
fn divergence_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cfg_with("steps = 20\nlr = 1e308\nsurrogate.updates_per_batch = 4\n");
    let m = run_training(&cfg, dir.path(), &RunOptions::default()).unwrap();
    match &m.status {
        RunStatus::Diverged { step, .. } => assert!(*step >= 1 && *step <= 20),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(m.final_eval.is_none());
    assert_eq!(RunManifest::load(dir.path()).unwrap().status, m.status);
}

#[test]
fn identical_runs_write_identical_metrics() {
    let cfg = cfg_with("steps = 6\neval_every = 2\nshaping.method = RLOO_LP\n");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_training(
        &cfg,
        a.path(),
        &RunOptions {
            threads: Some(1),
            sweep: None,
        },
    )
    .unwrap();
    run_training(
        &cfg,
        b.path(),
        &RunOptions {
            threads: Some(3),
            sweep: None,
        },
    )
    .unwrap();
    let read = |d: &Path| fs::read(d.join(METRICS_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let params = |d: &Path| fs::read(d.join(PARAMS_FILE)).unwrap();
    assert_eq!(params(a.path()), params(b.path()));
}

#[test]
fn sweep_layout_and_errors() {
    let out = tempfile::tempdir().unwrap();
    let base = format!("{BASE}steps = 2\n");
    assert!(sweep(&base, "seed", &[], out.path(), 1).unwrap().is_empty());
    assert!(matches!(
        sweep(&base, "no_such_key", &["1".into()], out.path(), 1),
        Err(LabError::Config { .. })
    ));
    assert!(matches!(
        sweep(&base, "steps", &["1".into(), "x".into()], out.path(), 1),
        Err(LabError::Config { .. })
    ));
    assert!(!sweep_dir(out.path(), "steps", "1").exists());

    let values: Vec<String> = vec!["1".into(), "2".into()];
    let ms = sweep(&base, "seed", &values, out.path(), 2).unwrap();
    assert_eq!(ms.len(), 2);
    for (m, v) in ms.iter().zip(&values) {
        assert_eq!(m.sweep.as_ref().unwrap().value, *v);
        assert!(sweep_dir(out.path(), "seed", v).join(METRICS_FILE).exists());
    }
    let read = |v: &str| fs::read(sweep_dir(out.path(), "seed", v).join(METRICS_FILE)).unwrap();
    assert_ne!(read("1"), read("2"));
}

#[test]
fn override_replaces_existing_key() {
    let cfg = config_with_override("seed = 3\nsteps = 4\n", "seed", "9").unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.steps, 4);
}

fn fake(run_id: &str, status: RunStatus, mean_length: Option<f64>) -> RunManifest {
    RunManifest {
        run_id: run_id.into(),
        config: String::new(),
        method: "ALP".into(),
        hyperparameter: Some(("beta".into(), 0.1)),
        sweep: None,
        start_time: String::new(),
        end_time: None,
        status,
        resolved_cap: None,
        final_eval: mean_length.map(|l| DispersionReport {
            accuracy: 0.5,
            mean_length: l,
            mode_accuracy: 1.0,
            answer_entropy: 0.1,
            mode_share: 0.9,
            length_bias: Some(-0.2),
            cv: None,
            truncation_rate: 0.0,
            prob_gap: None,
        }),
        artifacts: BTreeMap::new(),
    }
}

#[test]
fn frontier_sorting_and_diverged_rows() {
    let one = export_frontier(&[fake("a", RunStatus::Completed, Some(4.0))]);
    assert_eq!(one.len(), 1);

    let ms: Vec<RunManifest> = [9.0, 3.0, 7.0, 1.0, 5.0]
        .iter()
        .enumerate()
        .map(|(i, &l)| fake(&format!("r{i}"), RunStatus::Completed, Some(l)))
        .chain([fake(
            "bad",
            RunStatus::Diverged {
                step: 3,
                detail: "x".into(),
            },
            None,
        )])
        .collect();
    let rows = export_frontier(&ms);
    assert_eq!(rows.len(), 6);
    let lengths: Vec<&str> = rows[..5].iter().map(|r| r[7].as_str()).collect();
    assert_eq!(lengths, ["1", "3", "5", "7", "9"]);
    let last = &rows[5];
    assert_eq!(last[1], "diverged");
    assert!(last[7..].iter().all(String::is_empty));
    assert_eq!(last.len(), FRONTIER_COLUMNS.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frontier.csv");
    write_frontier(&path, &rows).unwrap();
    let (header, back) = read_rows(&path);
    assert_eq!(header, FRONTIER_COLUMNS);
    assert_eq!(back, rows);
}
