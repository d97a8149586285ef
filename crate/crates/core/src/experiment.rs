//! Run directories, metrics files, manifests, sweeps and frontier tables.
//!
//! A run directory holds:
//!
//! * `config.txt`: the resolved configuration (loads back unchanged);
//! * `manifest.json`: run id, timings, status and artifact paths; written
//!   before the first step and finalized once;
//! * `metrics.csv`: one `train` row per step and an `eval` row every
//!   `eval_every` steps plus one after the last step, flushed row by row;
//! * `params.json`: final policy parameters.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_pairs, TrainConfig};
use crate::error::{LabError, Result};
use crate::metrics::DispersionReport;
use crate::policy::PolicyParams;
use crate::shaping::LengthControl;
use crate::trainer::{EvalReport, StepRecord, Trainer};

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PARAMS_FILE: &str = "params.json";
pub const EVAL_FILE: &str = "eval.json";

/// Column order of `metrics.csv`.
pub const METRIC_COLUMNS: [&str; 23] = [
    "step",
    "phase",
    "method",
    "alpha",
    "beta",
    "lambda",
    "tau",
    "k",
    "mean_reward",
    "accuracy",
    "mean_length",
    "dropped_groups",
    "mode_accuracy",
    "answer_entropy",
    "mode_share",
    "length_bias",
    "cv_overall",
    "cv_within",
    "cv_between",
    "truncation_rate",
    "prob_gap",
    "prob_gap_last",
    "shaping_diag",
];

/// Column order of the frontier table.
pub const FRONTIER_COLUMNS: [&str; 17] = [
    "run_id",
    "status",
    "method",
    "hyperparameter",
    "value",
    "sweep_axis",
    "sweep_value",
    "mean_length",
    "accuracy",
    "mode_accuracy",
    "answer_entropy",
    "mode_share",
    "length_bias",
    "cv_overall",
    "cv_within",
    "cv_between",
    "truncation_rate",
];

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn shaping_columns(method: &LengthControl) -> [String; 5] {
    let mut cols: [String; 5] = Default::default();
    match *method {
        LengthControl::None => {}
        LengthControl::RlooLp { alpha } => cols[0] = num(alpha),
        LengthControl::Alp { beta, .. } => cols[1] = num(beta),
        LengthControl::Drpo { lambda, tau } => {
            cols[2] = num(lambda);
            cols[3] = num(tau);
        }
        LengthControl::Gfpo { k, .. } => cols[4] = k.to_string(),
    }
    cols
}

/// Renders one metrics row. Undefined values are empty fields.
#[allow(clippy::too_many_arguments)]
fn metrics_row(
    step: usize,
    phase: &str,
    method: &LengthControl,
    report: &DispersionReport,
    mean_reward: Option<f64>,
    dropped_groups: Option<usize>,
    prob_gap_last: Option<f64>,
    shaping_diag: Option<f64>,
) -> Vec<String> {
    let mut row = vec![
        step.to_string(),
        phase.to_string(),
        method.name().to_string(),
    ];
    row.extend(shaping_columns(method));
    row.push(opt(mean_reward));
    row.push(num(report.accuracy));
    row.push(num(report.mean_length));
    row.push(dropped_groups.map(|d| d.to_string()).unwrap_or_default());
    row.push(num(report.mode_accuracy));
    row.push(num(report.answer_entropy));
    row.push(num(report.mode_share));
    row.push(opt(report.length_bias));
    row.push(opt(report.cv.map(|c| c.overall)));
    row.push(opt(report.cv.map(|c| c.within)));
    row.push(opt(report.cv.map(|c| c.between)));
    row.push(num(report.truncation_rate));
    row.push(opt(report.prob_gap));
    row.push(opt(prob_gap_last));
    row.push(opt(shaping_diag));
    debug_assert_eq!(row.len(), METRIC_COLUMNS.len());
    row
}

pub fn train_row(method: &LengthControl, r: &StepRecord) -> Vec<String> {
    metrics_row(
        r.step,
        "train",
        method,
        &r.batch,
        Some(r.mean_reward),
        Some(r.dropped_groups),
        r.prob_gaps.last().copied(),
        r.shaping_diag,
    )
}

pub fn eval_row(method: &LengthControl, r: &EvalReport) -> Vec<String> {
    metrics_row(r.step, "eval", method, &r.report, None, None, None, None)
}

/// Append-only CSV writer that flushes after every row.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Creates the file and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(File::create(path)?);
        inner.write_record(METRIC_COLUMNS)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, row: &[String]) -> Result<()> {
        self.inner.write_record(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Diverged { step: usize, detail: String },
    Aborted { reason: String },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Completed => "completed",
            RunStatus::Diverged { .. } => "diverged",
            RunStatus::Aborted { .. } => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Resolved configuration as `key = value` text.
    pub config: String,
    pub method: String,
    /// Main hyperparameter of the method, if any.
    pub hyperparameter: Option<(String, f64)>,
    pub sweep: Option<SweepPoint>,
    pub start_time: String,
    pub end_time: Option<String>,
    pub status: RunStatus,
    /// Cap in effect after auto-selection.
    pub resolved_cap: Option<usize>,
    pub final_eval: Option<DispersionReport>,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// `<UTC timestamp>-<first 8 hex digits of sha256(config text)>`.
pub fn make_run_id(config_text: &str) -> String {
    let digest = Sha256::digest(config_text.as_bytes());
    let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{}-{hex}", Utc::now().format("%Y%m%dT%H%M%S%.3fZ"))
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    fn finalize(&mut self, dir: &Path, status: RunStatus) -> Result<()> {
        if self.status != RunStatus::Running {
            return Err(LabError::invalid("manifest already finalized"));
        }
        self.status = status;
        self.end_time = Some(now());
        self.save(dir)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SavedParams {
    cap: usize,
    params: PolicyParams,
}

/// Runtime options that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for this run (`None`: shared global pool).
    pub threads: Option<usize>,
    pub sweep: Option<SweepPoint>,
}

/// Trains `cfg` into `dir` and returns the finalized manifest. A diverged
/// run is returned as `Ok` with [`RunStatus::Diverged`]; I/O failures mark
/// the run aborted (when possible) and are returned as errors.
pub fn run_training(cfg: &TrainConfig, dir: &Path, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let config_text = cfg.to_text();
    fs::write(dir.join(CONFIG_FILE), &config_text)?;
    let artifacts = [
        ("config", CONFIG_FILE),
        ("manifest", MANIFEST_FILE),
        ("metrics", METRICS_FILE),
        ("params", PARAMS_FILE),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let mut manifest = RunManifest {
        run_id: make_run_id(&config_text),
        config: config_text,
        method: cfg.shaping.method.name().to_string(),
        hyperparameter: cfg.method_hyperparameter().map(|(k, v)| (k.to_string(), v)),
        sweep: opts.sweep.clone(),
        start_time: now(),
        end_time: None,
        status: RunStatus::Running,
        resolved_cap: None,
        final_eval: None,
        artifacts,
    };
    manifest.save(dir)?;

    match train_into(cfg, dir, opts, &mut manifest) {
        Ok(final_eval) => {
            manifest.final_eval = final_eval;
            manifest.finalize(dir, RunStatus::Completed)?;
            Ok(manifest)
        }
        Err(LabError::Divergence { step, detail }) => {
            manifest.finalize(dir, RunStatus::Diverged { step, detail })?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = manifest.finalize(
                dir,
                RunStatus::Aborted {
                    reason: e.to_string(),
                },
            );
            Err(e)
        }
    }
}

fn train_into(
    cfg: &TrainConfig,
    dir: &Path,
    opts: &RunOptions,
    manifest: &mut RunManifest,
) -> Result<Option<DispersionReport>> {
    let mut trainer = Trainer::new(cfg.clone(), opts.threads)?;
    manifest.resolved_cap = Some(trainer.cap());
    manifest.save(dir)?;
    let method = cfg.shaping.method;
    let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    let mut last_eval = None;
    for step in 1..=cfg.steps {
        let record = trainer.train_step()?;
        writer.write(&train_row(&method, &record))?;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let eval = trainer.evaluate()?;
            writer.write(&eval_row(&method, &eval))?;
            last_eval = Some(eval.report);
        }
    }
    save_params(dir, trainer.cap(), trainer.params())?;
    Ok(last_eval)
}

fn save_params(dir: &Path, cap: usize, params: &PolicyParams) -> Result<()> {
    let saved = SavedParams {
        cap,
        params: params.clone(),
    };
    fs::write(dir.join(PARAMS_FILE), serde_json::to_string(&saved)? + "\n")?;
    Ok(())
}

/// Re-evaluates the saved parameters of a run directory on its held-out
/// set and writes `eval.json`.
pub fn evaluate_run(dir: &Path) -> Result<EvalReport> {
    let mut cfg = TrainConfig::load(&dir.join(CONFIG_FILE))?;
    let saved: SavedParams = serde_json::from_str(&fs::read_to_string(dir.join(PARAMS_FILE))?)?;
    cfg.cap = saved.cap;
    cfg.cap_auto = false;
    let steps = cfg.steps;
    let mut trainer = Trainer::new(cfg, None)?;
    trainer.set_params(saved.params)?;
    let mut report = trainer.evaluate()?;
    report.step = steps;
    fs::write(
        dir.join(EVAL_FILE),
        serde_json::to_string_pretty(&report.report)? + "\n",
    )?;
    Ok(report)
}

/// Parses config text and applies `axis = value`; the override replaces any
/// value of the same key in the text.
pub fn config_with_override(text: &str, axis: &str, value: &str) -> Result<TrainConfig> {
    let mut pairs = parse_pairs(text)?;
    pairs.retain(|(k, _)| k != axis);
    pairs.push((axis.to_string(), value.to_string()));
    TrainConfig::from_pairs(&pairs)
}

/// Directory of one sweep point.
pub fn sweep_dir(out_root: &Path, axis: &str, value: &str) -> PathBuf {
    out_root.join(format!("{axis}={value}"))
}

/// One independent run per value of `axis`, each in
/// `{out_root}/{axis}={value}`. All configs are validated before any run
/// starts. `parallel` runs execute at once.
pub fn sweep(
    base_text: &str,
    axis: &str,
    values: &[String],
    out_root: &Path,
    parallel: usize,
) -> Result<Vec<RunManifest>> {
    if !TrainConfig::is_known_key(axis) {
        return Err(LabError::config(axis, "not a configuration key"));
    }
    let configs: Vec<TrainConfig> = values
        .iter()
        .map(|v| config_with_override(base_text, axis, v))
        .collect::<Result<_>>()?;
    let jobs: Vec<(TrainConfig, &String)> = configs.into_iter().zip(values).collect();
    let run_one = |(cfg, value): &(TrainConfig, &String), threads: Option<usize>| {
        let opts = RunOptions {
            threads,
            sweep: Some(SweepPoint {
                axis: axis.to_string(),
                value: value.to_string(),
            }),
        };
        run_training(cfg, &sweep_dir(out_root, axis, value), &opts)
    };
    if parallel <= 1 {
        return jobs.iter().map(|j| run_one(j, None)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| LabError::invalid(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|j| run_one(j, Some(1))).collect())
}

/// One frontier row per manifest: completed runs sorted by final mean
/// length (ties by run id), then every other run with empty metrics.
pub fn export_frontier(manifests: &[RunManifest]) -> Vec<Vec<String>> {
    let mut done: Vec<(&RunManifest, &DispersionReport)> = manifests
        .iter()
        .filter(|m| m.status == RunStatus::Completed)
        .filter_map(|m| m.final_eval.as_ref().map(|r| (m, r)))
        .collect();
    done.sort_by(|a, b| {
        a.1.mean_length
            .total_cmp(&b.1.mean_length)
            .then_with(|| a.0.run_id.cmp(&b.0.run_id))
    });
    let head = |m: &RunManifest| {
        let (hp, hv) = match &m.hyperparameter {
            Some((k, v)) => (k.clone(), num(*v)),
            None => (String::new(), String::new()),
        };
        let (sa, sv) = match &m.sweep {
            Some(s) => (s.axis.clone(), s.value.clone()),
            None => (String::new(), String::new()),
        };
        vec![
            m.run_id.clone(),
            m.status.label().to_string(),
            m.method.clone(),
            hp,
            hv,
            sa,
            sv,
        ]
    };
    let mut rows = Vec::with_capacity(manifests.len());
    for (m, r) in &done {
        let mut row = head(m);
        row.extend([
            num(r.mean_length),
            num(r.accuracy),
            num(r.mode_accuracy),
            num(r.answer_entropy),
            num(r.mode_share),
            opt(r.length_bias),
            opt(r.cv.map(|c| c.overall)),
            opt(r.cv.map(|c| c.within)),
            opt(r.cv.map(|c| c.between)),
            num(r.truncation_rate),
        ]);
        rows.push(row);
    }
    let mut rest: Vec<&RunManifest> = manifests
        .iter()
        .filter(|m| m.status != RunStatus::Completed || m.final_eval.is_none())
        .collect();
    rest.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    for m in rest {
        let mut row = head(m);
        row.resize(FRONTIER_COLUMNS.len(), String::new());
        rows.push(row);
    }
    rows
}

pub fn write_frontier(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(FRONTIER_COLUMNS)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
