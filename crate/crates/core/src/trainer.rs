//! Training loop: sample, verify, shape, normalize, filter, update.
//!
//! Every random draw comes from a stream keyed by the run seed, the step and
//! the problem id, and all reductions happen in a fixed order, so a run is
//! reproducible bit for bit regardless of the number of worker threads.

use rand::seq::index;
use rayon::prelude::*;

use crate::config::{InitMode, TrainConfig};
use crate::env::{self, Problem, EVAL_ID_OFFSET};
use crate::error::{LabError, Result};
use crate::metrics::{self, DispersionReport, ProblemSamples};
use crate::objectives::{
    clipped_surrogate, dynamic_sampling_filter, BatchLogprobs, Group, SurrogateConfig,
};
use crate::policy::{
    self, apply_update, sample_group, sample_trajectories, AdamConfig, OptimizerState, ParamLayout,
    PolicyParams, Trajectory,
};
use crate::rng::{Domain, StreamKey};
use crate::shaping::{
    alp_penalty, disco_drpo_objective, drpo_weight, gfpo_filter, rloo_lp_reward,
    update_online_stats, AccuracyMode, AccuracyTracker, LengthControl, LengthMoments, LengthStats,
};

/// Rollouts drawn by the cap pilot.
pub const PILOT_ROLLOUTS: usize = 1000;
/// Largest step-0 truncation rate the pilot accepts.
pub const PILOT_MAX_TRUNCATION: f64 = 0.05;

/// Everything that changes from one step to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed outer steps.
    pub step: usize,
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
    pub length_stats: LengthStats,
    pub accuracy: AccuracyTracker,
}

/// Summary of one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    /// Mean shaped reward over every sampled response.
    pub mean_reward: f64,
    /// Metrics of the sampled batch (before any filtering). Its `prob_gap`
    /// is the mean over inner updates.
    pub batch: DispersionReport,
    /// Probability gap measured before each inner update.
    pub prob_gaps: Vec<f64>,
    /// Groups removed by dynamic sampling.
    pub dropped_groups: usize,
    /// Whether any parameter update happened.
    pub updated: bool,
    /// Method-specific scalar: mean length penalty (RLOO_LP, ALP), DisCO
    /// objective (DRPO) or retained fraction (GFPO).
    pub shaping_diag: Option<f64>,
}

/// Held-out evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Completed training steps at evaluation time.
    pub step: usize,
    pub report: DispersionReport,
}

/// Groups ready for the policy update.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    /// Surviving groups with advantages set (DRPO: rewards only).
    pub groups: Vec<Group>,
    pub dropped_groups: usize,
    pub mean_reward: f64,
    pub shaping_diag: Option<f64>,
}

/// Initial parameters for `cfg` at the given cap.
///
/// The stop logit of the bucket starting at step `t` is
/// `(t - init_length) / init_length_spread`, so the stop hazard crosses 1/2
/// at `init_length`. Under [`InitMode::NearTarget`] each drift bucket adds
/// `init_confidence` to the on-course token and the answer head adds it to
/// offset 0 (the faithful answer).
pub fn init_params(cfg: &TrainConfig, cap: usize) -> Result<PolicyParams> {
    let layout = ParamLayout::for_cap(
        cap,
        cfg.policy.bucket_width,
        cfg.env.drift_vocab(),
        cfg.env.answer_vocab(),
    )?;
    let mut params = PolicyParams::zeros(layout);
    for (b, logit) in params.stop_logits_mut().iter_mut().enumerate() {
        let t = (b * layout.bucket_width) as f64;
        *logit = (t - cfg.policy.init_length) / cfg.policy.init_length_spread;
    }
    if cfg.policy.mode == InitMode::NearTarget {
        let schedule = cfg.env.target_drift_schedule(cap);
        if layout.n_drift > 1 {
            for b in 0..layout.n_buckets {
                let d = schedule[b * layout.bucket_width];
                params.drift_logits_mut(b)[d] += cfg.policy.confidence;
            }
        }
        if layout.n_answer > 1 {
            params.answer_bias_mut()[0] += cfg.policy.confidence;
        }
    }
    PolicyParams::from_flat(layout, params.into_flat())
}

/// Smallest cap at which fewer than 5% of the pilot lengths would truncate;
/// the pilot samples with `cfg.cap` as ceiling. Returns the ceiling when no
/// smaller cap qualifies.
pub fn select_cap(cfg: &TrainConfig, train_set: &[Problem]) -> Result<usize> {
    let ceiling = cfg.cap;
    let params = init_params(cfg, ceiling)?;
    let n = train_set.len();
    let per_problem: Vec<usize> = (0..n)
        .map(|i| PILOT_ROLLOUTS / n + usize::from(i < PILOT_ROLLOUTS % n))
        .collect();
    let lengths: Vec<Vec<usize>> = train_set
        .par_iter()
        .zip(per_problem.par_iter())
        .map(|(p, &count)| {
            let key = StreamKey::new(cfg.seed, Domain::Pilot, 0, p.id);
            sample_trajectories(&params, p, count, ceiling, &key, 1.0)
                .map(|ts| ts.iter().map(|t| t.length).collect())
        })
        .collect::<Result<_>>()?;
    let all: Vec<usize> = lengths.into_iter().flatten().collect();
    Ok((1..=ceiling)
        .find(|&c| metrics::truncation_rate(&all, c) < PILOT_MAX_TRUNCATION)
        .unwrap_or(ceiling))
}

fn shaped_rewards(
    group: &Group,
    method: &LengthControl,
    stats: &LengthStats,
    tracker: &AccuracyTracker,
    group_size: usize,
) -> Vec<f64> {
    let lengths: Vec<usize> = group.lengths().collect();
    match *method {
        LengthControl::RlooLp { alpha } => {
            let correct_lengths: Vec<usize> = lengths
                .iter()
                .zip(&group.correct_mask)
                .filter(|(_, &c)| c)
                .map(|(&l, _)| l)
                .collect();
            let moments = stats
                .resolve(group.problem_id)
                .or_else(|| LengthMoments::of(&correct_lengths));
            match moments {
                Some(m) => lengths
                    .iter()
                    .zip(&group.correct_mask)
                    .map(|(&l, &c)| rloo_lp_reward(c, l, m, alpha))
                    .collect(),
                None => group.rewards.clone(),
            }
        }
        LengthControl::Alp { beta, acc_mode } => {
            let batch_acc = group.n_correct() as f64 / group.len() as f64;
            let acc = match acc_mode {
                AccuracyMode::Ema => tracker.get(group.problem_id).unwrap_or(batch_acc),
                AccuracyMode::PerBatch => batch_acc,
            };
            group
                .rewards
                .iter()
                .zip(&lengths)
                .map(|(r, &l)| r - alp_penalty(l, acc, group_size, beta))
                .collect()
        }
        LengthControl::None | LengthControl::Drpo { .. } | LengthControl::Gfpo { .. } => {
            group.rewards.clone()
        }
    }
}

/// Applies the active length control, computes advantages and drops groups
/// without reward signal. Online statistics are read from the snapshot
/// passed in and updated afterwards with every sampled group.
pub fn prepare_batch(
    groups: Vec<Group>,
    cfg: &TrainConfig,
    stats: &mut LengthStats,
    tracker: &mut AccuracyTracker,
) -> Result<PreparedBatch> {
    let method = cfg.shaping.method;
    let n_sampled: usize = groups.iter().map(Group::len).sum();
    let mut shaped = Vec::with_capacity(groups.len());
    let mut penalty_sum = 0.0;
    let mut reward_sum = 0.0;
    for g in &groups {
        let rewards = shaped_rewards(g, &method, stats, tracker, cfg.group_size);
        penalty_sum += g
            .rewards
            .iter()
            .zip(&rewards)
            .map(|(b, s)| b - s)
            .sum::<f64>();
        reward_sum += rewards.iter().sum::<f64>();
        let mut g2 = g.clone();
        g2.rewards = rewards;
        shaped.push(g2);
    }
    for g in &groups {
        update_online_stats(stats, tracker, g, cfg.shaping.ema_decay);
    }

    let mut shaping_diag = match method {
        LengthControl::RlooLp { .. } | LengthControl::Alp { .. } => {
            Some(penalty_sum / n_sampled as f64)
        }
        _ => None,
    };
    if let LengthControl::Gfpo { k, drop_incorrect } = method {
        shaped = shaped
            .iter()
            .map(|g| gfpo_filter(g, k, drop_incorrect))
            .collect();
        let kept: usize = shaped.iter().map(Group::len).sum();
        shaping_diag = Some(kept as f64 / n_sampled as f64);
    }

    let before = shaped.len();
    let mut survivors = dynamic_sampling_filter(shaped);
    let dropped_groups = before - survivors.len();
    if !matches!(method, LengthControl::Drpo { .. }) {
        for g in &mut survivors {
            g.compute_advantages(cfg.advantage)?;
        }
    }
    Ok(PreparedBatch {
        groups: survivors,
        dropped_groups,
        mean_reward: reward_sum / n_sampled as f64,
        shaping_diag,
    })
}

/// How the update objective is formed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub method: LengthControl,
    pub surrogate: SurrogateConfig,
    /// Length cap, the `C` of the DRPO weight.
    pub cap: usize,
}

/// Log-probabilities of every token of every group under `params`.
pub fn batch_logprobs(params: &PolicyParams, groups: &[Group]) -> Result<BatchLogprobs> {
    groups
        .par_iter()
        .map(|g| {
            g.trajectories
                .iter()
                .map(|t| params.sequence_logprobs(t))
                .collect()
        })
        .collect()
}

fn rollout_logprobs(groups: &[Group]) -> BatchLogprobs {
    groups
        .iter()
        .map(|g| {
            g.trajectories
                .iter()
                .map(|t| t.rollout_logprobs.clone())
                .collect()
        })
        .collect()
}

/// Objective (to maximize) and per-token weights such that its gradient is
/// `sum w * grad ln pi`.
fn objective_weights(
    groups: &[Group],
    old: &BatchLogprobs,
    cur: &BatchLogprobs,
    spec: &ObjectiveSpec,
) -> Result<(f64, BatchLogprobs)> {
    if let LengthControl::Drpo { lambda, tau } = spec.method {
        if groups.is_empty() {
            return Ok((0.0, Vec::new()));
        }
        let n_groups = groups.len() as f64;
        let mut value = 0.0;
        let mut weights = Vec::with_capacity(groups.len());
        for (g, lp) in groups.iter().zip(cur) {
            let scores: Vec<f64> = lp
                .iter()
                .map(|row| row.iter().sum::<f64>() / row.len() as f64)
                .collect();
            let mut correct = Vec::new();
            let mut wrong = Vec::new();
            let mut omega = Vec::new();
            for (i, &c) in g.correct_mask.iter().enumerate() {
                if c {
                    correct.push(scores[i]);
                    omega.push(drpo_weight(g.trajectories[i].length, spec.cap, lambda)?);
                } else {
                    wrong.push(scores[i]);
                }
            }
            let mut rows: Vec<Vec<f64>> = lp.iter().map(|row| vec![0.0; row.len()]).collect();
            if let Some(out) = disco_drpo_objective(&correct, &wrong, &omega, tau)? {
                value += out.value / n_groups;
                let (mut ci, mut wi) = (0, 0);
                for (i, &c) in g.correct_mask.iter().enumerate() {
                    let seq_w = if c {
                        ci += 1;
                        out.correct_weights[ci - 1]
                    } else {
                        wi += 1;
                        out.wrong_weights[wi - 1]
                    };
                    let per_token = seq_w / (rows[i].len() as f64 * n_groups);
                    rows[i].fill(per_token);
                }
            }
            weights.push(rows);
        }
        return Ok((value, weights));
    }

    let out = clipped_surrogate(groups, old, cur, &spec.surrogate)?;
    Ok((out.objective, out.weights))
}

fn gradient(params: &PolicyParams, groups: &[Group], weights: &BatchLogprobs) -> Result<Vec<f64>> {
    let partial: Vec<Vec<f64>> = groups
        .par_iter()
        .zip(weights.par_iter())
        .map(|(g, w)| policy::grad_weighted_logprob(params, &g.trajectories, w))
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; params.flat().len()];
    for p in &partial {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    Ok(total)
}

/// Update objective at `params` and its exact gradient with respect to the
/// parameters. `old` holds the log-probabilities of the policy that
/// produced the groups.
pub fn batch_objective(
    params: &PolicyParams,
    groups: &[Group],
    old: &BatchLogprobs,
    spec: &ObjectiveSpec,
) -> Result<(f64, Vec<f64>)> {
    let cur = batch_logprobs(params, groups)?;
    let (value, weights) = objective_weights(groups, old, &cur, spec)?;
    Ok((value, gradient(params, groups, &weights)?))
}

/// A training run in memory: problem sets, resolved cap and state.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    cap: usize,
    train_set: Vec<Problem>,
    eval_set: Vec<Problem>,
    state: TrainState,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// Builds problem sets, resolves the cap and initializes the policy.
    /// `threads` pins the worker count (`None`: rayon's global pool).
    pub fn new(cfg: TrainConfig, threads: Option<usize>) -> Result<Self> {
        cfg.validate()?;
        let pool = match threads {
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| LabError::invalid(format!("thread pool: {e}")))?,
            ),
            None => None,
        };
        let train_set = cfg.env.problem_set(cfg.seed, 0, cfg.train_problems);
        let eval_set = cfg
            .env
            .problem_set(cfg.seed, EVAL_ID_OFFSET, cfg.eval_problems);
        let cap = if cfg.cap_auto {
            match &pool {
                Some(p) => p.install(|| select_cap(&cfg, &train_set))?,
                None => select_cap(&cfg, &train_set)?,
            }
        } else {
            cfg.cap
        };
        let params = init_params(&cfg, cap)?;
        let state = TrainState {
            step: 0,
            optimizer: OptimizerState::new(params.flat().len()),
            params,
            length_stats: LengthStats::default(),
            accuracy: AccuracyTracker::new(cfg.group_size),
        };
        Ok(Trainer {
            cfg,
            cap,
            train_set,
            eval_set,
            state,
            pool,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn params(&self) -> &PolicyParams {
        &self.state.params
    }

    pub fn train_set(&self) -> &[Problem] {
        &self.train_set
    }

    pub fn eval_set(&self) -> &[Problem] {
        &self.eval_set
    }

    /// Replaces the parameters (e.g. when resuming from a saved run). The
    /// optimizer moments are reset.
    pub fn set_params(&mut self, params: PolicyParams) -> Result<()> {
        if params.layout() != self.state.params.layout() {
            return Err(LabError::ShapeMismatch(
                "parameter layout differs from the run's".into(),
            ));
        }
        self.state.optimizer = OptimizerState::new(params.flat().len());
        self.state.params = params;
        Ok(())
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// One outer step.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let (state, record) =
            self.run(|| step_state(&self.state, &self.cfg, &self.train_set, self.cap))?;
        self.state = state;
        Ok(record)
    }

    /// Samples `eval_samples` responses per held-out problem at
    /// `eval_temperature`. The same random streams are used at every call,
    /// so successive evaluations differ only through the parameters.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let report =
            self.run(|| evaluate_params(&self.state.params, &self.cfg, &self.eval_set, self.cap))?;
        Ok(EvalReport {
            step: self.state.step,
            report,
        })
    }
}

fn samples_of(trajs: &[Trajectory], problem: &Problem) -> Result<ProblemSamples> {
    let mut s = ProblemSamples {
        truth: problem.truth_bucket(),
        ..ProblemSamples::default()
    };
    for t in trajs {
        let v = env::verify(t, problem)?;
        s.answers.push(v.answer_bucket);
        s.correct.push(v.correct);
        s.lengths.push(t.length);
    }
    Ok(s)
}

/// Held-out metrics of `params` on `problems`.
pub fn evaluate_params(
    params: &PolicyParams,
    cfg: &TrainConfig,
    problems: &[Problem],
    cap: usize,
) -> Result<DispersionReport> {
    let samples: Vec<ProblemSamples> = problems
        .par_iter()
        .map(|p| {
            let key = StreamKey::new(cfg.seed, Domain::EvalRollout, 0, p.id);
            let trajs =
                sample_trajectories(params, p, cfg.eval_samples, cap, &key, cfg.eval_temperature)?;
            samples_of(&trajs, p)
        })
        .collect::<Result<_>>()?;
    DispersionReport::from_samples(&samples, cap)
}

fn step_state(
    state: &TrainState,
    cfg: &TrainConfig,
    train_set: &[Problem],
    cap: usize,
) -> Result<(TrainState, StepRecord)> {
    let step = state.step + 1;
    let mut select_rng = StreamKey::new(cfg.seed, Domain::BatchSelect, step as u64, 0).rng(0);
    let chosen: Vec<&Problem> =
        index::sample(&mut select_rng, train_set.len(), cfg.problems_per_batch)
            .into_iter()
            .map(|i| &train_set[i])
            .collect();

    let reward_mode = cfg.env.reward_mode();
    let groups: Vec<Group> = chosen
        .par_iter()
        .map(|p| {
            let key = StreamKey::new(cfg.seed, Domain::TrainRollout, step as u64, p.id);
            sample_group(&state.params, p, cfg.group_size, cap, &key, reward_mode)
        })
        .collect::<Result<_>>()?;

    let mut batch = {
        let samples: Vec<ProblemSamples> = groups
            .iter()
            .zip(&chosen)
            .map(|(g, p)| ProblemSamples {
                answers: g.verdicts.iter().map(|v| v.answer_bucket).collect(),
                correct: g.correct_mask.clone(),
                lengths: g.lengths().collect(),
                truth: p.truth_bucket(),
            })
            .collect();
        DispersionReport::from_samples(&samples, cap)?
    };

    let mut length_stats = state.length_stats.clone();
    let mut accuracy = state.accuracy.clone();
    let prepared = prepare_batch(groups, cfg, &mut length_stats, &mut accuracy)?;

    let spec = ObjectiveSpec {
        method: cfg.shaping.method,
        surrogate: cfg.surrogate.clone(),
        cap,
    };
    let mut params = state.params.clone();
    let mut optimizer = state.optimizer.clone();
    let mut prob_gaps = Vec::new();
    let mut shaping_diag = prepared.shaping_diag;
    let updated = !prepared.groups.is_empty();
    if updated {
        let old = rollout_logprobs(&prepared.groups);
        let flat_old: Vec<Vec<f64>> = old.iter().flatten().cloned().collect();
        for u in 0..cfg.surrogate.updates_per_batch {
            let cur = batch_logprobs(&params, &prepared.groups)?;
            let flat_cur: Vec<Vec<f64>> = cur.iter().flatten().cloned().collect();
            prob_gaps.push(metrics::prob_gap(&flat_old, &flat_cur)?);
            let (value, weights) = objective_weights(&prepared.groups, &old, &cur, &spec)?;
            if !value.is_finite() {
                return Err(LabError::Divergence {
                    step,
                    detail: format!("objective is {value}"),
                });
            }
            if u == 0 && matches!(spec.method, LengthControl::Drpo { .. }) {
                shaping_diag = Some(value);
            }
            let grad = gradient(&params, &prepared.groups, &weights)?;
            let loss_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
            let (p, o) = apply_update(
                &params,
                &loss_grad,
                &optimizer,
                cfg.lr,
                &AdamConfig::default(),
            )
            .map_err(|e| match e {
                LabError::Divergence { detail, .. } => LabError::Divergence { step, detail },
                other => other,
            })?;
            params = p;
            optimizer = o;
        }
    }
    batch.prob_gap = if prob_gaps.is_empty() {
        None
    } else {
        Some(prob_gaps.iter().sum::<f64>() / prob_gaps.len() as f64)
    };

    let record = StepRecord {
        step,
        mean_reward: prepared.mean_reward,
        batch,
        prob_gaps,
        dropped_groups: prepared.dropped_groups,
        updated,
        shaping_diag,
    };
    let next = TrainState {
        step,
        params,
        optimizer,
        length_stats,
        accuracy,
    };
    Ok((next, record))
}

#[cfg(test)]
mod tests;
