//! Tabular autoregressive policy with exact log-probabilities and gradients.
//!
//! A trajectory is a run of think tokens followed by `STOP, ANSWER`, or a run
//! of `cap` think tokens when the policy never stops (truncation). At think
//! step `t` the policy uses the parameters of bucket `b = min(t / width, B-1)`:
//!
//! * a stop hazard `sigmoid(stop_logits[b])`;
//! * if it continues, a softmax drift head `drift_logits[b, :]`.
//!
//! A `CONTINUE(d)` token therefore has log-probability
//! `ln(1 - p_stop) + ln softmax(drift)[d]`, and `STOP` has `ln p_stop`.
//! After `STOP` the answer head `softmax(answer_bias)` emits one answer token.
//!
//! All parameters live in one flat vector; [`ParamLayout`] maps named blocks
//! onto it, so gradients and optimizer moments share the same indexing.

mod adam;
mod sampling;

pub use adam::{apply_update, AdamConfig, OptimizerState};
pub use sampling::{sample_group, sample_trajectories};

use serde::{Deserialize, Serialize};

use crate::env::EnvTrace;
use crate::error::{LabError, Result};

/// One generated token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    /// Think step carrying drift token `d`.
    Continue(u32),
    Stop,
    /// Answer-head token.
    Answer(u32),
}

/// A sampled response.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Position within its group at sampling time.
    pub sample_index: usize,
    pub tokens: Vec<Token>,
    /// Number of think (`CONTINUE`) tokens.
    pub length: usize,
    /// Hit the length cap without answering.
    pub truncated: bool,
    /// `ln pi(token | prefix)` under the sampling parameters, one per token.
    pub rollout_logprobs: Vec<f64>,
    pub trace: EnvTrace,
}

impl Trajectory {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn answer_token(&self) -> Option<u32> {
        match self.tokens.last() {
            Some(Token::Answer(a)) => Some(*a),
            _ => None,
        }
    }
}

/// Shape of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_buckets: usize,
    pub bucket_width: usize,
    pub n_drift: usize,
    pub n_answer: usize,
}

impl ParamLayout {
    /// Layout with enough buckets to cover think steps `0..cap`.
    pub fn for_cap(
        cap: usize,
        bucket_width: usize,
        n_drift: usize,
        n_answer: usize,
    ) -> Result<Self> {
        if cap == 0 || bucket_width == 0 || n_drift == 0 || n_answer == 0 {
            return Err(LabError::invalid(
                "cap, bucket width and head sizes must all be >= 1",
            ));
        }
        Ok(ParamLayout {
            n_buckets: cap.div_ceil(bucket_width),
            bucket_width,
            n_drift,
            n_answer,
        })
    }

    pub fn stop_offset(&self) -> usize {
        0
    }

    pub fn drift_offset(&self) -> usize {
        self.n_buckets
    }

    pub fn answer_offset(&self) -> usize {
        self.n_buckets + self.n_buckets * self.n_drift
    }

    pub fn len(&self) -> usize {
        self.answer_offset() + self.n_answer
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bucket(&self, step: usize) -> usize {
        (step / self.bucket_width).min(self.n_buckets - 1)
    }
}

/// Parameters of the policy, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        PolicyParams {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_flat(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(LabError::ShapeMismatch(format!(
                "layout needs {} parameters, got {}",
                layout.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::invalid(format!("parameter {i} is not finite")));
        }
        Ok(PolicyParams { layout, values })
    }

    /// Assembles parameters from named blocks; `drift` is row-major
    /// `[bucket][drift token]`.
    pub fn from_blocks(
        layout: ParamLayout,
        stop: &[f64],
        drift: &[f64],
        answer: &[f64],
    ) -> Result<Self> {
        if stop.len() != layout.n_buckets
            || drift.len() != layout.n_buckets * layout.n_drift
            || answer.len() != layout.n_answer
        {
            return Err(LabError::ShapeMismatch(
                "block sizes disagree with layout".into(),
            ));
        }
        let values = [stop, drift, answer].concat();
        Self::from_flat(layout, values)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn stop_logits(&self) -> &[f64] {
        &self.values[..self.layout.n_buckets]
    }

    pub fn stop_logits_mut(&mut self) -> &mut [f64] {
        let n = self.layout.n_buckets;
        &mut self.values[..n]
    }

    pub fn drift_logits(&self, bucket: usize) -> &[f64] {
        let start = self.layout.drift_offset() + bucket * self.layout.n_drift;
        &self.values[start..start + self.layout.n_drift]
    }

    pub fn drift_logits_mut(&mut self, bucket: usize) -> &mut [f64] {
        let start = self.layout.drift_offset() + bucket * self.layout.n_drift;
        let n = self.layout.n_drift;
        &mut self.values[start..start + n]
    }

    pub fn answer_bias(&self) -> &[f64] {
        &self.values[self.layout.answer_offset()..]
    }

    pub fn answer_bias_mut(&mut self) -> &mut [f64] {
        let start = self.layout.answer_offset();
        &mut self.values[start..]
    }

    /// Probability of stopping at think step `step`.
    pub fn stop_probability(&self, step: usize) -> f64 {
        sigmoid(self.stop_logits()[self.layout.bucket(step)])
    }

    /// Softmax of the drift head at think step `step`.
    pub fn drift_probabilities(&self, step: usize) -> Vec<f64> {
        softmax(self.drift_logits(self.layout.bucket(step)), 1.0)
    }

    pub(crate) fn token_logprob(&self, step: usize, token: Token, inv_temp: f64) -> Result<f64> {
        let b = self.layout.bucket(step);
        let stop = self.stop_logits()[b] * inv_temp;
        match token {
            Token::Stop => Ok(log_sigmoid(stop)),
            Token::Continue(d) => {
                let logits = self.drift_logits(b);
                let d = d as usize;
                if d >= logits.len() {
                    return Err(LabError::InvalidTrajectory(format!(
                        "drift token {d} outside vocabulary of {}",
                        logits.len()
                    )));
                }
                Ok(log_sigmoid(-stop) + log_softmax_at(logits, d, inv_temp))
            }
            Token::Answer(a) => {
                let logits = self.answer_bias();
                let a = a as usize;
                if a >= logits.len() {
                    return Err(LabError::InvalidTrajectory(format!(
                        "answer token {a} outside vocabulary of {}",
                        logits.len()
                    )));
                }
                Ok(log_softmax_at(logits, a, inv_temp))
            }
        }
    }

    /// Re-evaluates every token's log-probability under these parameters.
    pub fn sequence_logprobs(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        check_structure(traj)?;
        traj.tokens
            .iter()
            .zip(token_steps(&traj.tokens))
            .map(|(&tok, step)| self.token_logprob(step, tok, 1.0))
            .collect()
    }

    /// Adds `d/dtheta sum_t w_t ln pi(token_t | prefix)` for one trajectory
    /// into `grad`.
    pub(crate) fn accumulate_grad(
        &self,
        traj: &Trajectory,
        weights: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        check_structure(traj)?;
        if weights.len() != traj.tokens.len() {
            return Err(LabError::ShapeMismatch(format!(
                "{} weights for {} tokens",
                weights.len(),
                traj.tokens.len()
            )));
        }
        let lay = self.layout;
        for ((&tok, step), &w) in traj
            .tokens
            .iter()
            .zip(token_steps(&traj.tokens))
            .zip(weights)
        {
            if w == 0.0 {
                continue;
            }
            let b = lay.bucket(step);
            let p_stop = sigmoid(self.stop_logits()[b]);
            match tok {
                Token::Stop => grad[lay.stop_offset() + b] += w * (1.0 - p_stop),
                Token::Continue(d) => {
                    grad[lay.stop_offset() + b] -= w * p_stop;
                    let probs = softmax(self.drift_logits(b), 1.0);
                    let base = lay.drift_offset() + b * lay.n_drift;
                    softmax_grad(&probs, d as usize, w, &mut grad[base..base + lay.n_drift])?;
                }
                Token::Answer(a) => {
                    let probs = softmax(self.answer_bias(), 1.0);
                    let base = lay.answer_offset();
                    softmax_grad(&probs, a as usize, w, &mut grad[base..base + lay.n_answer])?;
                }
            }
        }
        Ok(())
    }
}

/// `d/dtheta sum_{i,t} w_{i,t} ln pi(token_{i,t} | prefix)` as a flat vector
/// aligned with the parameter layout. Trajectories are reduced in order.
pub fn grad_weighted_logprob(
    params: &PolicyParams,
    trajs: &[Trajectory],
    weights: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if trajs.len() != weights.len() {
        return Err(LabError::ShapeMismatch(format!(
            "{} weight rows for {} trajectories",
            weights.len(),
            trajs.len()
        )));
    }
    let mut grad = vec![0.0; params.layout.len()];
    for (traj, w) in trajs.iter().zip(weights) {
        params.accumulate_grad(traj, w, &mut grad)?;
    }
    Ok(grad)
}

/// Think step at which each token is emitted. `ANSWER` shares the step of the
/// preceding `STOP`.
fn token_steps(tokens: &[Token]) -> impl Iterator<Item = usize> + '_ {
    let mut step = 0usize;
    tokens.iter().map(move |tok| match tok {
        Token::Continue(_) => {
            step += 1;
            step - 1
        }
        Token::Stop | Token::Answer(_) => step,
    })
}

fn check_structure(traj: &Trajectory) -> Result<()> {
    let think = traj
        .tokens
        .iter()
        .take_while(|t| matches!(t, Token::Continue(_)))
        .count();
    let tail = &traj.tokens[think..];
    let ok = match tail {
        [] => traj.truncated,
        [Token::Stop, Token::Answer(_)] => !traj.truncated,
        _ => false,
    };
    if !ok || think != traj.length {
        return Err(LabError::InvalidTrajectory(format!(
            "expected CONTINUE* [STOP ANSWER] with length {}, got {:?}",
            traj.length, tail
        )));
    }
    Ok(())
}

fn softmax_grad(probs: &[f64], chosen: usize, w: f64, out: &mut [f64]) -> Result<()> {
    if chosen >= probs.len() {
        return Err(LabError::InvalidTrajectory(format!(
            "token {chosen} outside vocabulary of {}",
            probs.len()
        )));
    }
    for (j, (g, p)) in out.iter_mut().zip(probs).enumerate() {
        let indicator = if j == chosen { 1.0 } else { 0.0 };
        *g += w * (indicator - p);
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x) = -softplus(-x)`, stable for large `|x|`.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    -(f64::max(-x, 0.0) + (-x.abs()).exp().ln_1p())
}

fn log_sum_exp_scaled(logits: &[f64], inv_temp: f64) -> f64 {
    let max = logits
        .iter()
        .map(|&l| l * inv_temp)
        .fold(f64::NEG_INFINITY, f64::max);
    max + logits
        .iter()
        .map(|&l| (l * inv_temp - max).exp())
        .sum::<f64>()
        .ln()
}

fn log_softmax_at(logits: &[f64], idx: usize, inv_temp: f64) -> f64 {
    logits[idx] * inv_temp - log_sum_exp_scaled(logits, inv_temp)
}

pub(crate) fn softmax(logits: &[f64], inv_temp: f64) -> Vec<f64> {
    let lse = log_sum_exp_scaled(logits, inv_temp);
    logits.iter().map(|&l| (l * inv_temp - lse).exp()).collect()
}
