use rand::Rng;

use super::{sigmoid, softmax, PolicyParams, Token, Trajectory};
use crate::env::{self, Problem, RewardMode};
use crate::error::{LabError, Result};
use crate::objectives::Group;
use crate::rng::StreamKey;

fn categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_one(
    params: &PolicyParams,
    problem: &Problem,
    cap: usize,
    key: &StreamKey,
    sample_index: usize,
    temperature: f64,
) -> Result<Trajectory> {
    let inv_temp = 1.0 / temperature;
    let mut rng = key.rng(sample_index as u64);
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut trace = problem.empty_trace();
    let lay = params.layout();

    for step in 0..cap {
        let b = lay.bucket(step);
        let p_stop = sigmoid(params.stop_logits()[b] * inv_temp);
        if rng.gen::<f64>() < p_stop {
            let probs = softmax(params.answer_bias(), inv_temp);
            let answer = Token::Answer(categorical(&probs, &mut rng) as u32);
            for tok in [Token::Stop, answer] {
                logprobs.push(params.token_logprob(step, tok, inv_temp)?);
                tokens.push(tok);
            }
            return Ok(Trajectory {
                sample_index,
                tokens,
                length: step,
                truncated: false,
                rollout_logprobs: logprobs,
                trace,
            });
        }
        let probs = softmax(params.drift_logits(b), inv_temp);
        let tok = Token::Continue(categorical(&probs, &mut rng) as u32);
        logprobs.push(params.token_logprob(step, tok, inv_temp)?);
        tokens.push(tok);
        problem.push_step_noise(&mut trace, step, &mut rng);
    }

    Ok(Trajectory {
        sample_index,
        tokens,
        length: cap,
        truncated: true,
        rollout_logprobs: logprobs,
        trace,
    })
}

/// Draws `n` trajectories for `problem`; sample `i` uses stream `key.rng(i)`.
pub fn sample_trajectories(
    params: &PolicyParams,
    problem: &Problem,
    n: usize,
    cap: usize,
    key: &StreamKey,
    temperature: f64,
) -> Result<Vec<Trajectory>> {
    if cap == 0 {
        return Err(LabError::invalid("cap must be >= 1"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(LabError::invalid("temperature must be positive and finite"));
    }
    (0..n)
        .map(|i| sample_one(params, problem, cap, key, i, temperature))
        .collect()
}

/// Samples a group of `g` responses at temperature 1 and verifies them.
/// Rewards start as the base reward of each verdict.
pub fn sample_group(
    params: &PolicyParams,
    problem: &Problem,
    g: usize,
    cap: usize,
    key: &StreamKey,
    reward_mode: RewardMode,
) -> Result<Group> {
    if g < 2 {
        return Err(LabError::invalid("group size must be >= 2"));
    }
    let trajectories = sample_trajectories(params, problem, g, cap, key, 1.0)?;
    let verdicts = trajectories
        .iter()
        .map(|t| env::verify(t, problem))
        .collect::<Result<Vec<_>>>()?;
    Ok(Group::new(problem.id, trajectories, verdicts, reward_mode))
}
