//! Group-relative advantages, dynamic sampling and the clipped surrogate.

use serde::{Deserialize, Serialize};

use crate::env::{RewardMode, Verdict};
use crate::error::{LabError, Result};
use crate::policy::Trajectory;

/// Standard deviations below this count as zero.
pub const STD_EPS: f64 = 1e-8;

/// The responses sampled for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub problem_id: u64,
    pub trajectories: Vec<Trajectory>,
    pub verdicts: Vec<Verdict>,
    pub rewards: Vec<f64>,
    pub correct_mask: Vec<bool>,
    /// Per-trajectory advantage, broadcast to every token of that trajectory.
    pub advantages: Option<Vec<f64>>,
}

impl Group {
    pub fn new(
        problem_id: u64,
        trajectories: Vec<Trajectory>,
        verdicts: Vec<Verdict>,
        mode: RewardMode,
    ) -> Self {
        let rewards = verdicts.iter().map(|v| v.base_reward(mode)).collect();
        let correct_mask = verdicts.iter().map(|v| v.correct).collect();
        Group {
            problem_id,
            trajectories,
            verdicts,
            rewards,
            correct_mask,
            advantages: None,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.trajectories.iter().map(|t| t.length)
    }

    pub fn n_correct(&self) -> usize {
        self.correct_mask.iter().filter(|&&c| c).count()
    }

    /// Keeps the members at `keep` (ascending indices) and clears advantages.
    pub(crate) fn subset(&self, keep: &[usize]) -> Group {
        Group {
            problem_id: self.problem_id,
            trajectories: keep.iter().map(|&i| self.trajectories[i].clone()).collect(),
            verdicts: keep.iter().map(|&i| self.verdicts[i]).collect(),
            rewards: keep.iter().map(|&i| self.rewards[i]).collect(),
            correct_mask: keep.iter().map(|&i| self.correct_mask[i]).collect(),
            advantages: None,
        }
    }

    pub fn compute_advantages(&mut self, kind: AdvantageKind) -> Result<()> {
        self.advantages = Some(match kind {
            AdvantageKind::GroupNorm => group_norm_advantage(&self.rewards)?,
            AdvantageKind::Rloo => rloo_advantage(&self.rewards)?,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AdvantageKind {
    #[default]
    GroupNorm,
    Rloo,
}

/// `(r_i - mean) / std` with the population std; all zeros when the std is
/// below [`STD_EPS`].
pub fn group_norm_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(LabError::invalid(
            "group normalization needs at least 2 rewards",
        ));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_EPS {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Leave-one-out baseline: `r_i - (sum_{j != i} r_j) / (n - 1)`.
pub fn rloo_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(LabError::invalid(
            "leave-one-out baseline needs at least 2 rewards",
        ));
    }
    let n = rewards.len() as f64;
    let total: f64 = rewards.iter().sum();
    // r_i - (S - r_i)/(n-1) = (n r_i - S)/(n-1)
    Ok(rewards
        .iter()
        .map(|r| (n * r - total) / (n - 1.0))
        .collect())
}

/// Drops groups whose rewards carry no signal (all identical, or fewer than
/// two members). Order is preserved.
pub fn dynamic_sampling_filter(groups: Vec<Group>) -> Vec<Group> {
    groups.into_iter().filter(has_reward_signal).collect()
}

pub fn has_reward_signal(group: &Group) -> bool {
    match group.rewards.split_first() {
        Some((first, rest)) if !rest.is_empty() => rest.iter().any(|r| r != first),
        _ => false,
    }
}

/// How per-token terms are averaged across a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NormMode {
    /// Mean over trajectories of each trajectory's per-token mean.
    SampleAvg,
    /// Sum over all tokens divided by the total token count.
    #[default]
    TokenAvg,
}

/// Whether the importance-ratio cap applies per token or per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TisMode {
    #[default]
    Token,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub norm_mode: NormMode,
    pub eps_low: f64,
    pub eps_high: f64,
    /// Truncated importance-sampling cap; `None` disables it.
    pub tis_cap: Option<f64>,
    pub tis_mode: TisMode,
    pub updates_per_batch: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            norm_mode: NormMode::TokenAvg,
            eps_low: 0.2,
            eps_high: 0.28,
            tis_cap: None,
            tis_mode: TisMode::Token,
            updates_per_batch: 1,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.eps_low && self.eps_low <= self.eps_high && self.eps_high < 1.0) {
            return Err(LabError::config(
                "surrogate.eps_low",
                "need 0 < eps_low <= eps_high < 1",
            ));
        }
        if let Some(cap) = self.tis_cap {
            if !(cap >= 1.0) {
                return Err(LabError::config("surrogate.tis_cap", "cap must be >= 1"));
            }
        }
        if self.updates_per_batch == 0 {
            return Err(LabError::config(
                "surrogate.updates_per_batch",
                "must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Per-token log-probabilities for every trajectory of every group.
pub type BatchLogprobs = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput {
    /// Surrogate objective (to be maximized).
    pub objective: f64,
    /// Weights `w` such that `grad objective = grad sum w * ln pi`.
    pub weights: BatchLogprobs,
    /// Tokens whose clipped branch was active.
    pub clipped_tokens: usize,
}

fn check_aligned(groups: &[Group], a: &BatchLogprobs, what: &str) -> Result<()> {
    if a.len() != groups.len() {
        return Err(LabError::ShapeMismatch(format!(
            "{what}: {} groups, expected {}",
            a.len(),
            groups.len()
        )));
    }
    for (gi, (g, lp)) in groups.iter().zip(a).enumerate() {
        if lp.len() != g.len() {
            return Err(LabError::ShapeMismatch(format!(
                "{what}: group {gi} has {} rows for {} trajectories",
                lp.len(),
                g.len()
            )));
        }
        for (ti, (t, row)) in g.trajectories.iter().zip(lp).enumerate() {
            if row.len() != t.token_count() {
                return Err(LabError::ShapeMismatch(format!(
                    "{what}: group {gi} trajectory {ti} has {} entries for {} tokens",
                    row.len(),
                    t.token_count()
                )));
            }
        }
    }
    Ok(())
}

/// Clipped importance-ratio surrogate
/// `min(rho A, clip(rho, 1 - eps_low, 1 + eps_high) A)` with
/// `rho = exp(cur - old)`, aggregated under `cfg.norm_mode`. With a TIS cap
/// each token's term is scaled by its constant [`tis_factors`] ratio of old
/// to rollout log-probabilities.
///
/// The returned weights are `c * f * rho * A` where the unclipped branch is
/// active and `0` where the clipped (constant) branch is, `c` being the
/// normalization coefficient and `f` the TIS ratio of that token.
pub fn clipped_surrogate(
    groups: &[Group],
    old_logprobs: &BatchLogprobs,
    cur_logprobs: &BatchLogprobs,
    cfg: &SurrogateConfig,
) -> Result<SurrogateOutput> {
    check_aligned(groups, old_logprobs, "old log-probs")?;
    check_aligned(groups, cur_logprobs, "current log-probs")?;
    let n_traj: usize = groups.iter().map(Group::len).sum();
    let n_tokens: usize = groups
        .iter()
        .flat_map(|g| g.trajectories.iter().map(Trajectory::token_count))
        .sum();

    let mut objective = 0.0;
    let mut clipped_tokens = 0;
    let mut weights = Vec::with_capacity(groups.len());
    for (gi, g) in groups.iter().enumerate() {
        let adv = g
            .advantages
            .as_ref()
            .ok_or_else(|| LabError::invalid(format!("group {gi} has no advantages")))?;
        let mut gw = Vec::with_capacity(g.len());
        for (ti, traj) in g.trajectories.iter().enumerate() {
            let coef = match cfg.norm_mode {
                NormMode::SampleAvg => 1.0 / (n_traj as f64 * traj.token_count() as f64),
                NormMode::TokenAvg => 1.0 / n_tokens as f64,
            };
            let a = adv[ti];
            let old = &old_logprobs[gi][ti];
            let cur = &cur_logprobs[gi][ti];
            let tis = match cfg.tis_cap {
                Some(cap) => tis_factors(old, &traj.rollout_logprobs, cap, cfg.tis_mode)?,
                None => vec![1.0; cur.len()],
            };
            let mut row = Vec::with_capacity(cur.len());
            let mut term_sum = 0.0;
            for (k, ((&c, &o), &f)) in cur.iter().zip(old).zip(&tis).enumerate() {
                let rho = (c - o).exp();
                if !rho.is_finite() {
                    return Err(LabError::Divergence {
                        step: 0,
                        detail: format!(
                            "importance ratio {rho} at group {gi}, trajectory {ti}, token {k}"
                        ),
                    });
                }
                let unclipped = rho * a;
                let clipped = rho.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * a;
                if unclipped <= clipped {
                    term_sum += f * unclipped;
                    row.push(coef * f * unclipped);
                } else {
                    term_sum += f * clipped;
                    clipped_tokens += 1;
                    row.push(0.0);
                }
            }
            objective += coef * term_sum;
            gw.push(row);
        }
        weights.push(gw);
    }
    Ok(SurrogateOutput {
        objective,
        weights,
        clipped_tokens,
    })
}

/// Truncated importance ratios `min(exp(old - rollout), cap)` for one
/// trajectory. In [`TisMode::Sequence`] the ratio is the product over the
/// whole sequence and is shared by all of its tokens.
pub fn tis_factors(old: &[f64], rollout: &[f64], cap: f64, mode: TisMode) -> Result<Vec<f64>> {
    if !(cap >= 1.0) {
        return Err(LabError::invalid("TIS cap must be >= 1"));
    }
    if old.len() != rollout.len() {
        return Err(LabError::ShapeMismatch(
            "TIS rows have different token counts".into(),
        ));
    }
    Ok(match mode {
        TisMode::Token => old
            .iter()
            .zip(rollout)
            .map(|(o, r)| (o - r).exp().min(cap))
            .collect(),
        TisMode::Sequence => {
            let log_ratio: f64 = old.iter().zip(rollout).map(|(o, r)| o - r).sum();
            vec![log_ratio.exp().min(cap); old.len()]
        }
    })
}

/// Multiplies each weight by its [`tis_factors`] ratio.
pub fn tis_correct(
    weights: &[Vec<f64>],
    old_logprobs: &[Vec<f64>],
    rollout_logprobs: &[Vec<f64>],
    cap: f64,
    mode: TisMode,
) -> Result<Vec<Vec<f64>>> {
    if weights.len() != old_logprobs.len() || weights.len() != rollout_logprobs.len() {
        return Err(LabError::ShapeMismatch(
            "TIS inputs have different trajectory counts".into(),
        ));
    }
    weights
        .iter()
        .zip(old_logprobs)
        .zip(rollout_logprobs)
        .map(|((w, old), roll)| {
            if w.len() != old.len() {
                return Err(LabError::ShapeMismatch(
                    "TIS rows have different token counts".into(),
                ));
            }
            let f = tis_factors(old, roll, cap, mode)?;
            Ok(w.iter().zip(f).map(|(wt, f)| wt * f).collect())
        })
        .collect()
}
