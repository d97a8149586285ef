//! Synthetic verifiable-reasoning tasks.
//!
//! Two problem families share one policy interface:
//!
//! * **Gaussian walk.** Each think token moves a latent answer by the value
//!   of its drift token plus Gaussian step noise. Stopping too early leaves
//!   the answer short of the target (under-thinking); every extra step adds
//!   noise variance (dispersion).
//! * **Arithmetic chain.** Each of the first `ops.len()` think tokens applies
//!   one modular operation to an accumulator. Extra steps may corrupt it.
//!
//! Environment noise is drawn while sampling and stored on the trajectory in
//! an [`EnvTrace`], so [`verify`] is a pure replay.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LabError, Result};
use crate::metrics::{AnswerHistogram, ProblemDispersion};
use crate::policy::{Token, Trajectory};
use crate::rng::{Domain, StreamKey};

/// How a verified answer turns into a base reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RewardMode {
    /// `1{correct}`.
    #[default]
    Binary,
    /// `exp(-(y - mu_r)^2 / (2 delta^2))` for the walk; binary for the chain.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkSpec {
    pub mu0: f64,
    pub mu_r: f64,
    /// Half-width of the accepted band around `mu_r`.
    pub delta: f64,
    pub sigma_step: f64,
    pub bin_width: f64,
    /// Value added to the latent answer by each drift token.
    pub drift_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainOp {
    Add,
    Mul,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub ops: Vec<(ChainOp, u32)>,
    pub modulus: u32,
    /// Corruption probability for each think step beyond `ops.len()`.
    pub p_corrupt: f64,
}

impl ChainSpec {
    fn apply(&self, acc: u64, step: usize) -> u64 {
        let m = self.modulus as u64;
        let (op, operand) = self.ops[step];
        match op {
            ChainOp::Add => (acc + operand as u64) % m,
            ChainOp::Mul => (acc * operand as u64) % m,
        }
    }

    /// Value of the full chain evaluated from zero.
    pub fn ground_truth(&self) -> u64 {
        (0..self.ops.len()).fold(0, |acc, t| self.apply(acc, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProblemKind {
    GaussianWalk(WalkSpec),
    ArithmeticChain(ChainSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: u64,
    pub kind: ProblemKind,
}

/// Environment noise recorded during sampling, one entry per think token.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvTrace {
    Walk { increments: Vec<f64> },
    Chain { corruptions: Vec<u32> },
}

impl EnvTrace {
    pub fn len(&self) -> usize {
        match self {
            EnvTrace::Walk { increments } => increments.len(),
            EnvTrace::Chain { corruptions } => corruptions.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outcome of checking one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub correct: bool,
    /// Discrete answer id; `None` when the trajectory was truncated.
    pub answer_bucket: Option<i64>,
    /// Smooth score used by [`RewardMode::Gaussian`].
    pub score: f64,
}

impl Verdict {
    pub fn base_reward(&self, mode: RewardMode) -> f64 {
        match mode {
            RewardMode::Binary => f64::from(u8::from(self.correct)),
            RewardMode::Gaussian => self.score,
        }
    }
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ProblemKind::GaussianWalk(w) => {
                if !(w.delta > 0.0) {
                    return Err(LabError::invalid("walk delta must be > 0"));
                }
                if !(w.sigma_step >= 0.0) {
                    return Err(LabError::invalid("walk sigma_step must be >= 0"));
                }
                if !(w.bin_width > 0.0) {
                    return Err(LabError::invalid("walk bin_width must be > 0"));
                }
                if w.drift_values.is_empty() {
                    return Err(LabError::invalid("walk needs at least one drift value"));
                }
            }
            ProblemKind::ArithmeticChain(c) => {
                if c.modulus < 2 {
                    return Err(LabError::invalid("chain modulus must be >= 2"));
                }
                if !(0.0..=1.0).contains(&c.p_corrupt) {
                    return Err(LabError::invalid("chain p_corrupt must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn walk(&self) -> Result<&WalkSpec> {
        match &self.kind {
            ProblemKind::GaussianWalk(w) => Ok(w),
            ProblemKind::ArithmeticChain(_) => Err(LabError::EnvironmentMismatch(format!(
                "problem {} is an arithmetic chain, expected a gaussian walk",
                self.id
            ))),
        }
    }

    /// Bucket holding the correct answer.
    pub fn truth_bucket(&self) -> i64 {
        match &self.kind {
            ProblemKind::GaussianWalk(w) => (w.mu_r / w.bin_width).floor() as i64,
            ProblemKind::ArithmeticChain(c) => c.ground_truth() as i64,
        }
    }

    pub(crate) fn empty_trace(&self) -> EnvTrace {
        match self.kind {
            ProblemKind::GaussianWalk(_) => EnvTrace::Walk {
                increments: Vec::new(),
            },
            ProblemKind::ArithmeticChain(_) => EnvTrace::Chain {
                corruptions: Vec::new(),
            },
        }
    }

    /// Draws the environment noise for think step `step` and appends it.
    pub(crate) fn push_step_noise<R: Rng>(&self, trace: &mut EnvTrace, step: usize, rng: &mut R) {
        match (&self.kind, trace) {
            (ProblemKind::GaussianWalk(w), EnvTrace::Walk { increments }) => {
                let z: f64 = rng.sample(StandardNormal);
                increments.push(w.sigma_step * z);
            }
            (ProblemKind::ArithmeticChain(c), EnvTrace::Chain { corruptions }) => {
                let mut offset = 0;
                if step >= c.ops.len() && rng.gen::<f64>() < c.p_corrupt {
                    offset = rng.gen_range(1..c.modulus);
                }
                corruptions.push(offset);
            }
            _ => unreachable!("trace built from a different problem kind"),
        }
    }
}

/// Replays a trajectory against its problem.
pub fn verify(traj: &Trajectory, problem: &Problem) -> Result<Verdict> {
    match (&problem.kind, &traj.trace) {
        (ProblemKind::GaussianWalk(w), EnvTrace::Walk { increments }) => {
            let y = walk_endpoint(w, traj, increments)?;
            if traj.truncated {
                return Ok(Verdict {
                    correct: false,
                    answer_bucket: None,
                    score: 0.0,
                });
            }
            let err = y - w.mu_r;
            Ok(Verdict {
                correct: err.abs() <= w.delta,
                answer_bucket: Some((y / w.bin_width).floor() as i64),
                score: (-(err * err) / (2.0 * w.delta * w.delta)).exp(),
            })
        }
        (ProblemKind::ArithmeticChain(c), EnvTrace::Chain { corruptions }) => {
            if corruptions.len() != traj.length {
                return Err(LabError::InvalidTrajectory(format!(
                    "chain trace has {} entries for length {}",
                    corruptions.len(),
                    traj.length
                )));
            }
            if traj.truncated {
                return Ok(Verdict {
                    correct: false,
                    answer_bucket: None,
                    score: 0.0,
                });
            }
            let m = c.modulus as u64;
            let mut acc = 0u64;
            for (t, &corruption) in corruptions.iter().enumerate() {
                acc = if t < c.ops.len() {
                    c.apply(acc, t)
                } else {
                    (acc + corruption as u64) % m
                };
            }
            let offset = match traj.tokens.last() {
                Some(Token::Answer(j)) => *j as u64,
                _ => {
                    return Err(LabError::InvalidTrajectory(
                        "untruncated trajectory must end with an answer".into(),
                    ))
                }
            };
            let answer = (acc + offset) % m;
            let correct = answer == c.ground_truth();
            Ok(Verdict {
                correct,
                answer_bucket: Some(answer as i64),
                score: f64::from(u8::from(correct)),
            })
        }
        _ => Err(LabError::EnvironmentMismatch(format!(
            "trajectory trace does not match problem {}",
            problem.id
        ))),
    }
}

fn walk_endpoint(w: &WalkSpec, traj: &Trajectory, increments: &[f64]) -> Result<f64> {
    if increments.len() != traj.length {
        return Err(LabError::InvalidTrajectory(format!(
            "walk trace has {} entries for length {}",
            increments.len(),
            traj.length
        )));
    }
    let mut y = w.mu0;
    let drifts = traj.tokens.iter().filter_map(|tok| match tok {
        Token::Continue(d) => Some(*d),
        _ => None,
    });
    for (d, eps) in drifts.zip(increments) {
        let v = w.drift_values.get(d as usize).ok_or_else(|| {
            LabError::InvalidTrajectory(format!("drift token {d} outside vocabulary"))
        })?;
        y += v + eps;
    }
    Ok(y)
}

fn walk_moments(w: &WalkSpec, drift_mean: f64, drift_var: f64, len: usize) -> (f64, f64) {
    let l = len as f64;
    let mean = w.mu0 + l * drift_mean;
    let var = l * (drift_var + w.sigma_step * w.sigma_step);
    (mean, var.max(0.0).sqrt())
}

/// Closed-form accuracy of a walk of fixed length `len` whose drifts are
/// i.i.d. with the given mean and variance (Gaussian approximation of the
/// endpoint, exact when the drift is deterministic).
pub fn oracle_accuracy(
    problem: &Problem,
    drift_mean: f64,
    drift_var: f64,
    len: usize,
) -> Result<f64> {
    let w = problem.walk()?;
    let (m, s) = walk_moments(w, drift_mean, drift_var, len);
    if s == 0.0 {
        return Ok(f64::from(u8::from((m - w.mu_r).abs() <= w.delta)));
    }
    let phi = Normal::standard();
    Ok(phi.cdf((w.mu_r + w.delta - m) / s) - phi.cdf((w.mu_r - w.delta - m) / s))
}

/// Monte-Carlo dispersion metrics of the Gaussian endpoint at fixed length.
pub fn oracle_dispersion(
    problem: &Problem,
    drift_mean: f64,
    drift_var: f64,
    len: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ProblemDispersion> {
    let w = problem.walk()?;
    if n_samples < 2 {
        return Err(LabError::invalid("oracle_dispersion needs n_samples >= 2"));
    }
    let (m, s) = walk_moments(w, drift_mean, drift_var, len);
    let mut rng = StreamKey::new(seed, Domain::Oracle, len as u64, problem.id).rng(0);
    let buckets = (0..n_samples).map(|_| {
        let z: f64 = rng.sample(StandardNormal);
        Some(((m + s * z) / w.bin_width).floor() as i64)
    });
    let hist = AnswerHistogram::from_answers(buckets, Some(problem.truth_bucket()))?;
    Ok(ProblemDispersion::from_histogram(&hist))
}

/// Parameters of a problem generator.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    GaussianWalk {
        /// Target minus start, before jitter.
        distance: f64,
        distance_jitter: f64,
        delta: f64,
        sigma_step: f64,
        /// Defaults to `delta` when absent.
        bin_width: Option<f64>,
        drift_values: Vec<f64>,
        reward: RewardMode,
    },
    ArithmeticChain {
        n_ops: usize,
        modulus: u32,
        p_corrupt: f64,
    },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::GaussianWalk {
            distance: 10.0,
            distance_jitter: 0.0,
            delta: 2.0,
            sigma_step: 1.0,
            bin_width: None,
            drift_values: vec![0.0, 1.0],
            reward: RewardMode::Binary,
        }
    }
}

/// Offset separating held-out problem ids from training ids.
pub const EVAL_ID_OFFSET: u64 = 1 << 40;

impl EnvConfig {
    pub fn reward_mode(&self) -> RewardMode {
        match self {
            EnvConfig::GaussianWalk { reward, .. } => *reward,
            EnvConfig::ArithmeticChain { .. } => RewardMode::Binary,
        }
    }

    /// Number of drift tokens the policy must model.
    pub fn drift_vocab(&self) -> usize {
        match self {
            EnvConfig::GaussianWalk { drift_values, .. } => drift_values.len(),
            EnvConfig::ArithmeticChain { .. } => 1,
        }
    }

    /// Size of the answer head.
    pub fn answer_vocab(&self) -> usize {
        match self {
            EnvConfig::GaussianWalk { .. } => 1,
            EnvConfig::ArithmeticChain { modulus, .. } => *modulus as usize,
        }
    }

    /// Generates the problem with the given id. Ids at or above
    /// [`EVAL_ID_OFFSET`] form the held-out set.
    pub fn generate(&self, seed: u64, id: u64) -> Problem {
        let mut rng = StreamKey::new(seed, Domain::ProblemGen, 0, id).rng(0);
        let kind = match self {
            EnvConfig::GaussianWalk {
                distance,
                distance_jitter,
                delta,
                sigma_step,
                bin_width,
                drift_values,
                ..
            } => {
                let bin = bin_width.unwrap_or(*delta);
                // targets sit at bucket centres so the truth bucket is symmetric around mu_r
                let k: i64 = rng.gen_range(-20..=20);
                let mu_r = (k as f64 + 0.5) * bin;
                let jitter = if *distance_jitter > 0.0 {
                    rng.gen_range(-distance_jitter..=*distance_jitter)
                } else {
                    0.0
                };
                ProblemKind::GaussianWalk(WalkSpec {
                    mu0: mu_r - (distance + jitter),
                    mu_r,
                    delta: *delta,
                    sigma_step: *sigma_step,
                    bin_width: bin,
                    drift_values: drift_values.clone(),
                })
            }
            EnvConfig::ArithmeticChain {
                n_ops,
                modulus,
                p_corrupt,
            } => {
                let ops = (0..*n_ops)
                    .map(|_| {
                        let op = if rng.gen::<bool>() {
                            ChainOp::Add
                        } else {
                            ChainOp::Mul
                        };
                        (op, rng.gen_range(1..*modulus))
                    })
                    .collect();
                ProblemKind::ArithmeticChain(ChainSpec {
                    ops,
                    modulus: *modulus,
                    p_corrupt: *p_corrupt,
                })
            }
        };
        Problem { id, kind }
    }

    pub fn problem_set(&self, seed: u64, first_id: u64, count: usize) -> Vec<Problem> {
        (0..count as u64)
            .map(|i| self.generate(seed, first_id + i))
            .collect()
    }

    /// Per-step drift token that keeps the walk on course for the target
    /// distance (greedy). Arithmetic chains have a single drift token.
    pub fn target_drift_schedule(&self, steps: usize) -> Vec<usize> {
        match self {
            EnvConfig::GaussianWalk {
                distance,
                drift_values,
                ..
            } => {
                let mut covered = 0.0;
                (0..steps)
                    .map(|_| {
                        let remaining = distance - covered;
                        let best = drift_values
                            .iter()
                            .enumerate()
                            .min_by(|(_, a), (_, b)| {
                                (remaining - *a).abs().total_cmp(&(remaining - *b).abs())
                            })
                            .map(|(i, _)| i)
                            .unwrap_or(0);
                        covered += drift_values[best];
                        best
                    })
                    .collect()
            }
            EnvConfig::ArithmeticChain { .. } => vec![0; steps],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walk(mu0: f64, mu_r: f64, delta: f64, sigma: f64) -> Problem {
        Problem {
            id: 0,
            kind: ProblemKind::GaussianWalk(WalkSpec {
                mu0,
                mu_r,
                delta,
                sigma_step: sigma,
                bin_width: delta,
                drift_values: vec![0.0, 1.0, 2.0],
            }),
        }
    }

    fn walk_traj(drifts: &[u32], increments: Vec<f64>) -> Trajectory {
        let mut tokens: Vec<Token> = drifts.iter().map(|&d| Token::Continue(d)).collect();
        tokens.push(Token::Stop);
        tokens.push(Token::Answer(0));
        Trajectory {
            sample_index: 0,
            length: drifts.len(),
            rollout_logprobs: vec![0.0; tokens.len()],
            tokens,
            truncated: false,
            trace: EnvTrace::Walk { increments },
        }
    }

    #[test]
    fn noiseless_exact_hit_is_correct() {
        let p = walk(0.0, 10.0, 2.0, 0.0);
        let t = walk_traj(&[2, 2, 2, 2, 1, 1], vec![0.0; 6]);
        let v = verify(&t, &p).unwrap();
        assert!(v.correct);
        assert_eq!(v.answer_bucket, Some(5));
        assert_eq!(v.score, 1.0);
    }

    #[test]
    fn zero_length_far_from_target_is_wrong() {
        let p = walk(0.0, 10.0, 2.0, 1.0);
        let v = verify(&walk_traj(&[], vec![]), &p).unwrap();
        assert!(!v.correct);
    }

    #[test]
    fn recorded_noise_enters_the_endpoint() {
        let p = walk(0.0, 3.0, 0.5, 1.0);
        // 1 + 1 + 0.4 = 2.4 misses the band, 1 + 1 + 1.2 hits
        assert!(
            !verify(&walk_traj(&[1, 1], vec![0.2, 0.2]), &p)
                .unwrap()
                .correct
        );
        assert!(
            verify(&walk_traj(&[1, 1], vec![0.6, 0.6]), &p)
                .unwrap()
                .correct
        );
    }

    #[test]
    fn chain_hand_evaluated() {
        let p = Problem {
            id: 1,
            kind: ProblemKind::ArithmeticChain(ChainSpec {
                ops: vec![(ChainOp::Add, 3), (ChainOp::Mul, 2)],
                modulus: 10,
                p_corrupt: 0.5,
            }),
        };
        let t = Trajectory {
            sample_index: 0,
            tokens: vec![
                Token::Continue(0),
                Token::Continue(0),
                Token::Stop,
                Token::Answer(0),
            ],
            length: 2,
            truncated: false,
            rollout_logprobs: vec![0.0; 4],
            trace: EnvTrace::Chain {
                corruptions: vec![0, 0],
            },
        };
        let v = verify(&t, &p).unwrap();
        assert_eq!(v.answer_bucket, Some(6));
        assert!(v.correct);
        assert_eq!(p.truth_bucket(), 6);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let p = walk(0.0, 1.0, 1.0, 1.0);
        let mut t = walk_traj(&[], vec![]);
        t.trace = EnvTrace::Chain {
            corruptions: vec![],
        };
        assert!(matches!(
            verify(&t, &p),
            Err(LabError::EnvironmentMismatch(_))
        ));
        let chain = EnvConfig::ArithmeticChain {
            n_ops: 3,
            modulus: 7,
            p_corrupt: 0.0,
        }
        .generate(1, 0);
        assert!(oracle_accuracy(&chain, 1.0, 0.0, 3).is_err());
    }

    #[test]
    fn oracle_limits() {
        // point mass on the target
        let p = walk(0.0, 10.0, 2.0, 0.0);
        assert_eq!(oracle_accuracy(&p, 1.0, 0.0, 10).unwrap(), 1.0);
        let q = walk(0.0, 10.0, 2.0, 1e-9);
        assert!((oracle_accuracy(&q, 1.0, 0.0, 10).unwrap() - 1.0).abs() < 1e-12);
        // zero length, far start
        assert_eq!(
            oracle_accuracy(&walk(0.0, 10.0, 2.0, 1.0), 1.0, 0.0, 0).unwrap(),
            0.0
        );
    }

    #[test]
    fn oracle_interior_maximum() {
        let p = walk(0.0, 10.0, 2.0, 1.0);
        let at10 = oracle_accuracy(&p, 1.0, 0.0, 10).unwrap();
        // Phi(2/sqrt 10) - Phi(-2/sqrt 10)
        assert!((at10 - 0.472_910_743_134_461_9).abs() < 1e-9);
        assert!(oracle_accuracy(&p, 1.0, 0.0, 40).unwrap() < 1e-4);
    }

    #[test]
    fn degenerate_dispersion() {
        let p = walk(0.0, 11.0, 2.0, 0.0);
        let d = oracle_dispersion(&p, 1.0, 0.0, 11, 100, 3).unwrap();
        assert_eq!(d.answer_entropy, 0.0);
        assert_eq!(d.mode_share, 1.0);
        assert_eq!(d.mode_accuracy, 1.0);
    }

    #[test]
    fn greedy_schedule_reaches_distance() {
        let env = EnvConfig::default();
        let s = env.target_drift_schedule(14);
        assert_eq!(&s[..10], &[1; 10]);
        assert_eq!(&s[10..], &[0; 4]);
    }

    #[test]
    fn held_out_problems_differ() {
        let env = EnvConfig::default();
        let a = env.problem_set(5, 0, 4);
        let b = env.problem_set(5, EVAL_ID_OFFSET, 4);
        assert_eq!(a, env.problem_set(5, 0, 4));
        assert!(a.iter().zip(&b).any(|(x, y)| x.kind != y.kind));
        for p in a {
            let w = p.walk().unwrap();
            assert!((w.mu_r - w.mu0 - 10.0).abs() < 1e-12);
        }
    }
}
