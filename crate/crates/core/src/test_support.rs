use crate::env::{EnvTrace, RewardMode, Verdict};
use crate::objectives::Group;
use crate::policy::{Token, Trajectory};

/// Group of answered trajectories with the given think lengths and
/// correctness; every token has rollout log-probability -0.5.
pub fn fixture_group(problem_id: u64, lengths: &[usize], correct: &[bool]) -> Group {
    let trajectories = lengths
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mut tokens = vec![Token::Continue(0); l];
            tokens.extend([Token::Stop, Token::Answer(0)]);
            Trajectory {
                sample_index: i,
                rollout_logprobs: vec![-0.5; tokens.len()],
                tokens,
                length: l,
                truncated: false,
                trace: EnvTrace::Walk {
                    increments: vec![0.0; l],
                },
            }
        })
        .collect();
    let verdicts = correct
        .iter()
        .map(|&c| Verdict {
            correct: c,
            answer_bucket: Some(i64::from(!c)),
            score: f64::from(u8::from(c)),
        })
        .collect();
    Group::new(problem_id, trajectories, verdicts, RewardMode::Binary)
}
