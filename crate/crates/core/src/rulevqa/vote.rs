use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::AnswerOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    pub yes_count: usize,
    pub no_count: usize,
    pub invalid_count: usize,
    /// Violation predicted.
    pub decision: bool,
    pub tie_broken: bool,
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum VoteError {
    #[error("no outcomes to vote on")]
    Empty,
    #[error("all {0} answers were invalid")]
    AllInvalid(usize),
}

/// Invalid answers sit out the tally; a yes/no tie predicts a violation.
pub fn majority_vote(outcomes: &[AnswerOutcome]) -> Result<VoteResult, VoteError> {
    if outcomes.is_empty() {
        return Err(VoteError::Empty);
    }
    let yes_count = outcomes.iter().filter(|o| **o == AnswerOutcome::Yes).count();
    let no_count = outcomes.iter().filter(|o| **o == AnswerOutcome::No).count();
    let invalid_count = outcomes.len() - yes_count - no_count;
    if yes_count + no_count == 0 {
        return Err(VoteError::AllInvalid(invalid_count));
    }
    let tie_broken = yes_count == no_count;
    Ok(VoteResult {
        yes_count,
        no_count,
        invalid_count,
        decision: yes_count > no_count || tie_broken,
        tie_broken,
    })
}
