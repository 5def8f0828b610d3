//! Scoring selections against hidden key sets.
//!
//! A screen scores the number of chosen images that are keys. Responses carry
//! that count only, never which choices were wrong.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::challenge::{AuthPolicy, DecisionMode, ScreenSpec, SessionError, SessionSpec, SessionStatus};
use crate::ids::{ImageId, SessionId};

#[derive(Debug, Error, PartialEq)]
pub enum VerificationError {
    #[error("expected {expected} distinct selections, got {got}")]
    WrongCardinality { expected: usize, got: usize },
    #[error("image {0} is not on this screen")]
    NotOnScreen(ImageId),
    #[error("screen {0} was already scored")]
    AlreadyScored(usize),
    #[error("{scored} of {expected} screens scored")]
    MissingScreens { scored: usize, expected: usize },
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub session_id: SessionId,
    pub screen_no: usize,
    pub chosen: Vec<ImageId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub per_screen_scores: Vec<u32>,
    pub total: u32,
    pub decision: Decision,
    pub mode: DecisionMode,
}

/// Wire form of a per-screen score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFeedback {
    pub screen_no: usize,
    pub screen_score: u32,
    pub screens_remaining: usize,
}

/// Wire form of a finished session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalResult {
    pub total: u32,
    pub decision: Decision,
}

/// `|chosen ∩ key_set|` after checking the selection is well formed.
pub fn score_screen(screen: &ScreenSpec, chosen: &[ImageId], d_hr: usize) -> Result<u32, VerificationError> {
    let distinct: BTreeSet<&ImageId> = chosen.iter().collect();
    if distinct.len() != d_hr || chosen.len() != d_hr {
        return Err(VerificationError::WrongCardinality {
            expected: d_hr,
            got: distinct.len(),
        });
    }
    if let Some(stray) = distinct.iter().find(|id| !screen.displayed.contains(id)) {
        return Err(VerificationError::NotOnScreen((*stray).clone()));
    }
    Ok(distinct.iter().filter(|id| screen.key_set.contains(**id)).count() as u32)
}

pub fn decide_session(scores: &[u32], policy: &AuthPolicy) -> Result<VerificationResult, VerificationError> {
    if scores.len() < policy.s {
        return Err(VerificationError::MissingScreens {
            scored: scores.len(),
            expected: policy.s,
        });
    }
    let total: u32 = scores.iter().sum();
    let accept = policy.accepts(total);
    Ok(VerificationResult {
        per_screen_scores: scores.to_vec(),
        total,
        decision: if accept { Decision::Accept } else { Decision::Reject },
        mode: policy.mode,
    })
}

impl SessionSpec {
    /// Validates a submission for screen `n` and returns its score without
    /// changing the session.
    pub fn check_submission(
        &self,
        n: usize,
        chosen: &[ImageId],
        now: DateTime<Utc>,
    ) -> Result<u32, VerificationError> {
        self.check_open(now)?;
        if n >= 1 && n < self.next_screen_no() {
            return Err(VerificationError::AlreadyScored(n));
        }
        let screen = self.check_next(n)?;
        score_screen(screen, chosen, self.policy.d_hr)
    }

    /// Records a score for the next screen; the session completes after its last screen.
    pub fn record_score(&mut self, score: u32) -> ScoreFeedback {
        self.scores.push(score);
        if self.scores.len() == self.screens.len() {
            self.status = SessionStatus::Completed;
        }
        ScoreFeedback {
            screen_no: self.scores.len(),
            screen_score: score,
            screens_remaining: self.screens_remaining(),
        }
    }

    pub fn submit_selection(
        &mut self,
        n: usize,
        chosen: &[ImageId],
        now: DateTime<Utc>,
    ) -> Result<ScoreFeedback, VerificationError> {
        let score = self.check_submission(n, chosen, now)?;
        Ok(self.record_score(score))
    }

    /// The decision, once every screen is scored.
    pub fn result(&self) -> Result<VerificationResult, VerificationError> {
        decide_session(&self.scores, &self.policy)
    }
}
