//! Randomized multi-screen challenge sessions.
//!
//! Each screen shows `d` images: `d_hr` keys drawn from the user's key pool
//! and `d - d_hr` decoys from the decoy pool, in shuffled order. No image is
//! shown twice within a session. Everything is derived from an explicit
//! per-session seed, so the same portfolio and seed give the same session.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrollment::{
    eligibility_check, EnrollmentPolicy, IneligibilityReason, PortfolioPartition, RankedImage,
};
use crate::ids::{ImageId, SessionId, UserId};

/// Rejection-sampling cap per screen.
pub const MAX_SCREEN_ATTEMPTS: usize = 1000;
pub const DEFAULT_SESSION_TTL_MINUTES: i64 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ChallengeError {
    #[error("invalid auth policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("portfolio is not eligible: {0:?}")]
    Ineligible(Vec<IneligibilityReason>),
    #[error("no margin-feasible layout for screen {screen} after {attempts} attempts")]
    Infeasible { screen: usize, attempts: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("screen {requested} requested but screen {expected} is next")]
    OutOfOrder { requested: usize, expected: usize },
    #[error("session has no screen {0}")]
    NoSuchScreen(usize),
    #[error("session is {0:?}")]
    NotOpen(SessionStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "t")]
pub enum DecisionMode {
    /// Accept only a perfect session: every key on every screen, nothing else.
    Strict,
    /// Accept when the session total reaches `t` (inclusive).
    Threshold(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthPolicy {
    /// Images per screen.
    pub d: usize,
    /// Keys per screen.
    pub d_hr: usize,
    /// Screens per session.
    pub s: usize,
    pub margin: u8,
    pub mode: DecisionMode,
}

impl AuthPolicy {
    /// The study configuration: 4 screens of 8 images with 2 keys each.
    pub fn study() -> Self {
        Self {
            d: 8,
            d_hr: 2,
            s: 4,
            margin: 2,
            mode: DecisionMode::Strict,
        }
    }

    pub fn d_lr(&self) -> usize {
        self.d - self.d_hr
    }

    pub fn keys_per_session(&self) -> usize {
        self.d_hr * self.s
    }

    pub fn decoys_per_session(&self) -> usize {
        self.d_lr() * self.s
    }

    pub fn max_total(&self) -> u32 {
        (self.d_hr * self.s) as u32
    }

    /// Whether a complete session with this total is accepted.
    pub fn accepts(&self, total: u32) -> bool {
        match self.mode {
            DecisionMode::Strict => total == self.max_total(),
            DecisionMode::Threshold(t) => total >= t,
        }
    }

    /// `interactive` enforces the 3..=5 screen range meant for real logins;
    /// simulations may use any positive screen count.
    pub fn validate(&self, interactive: bool) -> Result<(), ChallengeError> {
        if self.d <= 2 {
            return Err(ChallengeError::InvalidPolicy("D must exceed 2"));
        }
        if self.d_hr < 1 || self.d_hr > self.d {
            return Err(ChallengeError::InvalidPolicy("D_HR must lie in 1..=D"));
        }
        if self.s == 0 {
            return Err(ChallengeError::InvalidPolicy("S must be positive"));
        }
        if interactive && !(3..=5).contains(&self.s) {
            return Err(ChallengeError::InvalidPolicy("S must lie in 3..=5 for interactive use"));
        }
        if let DecisionMode::Threshold(t) = self.mode {
            if t > self.max_total() {
                return Err(ChallengeError::InvalidPolicy("threshold exceeds the maximum total"));
            }
        }
        Ok(())
    }
}

impl Default for AuthPolicy {
    fn default() -> Self {
        Self::study()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Auth,
    Game,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Completed,
    Expired,
}

/// A generated screen. Server side only: the key set must never reach a client.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenSpec {
    pub screen_no: usize,
    pub displayed: Vec<ImageId>,
    pub key_set: BTreeSet<ImageId>,
}

impl fmt::Debug for ScreenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScreenSpec")
            .field("screen_no", &self.screen_no)
            .field("displayed", &self.displayed)
            .field("key_set", &format_args!("<{} redacted>", self.key_set.len()))
            .finish()
    }
}

/// Client-facing projection of a screen: display order only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenView {
    pub session_id: SessionId,
    pub screen_no: usize,
    pub image_ids: Vec<ImageId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session_id: SessionId,
    pub user_id: UserId,
    pub kind: SessionKind,
    pub policy: AuthPolicy,
    pub screens: Vec<ScreenSpec>,
    pub seed: u64,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    /// Scores of the screens submitted so far, in screen order.
    #[serde(default)]
    pub scores: Vec<u32>,
    /// For adversarial replays, the session whose screens are reused.
    #[serde(default)]
    pub replay_of: Option<SessionId>,
}

impl SessionSpec {
    pub fn next_screen_no(&self) -> usize {
        self.scores.len() + 1
    }

    pub fn screens_remaining(&self) -> usize {
        self.screens.len() - self.scores.len()
    }

    pub fn is_open_at(&self, now: DateTime<Utc>) -> bool {
        self.status == SessionStatus::Open && now < self.expires_at
    }

    /// Marks an open session past its deadline as expired. Returns whether it changed.
    pub fn expire_if_due(&mut self, now: DateTime<Utc>) -> bool {
        if self.status == SessionStatus::Open && now >= self.expires_at {
            self.status = SessionStatus::Expired;
            true
        } else {
            false
        }
    }

    pub(crate) fn check_open(&self, now: DateTime<Utc>) -> Result<(), SessionError> {
        match self.status {
            SessionStatus::Open if now >= self.expires_at => Err(SessionError::NotOpen(SessionStatus::Expired)),
            SessionStatus::Open => Ok(()),
            other => Err(SessionError::NotOpen(other)),
        }
    }

    pub(crate) fn check_next(&self, n: usize) -> Result<&ScreenSpec, SessionError> {
        if n == 0 || n > self.screens.len() {
            return Err(SessionError::NoSuchScreen(n));
        }
        let expected = self.next_screen_no();
        if n != expected {
            return Err(SessionError::OutOfOrder { requested: n, expected });
        }
        Ok(&self.screens[n - 1])
    }

    /// The client view of screen `n`. Screens are served strictly in order;
    /// the current screen may be fetched again until it is submitted.
    pub fn screen_for_display(&self, n: usize, now: DateTime<Utc>) -> Result<ScreenView, SessionError> {
        self.check_open(now)?;
        let screen = self.check_next(n)?;
        Ok(ScreenView {
            session_id: self.session_id.clone(),
            screen_no: screen.screen_no,
            image_ids: screen.displayed.clone(),
        })
    }

    /// Every image shown anywhere in the session.
    pub fn exposed_images(&self) -> impl Iterator<Item = &ImageId> {
        self.screens.iter().flat_map(|s| s.displayed.iter())
    }

    pub fn all_keys(&self) -> impl Iterator<Item = &ImageId> {
        self.screens.iter().flat_map(|s| s.key_set.iter())
    }

    /// A fresh open session for `guesser` reusing this session's screens.
    pub fn replay_for(
        &self,
        session_id: SessionId,
        guesser: UserId,
        now: DateTime<Utc>,
        ttl: Duration,
    ) -> SessionSpec {
        SessionSpec {
            session_id,
            user_id: guesser,
            kind: SessionKind::Adversarial,
            policy: self.policy.clone(),
            screens: self.screens.clone(),
            seed: self.seed,
            status: SessionStatus::Open,
            created_at: now,
            expires_at: now + ttl,
            scores: Vec::new(),
            replay_of: Some(self.session_id.clone()),
        }
    }
}

/// Per-session inputs to [`generate_session`].
#[derive(Debug, Clone)]
pub struct SessionRequest<'a> {
    pub session_id: SessionId,
    pub kind: SessionKind,
    pub seed: u64,
    pub now: DateTime<Utc>,
    pub ttl: Duration,
    /// Keys used in the user's recent sessions; avoided when the pool allows.
    pub cooldown: &'a BTreeSet<ImageId>,
}

impl<'a> SessionRequest<'a> {
    pub fn new(session_id: SessionId, seed: u64, now: DateTime<Utc>, cooldown: &'a BTreeSet<ImageId>) -> Self {
        Self {
            session_id,
            kind: SessionKind::Auth,
            seed,
            now,
            ttl: Duration::minutes(DEFAULT_SESSION_TTL_MINUTES),
            cooldown,
        }
    }
}

pub fn generate_session(
    partition: &PortfolioPartition,
    enrollment: &EnrollmentPolicy,
    policy: &AuthPolicy,
    request: &SessionRequest<'_>,
) -> Result<SessionSpec, ChallengeError> {
    policy.validate(false)?;
    let report = eligibility_check(partition, enrollment, policy);
    if !report.eligible {
        return Err(ChallengeError::Ineligible(report.reasons));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);

    let fresh: Vec<&RankedImage> = partition
        .key_pool
        .iter()
        .filter(|k| !request.cooldown.contains(&k.image_id))
        .collect();
    let mut keys: Vec<&RankedImage> = if fresh.len() >= policy.keys_per_session() {
        fresh
    } else {
        partition.key_pool.iter().collect()
    };
    let mut decoys: Vec<&RankedImage> = partition.decoy_pool.iter().collect();

    let mut screens = Vec::with_capacity(policy.s);
    for screen_no in 1..=policy.s {
        let (chosen_keys, chosen_decoys) = sample_screen(&keys, &decoys, policy, &mut rng)
            .ok_or(ChallengeError::Infeasible {
                screen: screen_no,
                attempts: MAX_SCREEN_ATTEMPTS,
            })?;
        let key_set: BTreeSet<ImageId> = chosen_keys.iter().cloned().collect();
        let mut displayed: Vec<ImageId> = chosen_keys.into_iter().chain(chosen_decoys).collect();
        displayed.shuffle(&mut rng);
        keys.retain(|k| !key_set.contains(&k.image_id));
        decoys.retain(|d| !displayed.contains(&d.image_id));
        screens.push(ScreenSpec {
            screen_no,
            displayed,
            key_set,
        });
    }

    Ok(SessionSpec {
        session_id: request.session_id.clone(),
        user_id: partition.user_id.clone(),
        kind: request.kind,
        policy: policy.clone(),
        screens,
        seed: request.seed,
        status: SessionStatus::Open,
        created_at: request.now,
        expires_at: request.now + request.ttl,
        scores: Vec::new(),
        replay_of: None,
    })
}

fn sample_screen(
    keys: &[&RankedImage],
    decoys: &[&RankedImage],
    policy: &AuthPolicy,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<ImageId>, Vec<ImageId>)> {
    if keys.len() < policy.d_hr || decoys.len() < policy.d_lr() {
        return None;
    }
    for _ in 0..MAX_SCREEN_ATTEMPTS {
        let k: Vec<&RankedImage> = keys.choose_multiple(rng, policy.d_hr).copied().collect();
        let d: Vec<&RankedImage> = decoys.choose_multiple(rng, policy.d_lr()).copied().collect();
        let key_min = k.iter().map(|r| r.value).min().expect("d_hr >= 1");
        let feasible = d
            .iter()
            .map(|r| r.value)
            .max()
            .is_none_or(|decoy_max| i16::from(key_min) - i16::from(decoy_max) >= i16::from(policy.margin));
        if feasible {
            return Some((
                k.into_iter().map(|r| r.image_id.clone()).collect(),
                d.into_iter().map(|r| r.image_id.clone()).collect(),
            ));
        }
    }
    None
}
