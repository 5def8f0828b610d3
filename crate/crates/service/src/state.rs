//! In-memory state, rebuilt from the event log.

use std::collections::{BTreeMap, BTreeSet};

use aeba_core::challenge::{SessionKind, SessionSpec, SessionStatus};
use aeba_core::enrollment::UserEnrollment;
use aeba_core::image_bank::ImageBank;
use aeba_core::{ImageId, SessionId, UserId};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Event;

#[derive(Debug, Error, PartialEq)]
#[error("event does not apply to current state: {0}")]
pub struct ApplyError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: UserId,
    pub email: String,
    pub nickname: String,
    pub consent_at: DateTime<Utc>,
    /// Calendar day of the latest completed game session.
    pub last_game_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub spec: SessionSpec,
    pub local_date: NaiveDate,
    pub chosen: Vec<Vec<ImageId>>,
    pub completed_at: Option<DateTime<Utc>>,
}

impl SessionRecord {
    pub fn total(&self) -> u32 {
        self.spec.scores.iter().sum()
    }

    pub fn is_completed(&self) -> bool {
        self.spec.status == SessionStatus::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub nickname: String,
    pub total: u32,
    /// When the player reached this total.
    pub achieved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct State {
    pub users: BTreeMap<UserId, UserAccount>,
    /// Token hash to user.
    pub tokens: BTreeMap<String, UserId>,
    pub nicknames: BTreeMap<String, UserId>,
    pub enrollments: BTreeMap<UserId, UserEnrollment>,
    pub bank: ImageBank,
    pub sessions: BTreeMap<SessionId, SessionRecord>,
    /// Session ids per user in creation order.
    pub sessions_by_user: BTreeMap<UserId, Vec<SessionId>>,
}

impl State {
    /// Call after deserializing a snapshot.
    pub fn restore_indexes(&mut self) {
        self.bank.reindex();
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), ApplyError> {
        match event {
            Event::UserRegistered {
                user_id,
                email,
                nickname,
                token_hash,
                at,
            } => {
                if self.users.contains_key(user_id) || self.nicknames.contains_key(nickname) {
                    return Err(ApplyError(format!("user {user_id} or nickname exists")));
                }
                self.users.insert(
                    user_id.clone(),
                    UserAccount {
                        user_id: user_id.clone(),
                        email: email.clone(),
                        nickname: nickname.clone(),
                        consent_at: *at,
                        last_game_date: None,
                    },
                );
                self.tokens.insert(token_hash.clone(), user_id.clone());
                self.nicknames.insert(nickname.clone(), user_id.clone());
                self.enrollments.insert(user_id.clone(), UserEnrollment::new(user_id.clone()));
            }
            Event::ImageIngested { record } => {
                if self.bank.get(&record.image_id).is_some() {
                    return Err(ApplyError(format!("image {} exists", record.image_id)));
                }
                self.bank.insert(record.clone());
            }
            Event::ImageStatusChanged { image_id, status } => {
                self.bank
                    .set_status(image_id, *status)
                    .map_err(|e| ApplyError(e.to_string()))?;
            }
            Event::RatingsServed { user_id, image_ids } => {
                self.enrollment_mut(user_id)?.mark_served(image_ids);
            }
            Event::RatingRecorded {
                user_id,
                image_id,
                value,
                at,
            } => {
                self.enrollment_mut(user_id)?
                    .record_rating(image_id, i64::from(*value), *at)
                    .map_err(|e| ApplyError(e.to_string()))?;
            }
            Event::RatingRevised {
                user_id,
                image_id,
                value,
                at,
            } => {
                self.enrollment_mut(user_id)?
                    .revise_rating(image_id, i64::from(*value), *at, false)
                    .map_err(|e| ApplyError(e.to_string()))?;
            }
            Event::SessionCreated { session, local_date } => {
                if self.sessions.contains_key(&session.session_id) {
                    return Err(ApplyError(format!("session {} exists", session.session_id)));
                }
                self.sessions_by_user
                    .entry(session.user_id.clone())
                    .or_default()
                    .push(session.session_id.clone());
                self.sessions.insert(
                    session.session_id.clone(),
                    SessionRecord {
                        spec: session.clone(),
                        local_date: *local_date,
                        chosen: Vec::new(),
                        completed_at: None,
                    },
                );
            }
            Event::ScreenScored {
                session_id,
                screen_no,
                chosen,
                score,
                at,
            } => {
                let record = self
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| ApplyError(format!("no session {session_id}")))?;
                if *screen_no != record.spec.next_screen_no() || *screen_no > record.spec.screens.len() {
                    return Err(ApplyError(format!("screen {screen_no} out of order in {session_id}")));
                }
                record.spec.record_score(*score);
                record.chosen.push(chosen.clone());
                if record.is_completed() {
                    record.completed_at = Some(*at);
                    if record.spec.kind == SessionKind::Game {
                        let date = record.local_date;
                        let user = record.spec.user_id.clone();
                        if let Some(account) = self.users.get_mut(&user) {
                            account.last_game_date = Some(date);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn enrollment_mut(&mut self, user_id: &UserId) -> Result<&mut UserEnrollment, ApplyError> {
        self.enrollments
            .get_mut(user_id)
            .ok_or_else(|| ApplyError(format!("no user {user_id}")))
    }

    pub fn user_sessions<'a>(&'a self, user_id: &UserId) -> impl Iterator<Item = &'a SessionRecord> + 'a {
        self.sessions_by_user
            .get(user_id)
            .into_iter()
            .flatten()
            .filter_map(|id| self.sessions.get(id))
    }

    /// Whether the user has an open session over their own portfolio.
    pub fn has_open_own_session(&self, user_id: &UserId, now: DateTime<Utc>) -> bool {
        self.user_sessions(user_id)
            .any(|s| s.spec.kind != SessionKind::Adversarial && s.spec.is_open_at(now))
    }

    pub fn games_created_on(&self, user_id: &UserId, date: NaiveDate) -> usize {
        self.user_sessions(user_id)
            .filter(|s| s.spec.kind == SessionKind::Game && s.local_date == date)
            .count()
    }

    /// Keys used in the user's latest `n` sessions over their own portfolio.
    pub fn recent_keys(&self, user_id: &UserId, n: usize) -> BTreeSet<ImageId> {
        let own: Vec<&SessionRecord> = self
            .user_sessions(user_id)
            .filter(|s| s.spec.kind != SessionKind::Adversarial)
            .collect();
        own.iter()
            .rev()
            .take(n)
            .flat_map(|s| s.spec.all_keys().cloned())
            .collect()
    }

    /// Completed game sessions of everyone except `user_id`, in id order.
    pub fn foreign_completed_games(&self, user_id: &UserId) -> Vec<&SessionRecord> {
        self.sessions
            .values()
            .filter(|s| s.spec.kind == SessionKind::Game && s.is_completed() && &s.spec.user_id != user_id)
            .collect()
    }

    /// `(points on date, all-time points)` from completed sessions of `kind`.
    pub fn points(&self, user_id: &UserId, kind: SessionKind, date: NaiveDate) -> (u32, u32) {
        let mut today = 0;
        let mut overall = 0;
        for s in self.user_sessions(user_id).filter(|s| s.spec.kind == kind && s.is_completed()) {
            overall += s.total();
            if s.local_date == date {
                today += s.total();
            }
        }
        (today, overall)
    }

    /// Cumulative totals by player, descending; ties go to whoever reached the
    /// total first.
    pub fn leaderboard(&self, kind: SessionKind) -> Vec<LeaderboardEntry> {
        let mut tallies: BTreeMap<&UserId, (u32, DateTime<Utc>)> = BTreeMap::new();
        let mut done: Vec<&SessionRecord> = self
            .sessions
            .values()
            .filter(|s| s.spec.kind == kind && s.is_completed())
            .collect();
        done.sort_by_key(|s| (s.completed_at, s.spec.session_id.clone()));
        for s in done {
            let at = s.completed_at.expect("completed sessions have a completion time");
            let entry = tallies.entry(&s.spec.user_id).or_insert((0, at));
            if s.total() > 0 {
                entry.0 += s.total();
                entry.1 = at;
            }
        }
        let mut rows: Vec<(&UserId, u32, DateTime<Utc>)> = tallies.into_iter().map(|(u, (t, at))| (u, t, at)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then_with(|| a.0.cmp(b.0)));
        rows.into_iter()
            .enumerate()
            .map(|(i, (user, total, at))| LeaderboardEntry {
                rank: i + 1,
                nickname: self.users.get(user).map_or_else(String::new, |u| u.nickname.clone()),
                total,
                achieved_at: at,
            })
            .collect()
    }

    /// Every current rating, grouped by image.
    pub fn ratings_by_image(&self) -> BTreeMap<ImageId, Vec<u8>> {
        let mut out: BTreeMap<ImageId, Vec<u8>> = BTreeMap::new();
        for e in self.enrollments.values() {
            for (id, v) in e.portfolio.values() {
                out.entry(id.clone()).or_default().push(v);
            }
        }
        out
    }
}
