//! Study commands and queries over the event-sourced state.
//!
//! Every command validates against current state, appends its events to the
//! log, then applies them. One lock serializes all commands.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use aeba_core::analytics::{cohort_filter, fpfn_curves, FpFnCurve};
use aeba_core::challenge::{generate_session, ChallengeError, ScreenView, SessionKind, SessionRequest};
use aeba_core::enrollment::{partition_portfolio, EnrollmentError, IneligibilityReason, RatingRecord};
use aeba_core::simulation::derive_seed;
use aeba_core::image_bank::{parse_manifest, BankError, Category, CurationReport, ImageRecord, ImageStatus};
use aeba_core::verification::{Decision, VerificationError};
use aeba_core::{ImageId, SessionId, UserId};
use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Offset, Utc};
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Clock;
use crate::config::ServiceConfig;
use crate::events::{Batch, Event};
use crate::state::{ApplyError, LeaderboardEntry, SessionRecord, State};
use crate::store::{EventLog, Snapshot, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("admin access denied")]
    Forbidden,
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("consent is required before any data is collected")]
    ConsentRequired,
    #[error("email address is not valid")]
    InvalidEmail,
    #[error("nickname {0:?} is taken")]
    DuplicateNickname(String),
    #[error("rating revision is disabled")]
    RevisionDisabled,
    #[error("rate at least {required} images first ({rated} so far)")]
    MandatoryIncomplete { rated: usize, required: usize },
    #[error("one game session per day; try again in {retry_after_secs} s")]
    DailyLimit { retry_after_secs: u64 },
    #[error("portfolio is not eligible")]
    Ineligible(Vec<IneligibilityReason>),
    #[error("no completed sessions by other players to replay")]
    EmptyPool,
    #[error("session is not complete")]
    SessionIncomplete,
    #[error(transparent)]
    Enrollment(#[from] EnrollmentError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Challenge(ChallengeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Apply(#[from] ApplyError),
}

impl From<ChallengeError> for ServiceError {
    fn from(e: ChallengeError) -> Self {
        match e {
            ChallengeError::Ineligible(reasons) => ServiceError::Ineligible(reasons),
            other => ServiceError::Challenge(other),
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

pub fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn valid_email(email: &str) -> bool {
    let Some((local, domain)) = email.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.contains('@')
        && domain.contains('.')
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && !email.chars().any(char::is_whitespace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub user_id: UserId,
    pub nickname: String,
    pub token: String,
    pub next: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: ImageId,
    pub uri: String,
    pub category: Category,
}

impl From<&ImageRecord> for ImageRef {
    fn from(r: &ImageRecord) -> Self {
        Self {
            image_id: r.image_id.clone(),
            uri: r.uri.clone(),
            category: r.category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub images: Vec<ImageRef>,
    /// Set when some category has no active image.
    pub degraded: bool,
    pub missing_categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingView {
    pub image_id: ImageId,
    pub value: u8,
    pub revisions: u32,
}

impl From<&RatingRecord> for RatingView {
    fn from(r: &RatingRecord) -> Self {
        Self {
            image_id: r.image_id.clone(),
            value: r.value,
            revisions: r.revisions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub rated_count: usize,
    pub required: usize,
    pub mandatory_done: bool,
    /// Message shown when a milestone is reached, e.g. "You have rated 24/72 photos".
    pub interstitial: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStarted {
    pub session_id: SessionId,
    pub kind: SessionKind,
    pub screens: usize,
    pub images_per_screen: usize,
    pub selections_per_screen: usize,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub total: u32,
    pub decision: Decision,
    /// Points from completed sessions of this kind today.
    pub points_today: u32,
    pub overall_score: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub screen_no: usize,
    pub screen_score: u32,
    pub screens_remaining: usize,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_id: SessionId,
    pub kind: SessionKind,
    pub per_screen_scores: Vec<u32>,
    pub total: u32,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub kind: SessionKind,
    pub entries: Vec<LeaderboardEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Reminders {
    pub date: NaiveDate,
    pub nicknames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub ingested: Vec<ImageId>,
    pub active_count: usize,
}

struct Inner {
    state: State,
    log: Box<dyn EventLog>,
    rng: ChaCha8Rng,
    seq: u64,
    since_snapshot: u64,
}

pub struct Service {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    offset: FixedOffset,
    inner: Mutex<Inner>,
}

impl Service {
    /// Rebuilds state from `log` and starts serving from it.
    pub fn open(config: ServiceConfig, mut log: Box<dyn EventLog>, clock: Arc<dyn Clock>) -> Result<Self> {
        let recovered = log.recover()?;
        let (mut state, mut seq) = match recovered.snapshot {
            Some(s) => (s.state, s.seq),
            None => (State::default(), 0),
        };
        for batch in &recovered.batches {
            for event in &batch.events {
                state.apply(event)?;
            }
            seq = batch.seq;
        }
        let offset = match config.utc_offset_minutes {
            Some(m) => FixedOffset::east_opt(m * 60).expect("offset validated"),
            None => chrono::Local::now().offset().fix(),
        };
        // a restarted service must not replay the random stream it already used
        let base = config.rng_seed.unwrap_or_else(|| rand::rng().random());
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(base, seq));
        Ok(Self {
            config,
            clock,
            offset,
            inner: Mutex::new(Inner {
                state,
                log,
                rng,
                seq,
                since_snapshot: recovered.batches.len() as u64,
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// The server's calendar day at `t`.
    pub fn local_date(&self, t: DateTime<Utc>) -> NaiveDate {
        t.with_timezone(&self.offset).date_naive()
    }

    fn seconds_to_next_day(&self, t: DateTime<Utc>) -> u64 {
        let next = self.local_date(t).succ_opt().expect("date in range");
        let midnight = next
            .and_hms_opt(0, 0, 0)
            .expect("valid time")
            .and_local_timezone(self.offset)
            .single()
            .expect("fixed offsets are unambiguous");
        let secs = (midnight.with_timezone(&Utc) - t).num_milliseconds();
        ((secs + 999) / 1000).max(1) as u64
    }

    /// Read-only access to the current state.
    pub fn with_state<T>(&self, f: impl FnOnce(&State) -> T) -> T {
        f(&self.inner.lock().state)
    }

    fn commit(&self, inner: &mut Inner, events: Vec<Event>) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let batch = Batch {
            seq: inner.seq + 1,
            events,
        };
        inner.log.append(&batch)?;
        inner.seq = batch.seq;
        for event in &batch.events {
            inner.state.apply(event)?;
        }
        inner.since_snapshot += 1;
        if self.config.snapshot_every > 0 && inner.since_snapshot >= self.config.snapshot_every {
            let snap = Snapshot {
                seq: inner.seq,
                state: inner.state.clone(),
            };
            match inner.log.save_snapshot(&snap) {
                Ok(()) => inner.since_snapshot = 0,
                Err(e) => tracing::warn!("snapshot failed: {e}"),
            }
        }
        Ok(())
    }

    pub fn authenticate(&self, token: &str) -> Result<UserId> {
        self.inner
            .lock()
            .state
            .tokens
            .get(&hash_token(token))
            .cloned()
            .ok_or(ServiceError::Unauthorized)
    }

    pub fn check_admin(&self, token: &str) -> Result<()> {
        match &self.config.admin_token {
            Some(expected) if hash_token(expected) == hash_token(token) => Ok(()),
            _ => Err(ServiceError::Forbidden),
        }
    }

    pub fn register(&self, email: &str, nickname: &str, consent: bool) -> Result<Registration> {
        if !consent {
            return Err(ServiceError::ConsentRequired);
        }
        let email = email.trim();
        if !valid_email(email) {
            return Err(ServiceError::InvalidEmail);
        }
        let nickname = nickname.trim();
        if nickname.is_empty() {
            return Err(ServiceError::BadRequest("nickname must not be empty".into()));
        }
        let token = hex::encode(rand::rng().random::<[u8; 32]>());
        let mut inner = self.inner.lock();
        if inner.state.nicknames.contains_key(nickname) {
            return Err(ServiceError::DuplicateNickname(nickname.to_owned()));
        }
        let user_id = UserId::new(format!("user-{:06}", inner.state.users.len() + 1));
        let event = Event::UserRegistered {
            user_id: user_id.clone(),
            email: email.to_owned(),
            nickname: nickname.to_owned(),
            token_hash: hash_token(&token),
            at: self.now(),
        };
        self.commit(&mut inner, vec![event])?;
        Ok(Registration {
            user_id,
            nickname: nickname.to_owned(),
            token,
            next: "preview".into(),
        })
    }

    /// Thumbnails spanning every category, drawn fresh on each call. These are
    /// not served for rating.
    pub fn preview(&self) -> Preview {
        let active = self.inner.lock().state.bank.active_snapshot();
        let mut rng = rand::rng();
        let mut groups: BTreeMap<Category, Vec<&ImageRecord>> = BTreeMap::new();
        for img in active.iter() {
            groups.entry(img.category).or_default().push(img);
        }
        for g in groups.values_mut() {
            g.shuffle(&mut rng);
        }
        let missing: Vec<Category> = Category::ALL.iter().copied().filter(|c| !groups.contains_key(c)).collect();
        // round-robin over categories so each one is covered before any repeats
        let mut images = Vec::new();
        let mut depth = 0;
        while images.len() < self.config.preview_size {
            let layer: Vec<&ImageRecord> = groups.values().filter_map(|g| g.get(depth).copied()).collect();
            if layer.is_empty() {
                break;
            }
            for img in layer {
                if images.len() < self.config.preview_size {
                    images.push(ImageRef::from(img));
                }
            }
            depth += 1;
        }
        images.shuffle(&mut rng);
        Preview {
            images,
            degraded: !missing.is_empty(),
            missing_categories: missing,
        }
    }

    pub fn next_ratings(&self, user: &UserId, n: usize) -> Result<Vec<ImageRef>> {
        if n == 0 || n > self.config.max_rating_batch {
            return Err(ServiceError::BadRequest(format!(
                "n must lie in 1..={}",
                self.config.max_rating_batch
            )));
        }
        let mut inner = self.inner.lock();
        let inner = &mut *inner;
        let active = inner.state.bank.active_snapshot();
        let enrollment = inner.state.enrollments.get(user).ok_or(ServiceError::Unauthorized)?;
        let batch = enrollment.draw_rating_batch(&active, n, &mut inner.rng);
        let event = Event::RatingsServed {
            user_id: user.clone(),
            image_ids: batch.iter().map(|r| r.image_id.clone()).collect(),
        };
        if !batch.is_empty() {
            self.commit(inner, vec![event])?;
        }
        Ok(batch.iter().map(ImageRef::from).collect())
    }

    pub fn record_rating(&self, user: &UserId, image_id: &ImageId, value: i64) -> Result<RatingView> {
        let mut inner = self.inner.lock();
        let enrollment = inner.state.enrollments.get(user).ok_or(ServiceError::Unauthorized)?;
        let value = enrollment.check_record(image_id, value)?;
        let event = Event::RatingRecorded {
            user_id: user.clone(),
            image_id: image_id.clone(),
            value,
            at: self.now(),
        };
        self.commit(&mut inner, vec![event])?;
        Ok(RatingView::from(&inner.state.enrollments[user].portfolio.ratings[image_id]))
    }

    pub fn revise_rating(&self, user: &UserId, image_id: &ImageId, value: i64) -> Result<RatingView> {
        if !self.config.allow_revision {
            return Err(ServiceError::RevisionDisabled);
        }
        let now = self.now();
        let mut inner = self.inner.lock();
        let in_progress = inner.state.has_open_own_session(user, now);
        let enrollment = inner.state.enrollments.get(user).ok_or(ServiceError::Unauthorized)?;
        let value = enrollment.check_revise(image_id, value, in_progress)?;
        let event = Event::RatingRevised {
            user_id: user.clone(),
            image_id: image_id.clone(),
            value,
            at: now,
        };
        self.commit(&mut inner, vec![event])?;
        Ok(RatingView::from(&inner.state.enrollments[user].portfolio.ratings[image_id]))
    }

    pub fn ratings(&self, user: &UserId) -> Result<Vec<RatingView>> {
        let inner = self.inner.lock();
        let enrollment = inner.state.enrollments.get(user).ok_or(ServiceError::Unauthorized)?;
        Ok(enrollment.portfolio.ratings.values().map(RatingView::from).collect())
    }

    pub fn progress(&self, user: &UserId) -> Result<Progress> {
        let inner = self.inner.lock();
        let rated = inner
            .state
            .enrollments
            .get(user)
            .ok_or(ServiceError::Unauthorized)?
            .portfolio
            .r();
        let required = self.config.enrollment.r_min;
        let milestones = [required / 3, 2 * required / 3];
        let interstitial =
            (rated > 0 && milestones.contains(&rated)).then(|| format!("You have rated {rated}/{required} photos"));
        Ok(Progress {
            rated_count: rated,
            required,
            mandatory_done: rated >= required,
            interstitial,
        })
    }

    pub fn start_session(&self, user: &UserId, kind: SessionKind) -> Result<SessionStarted> {
        let now = self.now();
        let today = self.local_date(now);
        let ttl = Duration::minutes(self.config.session_ttl_minutes);
        let mut inner = self.inner.lock();
        let inner = &mut *inner;
        let state = &inner.state;
        let enrollment = state.enrollments.get(user).ok_or(ServiceError::Unauthorized)?;
        let rated = enrollment.portfolio.r();
        if rated < self.config.enrollment.r_min {
            return Err(ServiceError::MandatoryIncomplete {
                rated,
                required: self.config.enrollment.r_min,
            });
        }
        if kind == SessionKind::Game && state.games_created_on(user, today) >= 1 {
            return Err(ServiceError::DailyLimit {
                retry_after_secs: self.seconds_to_next_day(now),
            });
        }
        let session_id = loop {
            let id = SessionId::new(format!("sess-{:016x}", inner.rng.random::<u64>()));
            if !state.sessions.contains_key(&id) {
                break id;
            }
        };
        let session = match kind {
            SessionKind::Adversarial => {
                let pool = state.foreign_completed_games(user);
                if pool.is_empty() {
                    return Err(ServiceError::EmptyPool);
                }
                let victim = pool[inner.rng.random_range(0..pool.len())];
                victim.spec.replay_for(session_id, user.clone(), now, ttl)
            }
            SessionKind::Game | SessionKind::Auth => {
                let partition = partition_portfolio(&enrollment.portfolio, &self.config.enrollment)?;
                let cooldown = state.recent_keys(user, self.config.cooldown_sessions);
                let mut request = SessionRequest::new(session_id, inner.rng.random(), now, &cooldown);
                request.kind = kind;
                request.ttl = ttl;
                generate_session(&partition, &self.config.enrollment, &self.config.auth, &request)?
            }
        };
        let started = SessionStarted {
            session_id: session.session_id.clone(),
            kind,
            screens: session.screens.len(),
            images_per_screen: session.policy.d,
            selections_per_screen: session.policy.d_hr,
            expires_at: session.expires_at,
        };
        self.commit(
            inner,
            vec![Event::SessionCreated {
                session,
                local_date: today,
            }],
        )?;
        Ok(started)
    }

    fn own_session<'a>(state: &'a State, user: &UserId, session_id: &SessionId) -> Result<&'a SessionRecord> {
        state
            .sessions
            .get(session_id)
            .filter(|s| &s.spec.user_id == user)
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))
    }

    pub fn screen(&self, user: &UserId, session_id: &SessionId, n: usize) -> Result<ScreenView> {
        let now = self.now();
        let inner = self.inner.lock();
        let record = Self::own_session(&inner.state, user, session_id)?;
        Ok(record.spec.screen_for_display(n, now).map_err(VerificationError::from)?)
    }

    pub fn submit_selection(
        &self,
        user: &UserId,
        session_id: &SessionId,
        n: usize,
        chosen: Vec<ImageId>,
    ) -> Result<SelectionOutcome> {
        let now = self.now();
        let mut inner = self.inner.lock();
        let record = Self::own_session(&inner.state, user, session_id)?;
        let score = record.spec.check_submission(n, &chosen, now)?;
        let event = Event::ScreenScored {
            session_id: session_id.clone(),
            screen_no: n,
            chosen,
            score,
            at: now,
        };
        self.commit(&mut inner, vec![event])?;
        let record = &inner.state.sessions[session_id];
        let summary = if record.is_completed() {
            let result = record.spec.result()?;
            let (points_today, overall_score) = inner.state.points(user, record.spec.kind, record.local_date);
            Some(SessionSummary {
                total: result.total,
                decision: result.decision,
                points_today,
                overall_score,
            })
        } else {
            None
        };
        Ok(SelectionOutcome {
            screen_no: n,
            screen_score: score,
            screens_remaining: record.spec.screens_remaining(),
            summary,
        })
    }

    pub fn result(&self, user: &UserId, session_id: &SessionId) -> Result<SessionResult> {
        let inner = self.inner.lock();
        let record = Self::own_session(&inner.state, user, session_id)?;
        if !record.is_completed() {
            return Err(ServiceError::SessionIncomplete);
        }
        let result = record.spec.result()?;
        Ok(SessionResult {
            session_id: session_id.clone(),
            kind: record.spec.kind,
            per_screen_scores: result.per_screen_scores,
            total: result.total,
            decision: result.decision,
        })
    }

    pub fn leaderboard(&self, kind: SessionKind) -> Leaderboard {
        Leaderboard {
            kind,
            entries: self.inner.lock().state.leaderboard(kind),
        }
    }

    /// FP/FN curves from completed sessions under the configured policy:
    /// game sessions are legitimate attempts, adversarial replays are attacks.
    /// Cohorts rank players by mean game total; a cohort keeps its players'
    /// games and the replays of those games.
    pub fn fpfn_curves(&self) -> Result<Vec<FpFnCurve>> {
        let inner = self.inner.lock();
        let state = &inner.state;
        let policy = &self.config.auth;
        let done: Vec<&SessionRecord> = state
            .sessions
            .values()
            .filter(|s| s.is_completed() && &s.spec.policy == policy)
            .collect();
        let games: Vec<&SessionRecord> = done.iter().copied().filter(|s| s.spec.kind == SessionKind::Game).collect();
        let victim_of = |s: &SessionRecord| {
            s.spec
                .replay_of
                .as_ref()
                .and_then(|id| state.sessions.get(id))
                .map(|v| v.spec.user_id.clone())
        };
        let attacks: Vec<(Option<UserId>, u32)> = done
            .iter()
            .filter(|s| s.spec.kind == SessionKind::Adversarial)
            .map(|s| (victim_of(s), s.total()))
            .collect();

        let curve = |members: Option<&BTreeSet<UserId>>, name: &str| {
            let keep = |u: Option<&UserId>| members.is_none_or(|m| u.is_some_and(|u| m.contains(u)));
            let legit: Vec<u32> = games.iter().filter(|s| keep(Some(&s.spec.user_id))).map(|s| s.total()).collect();
            let attacker: Vec<u32> = attacks
                .iter()
                .filter(|(v, _)| keep(v.as_ref()))
                .map(|(_, t)| *t)
                .collect();
            fpfn_curves(&legit, &attacker, policy.max_total(), name)
        };

        let mut curves = vec![curve(None, "all").map_err(|e| ServiceError::BadRequest(e.to_string()))?];
        let mut sums: BTreeMap<UserId, (f64, usize)> = BTreeMap::new();
        for s in &games {
            let e = sums.entry(s.spec.user_id.clone()).or_default();
            e.0 += f64::from(s.total());
            e.1 += 1;
        }
        let means: Vec<(UserId, f64)> = sums.into_iter().map(|(u, (sum, n))| (u, sum / n as f64)).collect();
        if !means.is_empty() {
            for (fraction, name) in [(0.5, "top_half"), (1.0 / 3.0, "top_third")] {
                let members: BTreeSet<UserId> = cohort_filter(&means, fraction)
                    .map_err(|e| ServiceError::BadRequest(e.to_string()))?
                    .into_iter()
                    .collect();
                curves.push(curve(Some(&members), name).map_err(|e| ServiceError::BadRequest(e.to_string()))?);
            }
        }
        Ok(curves)
    }

    pub fn fpfn_csv(&self) -> Result<String> {
        let mut out = String::from("threshold,fp,fn,cohort\n");
        for c in self.fpfn_curves()? {
            c.write_csv_rows(&mut out);
        }
        Ok(out)
    }

    /// Adds manifest entries to the bank, all or none. With `activate`, the
    /// images skip pretest curation and go live immediately.
    pub fn ingest(&self, manifest: &str, activate: bool) -> Result<IngestReport> {
        let entries = parse_manifest(manifest)?;
        let mut inner = self.inner.lock();
        let mut bank = inner.state.bank.clone();
        let mut events = Vec::with_capacity(entries.len());
        let mut ingested = Vec::with_capacity(entries.len());
        for entry in &entries {
            let mut record = bank.ingest_image(entry)?.clone();
            if activate {
                record.status = ImageStatus::Active;
            }
            ingested.push(record.image_id.clone());
            events.push(Event::ImageIngested { record });
        }
        self.commit(&mut inner, events)?;
        Ok(IngestReport {
            ingested,
            active_count: inner.state.bank.active_count(),
        })
    }

    /// Players past the rating gate who have not created a game today.
    /// Email delivery is out of scope, so each reminder is only logged.
    pub fn send_reminders(&self) -> Reminders {
        let today = self.local_date(self.now());
        let inner = self.inner.lock();
        let state = &inner.state;
        let nicknames: Vec<String> = state
            .users
            .values()
            .filter(|u| state.enrollments.get(&u.user_id).is_some_and(|e| e.portfolio.r() >= self.config.enrollment.r_min))
            .filter(|u| state.games_created_on(&u.user_id, today) == 0)
            .map(|u| {
                tracing::info!(user = %u.user_id, email = %u.email, "reminder: no game played on {today}");
                u.nickname.clone()
            })
            .collect();
        Reminders { date: today, nicknames }
    }

    /// Reruns pretest filtering over every player's current ratings.
    pub fn curate(&self) -> Result<CurationReport> {
        let mut inner = self.inner.lock();
        let ratings = inner.state.ratings_by_image();
        let report = inner.state.bank.plan_curation(&ratings, &self.config.bank)?;
        let events = report
            .activated
            .iter()
            .map(|id| Event::ImageStatusChanged {
                image_id: id.clone(),
                status: ImageStatus::Active,
            })
            .chain(report.retired.iter().map(|(id, _)| Event::ImageStatusChanged {
                image_id: id.clone(),
                status: ImageStatus::Retired,
            }))
            .collect();
        self.commit(&mut inner, events)?;
        Ok(report)
    }
}
