//! Enrollment: a user's liking ratings are the secret.
//!
//! Ratings are recorded once per served image and may later be revised
//! (never while one of the user's own challenge sessions is open). The
//! portfolio is split into a key pool (top `p_key`), a decoy pool
//! (bottom `p_decoy`) and a buffer band between them that never appears on a
//! challenge screen.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::challenge::AuthPolicy;
use crate::ids::{ImageId, UserId};
use crate::image_bank::ImageRecord;
use crate::{fraction_ceil, RATING_MAX, RATING_MIN};

#[derive(Debug, Error, PartialEq)]
pub enum EnrollmentError {
    #[error("rating {0} is outside 1..=10")]
    RatingOutOfRange(i64),
    #[error("image {0} was never served to this user")]
    NotServed(ImageId),
    #[error("image {0} is already rated; revise the rating instead")]
    AlreadyRated(ImageId),
    #[error("image {0} has no rating to revise")]
    NotRated(ImageId),
    #[error("ratings cannot be revised while a challenge session is in progress")]
    SessionInProgress,
    #[error("portfolio is empty")]
    EmptyPortfolio,
    #[error("invalid enrollment policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("malformed portfolio document: {0}")]
    Document(String),
}

pub fn validate_rating(value: i64) -> Result<u8, EnrollmentError> {
    if (i64::from(RATING_MIN)..=i64::from(RATING_MAX)).contains(&value) {
        Ok(value as u8)
    } else {
        Err(EnrollmentError::RatingOutOfRange(value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: UserId,
    pub image_id: ImageId,
    pub value: u8,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub revisions: u32,
    /// Previous values, oldest first.
    #[serde(default)]
    pub history: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub user_id: UserId,
    pub ratings: BTreeMap<ImageId, RatingRecord>,
}

/// Wire form for portfolio export and import.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioDocument {
    pub user_id: UserId,
    pub ratings: Vec<PortfolioEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioEntry {
    pub image_id: ImageId,
    pub value: u8,
    #[serde(default)]
    pub revisions: u32,
}

impl Portfolio {
    pub fn new(user_id: UserId) -> Self {
        Self {
            user_id,
            ratings: BTreeMap::new(),
        }
    }

    /// Builds a portfolio directly from final values (fixtures, simulation).
    pub fn from_values(
        user_id: UserId,
        values: impl IntoIterator<Item = (ImageId, u8)>,
        at: DateTime<Utc>,
    ) -> Result<Self, EnrollmentError> {
        let mut portfolio = Self::new(user_id);
        for (image_id, value) in values {
            let value = validate_rating(i64::from(value))?;
            if portfolio.ratings.contains_key(&image_id) {
                return Err(EnrollmentError::AlreadyRated(image_id));
            }
            portfolio.ratings.insert(
                image_id.clone(),
                RatingRecord {
                    user_id: portfolio.user_id.clone(),
                    image_id,
                    value,
                    created_at: at,
                    updated_at: at,
                    revisions: 0,
                    history: Vec::new(),
                },
            );
        }
        Ok(portfolio)
    }

    /// Number of distinct rated images.
    pub fn r(&self) -> usize {
        self.ratings.len()
    }

    pub fn value_of(&self, image_id: &ImageId) -> Option<u8> {
        self.ratings.get(image_id).map(|r| r.value)
    }

    pub fn values(&self) -> impl Iterator<Item = (&ImageId, u8)> {
        self.ratings.iter().map(|(id, r)| (id, r.value))
    }

    pub fn to_document(&self) -> PortfolioDocument {
        PortfolioDocument {
            user_id: self.user_id.clone(),
            ratings: self
                .ratings
                .values()
                .map(|r| PortfolioEntry {
                    image_id: r.image_id.clone(),
                    value: r.value,
                    revisions: r.revisions,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &PortfolioDocument, at: DateTime<Utc>) -> Result<Self, EnrollmentError> {
        let mut portfolio = Self::from_values(
            doc.user_id.clone(),
            doc.ratings.iter().map(|e| (e.image_id.clone(), e.value)),
            at,
        )?;
        for entry in &doc.ratings {
            if let Some(record) = portfolio.ratings.get_mut(&entry.image_id) {
                record.revisions = entry.revisions;
            }
        }
        Ok(portfolio)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("portfolio document serializes")
    }

    pub fn from_json(text: &str, at: DateTime<Utc>) -> Result<Self, EnrollmentError> {
        let doc: PortfolioDocument =
            serde_json::from_str(text).map_err(|e| EnrollmentError::Document(e.to_string()))?;
        Self::from_document(&doc, at)
    }
}

/// A user's enrollment state: their portfolio plus every image served for rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEnrollment {
    pub portfolio: Portfolio,
    pub served: BTreeSet<ImageId>,
}

impl UserEnrollment {
    pub fn new(user_id: UserId) -> Self {
        Self {
            portfolio: Portfolio::new(user_id),
            served: BTreeSet::new(),
        }
    }

    /// Draws up to `n` active images this user has never been served,
    /// uniformly without replacement. Does not mark them served.
    pub fn draw_rating_batch<R: Rng + ?Sized>(
        &self,
        active: &[ImageRecord],
        n: usize,
        rng: &mut R,
    ) -> Vec<ImageRecord> {
        let unseen: Vec<&ImageRecord> = active
            .iter()
            .filter(|img| !self.served.contains(&img.image_id))
            .collect();
        unseen.choose_multiple(rng, n).map(|&img| img.clone()).collect()
    }

    pub fn mark_served<'a>(&mut self, ids: impl IntoIterator<Item = &'a ImageId>) {
        self.served.extend(ids.into_iter().cloned());
    }

    /// Draws a batch and marks it served.
    pub fn next_rating_batch<R: Rng + ?Sized>(
        &mut self,
        active: &[ImageRecord],
        n: usize,
        rng: &mut R,
    ) -> Vec<ImageRecord> {
        let batch = self.draw_rating_batch(active, n, rng);
        self.mark_served(batch.iter().map(|img| &img.image_id));
        batch
    }

    pub fn check_record(&self, image_id: &ImageId, value: i64) -> Result<u8, EnrollmentError> {
        if !self.served.contains(image_id) {
            return Err(EnrollmentError::NotServed(image_id.clone()));
        }
        let value = validate_rating(value)?;
        if self.portfolio.ratings.contains_key(image_id) {
            return Err(EnrollmentError::AlreadyRated(image_id.clone()));
        }
        Ok(value)
    }

    pub fn record_rating(
        &mut self,
        image_id: &ImageId,
        value: i64,
        now: DateTime<Utc>,
    ) -> Result<&RatingRecord, EnrollmentError> {
        let value = self.check_record(image_id, value)?;
        let record = RatingRecord {
            user_id: self.portfolio.user_id.clone(),
            image_id: image_id.clone(),
            value,
            created_at: now,
            updated_at: now,
            revisions: 0,
            history: Vec::new(),
        };
        Ok(self.portfolio.ratings.entry(image_id.clone()).or_insert(record))
    }

    pub fn check_revise(
        &self,
        image_id: &ImageId,
        value: i64,
        session_in_progress: bool,
    ) -> Result<u8, EnrollmentError> {
        if !self.portfolio.ratings.contains_key(image_id) {
            return Err(EnrollmentError::NotRated(image_id.clone()));
        }
        let value = validate_rating(value)?;
        if session_in_progress {
            return Err(EnrollmentError::SessionInProgress);
        }
        Ok(value)
    }

    pub fn revise_rating(
        &mut self,
        image_id: &ImageId,
        value: i64,
        now: DateTime<Utc>,
        session_in_progress: bool,
    ) -> Result<&RatingRecord, EnrollmentError> {
        let value = self.check_revise(image_id, value, session_in_progress)?;
        let record = self.portfolio.ratings.get_mut(image_id).expect("checked above");
        record.history.push(record.value);
        record.value = value;
        record.revisions += 1;
        record.updated_at = now;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrollmentPolicy {
    pub r_min: usize,
    pub p_key: f64,
    pub p_decoy: f64,
    /// Minimum rating gap between any served key and any served decoy.
    pub margin: u8,
}

impl Default for EnrollmentPolicy {
    fn default() -> Self {
        Self {
            r_min: 72,
            p_key: 0.20,
            p_decoy: 0.60,
            margin: 2,
        }
    }
}

impl EnrollmentPolicy {
    pub fn validate(&self) -> Result<(), EnrollmentError> {
        if self.r_min < 1 {
            return Err(EnrollmentError::InvalidPolicy("r_min must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p_key) || !(0.0..=1.0).contains(&self.p_decoy) {
            return Err(EnrollmentError::InvalidPolicy("fractions must lie in [0, 1]"));
        }
        if self.p_key + self.p_decoy > 1.0 + 1e-12 {
            return Err(EnrollmentError::InvalidPolicy("p_key + p_decoy must not exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedImage {
    pub image_id: ImageId,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioPartition {
    pub user_id: UserId,
    /// Highest ranked first.
    pub key_pool: Vec<RankedImage>,
    pub buffer: Vec<RankedImage>,
    /// Highest ranked first, i.e. the last element is the least liked image.
    pub decoy_pool: Vec<RankedImage>,
}

impl PortfolioPartition {
    pub fn r(&self) -> usize {
        self.key_pool.len() + self.buffer.len() + self.decoy_pool.len()
    }

    /// Full rank order, most liked first.
    pub fn rank_order(&self) -> impl Iterator<Item = &RankedImage> {
        self.key_pool.iter().chain(&self.buffer).chain(&self.decoy_pool)
    }

    pub fn key_min(&self) -> Option<u8> {
        self.key_pool.iter().map(|r| r.value).min()
    }

    pub fn decoy_max(&self) -> Option<u8> {
        self.decoy_pool.iter().map(|r| r.value).max()
    }

    pub fn value_of(&self, image_id: &ImageId) -> Option<u8> {
        self.rank_order().find(|r| &r.image_id == image_id).map(|r| r.value)
    }
}

/// Stable tie-break key for equal ratings: the first 8 bytes of
/// SHA-256(user_id ‖ 0x00 ‖ image_id), big endian.
pub fn tie_break_hash(user_id: &UserId, image_id: &ImageId) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(user_id.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(image_id.as_str().as_bytes());
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Band sizes `(key, buffer, decoy)` for `r` rated images.
pub fn band_sizes(r: usize, policy: &EnrollmentPolicy) -> (usize, usize, usize) {
    let key = fraction_ceil(policy.p_key, r).min(r);
    let decoy = fraction_ceil(policy.p_decoy, r).min(r - key);
    (key, r - key - decoy, decoy)
}

pub fn partition_portfolio(
    portfolio: &Portfolio,
    policy: &EnrollmentPolicy,
) -> Result<PortfolioPartition, EnrollmentError> {
    policy.validate()?;
    if portfolio.r() == 0 {
        return Err(EnrollmentError::EmptyPortfolio);
    }
    let user = &portfolio.user_id;
    let mut ranked: Vec<(u64, RankedImage)> = portfolio
        .values()
        .map(|(id, value)| {
            (
                tie_break_hash(user, id),
                RankedImage {
                    image_id: id.clone(),
                    value,
                },
            )
        })
        .collect();
    ranked.sort_by(|(ha, a), (hb, b)| {
        b.value
            .cmp(&a.value)
            .then(ha.cmp(hb))
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    let (key, buffer, _) = band_sizes(ranked.len(), policy);
    let mut order = ranked.into_iter().map(|(_, r)| r);
    let key_pool: Vec<_> = order.by_ref().take(key).collect();
    let buffer: Vec<_> = order.by_ref().take(buffer).collect();
    let decoy_pool: Vec<_> = order.collect();
    Ok(PortfolioPartition {
        user_id: user.clone(),
        key_pool,
        buffer,
        decoy_pool,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "clause")]
pub enum IneligibilityReason {
    TooFewRatings { have: usize, need: usize },
    KeyPoolTooSmall { have: usize, need: usize },
    DecoyPoolTooSmall { have: usize, need: usize },
    InsufficientMargin { gap: i16, need: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilityReport {
    pub eligible: bool,
    pub reasons: Vec<IneligibilityReason>,
}

/// Checks whether a partition can sustain sessions under `auth`.
///
/// The margin clause compares the weakest key against the strongest decoy at
/// pool level, so any draw from the pools satisfies the per-screen margin.
/// With no decoys to show (`D_HR = D`) the margin clause is vacuous.
pub fn eligibility_check(
    partition: &PortfolioPartition,
    enrollment: &EnrollmentPolicy,
    auth: &AuthPolicy,
) -> EligibilityReport {
    let mut reasons = Vec::new();
    let r = partition.r();
    if r < enrollment.r_min {
        reasons.push(IneligibilityReason::TooFewRatings {
            have: r,
            need: enrollment.r_min,
        });
    }
    let need_keys = auth.keys_per_session();
    if partition.key_pool.len() < need_keys {
        reasons.push(IneligibilityReason::KeyPoolTooSmall {
            have: partition.key_pool.len(),
            need: need_keys,
        });
    }
    let need_decoys = auth.decoys_per_session();
    if partition.decoy_pool.len() < need_decoys {
        reasons.push(IneligibilityReason::DecoyPoolTooSmall {
            have: partition.decoy_pool.len(),
            need: need_decoys,
        });
    }
    if need_decoys > 0 {
        if let (Some(key_min), Some(decoy_max)) = (partition.key_min(), partition.decoy_max()) {
            let gap = i16::from(key_min) - i16::from(decoy_max);
            if gap < i16::from(auth.margin) {
                reasons.push(IneligibilityReason::InsufficientMargin { gap, need: auth.margin });
            }
        }
    }
    EligibilityReport {
        eligible: reasons.is_empty(),
        reasons,
    }
}
