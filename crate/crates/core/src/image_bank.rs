//! The pool of aesthetic images users rate and are challenged with.
//!
//! Images enter the bank as `candidate`s from a manifest, are promoted to
//! `active` by an administrator, and are `retired` (never deleted) when the
//! pretest filter rejects them, so past sessions that reference them stay
//! replayable.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ImageId;
use crate::{RATING_MAX, RATING_MIN};

#[derive(Debug, Error, PartialEq)]
pub enum BankError {
    #[error("image uri must not be empty")]
    EmptyUri,
    #[error("unknown image category {0:?}")]
    UnknownCategory(String),
    #[error("image uri {0:?} is already in the bank")]
    DuplicateUri(String),
    #[error("no image with id {0}")]
    UnknownImage(ImageId),
    #[error("rating {0} is outside 1..=10")]
    RatingOutOfRange(i64),
    #[error("invalid bank policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("malformed manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Universe,
    Nature,
    Mountains,
    Forest,
    Flowers,
    Cityscapes,
    Seaside,
    Other,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Universe,
        Category::Nature,
        Category::Mountains,
        Category::Forest,
        Category::Flowers,
        Category::Cityscapes,
        Category::Seaside,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Universe => "Universe",
            Category::Nature => "Nature",
            Category::Mountains => "Mountains",
            Category::Forest => "Forest",
            Category::Flowers => "Flowers",
            Category::Cityscapes => "Cityscapes",
            Category::Seaside => "Seaside",
            Category::Other => "Other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = BankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| BankError::UnknownCategory(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageStatus {
    Candidate,
    Active,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub uri: String,
    pub category: Category,
    pub source: String,
    pub status: ImageStatus,
}

/// One line (or array element) of a bank manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub uri: String,
    pub category: String,
    #[serde(default)]
    pub source: String,
}

impl ManifestEntry {
    pub fn new(uri: impl Into<String>, category: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            uri: uri.into(),
            category: category.into(),
            source: source.into(),
        }
    }
}

/// Parses a manifest given either as a JSON array of entries or as JSON lines.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, BankError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| BankError::Manifest(e.to_string()));
    }
    trimmed
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(no, line)| {
            serde_json::from_str(line).map_err(|e| BankError::Manifest(format!("line {}: {e}", no + 1)))
        })
        .collect()
}

/// Curation thresholds for the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankPolicy {
    pub ap_min: usize,
    pub ap_max: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub min_ratings: usize,
    /// Required `max - min` spread once an image has at least
    /// [`BankPolicy::DISPERSION_MIN_N`] ratings.
    pub min_range: u8,
}

impl BankPolicy {
    pub const DISPERSION_MIN_N: usize = 10;

    pub fn validate(&self) -> Result<(), BankError> {
        if self.ap_min >= self.ap_max {
            return Err(BankError::InvalidPolicy("ap_min must be below ap_max"));
        }
        if !(1.0 <= self.lower_bound && self.lower_bound < self.upper_bound && self.upper_bound <= 10.0) {
            return Err(BankError::InvalidPolicy("bounds must satisfy 1 <= lower < upper <= 10"));
        }
        Ok(())
    }
}

impl Default for BankPolicy {
    fn default() -> Self {
        Self {
            ap_min: 200,
            ap_max: 1000,
            lower_bound: 4.0,
            upper_bound: 8.0,
            min_ratings: 5,
            min_range: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub image_id: ImageId,
    pub n: usize,
    pub mean: f64,
    pub min: u8,
    pub max: u8,
    /// Sample standard deviation (n - 1 denominator); zero when n < 2.
    pub sd: f64,
    pub unreliable: bool,
}

/// Aggregates the ratings an image received. An empty list yields `n = 0`
/// with zeroed aggregates, flagged unreliable.
pub fn compute_image_stats(
    image_id: ImageId,
    ratings: &[u8],
    policy: &BankPolicy,
) -> Result<ImageStats, BankError> {
    if let Some(&bad) = ratings.iter().find(|&&r| !(RATING_MIN..=RATING_MAX).contains(&r)) {
        return Err(BankError::RatingOutOfRange(i64::from(bad)));
    }
    let n = ratings.len();
    let unreliable = n < policy.min_ratings;
    if n == 0 {
        return Ok(ImageStats {
            image_id,
            n,
            mean: 0.0,
            min: 0,
            max: 0,
            sd: 0.0,
            unreliable,
        });
    }
    let sum: f64 = ratings.iter().map(|&r| f64::from(r)).sum();
    let mean = sum / n as f64;
    let sd = if n > 1 {
        let ss: f64 = ratings.iter().map(|&r| (f64::from(r) - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ImageStats {
        image_id,
        n,
        mean,
        min: *ratings.iter().min().expect("nonempty"),
        max: *ratings.iter().max().expect("nonempty"),
        sd,
        unreliable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    BelowLowerBound,
    AboveUpperBound,
    LowDispersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum PretestVerdict {
    Keep,
    Exclude(ExclusionReason),
    InsufficientData,
}

pub fn pretest_filter(stats: &ImageStats, policy: &BankPolicy) -> PretestVerdict {
    if stats.n < policy.min_ratings {
        return PretestVerdict::InsufficientData;
    }
    if stats.mean <= policy.lower_bound {
        return PretestVerdict::Exclude(ExclusionReason::BelowLowerBound);
    }
    if stats.mean >= policy.upper_bound {
        return PretestVerdict::Exclude(ExclusionReason::AboveUpperBound);
    }
    if stats.n >= BankPolicy::DISPERSION_MIN_N && stats.max.saturating_sub(stats.min) < policy.min_range {
        return PretestVerdict::Exclude(ExclusionReason::LowDispersion);
    }
    PretestVerdict::Keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeViolation {
    pub active: usize,
    pub ap_min: usize,
    pub ap_max: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub activated: Vec<ImageId>,
    pub retired: Vec<(ImageId, ExclusionReason)>,
    pub insufficient: Vec<ImageId>,
    pub active_count: usize,
    pub size_violation: Option<SizeViolation>,
}

/// The image bank. Single writer; readers take an [`ActiveSnapshot`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ImageBank {
    images: Vec<ImageRecord>,
    #[serde(skip)]
    by_id: HashMap<ImageId, usize>,
    #[serde(skip)]
    by_uri: HashMap<String, usize>,
}

/// Immutable view of the active images, ordered by image id.
pub type ActiveSnapshot = Arc<[ImageRecord]>;

impl ImageBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds lookup indexes, e.g. after deserialization.
    pub fn reindex(&mut self) {
        self.by_id = self
            .images
            .iter()
            .enumerate()
            .map(|(i, r)| (r.image_id.clone(), i))
            .collect();
        self.by_uri = self
            .images
            .iter()
            .enumerate()
            .map(|(i, r)| (r.uri.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The id the next ingested image will receive.
    pub fn next_image_id(&self) -> ImageId {
        ImageId::new(format!("img-{:06}", self.images.len() + 1))
    }

    /// Validates a manifest entry without mutating the bank.
    pub fn check_entry(&self, entry: &ManifestEntry) -> Result<Category, BankError> {
        if entry.uri.trim().is_empty() {
            return Err(BankError::EmptyUri);
        }
        let category = entry.category.parse::<Category>()?;
        if self.by_uri.contains_key(&entry.uri) {
            return Err(BankError::DuplicateUri(entry.uri.clone()));
        }
        Ok(category)
    }

    pub fn ingest_image(&mut self, entry: &ManifestEntry) -> Result<&ImageRecord, BankError> {
        let category = self.check_entry(entry)?;
        let record = ImageRecord {
            image_id: self.next_image_id(),
            uri: entry.uri.clone(),
            category,
            source: entry.source.clone(),
            status: ImageStatus::Candidate,
        };
        Ok(self.insert(record))
    }

    /// Inserts a fully formed record (used when replaying persisted state).
    pub fn insert(&mut self, record: ImageRecord) -> &ImageRecord {
        let idx = self.images.len();
        self.by_id.insert(record.image_id.clone(), idx);
        self.by_uri.insert(record.uri.clone(), idx);
        self.images.push(record);
        &self.images[idx]
    }

    pub fn get(&self, id: &ImageId) -> Option<&ImageRecord> {
        self.by_id.get(id).map(|&i| &self.images[i])
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn set_status(&mut self, id: &ImageId, status: ImageStatus) -> Result<(), BankError> {
        let idx = *self.by_id.get(id).ok_or_else(|| BankError::UnknownImage(id.clone()))?;
        self.images[idx].status = status;
        Ok(())
    }

    pub fn active_count(&self) -> usize {
        self.images.iter().filter(|r| r.status == ImageStatus::Active).count()
    }

    pub fn is_active(&self, id: &ImageId) -> bool {
        self.get(id).is_some_and(|r| r.status == ImageStatus::Active)
    }

    pub fn active_snapshot(&self) -> ActiveSnapshot {
        let mut active: Vec<ImageRecord> = self
            .images
            .iter()
            .filter(|r| r.status == ImageStatus::Active)
            .cloned()
            .collect();
        active.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        active.into()
    }

    /// Computes the status changes pretest filtering would make, without applying them.
    ///
    /// Images with a `keep` verdict become active, excluded images are retired,
    /// images lacking data keep their current status. Retired images are left alone.
    pub fn plan_curation(
        &self,
        ratings: &BTreeMap<ImageId, Vec<u8>>,
        policy: &BankPolicy,
    ) -> Result<CurationReport, BankError> {
        policy.validate()?;
        let mut report = CurationReport::default();
        let mut active = 0usize;
        for image in &self.images {
            if image.status == ImageStatus::Retired {
                continue;
            }
            let values = ratings.get(&image.image_id).map(Vec::as_slice).unwrap_or(&[]);
            let stats = compute_image_stats(image.image_id.clone(), values, policy)?;
            match pretest_filter(&stats, policy) {
                PretestVerdict::Keep => {
                    if image.status != ImageStatus::Active {
                        report.activated.push(image.image_id.clone());
                    }
                    active += 1;
                }
                PretestVerdict::Exclude(reason) => report.retired.push((image.image_id.clone(), reason)),
                PretestVerdict::InsufficientData => {
                    report.insufficient.push(image.image_id.clone());
                    if image.status == ImageStatus::Active {
                        active += 1;
                    }
                }
            }
        }
        report.active_count = active;
        if active < policy.ap_min || active > policy.ap_max {
            report.size_violation = Some(SizeViolation {
                active,
                ap_min: policy.ap_min,
                ap_max: policy.ap_max,
            });
        }
        Ok(report)
    }

    /// Applies a curation plan produced by [`ImageBank::plan_curation`].
    pub fn apply_curation(&mut self, report: &CurationReport) -> Result<(), BankError> {
        for id in &report.activated {
            self.set_status(id, ImageStatus::Active)?;
        }
        for (id, _) in &report.retired {
            self.set_status(id, ImageStatus::Retired)?;
        }
        Ok(())
    }

    pub fn curate(
        &mut self,
        ratings: &BTreeMap<ImageId, Vec<u8>>,
        policy: &BankPolicy,
    ) -> Result<CurationReport, BankError> {
        let report = self.plan_curation(ratings, policy)?;
        self.apply_curation(&report)?;
        Ok(report)
    }
}
