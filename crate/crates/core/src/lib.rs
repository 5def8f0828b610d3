//! Aesthetic evaluation-based authentication.
//!
//! Users enroll by rating how much they like images from a curated bank.
//! Authentication shows screens mixing a few of the user's most-liked images
//! (keys) with images they disliked (decoys); the user must pick the keys.
//!
//! - [`image_bank`]: bank ingestion and pretest curation
//! - [`enrollment`]: ratings, revision, key/buffer/decoy partitioning, eligibility
//! - [`challenge`]: randomized multi-screen session generation
//! - [`verification`]: scoring selections and accept/reject decisions
//! - [`analytics`]: password space, random-guess distributions, FP/FN curves
//! - [`simulation`]: synthetic raters and attackers for Monte Carlo evaluation

pub mod analytics;
pub mod challenge;
pub mod enrollment;
pub mod ids;
pub mod image_bank;
pub mod simulation;
pub mod verification;

pub use ids::{ImageId, SessionId, UserId};

pub const RATING_MIN: u8 = 1;
pub const RATING_MAX: u8 = 10;

/// `ceil(fraction * n)`, ignoring floating-point dust so that e.g.
/// `0.6 * 10` counts as exactly 6.
pub(crate) fn fraction_ceil(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let rounded = x.round();
    if (x - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        x.ceil() as usize
    }
}
