//! Password space, random-guess score distributions, FP/FN curves and
//! rating summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::ids::UserId;
use crate::{fraction_ceil, RATING_MAX, RATING_MIN};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("D_HR ({d_hr}) exceeds D ({d})")]
    KeysExceedDisplay { d: usize, d_hr: usize },
    #[error("invalid parameters: {0}")]
    InvalidParameters(&'static str),
    #[error("total {total} is outside 0..={max_total}")]
    TotalOutOfRange { total: u32, max_total: u32 },
    #[error("rating {0} is outside 1..=10")]
    RatingOutOfRange(u8),
    #[error("fraction must lie in (0, 1]")]
    InvalidFraction,
    #[error("no input")]
    Empty,
}

/// Exact binomial coefficient, `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

fn log2_binomial(n: usize, k: usize) -> f64 {
    match binomial(n, k) {
        Some(c) => (c as f64).log2(),
        None => {
            let k = k.min(n - k);
            (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).log2()).sum()
        }
    }
}

/// A memorized-secret class used to describe password strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecretClass {
    pub label: &'static str,
    pub min_bits: f64,
    pub max_bits: f64,
}

/// log2(10^4); log2(10^6)..log2(10^7); 8 * log2(72).
pub const SECRET_CLASSES: [SecretClass; 3] = [
    SecretClass {
        label: "4 digits PIN",
        min_bits: 13.287_712_379_549_449,
        max_bits: 13.287_712_379_549_449,
    },
    SecretClass {
        label: "6-7 digits PIN",
        min_bits: 19.931_568_569_324_174,
        max_bits: 23.253_496_664_211_536,
    },
    SecretClass {
        label: "8 characters (72-character set)",
        min_bits: 49.359_400_011_538_8,
        max_bits: 49.359_400_011_538_8,
    },
];

/// The class whose bit range lies nearest to `bits`.
pub fn nearest_secret_class(bits: f64) -> &'static str {
    let distance = |c: &SecretClass| {
        if bits < c.min_bits {
            c.min_bits - bits
        } else if bits > c.max_bits {
            bits - c.max_bits
        } else {
            0.0
        }
    };
    SECRET_CLASSES
        .iter()
        .min_by(|a, b| distance(a).total_cmp(&distance(b)))
        .map(|c| c.label)
        .expect("nonempty class table")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrengthReport {
    pub d: usize,
    pub d_hr: usize,
    pub s: usize,
    pub per_screen_bits: f64,
    pub total_bits: f64,
    pub rounded_bits: u64,
    pub comparable: &'static str,
}

/// Theoretical password space of `C(D, D_HR)^S` equally likely selections, in bits.
pub fn password_bits(d: usize, d_hr: usize, s: usize) -> Result<StrengthReport, AnalyticsError> {
    if d_hr > d {
        return Err(AnalyticsError::KeysExceedDisplay { d, d_hr });
    }
    let per_screen_bits = log2_binomial(d, d_hr);
    let total_bits = s as f64 * per_screen_bits;
    Ok(StrengthReport {
        d,
        d_hr,
        s,
        per_screen_bits,
        total_bits,
        rounded_bits: total_bits.round() as u64,
        comparable: nearest_secret_class(total_bits),
    })
}

/// Exact per-screen score counts for a uniformly random selection:
/// `counts[k] = C(D_HR, k) · C(D − D_HR, D_HR − k)` out of `C(D, D_HR)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScreenScoreCounts {
    pub counts: Vec<u128>,
    pub outcomes: u128,
}

pub fn screen_score_counts(d: usize, d_hr: usize) -> Result<ScreenScoreCounts, AnalyticsError> {
    if d_hr > d {
        return Err(AnalyticsError::KeysExceedDisplay { d, d_hr });
    }
    let overflow = AnalyticsError::InvalidParameters("screen too large for exact counts");
    let counts = (0..=d_hr)
        .map(|k| {
            binomial(d_hr, k)
                .zip(binomial(d - d_hr, d_hr - k))
                .and_then(|(a, b)| a.checked_mul(b))
                .ok_or(overflow.clone())
        })
        .collect::<Result<Vec<u128>, AnalyticsError>>()?;
    let outcomes = binomial(d, d_hr).ok_or(overflow)?;
    Ok(ScreenScoreCounts { counts, outcomes })
}

/// A probability mass function over integer scores `0..probs.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub probs: Vec<f64>,
}

impl ScoreDistribution {
    pub fn p(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn max_score(&self) -> usize {
        self.probs.len() - 1
    }

    /// `P(X >= t)` for every `t` in `0..=max`.
    pub fn tail(&self) -> Vec<f64> {
        let mut tail = vec![0.0; self.probs.len()];
        let mut acc = 0.0;
        for k in (0..self.probs.len()).rev() {
            acc += self.probs[k];
            tail[k] = acc;
        }
        tail
    }

    pub fn convolve(&self, other: &ScoreDistribution) -> ScoreDistribution {
        let mut probs = vec![0.0; self.probs.len() + other.probs.len() - 1];
        for (i, a) in self.probs.iter().enumerate() {
            for (j, b) in other.probs.iter().enumerate() {
                probs[i + j] += a * b;
            }
        }
        ScoreDistribution { probs }
    }
}

/// Per-screen score distribution of a random guess (hypergeometric).
pub fn screen_score_pmf(d: usize, d_hr: usize) -> Result<ScoreDistribution, AnalyticsError> {
    if d_hr > d {
        return Err(AnalyticsError::KeysExceedDisplay { d, d_hr });
    }
    let probs = match screen_score_counts(d, d_hr) {
        Ok(c) => c.counts.iter().map(|&n| n as f64 / c.outcomes as f64).collect(),
        Err(_) => {
            let total = log2_binomial(d, d_hr);
            (0..=d_hr)
                .map(|k| (log2_binomial(d_hr, k) + log2_binomial(d - d_hr, d_hr - k) - total).exp2())
                .collect()
        }
    };
    Ok(ScoreDistribution { probs })
}

/// Session total distribution of a random guess: the S-fold convolution.
pub fn session_score_pmf(d: usize, d_hr: usize, s: usize) -> Result<ScoreDistribution, AnalyticsError> {
    let screen = screen_score_pmf(d, d_hr)?;
    let mut acc = ScoreDistribution { probs: vec![1.0] };
    for _ in 0..s {
        acc = acc.convolve(&screen);
    }
    Ok(acc)
}

/// Exact session total counts out of `C(D, D_HR)^S`, when they fit in 128 bits.
pub fn session_score_counts(d: usize, d_hr: usize, s: usize) -> Result<(Vec<u128>, u128), AnalyticsError> {
    let screen = screen_score_counts(d, d_hr)?;
    let overflow = || AnalyticsError::InvalidParameters("session too large for exact counts");
    let mut counts = vec![1u128];
    let mut outcomes = 1u128;
    for _ in 0..s {
        let mut next = vec![0u128; counts.len() + screen.counts.len() - 1];
        for (i, a) in counts.iter().enumerate() {
            for (j, b) in screen.counts.iter().enumerate() {
                let term = a.checked_mul(*b).ok_or_else(overflow)?;
                next[i + j] = next[i + j].checked_add(term).ok_or_else(overflow)?;
            }
        }
        counts = next;
        outcomes = outcomes.checked_mul(screen.outcomes).ok_or_else(overflow)?;
    }
    Ok((counts, outcomes))
}

/// FP/FN rates by acceptance threshold. A rate vector is `None` when its
/// population was empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpFnCurve {
    pub cohort: String,
    pub thresholds: Vec<u32>,
    pub fp: Option<Vec<f64>>,
    #[serde(rename = "fn")]
    pub fn_rate: Option<Vec<f64>>,
    /// Exact-score tallies, index = total.
    pub legit_histogram: Vec<u64>,
    pub attacker_histogram: Vec<u64>,
}

impl FpFnCurve {
    pub fn fp_at(&self, t: u32) -> Option<f64> {
        let fp = self.fp.as_ref()?;
        Some(fp.get(t as usize).copied().unwrap_or(0.0))
    }

    pub fn fn_at(&self, t: u32) -> Option<f64> {
        let fnr = self.fn_rate.as_ref()?;
        Some(fnr.get(t as usize).copied().unwrap_or(1.0))
    }

    /// CSV with header `threshold,fp,fn,cohort`; undefined rates print as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fp,fn,cohort\n");
        self.write_csv_rows(&mut out);
        out
    }

    pub fn write_csv_rows(&self, out: &mut String) {
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |x| format!("{x}"));
        for &t in &self.thresholds {
            let _ = writeln!(out, "{t},{},{},{}", cell(self.fp_at(t)), cell(self.fn_at(t)), self.cohort);
        }
    }
}

fn histogram(totals: &[u32], max_total: u32) -> Result<Vec<u64>, AnalyticsError> {
    let mut hist = vec![0u64; max_total as usize + 1];
    for &total in totals {
        if total > max_total {
            return Err(AnalyticsError::TotalOutOfRange { total, max_total });
        }
        hist[total as usize] += 1;
    }
    Ok(hist)
}

fn reach_fractions(hist: &[u64]) -> Option<Vec<f64>> {
    let n: u64 = hist.iter().sum();
    if n == 0 {
        return None;
    }
    let mut out = vec![0.0; hist.len()];
    let mut acc = 0u64;
    for t in (0..hist.len()).rev() {
        acc += hist[t];
        out[t] = acc as f64 / n as f64;
    }
    Some(out)
}

/// `fp(t)` = share of attacker sessions with total ≥ t;
/// `fn(t)` = 1 − share of legitimate sessions with total ≥ t.
pub fn fpfn_curves(
    legit_totals: &[u32],
    attacker_totals: &[u32],
    max_total: u32,
    cohort: &str,
) -> Result<FpFnCurve, AnalyticsError> {
    let legit_histogram = histogram(legit_totals, max_total)?;
    let attacker_histogram = histogram(attacker_totals, max_total)?;
    Ok(FpFnCurve {
        cohort: cohort.to_owned(),
        thresholds: (0..=max_total).collect(),
        fp: reach_fractions(&attacker_histogram),
        fn_rate: reach_fractions(&legit_histogram).map(|r| r.into_iter().map(|x| 1.0 - x).collect()),
        legit_histogram,
        attacker_histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSummary {
    /// Counts for values 1..=10 (index 0 is value 1).
    pub histogram: [u64; 10],
    pub count: u64,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Most frequent value; the lowest one on ties.
    pub mode: Option<u8>,
    /// Per user, `max - min + 1` of the values they used.
    pub scale_span: BTreeMap<UserId, u8>,
}

pub fn rating_summary<'a>(
    ratings: impl IntoIterator<Item = (&'a UserId, u8)>,
) -> Result<RatingSummary, AnalyticsError> {
    let mut histogram = [0u64; 10];
    let mut ranges: BTreeMap<UserId, (u8, u8)> = BTreeMap::new();
    for (user, value) in ratings {
        if !(RATING_MIN..=RATING_MAX).contains(&value) {
            return Err(AnalyticsError::RatingOutOfRange(value));
        }
        histogram[usize::from(value - 1)] += 1;
        let e = ranges.entry(user.clone()).or_insert((value, value));
        e.0 = e.0.min(value);
        e.1 = e.1.max(value);
    }
    let count: u64 = histogram.iter().sum();
    let (mean, median, mode) = if count == 0 {
        (None, None, None)
    } else {
        let sum: u64 = histogram.iter().enumerate().map(|(i, c)| (i as u64 + 1) * c).sum();
        let nth = |rank: u64| -> f64 {
            let mut acc = 0;
            for (i, c) in histogram.iter().enumerate() {
                acc += c;
                if acc > rank {
                    return (i + 1) as f64;
                }
            }
            unreachable!("rank below count")
        };
        let median = if count % 2 == 1 {
            nth(count / 2)
        } else {
            (nth(count / 2 - 1) + nth(count / 2)) / 2.0
        };
        let mode = histogram
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i as u8 + 1);
        (Some(sum as f64 / count as f64), Some(median), mode)
    };
    Ok(RatingSummary {
        histogram,
        count,
        mean,
        median,
        mode,
        scale_span: ranges.into_iter().map(|(u, (lo, hi))| (u, hi - lo + 1)).collect(),
    })
}

/// The top `ceil(fraction · N)` users by mean score, ties broken by user id.
pub fn cohort_filter(scores: &[(UserId, f64)], fraction: f64) -> Result<Vec<UserId>, AnalyticsError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AnalyticsError::InvalidFraction);
    }
    if scores.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let mut ranked: Vec<&(UserId, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let take = fraction_ceil(fraction, ranked.len()).min(ranked.len());
    Ok(ranked.into_iter().take(take).map(|(u, _)| u.clone()).collect())
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson χ² goodness of fit. Adjacent bins are pooled until each pooled
/// bin expects at least 5 observations.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquareTest, AnalyticsError> {
    if observed.len() != probs.len() {
        return Err(AnalyticsError::InvalidParameters("observed and expected lengths differ"));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(AnalyticsError::Empty);
    }
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        obs += o as f64;
        exp += p * n as f64;
        if exp >= 5.0 {
            pooled.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => pooled.push((obs, exp)),
        }
    }
    if pooled.len() < 2 {
        return Err(AnalyticsError::InvalidParameters("fewer than two bins after pooling"));
    }
    let statistic: f64 = pooled.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = pooled.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}
