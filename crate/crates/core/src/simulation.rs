//! Synthetic raters and attackers for Monte Carlo evaluation.
//!
//! Taste model: each image has a bank-wide shared appeal `c(i)` and each rater
//! a personal appeal `p(i)`, both standard normal. A rater's latent taste is
//! `v(i) = w·c(i) + (1 − w)·p(i)`, standardized and mapped affinely onto the
//! rating scale. Ratings add enrollment noise, round and clamp to 1..=10;
//! selections add fresh selection noise to the same continuous value.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{fpfn_curves, AnalyticsError, FpFnCurve};
use crate::challenge::{generate_session, AuthPolicy, ChallengeError, ScreenView, SessionKind, SessionRequest, SessionSpec};
use crate::enrollment::{partition_portfolio, EnrollmentError, EnrollmentPolicy, Portfolio};
use crate::ids::{ImageId, SessionId, UserId};
use crate::image_bank::{Category, ImageRecord, ImageStatus};
use crate::verification::VerificationError;
use crate::{RATING_MAX, RATING_MIN};

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error("cannot rate {requested} images from a bank of {available}")]
    BankTooSmall { requested: usize, available: usize },
    #[error("no trial produced an eligible portfolio ({ineligible} ineligible)")]
    NoEligibleTrials { ineligible: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Enrollment(#[from] EnrollmentError),
    #[error(transparent)]
    Challenge(#[from] ChallengeError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

/// Shared-taste weight giving the shared component one third of the latent
/// variance: `w² / (w² + (1 − w)²) = 1/3`.
pub const SHARED_THIRD_WEIGHT: f64 = 0.414_213_562_373_095_1;

/// Parameters of a synthetic rater population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterPreset {
    pub name: String,
    pub shared_weight: f64,
    /// Rating-scale value of an average latent taste.
    pub center: f64,
    /// Rating points per latent standard deviation.
    pub scale: f64,
    /// Enrollment noise, rating points.
    pub sigma_rate: f64,
    /// Selection-time noise, rating points.
    pub sigma_select: f64,
    /// Each rater's noise levels are multiplied by a factor drawn uniformly
    /// from `[1 − spread, 1 + spread]`.
    pub sigma_spread: f64,
}

impl RaterPreset {
    pub fn noiseless() -> Self {
        Self {
            name: "noiseless".into(),
            shared_weight: SHARED_THIRD_WEIGHT,
            center: 6.0,
            scale: 2.5,
            sigma_rate: 0.0,
            sigma_select: 0.0,
            sigma_spread: 0.0,
        }
    }

    /// Calibrated so that rating the same images twice correlates at about 0.7.
    pub fn humanlike() -> Self {
        Self {
            name: "humanlike".into(),
            shared_weight: SHARED_THIRD_WEIGHT,
            center: 6.0,
            scale: 2.5,
            sigma_rate: 1.5,
            sigma_select: 1.5,
            sigma_spread: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.to_owned()));
        if !(0.0..=1.0).contains(&self.shared_weight) {
            return bad("shared_weight must lie in [0, 1]");
        }
        if self.sigma_rate < 0.0 || self.sigma_select < 0.0 || !(0.0..=1.0).contains(&self.sigma_spread) {
            return bad("noise levels must be nonnegative and spread in [0, 1]");
        }
        if self.scale <= 0.0 {
            return bad("scale must be positive");
        }
        Ok(())
    }
}

impl FromStr for RaterPreset {
    type Err = SimulationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "noiseless" => Ok(Self::noiseless()),
            "humanlike" | "human-like" => Ok(Self::humanlike()),
            other => Err(SimulationError::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }
}

/// A bank of `n` active synthetic images spread over all categories.
pub fn synthetic_bank(n: usize) -> Vec<ImageRecord> {
    (0..n)
        .map(|i| ImageRecord {
            image_id: ImageId::new(format!("img-{:06}", i + 1)),
            uri: format!("synthetic://image/{}", i + 1),
            category: Category::ALL[i % Category::ALL.len()],
            source: "synthetic".into(),
            status: ImageStatus::Active,
        })
        .collect()
}

/// The bank-wide shared taste component `c(i)`.
#[derive(Debug, Clone)]
pub struct TasteField {
    shared: HashMap<ImageId, f64>,
}

impl TasteField {
    pub fn generate(bank: &[ImageRecord], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = bank
            .iter()
            .map(|img| (img.image_id.clone(), rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self { shared }
    }

    pub fn shared(&self, image: &ImageId) -> f64 {
        self.shared.get(image).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRater {
    pub rater_id: UserId,
    pub shared_weight: f64,
    pub center: f64,
    pub scale: f64,
    pub sigma_rate: f64,
    pub sigma_select: f64,
    pub seed: u64,
    /// Standardized latent taste per image.
    latent: HashMap<ImageId, f64>,
}

impl SyntheticRater {
    pub fn new(rater_id: UserId, bank: &[ImageRecord], field: &TasteField, preset: &RaterPreset, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = preset.shared_weight;
        let norm = (w * w + (1.0 - w) * (1.0 - w)).sqrt();
        let latent = bank
            .iter()
            .map(|img| {
                let personal: f64 = rng.sample(StandardNormal);
                (img.image_id.clone(), (w * field.shared(&img.image_id) + (1.0 - w) * personal) / norm)
            })
            .collect();
        let factor = if preset.sigma_spread > 0.0 {
            rng.random_range((1.0 - preset.sigma_spread)..=(1.0 + preset.sigma_spread))
        } else {
            1.0
        };
        Self {
            rater_id,
            shared_weight: w,
            center: preset.center,
            scale: preset.scale,
            sigma_rate: preset.sigma_rate * factor,
            sigma_select: preset.sigma_select * factor,
            seed,
            latent,
        }
    }

    /// Noiseless taste on the (continuous) rating scale.
    pub fn taste(&self, image: &ImageId) -> f64 {
        self.center + self.scale * self.latent.get(image).copied().unwrap_or(0.0)
    }

    fn noisy_rating<R: Rng + ?Sized>(&self, image: &ImageId, rng: &mut R) -> u8 {
        let noise = if self.sigma_rate > 0.0 {
            Normal::new(0.0, self.sigma_rate).expect("finite sigma").sample(rng)
        } else {
            0.0
        };
        (self.taste(image) + noise)
            .round()
            .clamp(f64::from(RATING_MIN), f64::from(RATING_MAX)) as u8
    }

    /// Rates the given images again with fresh enrollment noise.
    pub fn rerate(&self, images: &[ImageId], seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        images.iter().map(|img| self.noisy_rating(img, &mut rng)).collect()
    }
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Rates `r` images drawn uniformly from `bank`.
pub fn simulate_enrollment(
    rater: &SyntheticRater,
    bank: &[ImageRecord],
    r: usize,
    seed: u64,
) -> Result<Portfolio, SimulationError> {
    if r > bank.len() {
        return Err(SimulationError::BankTooSmall {
            requested: r,
            available: bank.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<&ImageRecord> = bank.choose_multiple(&mut rng, r).collect();
    chosen.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let values: Vec<(ImageId, u8)> = chosen
        .into_iter()
        .map(|img| (img.image_id.clone(), rater.noisy_rating(&img.image_id, &mut rng)))
        .collect();
    Ok(Portfolio::from_values(rater.rater_id.clone(), values, epoch())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerKind {
    /// Picks uniformly at random.
    Uniform,
    /// Knows the shared taste component only.
    Population,
    /// Knows the victim's exact latent taste.
    Clone,
}

impl AttackerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackerKind::Uniform => "uniform",
            AttackerKind::Population => "population",
            AttackerKind::Clone => "clone",
        }
    }
}

impl FromStr for AttackerKind {
    type Err = SimulationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "population" => Ok(Self::Population),
            "clone" => Ok(Self::Clone),
            other => Err(SimulationError::InvalidConfig(format!("unknown attacker {other:?}"))),
        }
    }
}

/// Who is choosing images on a screen.
#[derive(Debug, Clone, Copy)]
pub enum Agent<'a> {
    /// The legitimate rater, with fresh selection noise.
    Rater(&'a SyntheticRater),
    Uniform,
    Population(&'a TasteField),
    /// An attacker holding the victim's noiseless taste.
    Clone(&'a SyntheticRater),
}

/// Picks `d_hr` images from a client view by the agent's decision values.
pub fn simulate_session_play<R: Rng + ?Sized>(
    agent: Agent<'_>,
    view: &ScreenView,
    d_hr: usize,
    rng: &mut R,
) -> Vec<ImageId> {
    let values: Vec<f64> = match agent {
        Agent::Uniform => return view.image_ids.choose_multiple(rng, d_hr).cloned().collect(),
        Agent::Rater(rater) => {
            let noise = (rater.sigma_select > 0.0).then(|| Normal::new(0.0, rater.sigma_select).expect("finite sigma"));
            view.image_ids
                .iter()
                .map(|img| rater.taste(img) + noise.map_or(0.0, |n| n.sample(rng)))
                .collect()
        }
        Agent::Population(field) => view.image_ids.iter().map(|img| field.shared(img)).collect(),
        Agent::Clone(victim) => view.image_ids.iter().map(|img| victim.taste(img)).collect(),
    };
    let mut order: Vec<usize> = (0..view.image_ids.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| view.image_ids[a].cmp(&view.image_ids[b]))
    });
    order.into_iter().take(d_hr).map(|i| view.image_ids[i].clone()).collect()
}

/// Plays every screen of a copy of `session` and returns the total.
/// The agent only ever sees client views.
pub fn play_session<R: Rng + ?Sized>(agent: Agent<'_>, session: &SessionSpec, rng: &mut R) -> Result<u32, SimulationError> {
    let mut session = session.clone();
    let now = session.created_at;
    for n in 1..=session.screens.len() {
        let view = session.screen_for_display(n, now).map_err(VerificationError::from)?;
        let chosen = simulate_session_play(agent, &view, session.policy.d_hr, rng);
        session.submit_selection(n, &chosen, now)?;
    }
    Ok(session.result()?.total)
}

/// splitmix64 finalizer, used to derive independent per-trial seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub policy: AuthPolicy,
    pub enrollment: EnrollmentPolicy,
    pub preset: RaterPreset,
    pub attackers: Vec<AttackerKind>,
    pub trials: usize,
    pub seed: u64,
    pub bank_size: usize,
    /// Attacks per attacker kind against each generated session.
    pub attacker_replays: usize,
}

impl MonteCarloConfig {
    pub fn new(policy: AuthPolicy, preset: RaterPreset, attackers: Vec<AttackerKind>, trials: usize, seed: u64) -> Self {
        Self {
            policy,
            enrollment: EnrollmentPolicy::default(),
            preset,
            attackers,
            trials,
            seed,
            bank_size: 300,
            attacker_replays: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    pub sessions: usize,
    pub mean_total: f64,
    /// Share of sessions accepted under the policy's decision mode.
    pub pass_rate: f64,
    pub passes: usize,
    /// Session totals tally, index = total.
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: MonteCarloConfig,
    pub eligible_trials: usize,
    pub ineligible_trials: usize,
    pub legit: AgentSummary,
    pub attackers: Vec<AgentSummary>,
    /// One curve per attacker kind, cohort = attacker name.
    pub curves: Vec<FpFnCurve>,
    pub legit_totals: Vec<u32>,
    pub attacker_totals: BTreeMap<String, Vec<u32>>,
    pub metadata: BTreeMap<String, String>,
}

impl MonteCarloReport {
    pub fn attacker(&self, kind: AttackerKind) -> Option<&AgentSummary> {
        self.attackers.iter().find(|a| a.agent == kind.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct TrialOutcome {
    legit: u32,
    attacks: Vec<Vec<u32>>,
}

fn run_trial(
    config: &MonteCarloConfig,
    bank: &[ImageRecord],
    field: &TasteField,
    trial: usize,
) -> Result<Option<TrialOutcome>, SimulationError> {
    let trial_seed = derive_seed(config.seed, trial as u64);
    let rater = SyntheticRater::new(
        UserId::new(format!("rater-{trial}")),
        bank,
        field,
        &config.preset,
        derive_seed(trial_seed, 0),
    );
    let portfolio = simulate_enrollment(&rater, bank, config.enrollment.r_min, derive_seed(trial_seed, 1))?;
    let partition = partition_portfolio(&portfolio, &config.enrollment)?;
    let cooldown = Default::default();
    let mut request = SessionRequest::new(
        SessionId::new(format!("sim-{trial}")),
        derive_seed(trial_seed, 2),
        epoch(),
        &cooldown,
    );
    request.kind = SessionKind::Auth;
    let session = match generate_session(&partition, &config.enrollment, &config.policy, &request) {
        Ok(s) => s,
        Err(ChallengeError::Ineligible(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, 3));
    let legit = play_session(Agent::Rater(&rater), &session, &mut rng)?;
    let attacks = config
        .attackers
        .iter()
        .map(|kind| {
            let agent = match kind {
                AttackerKind::Uniform => Agent::Uniform,
                AttackerKind::Population => Agent::Population(field),
                AttackerKind::Clone => Agent::Clone(&rater),
            };
            (0..config.attacker_replays)
                .map(|_| play_session(agent, &session, &mut rng))
                .collect::<Result<Vec<u32>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(TrialOutcome { legit, attacks }))
}

fn summarize(agent: &str, totals: &[u32], policy: &AuthPolicy) -> AgentSummary {
    let max = policy.max_total();
    let mut histogram = vec![0u64; max as usize + 1];
    let mut passes = 0;
    for &t in totals {
        histogram[t as usize] += 1;
        if policy.accepts(t) {
            passes += 1;
        }
    }
    let n = totals.len();
    AgentSummary {
        agent: agent.to_owned(),
        sessions: n,
        mean_total: if n == 0 { 0.0 } else { totals.iter().map(|&t| f64::from(t)).sum::<f64>() / n as f64 },
        pass_rate: if n == 0 { 0.0 } else { passes as f64 / n as f64 },
        passes,
        histogram,
    }
}

/// Runs `trials` independent enroll → challenge → play rounds. Each trial
/// derives its own seeds, so results do not depend on thread scheduling.
/// Trials whose portfolio is ineligible are counted and skipped.
pub fn monte_carlo(config: &MonteCarloConfig) -> Result<MonteCarloReport, SimulationError> {
    if config.trials == 0 {
        return Err(SimulationError::InvalidConfig("trials must be at least 1".into()));
    }
    config.preset.validate()?;
    config.policy.validate(false)?;
    config.enrollment.validate()?;

    let bank = synthetic_bank(config.bank_size);
    let field = TasteField::generate(&bank, derive_seed(config.seed, u64::MAX));
    let outcomes = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, &bank, &field, t))
        .collect::<Result<Vec<_>, _>>()?;

    let ineligible = outcomes.iter().filter(|o| o.is_none()).count();
    let eligible: Vec<TrialOutcome> = outcomes.into_iter().flatten().collect();
    if eligible.is_empty() {
        return Err(SimulationError::NoEligibleTrials { ineligible });
    }

    let legit_totals: Vec<u32> = eligible.iter().map(|o| o.legit).collect();
    let max_total = config.policy.max_total();
    let mut attackers = Vec::new();
    let mut curves = Vec::new();
    let mut attacker_totals = BTreeMap::new();
    for (i, kind) in config.attackers.iter().enumerate() {
        let totals: Vec<u32> = eligible.iter().flat_map(|o| o.attacks[i].iter().copied()).collect();
        attackers.push(summarize(kind.as_str(), &totals, &config.policy));
        curves.push(fpfn_curves(&legit_totals, &totals, max_total, kind.as_str())?);
        attacker_totals.insert(kind.as_str().to_owned(), totals);
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("taste_model".into(), "v = w*c + (1-w)*p, standardized; rating = clamp(round(center + scale*v + noise))".into());
    metadata.insert(
        "sigma_distribution".into(),
        format!(
            "per-rater factor ~ Uniform[{:.2}, {:.2}] on sigma_rate and sigma_select (free modeling choice)",
            1.0 - config.preset.sigma_spread,
            1.0 + config.preset.sigma_spread
        ),
    );
    metadata.insert("ineligible_policy".into(), "ineligible portfolios are skipped and counted".into());

    Ok(MonteCarloReport {
        config: config.clone(),
        eligible_trials: eligible.len(),
        ineligible_trials: ineligible,
        legit: summarize("legitimate", &legit_totals, &config.policy),
        attackers,
        curves,
        legit_totals,
        attacker_totals,
        metadata,
    })
}

/// Mean per-rater correlation between two independent ratings of the same
/// `r` images, for `raters` synthetic raters.
pub fn test_retest_correlation(preset: &RaterPreset, raters: usize, r: usize, seed: u64) -> Result<f64, SimulationError> {
    preset.validate()?;
    let bank = synthetic_bank(r.max(300));
    let field = TasteField::generate(&bank, derive_seed(seed, u64::MAX));
    let rs: Vec<Option<f64>> = (0..raters)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let rater = SyntheticRater::new(UserId::new(format!("r{i}")), &bank, &field, preset, derive_seed(s, 0));
            let portfolio = simulate_enrollment(&rater, &bank, r, derive_seed(s, 1)).ok()?;
            let (ids, first): (Vec<ImageId>, Vec<f64>) =
                portfolio.values().map(|(id, v)| (id.clone(), f64::from(v))).unzip();
            let second: Vec<f64> = rater.rerate(&ids, derive_seed(s, 2)).into_iter().map(f64::from).collect();
            crate::analytics::pearson(&first, &second)
        })
        .collect();
    let valid: Vec<f64> = rs.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(SimulationError::InvalidConfig("no rater produced a defined correlation".into()));
    }
    Ok(valid.iter().sum::<f64>() / valid.len() as f64)
}
