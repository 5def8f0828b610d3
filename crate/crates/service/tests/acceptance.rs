//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! `cargo test -p aeba-service --test acceptance`

mod common;

use std::collections::BTreeSet;
use std::future::Future;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aeba_core::analytics::{
    chi_square_gof, cohort_filter, fpfn_curves, password_bits, screen_score_pmf, session_score_pmf,
};
use aeba_core::challenge::{generate_session, AuthPolicy, SessionRequest};
use aeba_core::enrollment::{eligibility_check, partition_portfolio, tie_break_hash, EnrollmentPolicy, Portfolio};
use aeba_core::simulation::{monte_carlo, test_retest_correlation, AttackerKind, MonteCarloConfig, MonteCarloReport, RaterPreset};
use aeba_core::{ImageId, UserId};
use chrono::{TimeZone, Utc};
use common::checks::{self, Op};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn portfolio(user: &str, values: &[u8]) -> Portfolio {
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    Portfolio::from_values(
        user.into(),
        values.iter().enumerate().map(|(i, &v)| (ImageId::new(format!("img-{i:04}")), v)),
        at,
    )
    .unwrap()
}

fn table_one() -> Verdict {
    let start = Instant::now();
    let rows = [
        ((6, 1, 5), 12, 12.92),
        ((8, 2, 4), 19, 19.23),
        ((10, 2, 4), 22, 21.97),
        ((12, 3, 3), 23, 23.35),
        ((12, 5, 5), 49, 48.15),
    ];
    let mut shown = Vec::new();
    for ((d, d_hr, s), printed, real) in rows {
        let bits = password_bits(d, d_hr, s).map_err(|e| e.to_string())?.total_bits;
        ensure((bits.round() as i64 - printed).abs() <= 1, || format!("({d},{d_hr},{s}) = {bits:.2}, printed {printed}"))?;
        ensure((bits - real).abs() < 0.006, || format!("({d},{d_hr},{s}) = {bits:.4}, expected {real}"))?;
        shown.push(format!("{bits:.2}"));
    }
    within_time(start, Duration::from_secs(1))?;
    Ok(format!("bits {}", shown.join(" ")))
}

fn uniform_mc() -> Result<MonteCarloReport, String> {
    // about 40% of noiseless portfolios are eligible; 30k trials with 100
    // replays each gives over 10^6 attacker sessions and 10^4 legitimate ones
    let mut cfg = MonteCarloConfig::new(AuthPolicy::study(), RaterPreset::noiseless(), vec![AttackerKind::Uniform], 30_000, 20_240_603);
    cfg.attacker_replays = 100;
    monte_carlo(&cfg).map_err(|e| e.to_string())
}

fn random_guess(mc: &MonteCarloReport, mc_time: Duration) -> Verdict {
    let start = Instant::now();
    // every key placement against every selection
    let pairs: Vec<u32> = (0u32..256).filter(|m| m.count_ones() == 2).collect();
    let mut counts = [0u64; 3];
    for keys in &pairs {
        for sel in &pairs {
            counts[(keys & sel).count_ones() as usize] += 1;
        }
    }
    ensure(counts == [15 * 28, 12 * 28, 28], || format!("enumerated {counts:?}"))?;
    let screen = screen_score_pmf(8, 2).map_err(|e| e.to_string())?;
    for (k, want) in [15.0, 12.0, 1.0].into_iter().enumerate() {
        ensure(screen.p(k) == want / 28.0, || format!("screen pmf[{k}] = {}", screen.p(k)))?;
    }
    // four screens by direct enumeration of 28^4 selection tuples
    let per: Vec<usize> = pairs.iter().map(|s| (s & 0b11).count_ones() as usize).collect();
    let mut exact = [0u64; 9];
    for a in &per {
        for b in &per {
            for c in &per {
                for d in &per {
                    exact[a + b + c + d] += 1;
                }
            }
        }
    }
    let session = session_score_pmf(8, 2, 4).map_err(|e| e.to_string())?;
    for (k, &c) in exact.iter().enumerate() {
        ensure((session.p(k) - c as f64 / 614_656.0).abs() < 1e-15, || format!("session pmf[{k}]"))?;
    }
    ensure((session.mean() - 2.0).abs() < 1e-12, || format!("mean {}", session.mean()))?;
    ensure(exact[8] == 1 && (session.p(8) - 1.0 / 614_656.0).abs() < 1e-20, || "P(perfect)".into())?;

    let totals = &mc.attacker_totals["uniform"];
    ensure(totals.len() >= 1_000_000, || format!("only {} uniform sessions", totals.len()))?;
    let mut observed = vec![0u64; 9];
    for &t in totals {
        observed[t as usize] += 1;
    }
    let chi = chi_square_gof(&observed, &session.probs).map_err(|e| e.to_string())?;
    ensure(chi.p_value > 0.01, || format!("chi-square p = {:.4}", chi.p_value))?;
    let took = start.elapsed() + mc_time;
    ensure(took < Duration::from_secs(60), || format!("took {took:.2?}"))?;
    Ok(format!(
        "pmf 15/12/1 of 28, P(8)=1/614656, {} MC sessions chi2 p={:.3}",
        totals.len(),
        chi.p_value
    ))
}

fn challenge_invariants() -> Verdict {
    let enrollment = EnrollmentPolicy::default();
    let policy = AuthPolicy::study();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cooldown = BTreeSet::new();
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let (mut screens, mut portfolios) = (0usize, 0usize);
    let (mut origin, mut margin, mut repeats) = (0usize, 0usize, 0usize);
    let mut positions = [0u64; 8];
    while screens < 100_000 {
        let r = rng.random_range(72..140);
        let values: Vec<u8> = (0..r).map(|_| rng.random_range(1..=10)).collect();
        let p = portfolio(&format!("u{portfolios}"), &values);
        let part = partition_portfolio(&p, &enrollment).map_err(|e| e.to_string())?;
        if !eligibility_check(&part, &enrollment, &policy).eligible {
            continue;
        }
        portfolios += 1;
        let keys: BTreeSet<&ImageId> = part.key_pool.iter().map(|x| &x.image_id).collect();
        let decoys: BTreeSet<&ImageId> = part.decoy_pool.iter().map(|x| &x.image_id).collect();
        for _ in 0..5 {
            let request = SessionRequest::new("s".into(), rng.random(), at, &cooldown);
            let s = generate_session(&part, &enrollment, &policy, &request).map_err(|e| e.to_string())?;
            let mut seen = BTreeSet::new();
            for screen in &s.screens {
                screens += 1;
                for (i, img) in screen.displayed.iter().enumerate() {
                    if !seen.insert(img) {
                        repeats += 1;
                    }
                    let is_key = screen.key_set.contains(img);
                    if is_key {
                        positions[i] += 1;
                    }
                    if (is_key && !keys.contains(img)) || (!is_key && !decoys.contains(img)) {
                        origin += 1;
                    }
                }
                origin += usize::from(screen.key_set.len() != policy.d_hr || screen.displayed.len() != policy.d);
                let value = |id: &ImageId| i16::from(p.value_of(id).unwrap());
                let kmin = screen.key_set.iter().map(value).min().unwrap();
                let dmax = screen.displayed.iter().filter(|d| !screen.key_set.contains(*d)).map(value).max().unwrap();
                margin += usize::from(kmin - dmax < i16::from(policy.margin));
            }
        }
    }
    ensure(origin == 0 && margin == 0 && repeats == 0, || {
        format!("violations: origin {origin}, margin {margin}, repeats {repeats}")
    })?;
    let p = 2.0 / 8.0;
    let n = screens as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    let worst = positions.iter().map(|&c| (c as f64 - n * p).abs() / sigma).fold(0.0, f64::max);
    ensure(worst <= 3.0, || format!("positional deviation {worst:.2} sigma: {positions:?}"))?;
    Ok(format!("{screens} screens from {portfolios} portfolios, worst position {worst:.2} sigma"))
}

fn noiseless(mc: &MonteCarloReport) -> Verdict {
    let legit = &mc.legit;
    ensure(legit.sessions >= 10_000, || format!("only {} legitimate sessions", legit.sessions))?;
    ensure(legit.passes == legit.sessions, || format!("{} of {} passed", legit.passes, legit.sessions))?;
    let uniform = mc.attacker(AttackerKind::Uniform).ok_or("no uniform summary")?;
    let n = uniform.sessions as u64;
    let k = uniform.passes as u64;
    let dist = Binomial::new(1.0 / 614_656.0, n).map_err(|e| e.to_string())?;
    let lower = dist.cdf(k);
    let upper = if k == 0 { 1.0 } else { 1.0 - dist.cdf(k - 1) };
    let p_value = (2.0 * lower.min(upper)).min(1.0);
    ensure(p_value > 0.01, || format!("{k} strict passes in {n}, binomial p = {p_value:.4}"))?;
    Ok(format!(
        "FN=0 over {} sessions; uniform {k}/{n} strict passes (expected {:.2}, p={p_value:.3})",
        legit.sessions,
        n as f64 / 614_656.0
    ))
}

fn fpfn_oracle() -> Verdict {
    let curve = fpfn_curves(&[8, 7, 6], &[2, 3, 8], 8, "all").map_err(|e| e.to_string())?;
    let third = |x: Option<f64>| x.is_some_and(|v| (v - 1.0 / 3.0).abs() < 1e-12);
    ensure(third(curve.fp_at(7)) && third(curve.fn_at(7)), || {
        format!("fp(7) {:?} fn(7) {:?}", curve.fp_at(7), curve.fn_at(7))
    })?;
    let fp: Vec<f64> = (0..=8).map(|t| curve.fp_at(t).unwrap()).collect();
    let fnr: Vec<f64> = (0..=8).map(|t| curve.fn_at(t).unwrap()).collect();
    ensure(fp.windows(2).all(|w| w[1] <= w[0]), || format!("fp not monotone {fp:?}"))?;
    ensure(fnr.windows(2).all(|w| w[1] >= w[0]), || format!("fn not monotone {fnr:?}"))?;
    let scores: Vec<(UserId, f64)> = (0..33).map(|i| (UserId::new(format!("u{i:02}")), f64::from(i % 9))).collect();
    let half = cohort_filter(&scores, 0.5).map_err(|e| e.to_string())?.len();
    let third_size = cohort_filter(&scores, 1.0 / 3.0).map_err(|e| e.to_string())?.len();
    ensure(half == 17 && third_size == 11, || format!("cohorts {half} and {third_size}"))?;
    Ok("fp(7)=fn(7)=1/3, monotone; cohorts 17/33 and 11/33".into())
}

fn partition_arithmetic() -> Verdict {
    let policy = EnrollmentPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases: Vec<Vec<u8>> = vec![(0..72).map(|i| (i % 10) as u8 + 1).collect(), vec![7; 72]];
    cases.extend((0..20).map(|_| (0..72).map(|_| rng.random_range(1..=10)).collect()));
    for (n, values) in cases.iter().enumerate() {
        let user = format!("u{n}");
        let p = portfolio(&user, values);
        let part = partition_portfolio(&p, &policy).map_err(|e| e.to_string())?;
        let sizes = (part.key_pool.len(), part.buffer.len(), part.decoy_pool.len());
        ensure(sizes == (15, 13, 44), || format!("case {n}: pools {sizes:?}"))?;
        // rank of an image = number of images ordered before it
        let items: Vec<(ImageId, u8, u64)> = p.values().map(|(id, v)| (id.clone(), v, tie_break_hash(&p.user_id, id))).collect();
        for (id, v, h) in &items {
            let ahead = items
                .iter()
                .filter(|(oid, ov, oh)| ov > v || (ov == v && (oh < h || (oh == h && oid < id))))
                .count();
            let band = if ahead < 15 { &part.key_pool } else if ahead < 28 { &part.buffer } else { &part.decoy_pool };
            ensure(band.iter().any(|r| &r.image_id == id), || format!("case {n}: {id} at rank {ahead}"))?;
        }
        // same ratings inserted in reverse order
        let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let reversed = Portfolio::from_values(
            user.as_str().into(),
            values.iter().enumerate().rev().map(|(i, &v)| (ImageId::new(format!("img-{i:04}")), v)),
            at,
        )
        .map_err(|e| e.to_string())?;
        let again = partition_portfolio(&reversed, &policy).map_err(|e| e.to_string())?;
        ensure(again == part, || format!("case {n}: partition depends on insertion order"))?;
    }
    Ok(format!("15/13/44 for {} portfolios, matches ranking oracle", cases.len()))
}

fn calibration() -> Verdict {
    let r = test_retest_correlation(&RaterPreset::humanlike(), 1000, 72, 2024).map_err(|e| e.to_string())?;
    ensure((r - 0.70).abs() <= 0.05, || format!("test-retest {r:.3}"))?;
    let mut means = Vec::new();
    for seed in 0..5 {
        let cfg = MonteCarloConfig::new(
            AuthPolicy::study(),
            RaterPreset::humanlike(),
            vec![AttackerKind::Uniform, AttackerKind::Population, AttackerKind::Clone],
            1500,
            seed,
        );
        let report = monte_carlo(&cfg).map_err(|e| e.to_string())?;
        let mean = |k| report.attacker(k).map_or(f64::NAN, |a| a.mean_total);
        let (u, p, c) = (mean(AttackerKind::Uniform), mean(AttackerKind::Population), mean(AttackerKind::Clone));
        ensure(u < p && p < c, || format!("seed {seed}: uniform {u:.3} population {p:.3} clone {c:.3}"))?;
        means.push(format!("{u:.2}<{p:.2}<{c:.2}"));
    }
    Ok(format!("test-retest {r:.3}; seeds 0-4: {}", means.join(" ")))
}

/// Runs a check in its own task so a failed assertion becomes a FAIL line.
async fn survives<F: Future<Output = ()> + Send + 'static>(name: &str, check: F) -> Result<(), String> {
    tokio::spawn(check).await.map_err(|e| format!("{name}: {e}"))
}

async fn service_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for scenario in 0..12 {
        let offset = rng.random_range(-48..=56) * 15;
        let ops: Vec<Op> = (0..rng.random_range(10..40))
            .map(|_| match rng.random_range(0..9) {
                0..4 => Op::Start(rng.random_range(0..2)),
                4..6 => Op::Finish(rng.random_range(0..2)),
                _ => Op::Wait(rng.random_range(1..36 * 60)),
            })
            .collect();
        survives(&format!("daily limit scenario {scenario}"), checks::daily_limit(offset, ops)).await?;
    }
    survives("concurrent daily limit", checks::concurrent_game_requests_create_one_session()).await?;
    survives("key secrecy", checks::key_secrecy()).await?;
    survives("replay identity", checks::replay_identity()).await?;
    survives("crash restart", checks::restart_after_every_request()).await?;
    survives("torn write", checks::torn_tail()).await?;
    Ok("daily limit (12 random schedules + 16 concurrent), key secrecy, replay identity, crash restart".into())
}

fn line(name: &str, start: Instant, verdict: &Verdict) -> bool {
    let took = start.elapsed();
    match verdict {
        Ok(detail) => println!("PASS  {name:<24} {detail} [{took:.2?}]"),
        Err(detail) => println!("FAIL  {name:<24} {detail} [{took:.2?}]"),
    }
    verdict.is_ok()
}

#[tokio::main(flavor = "multi_thread", worker_threads = 4)]
async fn main() -> ExitCode {
    let mut results = Vec::new();
    let t = Instant::now();
    results.push(line("table1_password_bits", t, &table_one()));

    let t = Instant::now();
    let mc = uniform_mc();
    let mc_time = t.elapsed();
    let verdict = mc.as_ref().map_err(Clone::clone).and_then(|mc| random_guess(mc, mc_time));
    results.push(line("random_guess_oracle", t, &verdict));

    let t = Instant::now();
    results.push(line("challenge_invariants", t, &challenge_invariants()));

    let t = Instant::now();
    let verdict = mc.as_ref().map_err(Clone::clone).and_then(noiseless);
    results.push(line("noiseless_end_to_end", t, &verdict));

    let t = Instant::now();
    results.push(line("fpfn_oracle", t, &fpfn_oracle()));

    let t = Instant::now();
    results.push(line("partition_arithmetic", t, &partition_arithmetic()));

    let t = Instant::now();
    results.push(line("humanlike_calibration", t, &calibration()));

    let t = Instant::now();
    results.push(line("service_properties", t, &service_properties().await));

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
