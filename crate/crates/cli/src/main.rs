//! `aeba`: password strength, FP/FN curves, Monte Carlo simulation and the
//! study service.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use aeba_core::analytics::{fpfn_curves, password_bits};
use aeba_core::challenge::{AuthPolicy, DecisionMode};
use aeba_core::simulation::{monte_carlo, AttackerKind, MonteCarloConfig, MonteCarloReport, RaterPreset};
use aeba_service::clock::SystemClock;
use aeba_service::store::FileLog;
use aeba_service::{Service, ServiceConfig, Settings};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aeba", version, about = "Aesthetic evaluation-based authentication tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Password space of a screen layout in bits.
    Strength {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        dhr: usize,
        #[arg(long)]
        s: usize,
    },
    /// FP/FN curves as CSV, from two files of session totals or a simulation report.
    Fpfn {
        #[arg(long, requires = "attacker", conflicts_with = "report")]
        legit: Option<PathBuf>,
        #[arg(long, requires = "legit")]
        attacker: Option<PathBuf>,
        /// JSON written by `aeba simulate`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        max_total: u32,
        #[arg(long, default_value = "all")]
        cohort: String,
    },
    /// Monte Carlo of synthetic raters and attackers; writes a JSON report.
    Simulate {
        /// Comma separated `key=value`: d, dhr, s, margin, mode (strict or a threshold).
        #[arg(long, default_value = "d=8,dhr=2,s=4")]
        policy: String,
        #[arg(long, default_value = "humanlike")]
        preset: String,
        #[arg(long, value_delimiter = ',', default_value = "uniform,population,clone")]
        attackers: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Attacker sessions per eligible trial.
        #[arg(long)]
        replays: Option<usize>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the HTTP service. Reads AEBA_LISTEN_ADDR, AEBA_DATA_DIR and AEBA_CONFIG.
    Serve {
        /// Overrides AEBA_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_policy(spec: &str) -> Result<AuthPolicy> {
    let mut policy = AuthPolicy::study();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').with_context(|| format!("expected key=value, got {part:?}"))?;
        let number = || value.parse::<usize>().with_context(|| format!("{key}: not a number: {value:?}"));
        match key {
            "d" => policy.d = number()?,
            "dhr" | "d_hr" => policy.d_hr = number()?,
            "s" => policy.s = number()?,
            "margin" => policy.margin = value.parse().with_context(|| format!("margin: {value:?}"))?,
            "mode" if value == "strict" => policy.mode = DecisionMode::Strict,
            "mode" | "t" => {
                let t = value.trim_start_matches('t');
                policy.mode = DecisionMode::Threshold(t.parse().with_context(|| format!("threshold: {value:?}"))?);
            }
            other => bail!("unknown policy key {other:?}"),
        }
    }
    policy.validate(false)?;
    Ok(policy)
}

fn read_totals(path: &PathBuf) -> Result<Vec<u32>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().with_context(|| format!("{}: bad total {t:?}", path.display())))
        .collect()
}

fn strength(d: usize, d_hr: usize, s: usize) -> Result<()> {
    let r = password_bits(d, d_hr, s)?;
    println!(
        "D={} D_HR={} S={}: {:.2} bits per screen, {:.2} bits total ({} rounded), comparable to {}",
        r.d, r.d_hr, r.s, r.per_screen_bits, r.total_bits, r.rounded_bits, r.comparable
    );
    Ok(())
}

fn fpfn(
    legit: Option<PathBuf>,
    attacker: Option<PathBuf>,
    report: Option<PathBuf>,
    max_total: u32,
    cohort: &str,
) -> Result<()> {
    let mut csv = String::from("threshold,fp,fn,cohort\n");
    match (legit, attacker, report) {
        (Some(l), Some(a), None) => {
            fpfn_curves(&read_totals(&l)?, &read_totals(&a)?, max_total, cohort)?.write_csv_rows(&mut csv);
        }
        (None, None, Some(path)) => {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let report: MonteCarloReport = serde_json::from_str(&text).context("not a simulation report")?;
            for curve in &report.curves {
                curve.write_csv_rows(&mut csv);
            }
        }
        _ => bail!("give either --legit and --attacker, or --report"),
    }
    print!("{csv}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    policy: &str,
    preset: &str,
    attackers: &[String],
    trials: usize,
    seed: u64,
    replays: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let attackers = attackers.iter().map(|a| a.parse::<AttackerKind>()).collect::<Result<Vec<_>, _>>()?;
    let mut config = MonteCarloConfig::new(parse_policy(policy)?, preset.parse::<RaterPreset>()?, attackers, trials, seed);
    if let Some(r) = replays {
        config.attacker_replays = r;
    }
    let report = monte_carlo(&config)?;
    let json = report.to_json();
    match out {
        Some(path) => {
            fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
            eprintln!(
                "{} eligible of {} trials, legitimate pass rate {:.4}",
                report.eligible_trials,
                report.eligible_trials + report.ineligible_trials,
                report.legit.pass_rate
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

async fn serve(config: Option<PathBuf>) -> Result<()> {
    let mut settings = Settings::from_env()?;
    if let Some(path) = config {
        settings.config = ServiceConfig::load(&path)?;
    }
    settings.config.validate()?;
    if settings.config.admin_token.is_none() {
        tracing::warn!("no admin_token configured; admin routes are disabled");
    }
    fs::create_dir_all(&settings.data_dir).with_context(|| format!("creating {}", settings.data_dir.display()))?;
    let log = FileLog::open(&settings.data_dir)?;
    let service = Arc::new(Service::open(settings.config, Box::new(log), Arc::new(SystemClock))?);
    let listener = tokio::net::TcpListener::bind(settings.listen_addr)
        .await
        .with_context(|| format!("binding {}", settings.listen_addr))?;
    tracing::info!("listening on {}, data in {}", listener.local_addr()?, settings.data_dir.display());
    aeba_service::serve(listener, service, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Strength { d, dhr, s } => strength(d, dhr, s),
        Command::Fpfn {
            legit,
            attacker,
            report,
            max_total,
            cohort,
        } => fpfn(legit, attacker, report, max_total, &cohort),
        Command::Simulate {
            policy,
            preset,
            attackers,
            trials,
            seed,
            replays,
            out,
        } => simulate(&policy, &preset, &attackers, trials, seed, replays, out),
        Command::Serve { config } => {
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            tokio::runtime::Runtime::new()?.block_on(serve(config))
        }
    }
}
