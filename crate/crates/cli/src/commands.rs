//! Subcommand definitions and their implementations.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use chrono::{DateTime, Duration, Utc};
use chrono_tz::Tz;
use clap::{Args, Parser, Subcommand, ValueEnum};
use wifiproof_core::assessment::{
    eval_stable_identification, eval_volatile_matching, mean_rate_by_location, PairRule, Scoring,
    VolatileEvalOptions,
};
use wifiproof_core::netsets::{
    compute_stable_intersection, compute_stable_top_fraction, IntersectionConfig, NetsetError,
};
use wifiproof_core::simulator::{generate_scene, simulate_scans, SceneConfig};
use wifiproof_core::store::{distinct_transmitters, write_csv, StoreError};
use wifiproof_core::verifier::verify_batch;
use wifiproof_core::{duration, IngestReport, LocationClaim, ObservationStore, StableMap, TimeWindow};

use crate::config::ServiceConfig;
use crate::lxspots;
use crate::service::{self, AppState};
use crate::timeparse::{day_bounds, parse_bound, parse_date, parse_tz};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_NO_INPUT: u8 = 2;
pub const EXIT_NETSETS: u8 = 3;
pub const EXIT_CHECK_FAILED: u8 = 4;

/// An error that maps to a specific process exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit(code: u8, message: impl Into<String>) -> anyhow::Error {
    Exit {
        code,
        message: message.into(),
    }
    .into()
}

/// Exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Exit>() {
        return e.code;
    }
    if err.downcast_ref::<NetsetError>().is_some() {
        return EXIT_NETSETS;
    }
    EXIT_FAILURE
}

#[derive(Debug, Parser)]
#[command(name = "wifiproof", version, about = "Location proofs from scavenged Wi-Fi scans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load scan CSV files into a store directory.
    Ingest(IngestArgs),
    /// Compute per-location fingerprints over an epoch.
    ComputeStable(ComputeStableArgs),
    /// Verify claims offline and print certificates.
    VerifyClaim(VerifyClaimArgs),
    /// Evaluation tables over a store.
    #[command(subcommand)]
    Assess(AssessCommand),
    /// Turn a scene config into scan CSV.
    Simulate(SimulateArgs),
    /// Run the HTTP verifier service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    /// Store directory.
    #[arg(long)]
    pub store: PathBuf,
    /// Zone of CSV date/time columns and of bare dates given on the command line.
    #[arg(long, default_value = "Europe/Lisbon", value_parser = parse_tz)]
    pub timezone: Tz,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Device id for files without a device_id column.
    #[arg(long)]
    pub device_hint: Option<String>,
    /// Files or glob patterns.
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Intersection,
    TopFraction,
}

#[derive(Debug, Args)]
pub struct EpochArgs {
    /// Epoch start: YYYY-MM-DD (local day start) or RFC 3339. Defaults to the first observation.
    #[arg(long)]
    pub from: Option<String>,
    /// Epoch end: YYYY-MM-DD (local day end) or RFC 3339. Defaults to the last observation.
    #[arg(long)]
    pub to: Option<String>,
}

impl EpochArgs {
    fn window(&self, store: &ObservationStore, tz: Tz) -> Result<TimeWindow> {
        let range = store.time_range();
        let start = match &self.from {
            Some(s) => parse_bound(s, tz, false)?,
            None => range.ok_or_else(|| anyhow!(NetsetError::NoObservations))?.0,
        };
        let end = match &self.to {
            Some(s) => parse_bound(s, tz, true)?,
            None => range.ok_or_else(|| anyhow!(NetsetError::NoObservations))?.1,
        };
        Ok(TimeWindow::epoch(start, end)?)
    }
}

#[derive(Debug, Args)]
pub struct ComputeStableArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[command(flatten)]
    pub epoch: EpochArgs,
    #[arg(long, value_enum, default_value = "top-fraction")]
    pub strategy: StrategyArg,
    /// Share of networks kept by the top-fraction strategy.
    #[arg(long, default_value_t = 0.10)]
    pub fraction: f64,
    /// Keep empty and overlapping intersection sets instead of failing.
    #[arg(long)]
    pub lax: bool,
    /// Fingerprint output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyClaimArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub fingerprint: PathBuf,
    /// Claim JSON (one object or an array); `-` reads stdin.
    #[arg(long)]
    pub claim: String,
    /// Service config whose [verifier] table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Certificate issue time; defaults to now.
    #[arg(long)]
    pub issued_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum AssessCommand {
    /// Fingerprint recognition rate per location and device.
    Stable(AssessStableArgs),
    /// Prover/witness volatile match tables.
    Volatile(AssessVolatileArgs),
    /// Every dataset reproduction check over a directory of CSV files.
    Dataset(AssessDatasetArgs),
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    /// Training epoch; defaults to the first ten collection days.
    #[command(flatten)]
    pub epoch: EpochArgs,
    /// Top-fraction share for the trained fingerprint.
    #[arg(long, default_value_t = 0.10)]
    pub stable_fraction: f64,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

impl TrainingArgs {
    fn train(&self) -> Result<(ObservationStore, StableMap, TimeWindow)> {
        let store = ObservationStore::open(&self.store.store)?;
        let tz = self.store.timezone;
        let epoch = if self.epoch.from.is_none() && self.epoch.to.is_none() {
            lxspots::training_window(&store, tz)?
        } else {
            self.epoch.window(&store, tz)?
        };
        let stable = compute_stable_top_fraction(&store, &epoch, self.stable_fraction)?;
        Ok((store, stable, epoch))
    }
}

#[derive(Debug, Args)]
pub struct AssessStableArgs {
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Test day, YYYY-MM-DD.
    #[arg(long)]
    pub test_day: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoringArg {
    Any,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairRuleArg {
    Symmetric,
    ProverVolatile,
}

#[derive(Debug, Args)]
pub struct AssessVolatileArgs {
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Window searched for each location's session; defaults to the training epoch.
    #[arg(long)]
    pub session_day: Option<String>,
    /// Session length (ISO 8601).
    #[arg(long, default_value = "PT15M", value_parser = parse_duration)]
    pub session_length: Duration,
    /// Sub-interval lengths (ISO 8601, comma separated).
    #[arg(long, value_delimiter = ',', default_value = "PT15M,PT7M30S,PT3M45S,PT1M52.5S", value_parser = parse_duration)]
    pub intervals: Vec<Duration>,
    /// Least-frequent share taken as a device's volatile set.
    #[arg(long, default_value_t = 0.10)]
    pub fraction: f64,
    #[arg(long, value_enum, default_value = "any")]
    pub scoring: ScoringArg,
    #[arg(long, value_enum, default_value = "symmetric")]
    pub pair_rule: PairRuleArg,
    /// Also print every pair outcome.
    #[arg(long)]
    pub pairs: bool,
}

#[derive(Debug, Args)]
pub struct AssessDatasetArgs {
    /// Directory holding the dataset CSV files.
    pub dir: PathBuf,
    #[arg(long, default_value = "Europe/Lisbon", value_parser = parse_tz)]
    pub timezone: Tz,
    /// Exit nonzero when any check fails.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene config JSON.
    #[arg(long)]
    pub scene: PathBuf,
    /// CSV output; `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Also write the ground truth as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "Europe/Lisbon", value_parser = parse_tz)]
    pub timezone: Tz,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML service config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub fingerprint: Option<PathBuf>,
    /// Overrides the verifier delta ladder (ISO 8601, comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_duration)]
    pub deltas: Option<Vec<Duration>>,
    #[arg(long)]
    pub witness_threshold: Option<usize>,
    #[arg(long, value_parser = parse_duration)]
    pub period: Option<Duration>,
}

fn parse_duration(text: &str) -> Result<Duration, String> {
    duration::parse(text).map_err(|e| e.to_string())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a, out),
        Command::ComputeStable(a) => compute_stable(a, out),
        Command::VerifyClaim(a) => verify_claim(a, out),
        Command::Assess(AssessCommand::Stable(a)) => assess_stable(a, out),
        Command::Assess(AssessCommand::Volatile(a)) => assess_volatile(a, out),
        Command::Assess(AssessCommand::Dataset(a)) => assess_dataset(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Serve(a) => serve(a),
    }
}

/// Expands each argument as a glob; arguments that match nothing but name
/// an existing file are taken literally.
pub fn expand_inputs(inputs: &[String]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for pat in inputs {
        let matched: Vec<PathBuf> = glob::glob(pat)
            .with_context(|| format!("bad pattern `{pat}`"))?
            .filter_map(Result::ok)
            .filter(|p| p.is_file())
            .collect();
        if matched.is_empty() && Path::new(pat).is_file() {
            files.push(PathBuf::from(pat));
        }
        files.extend(matched);
    }
    files.dedup();
    Ok(files)
}

fn ingest(a: IngestArgs, out: &mut dyn Write) -> Result<()> {
    let files = expand_inputs(&a.inputs)?;
    if files.is_empty() {
        return Err(exit(EXIT_NO_INPUT, "no input"));
    }
    let mut store = ObservationStore::open(&a.store.store)?;
    let opts = wifiproof_core::store::CsvOptions {
        device_hint: a.device_hint.map(wifiproof_core::DeviceId::new),
        timezone: a.store.timezone,
    };
    let mut total = IngestReport::default();
    let mut missing_column = false;
    for f in &files {
        let result = std::fs::File::open(f)
            .map_err(StoreError::from)
            .and_then(|file| store.ingest_csv(std::io::BufReader::new(file), &opts));
        match result {
            Ok(r) => {
                writeln!(out, "{}: accepted {} rejected {}{}", f.display(), r.accepted, r.rejected, reasons(&r))?;
                total.merge(&r);
            }
            Err(e) => {
                missing_column |= matches!(e, StoreError::MissingColumn(_));
                writeln!(out, "{}: error: {e}", f.display())?;
            }
        }
    }
    writeln!(out, "total: accepted {} rejected {}{}", total.accepted, total.rejected, reasons(&total))?;
    if missing_column {
        return Err(exit(EXIT_FAILURE, "one or more files lack required columns"));
    }
    Ok(())
}

fn reasons(r: &IngestReport) -> String {
    if r.reasons.is_empty() {
        return String::new();
    }
    let parts: Vec<String> = r.reasons.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!(" ({})", parts.join(", "))
}

fn compute_stable(a: ComputeStableArgs, out: &mut dyn Write) -> Result<()> {
    let store = ObservationStore::open(&a.store.store)?;
    let epoch = a.epoch.window(&store, a.store.timezone)?;
    let map = match a.strategy {
        StrategyArg::Intersection => compute_stable_intersection(
            &store,
            &epoch,
            IntersectionConfig {
                strict_stable_asserts: !a.lax,
            },
        )?,
        StrategyArg::TopFraction => compute_stable_top_fraction(&store, &epoch, a.fraction)?,
    };
    std::fs::write(&a.out, map.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    write!(out, "{}", stable_summary(&store, &map, &epoch))?;
    Ok(())
}

/// Per-location fingerprint size next to the distinct networks seen in the epoch.
pub fn stable_summary(store: &ObservationStore, map: &StableMap, epoch: &TimeWindow) -> String {
    let rows: Vec<(String, usize, usize)> = store
        .locations_active_in(epoch)
        .into_iter()
        .map(|l| {
            let total = distinct_transmitters(store.at_location(&l, Some(epoch))).len();
            let size = map.get(&l).map_or(0, |s| s.len());
            (l.to_string(), size, total)
        })
        .collect();
    let w = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0).max(8);
    let mut s = format!("{:<w$}  {:>10}  {:>6}\n", "Location", "Stable set", "Total");
    for (l, size, total) in &rows {
        let pad = w - l.chars().count();
        s.push_str(&format!("{l}{}  {size:>10}  {total:>6}\n", " ".repeat(pad)));
    }
    let (a, b) = rows.iter().fold((0, 0), |acc, r| (acc.0 + r.1, acc.1 + r.2));
    s.push_str(&format!("{:<w$}  {a:>10}  {b:>6}\n", "Total"));
    if !map.dropped.is_empty() {
        s.push_str(&format!("({} networks dropped as shared between locations)\n", map.dropped.len()));
    }
    s
}

fn read_input(path: &str) -> Result<String> {
    if path == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        std::fs::read_to_string(path).with_context(|| format!("reading {path}"))
    }
}

fn verify_claim(a: VerifyClaimArgs, out: &mut dyn Write) -> Result<()> {
    let store = ObservationStore::open(&a.store)?;
    let stable = StableMap::from_json(&std::fs::read_to_string(&a.fingerprint)?)
        .with_context(|| format!("parsing {}", a.fingerprint.display()))?;
    let config = match &a.config {
        Some(p) => ServiceConfig::load(p)?.verifier,
        None => Default::default(),
    };
    let text = read_input(&a.claim)?;
    let value: serde_json::Value = serde_json::from_str(&text).context("claim is not JSON")?;
    let single = !value.is_array();
    let claims: Vec<LocationClaim> = if single {
        vec![serde_json::from_value(value)?]
    } else {
        serde_json::from_value(value)?
    };
    let issued_at = a.issued_at.unwrap_or_else(Utc::now);
    let results = verify_batch(&store, &claims, &config, &stable, issued_at);
    let certs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let json = if single {
        serde_json::to_string_pretty(&certs[0])?
    } else {
        serde_json::to_string_pretty(&certs)?
    };
    writeln!(out, "{json}")?;
    Ok(())
}

fn assess_stable(a: AssessStableArgs, out: &mut dyn Write) -> Result<()> {
    let (store, stable, _) = a.training.train()?;
    let (s, e) = day_bounds(parse_date(&a.test_day)?, a.training.store.timezone)?;
    let rates = eval_stable_identification(&store, &stable, &TimeWindow::period(s, e)?)?;
    match a.training.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&rates)?)?,
        Format::Csv => {
            writeln!(out, "location,device,rate,probe_size")?;
            for r in &rates {
                writeln!(out, "{},{},{:.4},{}", r.loc, r.device, r.rate, r.probe_size)?;
            }
        }
        Format::Text => {
            for r in &rates {
                writeln!(out, "{:<16} {:<16} {:>6.1}%", r.loc.as_str(), r.device.as_str(), 100.0 * r.rate)?;
            }
            writeln!(out, "mean by location:")?;
            for (l, m) in mean_rate_by_location(&rates) {
                writeln!(out, "{:<16} {:>6.1}%", l.as_str(), 100.0 * m)?;
            }
        }
    }
    Ok(())
}

fn assess_volatile(a: AssessVolatileArgs, out: &mut dyn Write) -> Result<()> {
    let (store, stable, epoch) = a.training.train()?;
    let window = match &a.session_day {
        Some(d) => {
            let (s, e) = day_bounds(parse_date(d)?, a.training.store.timezone)?;
            TimeWindow::period(s, e)?
        }
        None => epoch,
    };
    let options = VolatileEvalOptions {
        session_length: a.session_length,
        scoring: match a.scoring {
            ScoringArg::Any => Scoring::Any,
            ScoringArg::First => Scoring::First,
        },
        pair_rule: match a.pair_rule {
            PairRuleArg::Symmetric => PairRule::Symmetric,
            PairRuleArg::ProverVolatile => PairRule::ProverVolatile,
        },
    };
    let ev = eval_volatile_matching(&store, &stable, &window, &a.intervals, a.fraction, options)?;
    match a.training.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&ev)?)?,
        Format::Csv => {
            write!(out, "{}", ev.by_location.to_csv())?;
            writeln!(out)?;
            write!(out, "{}", ev.by_device.to_csv())?;
        }
        Format::Text => {
            write!(out, "{}", ev.by_location.to_text())?;
            writeln!(out)?;
            write!(out, "{}", ev.by_device.to_text())?;
        }
    }
    if a.pairs && a.training.format != Format::Json {
        writeln!(out, "\nlocation,prover,witness,interval_ms,success,bucket")?;
        for p in &ev.pairs {
            let bucket = p.bucket.map(|b| b.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{},{bucket}", p.loc, p.prover, p.witness, p.interval_ms, p.success)?;
        }
    }
    Ok(())
}

fn assess_dataset(a: AssessDatasetArgs, out: &mut dyn Write) -> Result<()> {
    let lines = lxspots::run_all(&a.dir, a.timezone)?;
    for l in &lines {
        writeln!(out, "{l}")?;
    }
    if a.check && lines.iter().any(|l| !l.pass) {
        return Err(exit(EXIT_CHECK_FAILED, "tolerance check failed"));
    }
    Ok(())
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let config: SceneConfig = serde_json::from_str(&text).context("parsing scene config")?;
    let scene = generate_scene(config)?;
    let obs = simulate_scans(&scene);
    if a.out == "-" {
        write_csv(out, &obs, a.timezone)?;
    } else {
        let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out))?;
        write_csv(std::io::BufWriter::new(file), &obs, a.timezone)?;
    }
    if let Some(p) = &a.truth {
        std::fs::write(p, serde_json::to_string_pretty(&scene.ground_truth)?)?;
    }
    Ok(())
}

/// File config with command-line overrides applied.
pub fn service_config(a: &ServeArgs) -> Result<ServiceConfig> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    if let Some(s) = &a.store {
        cfg.store = Some(s.clone());
    }
    if let Some(f) = &a.fingerprint {
        cfg.fingerprint = Some(f.clone());
    }
    if let Some(d) = &a.deltas {
        cfg.verifier.deltas = d.clone();
    }
    if let Some(w) = a.witness_threshold {
        cfg.verifier.witness_threshold = w;
    }
    if let Some(p) = a.period {
        cfg.verifier.period = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Builds service state from a config: opens the store, loads the fingerprint if present.
pub fn service_state(cfg: &ServiceConfig) -> Result<AppState> {
    let store = match &cfg.store {
        Some(dir) => ObservationStore::open(dir)?,
        None => ObservationStore::new(),
    };
    let stable = match &cfg.fingerprint {
        Some(p) if p.exists() => Some(StableMap::from_json(&std::fs::read_to_string(p)?)?),
        _ => None,
    };
    let mut state = AppState::new(store, stable, cfg.verifier.clone());
    if let Some(p) = &cfg.fingerprint {
        state = state.with_fingerprint_path(p.clone());
    }
    Ok(state)
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = service_config(&a)?;
    let state = Arc::new(service_state(&cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}
