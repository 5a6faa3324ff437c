//! `intentguard`: form corpora, campaigns, trace replay and the verification service.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use intentguard::formspec::{bank_transfer, parse_spec, parse_unchecked, to_document, validate_spec, FormSpecification};
use intentguard::harness::campaign::{form_for_run, parse_config, resolve_noise, run_campaign, run_seed, FormChoice, IMAGE_SIZE};
use intentguard::harness::{replay, AttackKind};
use intentguard::screen::{make_pose, parse_trace, PoseKind};
use intentguard::server::net;
use intentguard::server::{Server, PAIRING_TIMEOUT_MS};
use intentguard::supervisor::format_alarm_log;
use intentguard::textenc;
use intentguard::DeviceKey;

#[derive(Parser)]
#[command(name = "intentguard", version, about = "Visual supervision of form input: simulation and verification service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a corpus of random form specifications.
    GenForms {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Run a campaign config; exits 1 when a threshold is missed.
    RunCampaign {
        #[arg(long)]
        config: PathBuf,
        /// Directory for `report.txt` and `runs.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        /// `zero`, `calibrated` or a profile file.
        #[arg(long)]
        noise: Option<String>,
        /// `straight` or `inclined:<deg>`.
        #[arg(long)]
        pose: Option<String>,
    },
    /// Serve spec requests and two-channel submissions over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Extra spec files or directories of them; the bank-transfer form is always registered.
        #[arg(long)]
        spec: Vec<PathBuf>,
        /// Hex key proof-of-intent MACs are checked against.
        #[arg(long)]
        device_key: Option<String>,
        /// Seconds a half-submitted session waits for its other channel.
        #[arg(long, default_value_t = PAIRING_TIMEOUT_MS / 1000)]
        pairing_timeout: u64,
    },
    /// Re-run a recorded edit trace and print the alarm log and outcome.
    Replay {
        trace: PathBuf,
        /// Form the trace was recorded on; defaults to the trace's `# spec:` header, then bank transfer.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        pose: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check spec documents; exits 1 when any is invalid.
    VerifySpec {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

/// Usage or environment failures map to exit code 2, failed checks to 1.
enum Failure {
    Check,
    Env(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Env(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("INTENTGUARD_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenForms { seed, out, count } => gen_forms(seed, &out, count),
        Command::RunCampaign { config, out, seed, runs, noise, pose } => {
            campaign(&config, out.as_deref(), seed, runs, noise.as_deref(), pose.as_deref())
        }
        Command::Serve { host, port, spec, device_key, pairing_timeout } => {
            serve(&host, port, &spec, device_key.as_deref(), pairing_timeout)
        }
        Command::Replay { trace, spec, noise, pose, seed } => {
            replay_trace(&trace, spec.as_deref(), noise.as_deref(), pose.as_deref(), seed)
        }
        Command::VerifySpec { files } => verify_specs(&files),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Env(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn gen_forms(seed: u64, out: &Path, count: usize) -> Result<(), Failure> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for i in 0..count {
        let spec = form_for_run(FormChoice::Random, AttackKind::None, run_seed(seed, i));
        let path = out.join(format!("form_{i:04}.json"));
        fs::write(&path, to_document(&spec)).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {count} forms to {}", out.display());
    Ok(())
}

fn campaign(
    config: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    runs: Option<usize>,
    noise: Option<&str>,
    pose: Option<&str>,
) -> Result<(), Failure> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_config(&text, base).with_context(|| format!("in {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = runs {
        if n == 0 {
            return Err(anyhow!("--runs must be at least 1").into());
        }
        cfg.runs = n;
    }
    if let Some(n) = noise {
        cfg.noise = resolve_noise(n, Path::new(".")).map_err(anyhow::Error::from)?;
        cfg.noise_name = n.to_string();
    }
    if let Some(p) = pose {
        cfg.pose = parse_pose(p)?;
    }
    let report = run_campaign(&cfg);
    let table = report.to_table();
    let failures = report.stats.check(&cfg.thresholds);
    let mut summary = table.clone();
    summary.push('\n');
    if failures.is_empty() {
        summary.push_str("thresholds: met\n");
    } else {
        for f in &failures {
            summary.push_str(&format!("threshold missed: {f}\n"));
        }
    }
    print!("{summary}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.txt"), &summary).context("writing report.txt")?;
        fs::write(dir.join("runs.csv"), report.to_csv()).context("writing runs.csv")?;
    }
    if failures.is_empty() { Ok(()) } else { Err(Failure::Check) }
}

fn parse_pose(s: &str) -> Result<PoseKind> {
    let pose: PoseKind = s.parse().map_err(|e: String| anyhow!(e))?;
    make_pose(pose, IMAGE_SIZE)?;
    Ok(pose)
}

fn load_spec(path: &Path) -> Result<FormSpecification> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_spec(&text).with_context(|| format!("in {}", path.display()))
}

fn spec_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn serve(host: &str, port: u16, specs: &[PathBuf], device_key: Option<&str>, pairing_timeout: u64) -> Result<(), Failure> {
    let server = Arc::new(Server::new());
    server.register(bank_transfer()).map_err(anyhow::Error::from)?;
    for path in specs {
        for file in spec_files(path)? {
            let spec = load_spec(&file)?;
            server.register(spec).map_err(|e| anyhow!("{}: {e}", file.display()))?;
        }
    }
    match device_key {
        Some(hex) => server.set_default_key(DeviceKey::from_hex(hex).context("--device-key")?),
        None => log::warn!("no --device-key given; every proof-of-intent will be rejected"),
    }
    let addr = format!("{host}:{port}");
    let (local, stop, handle) =
        net::spawn(server, &addr, Duration::from_secs(pairing_timeout)).with_context(|| format!("binding {addr}"))?;
    let flag = Arc::clone(&stop);
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)).context("installing signal handler")?;
    println!("listening on {local}");
    match handle.join() {
        Ok(r) => r.context("accept loop")?,
        Err(_) => return Err(anyhow!("accept loop panicked").into()),
    }
    Ok(())
}

/// `# key: value` lines at the top of a trace.
fn trace_headers(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .take_while(|l| l.is_empty() || l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn replay_trace(
    path: &Path,
    spec: Option<&Path>,
    noise: Option<&str>,
    pose: Option<&str>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let events = parse_trace(&text).with_context(|| format!("in {}", path.display()))?;
    let headers = trace_headers(&text);
    let header = |key: &str| headers.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let base = path.parent().unwrap_or(Path::new("."));
    let spec = match (spec, header("spec")) {
        (Some(p), _) => load_spec(p)?,
        (None, Some(p)) => load_spec(&base.join(p))?,
        (None, None) => bank_transfer(),
    };
    let attack = match header("attack") {
        Some(a) => a.parse().map_err(|e: String| anyhow!(e))?,
        None => AttackKind::None,
    };
    let noise = match noise {
        Some(n) => resolve_noise(n, Path::new(".")).map_err(anyhow::Error::from)?,
        None => resolve_noise(header("noise").unwrap_or("zero"), base).map_err(anyhow::Error::from)?,
    };
    let pose = parse_pose(pose.or(header("pose")).unwrap_or("straight"))?;
    let seed = match (seed, header("seed")) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse().with_context(|| format!("bad seed header {s:?}"))?,
        (None, None) => 0,
    };
    let frame_interval = header("frame_interval_ms").map(str::parse).transpose().context("bad frame_interval_ms header")?;
    let outcome = replay(&spec, &events, attack, &noise, make_pose(pose, IMAGE_SIZE).map_err(anyhow::Error::from)?, seed, frame_interval)
        .map_err(|e| anyhow!("event {} at {} ms: {}", e.index + 1, e.t_ms, e.source))?;
    print!("{}", format_alarm_log(&outcome.alarms));
    println!("outcome {}", outcome.outcome);
    println!("verdict {}", outcome.verdict.decision);
    for (id, value) in &outcome.client_fields {
        if !value.is_empty() {
            println!("field {} {}", textenc::encode(id), textenc::encode(value));
        }
    }
    Ok(())
}

fn verify_specs(files: &[PathBuf]) -> Result<(), Failure> {
    let mut bad = 0;
    for file in files {
        let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        let spec = match parse_unchecked(&text) {
            Ok(s) => s,
            Err(e) => {
                println!("{}: invalid: {e}", file.display());
                bad += 1;
                continue;
            }
        };
        let issues = validate_spec(&spec);
        if issues.is_empty() {
            println!("{}: ok ({} elements)", file.display(), spec.elements.len());
        } else {
            bad += 1;
            for issue in issues {
                println!("{}: invalid: {issue}", file.display());
            }
        }
    }
    if bad > 0 { Err(Failure::Check) } else { Ok(()) }
}
