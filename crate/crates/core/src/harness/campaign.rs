//! Campaigns: many seeded scenarios, aggregate statistics and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use super::attack::{AttackKind, AttackScript};
use super::scenario::{run_scenario, OutcomeClass, ScenarioOutcome, ScenarioParams};
use super::typist::TypistModel;
use crate::formspec::{bank_transfer, generate_random_form, ContentClass, FormSpecification};
use crate::screen::{make_pose, PoseKind};
use crate::supervisor::AlarmKind;
use crate::vision::{NoiseProfileError, OcrNoiseModel};

/// Camera resolution used by campaigns.
pub const IMAGE_SIZE: (u32, u32) = (1280, 960);
/// Element counts of random forms.
pub const RANDOM_FORM_ELEMENTS: std::ops::RangeInclusive<usize> = 4..=9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMix {
    Single(AttackKind),
    /// Run `i` uses `AttackKind::MIXED[i % 7]`.
    Mixed,
}

impl AttackMix {
    pub fn kind_for(self, run: usize) -> AttackKind {
        match self {
            Self::Single(k) => k,
            Self::Mixed => AttackKind::MIXED[run % AttackKind::MIXED.len()],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Single(k) => k.as_str(),
            Self::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormChoice {
    /// Random forms for B1, B2, tamper and no-attack runs; the bank-transfer
    /// form for the user-study attacks.
    Auto,
    Random,
    BankTransfer,
}

impl FormChoice {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "random" => Ok(Self::Random),
            "bank-transfer" => Ok(Self::BankTransfer),
            _ => Err(format!("unknown form {s:?}; expected auto, random or bank-transfer")),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Auto => "auto",
            Self::Random => "random",
            Self::BankTransfer => "bank-transfer",
        }
    }
}

/// Acceptance thresholds; a missing key is not checked. Rates are fractions.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// EngineDetected among runs where the attack was applied.
    pub min_detected: Option<f64>,
    /// UserDependent among runs where the attack was applied.
    pub min_user_dependent: Option<f64>,
    /// Runs with a FocusTooFast or DwellTooShort alarm among applied runs.
    pub min_timing_alarms: Option<f64>,
    /// ServerCaught among runs where the attack was applied.
    pub min_server_caught: Option<f64>,
    pub max_engine_missed: Option<usize>,
    pub max_false_alarms: Option<usize>,
    /// Runs with any alarm at all.
    pub max_alarmed_runs: Option<usize>,
    pub max_server_rejects: Option<usize>,
    pub min_form_rate: Option<f64>,
    pub min_element_rate: Option<f64>,
    pub max_element_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub runs: usize,
    pub attack: AttackMix,
    pub noise: OcrNoiseModel,
    /// How the noise model was named in the config, for reports.
    pub noise_name: String,
    pub pose: PoseKind,
    pub seed: u64,
    pub frame_interval_ms: Option<u64>,
    pub form: FormChoice,
    pub thresholds: Thresholds,
}

impl CampaignConfig {
    pub fn new(runs: usize, attack: AttackMix, seed: u64) -> Self {
        Self {
            runs,
            attack,
            noise: OcrNoiseModel::zero(),
            noise_name: "zero".into(),
            pose: PoseKind::Straight,
            seed,
            frame_interval_ms: None,
            form: FormChoice::Auto,
            thresholds: Thresholds::default(),
        }
    }

    pub fn with_noise(mut self, name: &str, noise: OcrNoiseModel) -> Self {
        self.noise = noise;
        self.noise_name = name.to_string();
        self
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("config value: {0}")]
    Invalid(String),
    #[error("noise profile {path}: {reason}")]
    Noise { path: PathBuf, reason: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    runs: usize,
    attack: String,
    #[serde(default = "default_noise")]
    noise_profile: String,
    #[serde(default = "default_pose")]
    pose: String,
    seed: u64,
    frame_interval_ms: Option<u64>,
    #[serde(default = "default_form")]
    form: String,
    #[serde(default)]
    thresholds: Thresholds,
}

fn default_noise() -> String {
    "zero".into()
}

fn default_pose() -> String {
    "straight".into()
}

fn default_form() -> String {
    "auto".into()
}

/// Resolves `zero`, `calibrated`, or a profile file path relative to `base`.
pub fn resolve_noise(name: &str, base: &Path) -> Result<OcrNoiseModel, ConfigError> {
    match name {
        "zero" => Ok(OcrNoiseModel::zero()),
        "calibrated" => Ok(OcrNoiseModel::calibrated()),
        path => {
            let p = base.join(path);
            let text = std::fs::read_to_string(&p).map_err(|e| ConfigError::Noise { path: p.clone(), reason: e.to_string() })?;
            OcrNoiseModel::from_toml(&text).map_err(|e: NoiseProfileError| ConfigError::Noise { path: p, reason: e.to_string() })
        }
    }
}

pub fn parse_attack_mix(s: &str) -> Result<AttackMix, String> {
    if s == "mixed" {
        Ok(AttackMix::Mixed)
    } else {
        s.parse().map(AttackMix::Single)
    }
}

/// Parses a campaign config; relative noise profile paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<CampaignConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    if raw.runs == 0 {
        return Err(ConfigError::Invalid("runs must be at least 1".into()));
    }
    if raw.frame_interval_ms == Some(0) {
        return Err(ConfigError::Invalid("frame_interval_ms must be positive".into()));
    }
    let pose: PoseKind = raw.pose.parse().map_err(ConfigError::Invalid)?;
    make_pose(pose, IMAGE_SIZE).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(CampaignConfig {
        runs: raw.runs,
        attack: parse_attack_mix(&raw.attack).map_err(ConfigError::Invalid)?,
        noise: resolve_noise(&raw.noise_profile, base)?,
        noise_name: raw.noise_profile,
        pose,
        seed: raw.seed,
        frame_interval_ms: raw.frame_interval_ms,
        form: FormChoice::parse(&raw.form).map_err(ConfigError::Invalid)?,
        thresholds: raw.thresholds,
    })
}

/// The seed of run `index`: one ChaCha stream per run off the campaign seed.
pub fn run_seed(campaign_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(campaign_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// The form a run uses.
pub fn form_for_run(choice: FormChoice, kind: AttackKind, seed: u64) -> FormSpecification {
    let bank = match choice {
        FormChoice::Auto => kind.prefers_bank_form(),
        FormChoice::Random => false,
        FormChoice::BankTransfer => true,
    };
    if bank {
        return bank_transfer();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf0f0);
    let n = rng.random_range(RANDOM_FORM_ELEMENTS);
    let mix = ContentClass::ALL.into_iter().collect();
    generate_random_form(rng.next_u64(), n, &mix).expect("4 to 9 elements fit the grid").0
}

/// Builds the scenario for run `index` of `cfg`.
pub fn scenario_for_run(cfg: &CampaignConfig, index: usize) -> ScenarioParams {
    let seed = run_seed(cfg.seed, index);
    let kind = cfg.attack.kind_for(index);
    let mut spec = form_for_run(cfg.form, kind, seed);
    if let Some(fi) = cfg.frame_interval_ms {
        spec.policy.frame_interval_ms = fi;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // The slow focus steal needs the user to keep typing through it.
    let iban_len = (kind == AttackKind::A2Slow).then_some(24);
    let typist = TypistModel::for_form(&spec, &mut rng, iban_len);
    ScenarioParams {
        spec,
        typist,
        attack: AttackScript::new(kind, seed),
        noise: cfg.noise.clone(),
        pose: make_pose(cfg.pose, IMAGE_SIZE).expect("validated pose"),
        seed,
        frame_interval_ms: cfg.frame_interval_ms,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub page_id: String,
    pub elements: usize,
    pub outcome: ScenarioOutcome,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignStats {
    pub runs: usize,
    pub outcomes: BTreeMap<OutcomeClass, usize>,
    pub by_attack: BTreeMap<AttackKind, AttackStats>,
    pub forms_checked: usize,
    pub forms_ok: usize,
    pub elements_checked: usize,
    pub elements_ok: usize,
    pub alarmed_runs: usize,
    pub server_rejects: usize,
    pub timing_alarm_runs: usize,
    pub total_frames: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttackStats {
    pub runs: usize,
    pub applied: usize,
    pub detected: usize,
    pub user_dependent: usize,
    pub server_caught: usize,
    pub missed: usize,
    pub timing_alarms: usize,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 { 0.0 } else { n as f64 / d as f64 }
}

impl CampaignStats {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut s = Self { runs: records.len(), ..Self::default() };
        for r in records {
            let o = &r.outcome;
            *s.outcomes.entry(o.outcome).or_default() += 1;
            let a = s.by_attack.entry(o.attack).or_default();
            a.runs += 1;
            let timing = o.alarms.iter().any(|al| al.kind.is_timing_alarm());
            if o.attack_applied() {
                a.applied += 1;
                match o.outcome {
                    OutcomeClass::EngineDetected => a.detected += 1,
                    OutcomeClass::UserDependent => a.user_dependent += 1,
                    OutcomeClass::ServerCaught => a.server_caught += 1,
                    OutcomeClass::EngineMissed => a.missed += 1,
                    _ => {}
                }
                if timing {
                    a.timing_alarms += 1;
                }
            }
            // A session that never got as far as verifying counts as a failed form.
            s.forms_checked += 1;
            if let Some(v) = o.verification {
                s.forms_ok += usize::from(v.form_ok());
                s.elements_checked += v.elements_total;
                s.elements_ok += v.elements_ok;
            }
            s.alarmed_runs += usize::from(!o.alarms.is_empty());
            s.server_rejects += usize::from(o.verdict.decision == crate::server::Decision::Reject);
            s.timing_alarm_runs += usize::from(timing);
            s.total_frames += o.frames;
        }
        s
    }

    pub fn count(&self, c: OutcomeClass) -> usize {
        self.outcomes.get(&c).copied().unwrap_or(0)
    }

    pub fn applied(&self) -> usize {
        self.by_attack.iter().filter(|(k, _)| **k != AttackKind::None).map(|(_, a)| a.applied).sum()
    }

    fn sum(&self, f: impl Fn(&AttackStats) -> usize) -> usize {
        self.by_attack.values().map(f).sum()
    }

    pub fn detection_rate(&self) -> f64 {
        ratio(self.sum(|a| a.detected), self.applied())
    }

    pub fn user_dependent_rate(&self) -> f64 {
        ratio(self.sum(|a| a.user_dependent), self.applied())
    }

    pub fn server_caught_rate(&self) -> f64 {
        ratio(self.sum(|a| a.server_caught), self.applied())
    }

    pub fn timing_alarm_rate(&self) -> f64 {
        ratio(self.sum(|a| a.timing_alarms), self.applied())
    }

    pub fn form_rate(&self) -> f64 {
        ratio(self.forms_ok, self.forms_checked)
    }

    pub fn element_rate(&self) -> f64 {
        ratio(self.elements_ok, self.elements_checked)
    }

    pub fn mean_frames(&self) -> f64 {
        if self.runs == 0 { 0.0 } else { self.total_frames as f64 / self.runs as f64 }
    }

    /// Every threshold that is not met, as a readable line.
    pub fn check(&self, t: &Thresholds) -> Vec<String> {
        let mut out = Vec::new();
        let mut min = |name: &str, limit: Option<f64>, value: f64| {
            if let Some(l) = limit {
                if value < l {
                    out.push(format!("{name}: {value:.4} < {l}"));
                }
            }
        };
        min("detected", t.min_detected, self.detection_rate());
        min("user_dependent", t.min_user_dependent, self.user_dependent_rate());
        min("timing_alarms", t.min_timing_alarms, self.timing_alarm_rate());
        min("server_caught", t.min_server_caught, self.server_caught_rate());
        min("form_rate", t.min_form_rate, self.form_rate());
        min("element_rate", t.min_element_rate, self.element_rate());
        if let Some(l) = t.max_element_rate {
            if self.element_rate() > l {
                out.push(format!("element_rate: {:.4} > {l}", self.element_rate()));
            }
        }
        let mut max = |name: &str, limit: Option<usize>, value: usize| {
            if let Some(l) = limit {
                if value > l {
                    out.push(format!("{name}: {value} > {l}"));
                }
            }
        };
        max("engine_missed", t.max_engine_missed, self.count(OutcomeClass::EngineMissed));
        max("false_alarms", t.max_false_alarms, self.count(OutcomeClass::FalseAlarm));
        max("alarmed_runs", t.max_alarmed_runs, self.alarmed_runs);
        max("server_rejects", t.max_server_rejects, self.server_rejects);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub records: Vec<RunRecord>,
    pub stats: CampaignStats,
}

pub fn run_campaign(cfg: &CampaignConfig) -> CampaignReport {
    let mut records: Vec<RunRecord> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| {
            let params = scenario_for_run(cfg, i);
            let outcome = run_scenario(&params);
            RunRecord { index: i, seed: params.seed, page_id: params.spec.page_id.clone(), elements: params.spec.elements.len(), outcome }
        })
        .collect();
    records.sort_by_key(|r| r.index);
    let stats = CampaignStats::from_records(&records);
    CampaignReport { config: cfg.clone(), records, stats }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

impl CampaignReport {
    pub const CSV_HEADER: [&'static str; 15] = [
        "run", "seed", "attack", "page_id", "elements", "applied", "attack_start_ms", "outcome", "alarms",
        "first_alarm_ms", "verdict", "mismatches", "verify_elements_ok", "verify_form_ok", "frames",
    ];

    /// One row per run, ordered by run index.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        for r in &self.records {
            let o = &r.outcome;
            let alarms: Vec<&str> = o.alarms.iter().map(|a| a.kind.as_str()).collect();
            let verify_ok = o.verification.map(|v| format!("{}/{}", v.elements_ok, v.elements_total)).unwrap_or_default();
            w.write_record([
                r.index.to_string(),
                r.seed.to_string(),
                o.attack.to_string(),
                r.page_id.clone(),
                r.elements.to_string(),
                o.attack_applied().to_string(),
                o.attack_start_ms.map(|t| t.to_string()).unwrap_or_default(),
                o.outcome.to_string(),
                alarms.join("+"),
                o.alarms.first().map(|a| a.timestamp_ms.to_string()).unwrap_or_default(),
                o.verdict.decision.to_string(),
                o.verdict.mismatches.len().to_string(),
                verify_ok,
                o.verification.map(|v| v.form_ok().to_string()).unwrap_or_default(),
                o.frames.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
    }

    pub fn to_table(&self) -> String {
        let c = &self.config;
        let s = &self.stats;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "campaign: runs={} attack={} noise={} pose={} seed={} form={}",
            c.runs,
            c.attack.name(),
            c.noise_name,
            c.pose,
            c.seed,
            c.form.name()
        );
        let _ = writeln!(out, "\nUI verification (first frame)");
        let _ = writeln!(out, "  forms     {:>6}/{:<6} {:>8}", s.forms_ok, s.forms_checked, pct(s.form_rate()));
        let _ = writeln!(out, "  elements  {:>6}/{:<6} {:>8}", s.elements_ok, s.elements_checked, pct(s.element_rate()));
        let _ = writeln!(out, "\nattack      runs  applied  detected  user-dep  server  missed  timing");
        for (k, a) in &s.by_attack {
            let _ = writeln!(
                out,
                "{:<10} {:>5} {:>8} {:>9} {:>9} {:>7} {:>7} {:>7}",
                k.as_str(),
                a.runs,
                a.applied,
                a.detected,
                a.user_dependent,
                a.server_caught,
                a.missed,
                a.timing_alarms
            );
        }
        let _ = writeln!(out, "\noutcomes");
        for class in OutcomeClass::ALL {
            let _ = writeln!(out, "  {:<15} {:>6}", class.as_str(), s.count(class));
        }
        let _ = writeln!(
            out,
            "\ndetected {} of applied; alarmed runs {}; server rejects {}; mean frames {:.1}",
            pct(s.detection_rate()),
            s.alarmed_runs,
            s.server_rejects,
            s.mean_frames()
        );
        let mut kinds: BTreeMap<AlarmKind, usize> = BTreeMap::new();
        for r in &self.records {
            for a in &r.outcome.alarms {
                *kinds.entry(a.kind).or_default() += 1;
            }
        }
        if !kinds.is_empty() {
            let list: Vec<String> = kinds.iter().map(|(k, n)| format!("{k}={n}")).collect();
            let _ = writeln!(out, "alarms: {}", list.join(" "));
        }
        out
    }
}
