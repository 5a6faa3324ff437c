//! The trusted device's supervision state machine.
//!
//! A supervisor first locates the form and loads its specification, then
//! verifies that the screen conforms to it, then supervises every observed
//! change until the user submits. Value discrepancies must be seen in two
//! consecutive frames before they raise an alarm, so a single misread or a
//! frame captured mid-keystroke does not stop the session.

mod poi;

pub use poi::{
    canonical_bytes, compute_mac, BadDeviceKey, CanonicalError, DeviceKey, ProofOfIntent, FIELD_SEP,
    RECORD_SEP,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::formspec::{FormSpecification, SupervisionPolicy};
use crate::textenc;
use crate::vision::{lenient_equal, ObservedForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Locating,
    LoadingSpec,
    Verifying,
    Supervising,
    Occluded,
    Alarmed,
    Submitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlarmKind {
    UiMismatch,
    UnexpectedText,
    IllegalChange,
    NoActivityChange,
    MultipleFocus,
    FocusTooFast,
    DwellTooShort,
    TitleMismatch,
    VerifyTimeout,
}

impl AlarmKind {
    pub const ALL: [AlarmKind; 9] = [
        Self::UiMismatch,
        Self::UnexpectedText,
        Self::IllegalChange,
        Self::NoActivityChange,
        Self::MultipleFocus,
        Self::FocusTooFast,
        Self::DwellTooShort,
        Self::TitleMismatch,
        Self::VerifyTimeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::UiMismatch => "UiMismatch",
            Self::UnexpectedText => "UnexpectedText",
            Self::IllegalChange => "IllegalChange",
            Self::NoActivityChange => "NoActivityChange",
            Self::MultipleFocus => "MultipleFocus",
            Self::FocusTooFast => "FocusTooFast",
            Self::DwellTooShort => "DwellTooShort",
            Self::TitleMismatch => "TitleMismatch",
            Self::VerifyTimeout => "VerifyTimeout",
        }
    }

    /// Value alarms compare a reading with an expected text and clear once
    /// the screen is back to the expected state.
    pub fn is_value_alarm(self) -> bool {
        matches!(self, Self::UiMismatch | Self::UnexpectedText | Self::IllegalChange | Self::NoActivityChange)
    }

    pub fn is_timing_alarm(self) -> bool {
        matches!(self, Self::FocusTooFast | Self::DwellTooShort)
    }
}

impl fmt::Display for AlarmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown alarm kind {0:?}")]
pub struct UnknownAlarmKind(pub String);

impl FromStr for AlarmKind {
    type Err = UnknownAlarmKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| UnknownAlarmKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alarm {
    pub kind: AlarmKind,
    pub element_ids: Vec<String>,
    pub expected: String,
    pub detected: String,
    pub timestamp_ms: u64,
}

impl Alarm {
    /// One alarm-log record: `t_ms kind ids expected detected`.
    pub fn log_line(&self) -> String {
        let ids = if self.element_ids.is_empty() { "-".to_string() } else { self.element_ids.join(",") };
        format!(
            "{} {} {} {} {}",
            self.timestamp_ms,
            self.kind,
            textenc::encode(&ids),
            textenc::encode(&self.expected),
            textenc::encode(&self.detected)
        )
    }

    pub fn parse_log_line(line: &str) -> Result<Self, String> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [t, kind, ids, expected, detected] = parts[..] else {
            return Err(format!("expected 5 fields, found {}", parts.len()));
        };
        let dec = |s: &str| textenc::decode(s).map_err(|e| e.to_string());
        let ids = dec(ids)?;
        Ok(Self {
            timestamp_ms: t.parse().map_err(|_| format!("bad timestamp {t:?}"))?,
            kind: kind.parse().map_err(|e: UnknownAlarmKind| e.to_string())?,
            element_ids: if ids == "-" { Vec::new() } else { ids.split(',').map(str::to_string).collect() },
            expected: dec(expected)?,
            detected: dec(detected)?,
        })
    }
}

pub fn format_alarm_log(alarms: &[Alarm]) -> String {
    alarms.iter().map(|a| a.log_line() + "\n").collect()
}

/// Outcome of the first verification frame, kept for campaign statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationRecord {
    pub elements_total: usize,
    pub elements_ok: usize,
    pub title_ok: bool,
    pub no_unexpected: bool,
}

impl VerificationRecord {
    pub fn form_ok(&self) -> bool {
        self.elements_ok == self.elements_total && self.title_ok && self.no_unexpected
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SupervisorError {
    #[error("frame at {got} ms does not follow the frame at {last} ms")]
    OutOfOrderFrame { last: u64, got: u64 },
    #[error("no specification loaded")]
    NoSpec,
    #[error("the session was already submitted")]
    Finished,
    #[error("a specification can only be loaded after the title was read")]
    NotLoading,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackError {
    #[error("element {0:?} is not focused")]
    NotFocused(String),
    #[error("no hand activity")]
    NoActivity,
    #[error("an alarm is pending")]
    AlarmPending,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoiError {
    #[error("an alarm is pending")]
    AlarmPending,
    #[error("the form has not been verified")]
    NotVerified,
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

const TITLE_KEY: &str = "_title";
const UNEXPECTED_KEY: &str = "_unexpected";

type DiscrepancyKey = (AlarmKind, String);

fn matches_reading(reading: Option<&str>, expected: &str) -> bool {
    match reading {
        Some(r) => lenient_equal(r, expected),
        None => lenient_equal("", expected),
    }
}

fn alarm_subject(a: &Alarm) -> &str {
    match a.kind {
        AlarmKind::UnexpectedText => UNEXPECTED_KEY,
        AlarmKind::TitleMismatch => TITLE_KEY,
        _ => a.element_ids.first().map(String::as_str).unwrap_or(""),
    }
}

#[derive(Debug, Clone)]
pub struct Supervisor {
    phase: Phase,
    spec: Option<FormSpecification>,
    tracked: BTreeMap<String, String>,
    focus: Option<String>,
    focus_since_ms: u64,
    focus_changed_value: bool,
    last_edit_ms: BTreeMap<String, u64>,
    first_frame_ms: Option<u64>,
    verify_started_ms: u64,
    reverify: bool,
    halted: bool,
    last_frame_ms: Option<u64>,
    pending: BTreeMap<DiscrepancyKey, Alarm>,
    active: Vec<Alarm>,
    history: Vec<Alarm>,
    verification: Option<VerificationRecord>,
    frames: u64,
}

impl Default for Supervisor {
    fn default() -> Self {
        Self::new()
    }
}

impl Supervisor {
    pub fn new() -> Self {
        Self {
            phase: Phase::Locating,
            spec: None,
            tracked: BTreeMap::new(),
            focus: None,
            focus_since_ms: 0,
            focus_changed_value: false,
            last_edit_ms: BTreeMap::new(),
            first_frame_ms: None,
            verify_started_ms: 0,
            reverify: false,
            halted: false,
            last_frame_ms: None,
            pending: BTreeMap::new(),
            active: Vec::new(),
            history: Vec::new(),
            verification: None,
            frames: 0,
        }
    }

    /// A supervisor that starts verifying `spec` at `now_ms`, skipping the
    /// title lookup.
    pub fn with_spec(spec: FormSpecification, now_ms: u64) -> Self {
        let mut s = Self::new();
        s.first_frame_ms = Some(now_ms);
        s.phase = Phase::LoadingSpec;
        s.load_spec(spec).expect("loading phase");
        s
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn spec(&self) -> Option<&FormSpecification> {
        self.spec.as_ref()
    }

    pub fn tracked_values(&self) -> &BTreeMap<String, String> {
        &self.tracked
    }

    pub fn focus(&self) -> Option<&str> {
        self.focus.as_deref()
    }

    pub fn focus_since_ms(&self) -> u64 {
        self.focus_since_ms
    }

    pub fn last_edit_ms(&self, element: &str) -> Option<u64> {
        self.last_edit_ms.get(element).copied()
    }

    /// Every alarm raised so far, in order.
    pub fn alarms(&self) -> &[Alarm] {
        &self.history
    }

    /// Alarms that have not been resolved.
    pub fn active_alarms(&self) -> &[Alarm] {
        &self.active
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames
    }

    pub fn verification_record(&self) -> Option<VerificationRecord> {
        self.verification
    }

    fn policy(&self) -> SupervisionPolicy {
        self.spec.as_ref().map(|s| s.policy).unwrap_or_default()
    }

    fn check_order(&mut self, t: u64) -> Result<(), SupervisorError> {
        if let Some(last) = self.last_frame_ms {
            if t <= last {
                return Err(SupervisorError::OutOfOrderFrame { last, got: t });
            }
        }
        self.last_frame_ms = Some(t);
        Ok(())
    }

    fn raise(&mut self, alarm: Alarm) -> Alarm {
        log::debug!("alarm {}", alarm.log_line());
        self.active.push(alarm.clone());
        self.history.push(alarm.clone());
        self.phase = Phase::Alarmed;
        alarm
    }

    fn halt(&mut self, alarm: Alarm) -> Alarm {
        self.halted = true;
        self.raise(alarm)
    }

    /// Feeds the title read from a frame while locating the form.
    ///
    /// Returns the title to look up once one is seen. A form that is never
    /// located within the verification budget raises `VerifyTimeout`.
    pub fn observe_title(&mut self, title: Option<&str>, now_ms: u64) -> Result<(Option<String>, Vec<Alarm>), SupervisorError> {
        if self.phase != Phase::Locating || self.halted {
            return Ok((None, Vec::new()));
        }
        self.frames += 1;
        let first = *self.first_frame_ms.get_or_insert(now_ms);
        // A title that never resolves to a known form counts against the same budget.
        if now_ms - first >= self.policy().verification_budget_ms {
            let a = self.halt(Alarm {
                kind: AlarmKind::VerifyTimeout,
                element_ids: Vec::new(),
                expected: "form located".into(),
                detected: title.map_or_else(|| "no title".into(), |t| format!("unknown title {t:?}")),
                timestamp_ms: now_ms,
            });
            return Ok((None, vec![a]));
        }
        match title {
            Some(t) if !t.trim().is_empty() => {
                self.phase = Phase::LoadingSpec;
                Ok((Some(t.to_string()), Vec::new()))
            }
            _ => Ok((None, Vec::new())),
        }
    }

    /// The server did not know the title that was read; look again.
    pub fn spec_unavailable(&mut self) {
        if self.phase == Phase::LoadingSpec {
            self.phase = Phase::Locating;
        }
    }

    pub fn load_spec(&mut self, spec: FormSpecification) -> Result<(), SupervisorError> {
        if self.phase != Phase::LoadingSpec {
            return Err(SupervisorError::NotLoading);
        }
        self.tracked = spec.elements.iter().map(|e| (e.id.clone(), e.initial_value.clone())).collect();
        self.verify_started_ms = self.first_frame_ms.unwrap_or(0);
        self.spec = Some(spec);
        self.phase = Phase::Verifying;
        self.reverify = false;
        Ok(())
    }

    pub fn process_frame(&mut self, obs: &ObservedForm) -> Result<Vec<Alarm>, SupervisorError> {
        match self.phase {
            Phase::Submitted => return Err(SupervisorError::Finished),
            Phase::Locating | Phase::LoadingSpec => return Err(SupervisorError::NoSpec),
            _ => {}
        }
        self.check_order(obs.timestamp_ms)?;
        self.frames += 1;
        if self.halted {
            return Ok(Vec::new());
        }
        if obs.occluded {
            if self.phase != Phase::Occluded {
                log::debug!("occluded at {} ms", obs.timestamp_ms);
                // A first verification interrupted by occlusion restarts from scratch.
                self.reverify = self.reverify || self.phase != Phase::Verifying;
                self.phase = Phase::Occluded;
            }
            self.pending.clear();
            return Ok(Vec::new());
        }
        if self.phase == Phase::Occluded {
            self.phase = Phase::Verifying;
            self.verify_started_ms = obs.timestamp_ms;
        }
        let spec = self.spec.take().ok_or(SupervisorError::NoSpec)?;
        let alarms = if self.phase == Phase::Verifying { self.verify(&spec, obs) } else { self.supervise(&spec, obs) };
        self.spec = Some(spec);
        Ok(alarms)
    }

    fn title_discrepancy(spec: &FormSpecification, obs: &ObservedForm) -> Option<Alarm> {
        let read = obs.page_id_text.as_deref();
        if read.is_some_and(|t| lenient_equal(t, &spec.page_id)) {
            return None;
        }
        Some(Alarm {
            kind: AlarmKind::TitleMismatch,
            element_ids: Vec::new(),
            expected: spec.page_id.clone(),
            detected: read.unwrap_or("").to_string(),
            timestamp_ms: obs.timestamp_ms,
        })
    }

    fn verify(&mut self, spec: &FormSpecification, obs: &ObservedForm) -> Vec<Alarm> {
        let now = obs.timestamp_ms;
        let mut ok = 0;
        for e in &spec.elements {
            let expected = if self.reverify { &self.tracked[&e.id] } else { &e.initial_value };
            let reading = obs.element_readings.get(&e.id).and_then(|r| r.as_deref());
            if matches_reading(reading, expected) {
                ok += 1;
            }
        }
        let title = Self::title_discrepancy(spec, obs);
        let record = VerificationRecord {
            elements_total: spec.elements.len(),
            elements_ok: ok,
            title_ok: title.is_none(),
            no_unexpected: obs.unexpected_regions.is_empty(),
        };
        if !self.reverify && self.verification.is_none() {
            self.verification = Some(record);
        }

        let mut raised = Vec::new();
        // A different title is a different form: only a persistent, readable
        // one halts the session.
        let title_key = (AlarmKind::TitleMismatch, TITLE_KEY.to_string());
        let mut found = BTreeMap::new();
        if let Some(t) = title.filter(|t| !t.detected.is_empty()) {
            if self.pending.contains_key(&title_key) {
                raised.push(self.halt(t));
                return raised;
            }
            found.insert(title_key, t);
        }
        self.pending = found;

        if record.form_ok() {
            log::debug!("verified at {now} ms");
            if !self.reverify {
                self.focus = match obs.focus_element_ids.as_slice() {
                    [one] => Some(one.clone()),
                    _ => None,
                };
                self.focus_since_ms = now;
                self.focus_changed_value = false;
            }
            self.active.retain(|a| !a.kind.is_value_alarm());
            self.pending.clear();
            self.phase = if self.active.is_empty() { Phase::Supervising } else { Phase::Alarmed };
        } else if now.saturating_sub(self.verify_started_ms) >= spec.policy.verification_budget_ms {
            let bad: Vec<String> = spec
                .elements
                .iter()
                .filter(|e| {
                    let expected = if self.reverify { &self.tracked[&e.id] } else { &e.initial_value };
                    !matches_reading(obs.element_readings.get(&e.id).and_then(|r| r.as_deref()), expected)
                })
                .map(|e| e.id.clone())
                .collect();
            let detected = if bad.is_empty() { "unexpected text".to_string() } else { format!("{} mismatched", bad.len()) };
            raised.push(self.halt(Alarm {
                kind: AlarmKind::VerifyTimeout,
                element_ids: bad,
                expected: "verified form".into(),
                detected,
                timestamp_ms: now,
            }));
        }
        raised
    }

    fn accept_edit(&mut self, element: &str, value: String, now: u64) {
        self.tracked.insert(element.to_string(), value);
        self.last_edit_ms.insert(element.to_string(), now);
        if self.focus.as_deref() == Some(element) {
            self.focus_changed_value = true;
        }
    }

    /// Accepts a change of the focused element made by the user.
    pub fn track_user_edit(&mut self, element: &str, new_reading: &str, now_ms: u64, activity: bool) -> Result<(), TrackError> {
        if !self.active.is_empty() || self.phase == Phase::Alarmed {
            return Err(TrackError::AlarmPending);
        }
        if self.focus.as_deref() != Some(element) {
            return Err(TrackError::NotFocused(element.to_string()));
        }
        if !activity {
            return Err(TrackError::NoActivity);
        }
        self.accept_edit(element, new_reading.to_string(), now_ms);
        Ok(())
    }

    fn supervise(&mut self, spec: &FormSpecification, obs: &ObservedForm) -> Vec<Alarm> {
        let now = obs.timestamp_ms;
        let policy = spec.policy;
        let mut raised = Vec::new();
        let reading = |id: &str| obs.element_readings.get(id).and_then(|r| r.clone());
        let may_edit = self.active.is_empty();

        // Focus rules.
        if obs.focus_element_ids.len() >= 2 {
            if !self.active.iter().any(|a| a.kind == AlarmKind::MultipleFocus) {
                let a = self.raise(Alarm {
                    kind: AlarmKind::MultipleFocus,
                    element_ids: obs.focus_element_ids.clone(),
                    expected: "1 focused element".into(),
                    detected: format!("{} focused elements", obs.focus_element_ids.len()),
                    timestamp_ms: now,
                });
                raised.push(a);
            }
        } else {
            let current = obs.focus_element_ids.first().cloned();
            if current != self.focus {
                if let Some(prev) = self.focus.take() {
                    // A keystroke that landed just before focus moved shows up
                    // in the same frame as the move.
                    let is_input = spec.element(&prev).is_some_and(|e| e.is_input());
                    if let Some(r) = reading(&prev) {
                        if may_edit && is_input && obs.activity && !lenient_equal(&r, &self.tracked[&prev]) {
                            self.accept_edit(&prev, r, now);
                            self.focus_changed_value = true;
                        }
                    }
                    if self.focus_changed_value {
                        let since_edit = now - self.last_edit_ms.get(&prev).copied().unwrap_or(self.focus_since_ms);
                        if since_edit < policy.min_ms_after_last_edit {
                            raised.push(self.raise(Alarm {
                                kind: AlarmKind::FocusTooFast,
                                element_ids: vec![prev.clone()],
                                expected: format!("{} ms", policy.min_ms_after_last_edit),
                                detected: format!("{since_edit} ms"),
                                timestamp_ms: now,
                            }));
                        }
                        let dwell = now - self.focus_since_ms;
                        if dwell < policy.min_focus_dwell_ms {
                            raised.push(self.raise(Alarm {
                                kind: AlarmKind::DwellTooShort,
                                element_ids: vec![prev.clone()],
                                expected: format!("{} ms", policy.min_focus_dwell_ms),
                                detected: format!("{dwell} ms"),
                                timestamp_ms: now,
                            }));
                        }
                    }
                }
                self.focus = current;
                self.focus_since_ms = now;
                self.focus_changed_value = false;
            }
        }

        // Value rules.
        let mut found: BTreeMap<DiscrepancyKey, Alarm> = BTreeMap::new();
        let mut note = |kind: AlarmKind, id: &str, expected: &str, detected: Option<&str>| {
            found.insert(
                (kind, id.to_string()),
                Alarm {
                    kind,
                    element_ids: vec![id.to_string()],
                    expected: expected.to_string(),
                    detected: detected.unwrap_or("").to_string(),
                    timestamp_ms: now,
                },
            );
        };
        for e in &spec.elements {
            let r = reading(&e.id);
            if !e.is_input() {
                if !matches_reading(r.as_deref(), &e.initial_value) {
                    note(AlarmKind::UiMismatch, &e.id, &e.initial_value, r.as_deref());
                }
                continue;
            }
            let tracked = self.tracked[&e.id].clone();
            if matches_reading(r.as_deref(), &tracked) {
                continue;
            }
            let focused = self.focus.as_deref() == Some(e.id.as_str());
            if focused && may_edit && obs.activity {
                match r {
                    Some(text) => self.accept_edit(&e.id, text, now),
                    // An emptied field produces no region: accept it once
                    // it stays empty for a second frame.
                    None if self.pending.contains_key(&(AlarmKind::UiMismatch, e.id.clone())) => {
                        self.accept_edit(&e.id, String::new(), now)
                    }
                    None => note(AlarmKind::UiMismatch, &e.id, &tracked, None),
                }
            } else if focused && !obs.activity {
                note(AlarmKind::NoActivityChange, &e.id, &tracked, r.as_deref());
            } else if r.is_none() {
                note(AlarmKind::UiMismatch, &e.id, &tracked, None);
            } else {
                note(AlarmKind::IllegalChange, &e.id, &tracked, r.as_deref());
            }
        }
        if let Some(t) = Self::title_discrepancy(spec, obs) {
            found.insert((AlarmKind::TitleMismatch, TITLE_KEY.into()), t);
        }
        if !obs.unexpected_regions.is_empty() {
            let texts: Vec<&str> = obs.unexpected_regions.iter().map(|r| r.text.as_str()).collect();
            found.insert(
                (AlarmKind::UnexpectedText, UNEXPECTED_KEY.into()),
                Alarm {
                    kind: AlarmKind::UnexpectedText,
                    element_ids: Vec::new(),
                    expected: String::new(),
                    detected: texts.join(" | "),
                    timestamp_ms: now,
                },
            );
        }

        // Confirmation over two frames.
        for (key, alarm) in &found {
            if !self.pending.contains_key(key) {
                continue;
            }
            let subject = key.1.as_str();
            let already = self.active.iter().any(|a| (a.kind.is_value_alarm() || a.kind == AlarmKind::TitleMismatch) && alarm_subject(a) == subject);
            if already {
                continue;
            }
            if alarm.kind == AlarmKind::TitleMismatch {
                raised.push(self.halt(alarm.clone()));
            } else {
                raised.push(self.raise(alarm.clone()));
            }
        }

        // Value alarms clear once their subject reads as expected again.
        self.active
            .retain(|a| !a.kind.is_value_alarm() || found.keys().any(|(_, subject)| subject == alarm_subject(a)));
        self.pending = found;
        self.phase = if self.active.is_empty() { Phase::Supervising } else { Phase::Alarmed };
        raised
    }

    /// The proof-of-intent for the current tracked input values.
    pub fn build_proof_of_intent(&self, session_token: &str, key: &DeviceKey, now_ms: u64) -> Result<ProofOfIntent, PoiError> {
        if self.phase == Phase::Alarmed || !self.active.is_empty() {
            return Err(PoiError::AlarmPending);
        }
        if self.phase != Phase::Supervising {
            return Err(PoiError::NotVerified);
        }
        let spec = self.spec.as_ref().ok_or(PoiError::NotVerified)?;
        let fields = spec.inputs().map(|e| (e.id.clone(), self.tracked[&e.id].clone())).collect();
        Ok(ProofOfIntent::sign(spec.page_id.clone(), fields, session_token, now_ms, key)?)
    }

    /// The user's explicit submit: builds the proof-of-intent and ends the session.
    pub fn submit(&mut self, session_token: &str, key: &DeviceKey, now_ms: u64) -> Result<ProofOfIntent, PoiError> {
        let poi = self.build_proof_of_intent(session_token, key, now_ms)?;
        self.phase = Phase::Submitted;
        Ok(poi)
    }
}
