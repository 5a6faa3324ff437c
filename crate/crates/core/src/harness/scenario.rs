//! End-to-end scenario execution on a simulated clock.
//!
//! Every frame interval the screen is rendered through the camera pose,
//! realigned, passed through the OCR model and matched against the
//! specification before the supervisor sees it. User and attacker events
//! scheduled for the same millisecond as a frame are applied first.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::attack::{AttackKind, AttackScript, Attacker, TypingContext};
use super::typist::{Typist, TypistModel, FOCUS_SETTLE_MS};
use crate::formspec::FormSpecification;
use crate::screen::{render, CameraPose, EditAction, EditEvent, Key, ScreenError, ScreenState};
use crate::server::{Decision, Server, Verdict};
use crate::supervisor::{Alarm, DeviceKey, Phase, Supervisor, VerificationRecord};
use crate::vision::{match_to_spec, ocr_observe, read_title, realign_to_canonical, OcrNoiseModel};

/// A user facing an unresolved alarm for this long abandons the form.
pub const ABANDON_AFTER_MS: u64 = 2000;
/// Simulated time limit for one scenario.
pub const SCENARIO_LIMIT_MS: u64 = 600_000;

const SESSION_TOKEN: &str = "session-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OutcomeClass {
    NoAttackClean,
    /// No attack reached the screen, yet an alarm was raised or the server
    /// did not accept.
    FalseAlarm,
    EngineDetected,
    EngineMissed,
    UserDependent,
    ServerCaught,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 6] = [
        Self::NoAttackClean,
        Self::FalseAlarm,
        Self::EngineDetected,
        Self::EngineMissed,
        Self::UserDependent,
        Self::ServerCaught,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoAttackClean => "NoAttackClean",
            Self::FalseAlarm => "FalseAlarm",
            Self::EngineDetected => "EngineDetected",
            Self::EngineMissed => "EngineMissed",
            Self::UserDependent => "UserDependent",
            Self::ServerCaught => "ServerCaught",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown outcome {s:?}"))
    }
}

/// Maps one run to its outcome class.
///
/// `attack_start_ms` is `None` when no attack reached the screen or channel.
pub fn classify(kind: AttackKind, attack_start_ms: Option<u64>, alarms: &[Alarm], verdict: &Verdict) -> OutcomeClass {
    match attack_start_ms {
        None => {
            if alarms.is_empty() && verdict.decision == Decision::Accept {
                OutcomeClass::NoAttackClean
            } else {
                OutcomeClass::FalseAlarm
            }
        }
        Some(start) => {
            if alarms.iter().any(|a| a.timestamp_ms >= start) {
                OutcomeClass::EngineDetected
            } else if verdict.decision == Decision::Reject {
                OutcomeClass::ServerCaught
            } else if kind.is_user_dependent() {
                OutcomeClass::UserDependent
            } else {
                OutcomeClass::EngineMissed
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub attack: AttackKind,
    pub attack_start_ms: Option<u64>,
    pub attack_target: Option<String>,
    pub alarms: Vec<Alarm>,
    pub verdict: Verdict,
    pub outcome: OutcomeClass,
    pub frames: u64,
    pub verification: Option<VerificationRecord>,
    /// The supervisor reached input supervision at least once.
    pub verified: bool,
    pub client_fields: BTreeMap<String, String>,
    pub poi_fields: Option<BTreeMap<String, String>>,
    pub end_ms: u64,
    /// Every event applied to the screen, in order.
    pub trace: Vec<EditEvent>,
}

impl ScenarioOutcome {
    pub fn attack_applied(&self) -> bool {
        self.attack_start_ms.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioParams {
    pub spec: FormSpecification,
    pub typist: TypistModel,
    pub attack: AttackScript,
    pub noise: OcrNoiseModel,
    pub pose: CameraPose,
    /// Seeds the typist's timing and the scene's OCR noise.
    pub seed: u64,
    /// Camera sampling period; the specification's policy value when `None`.
    pub frame_interval_ms: Option<u64>,
}

struct Engine {
    screen: ScreenState,
    sup: Supervisor,
    server: Server,
    pose: CameraPose,
    noise: OcrNoiseModel,
    seed: u64,
    frame_interval_ms: u64,
    key: DeviceKey,
    next_frame_ms: u64,
    alarmed_since: Option<u64>,
    verified: bool,
    trace: Vec<EditEvent>,
    finished: Option<Submission>,
}

/// Submit time, client-channel fields and the signed fields, if any.
type Submission = (u64, BTreeMap<String, String>, Option<BTreeMap<String, String>>);

impl Engine {
    fn new(spec: &FormSpecification, pose: CameraPose, noise: OcrNoiseModel, seed: u64, frame_interval_ms: Option<u64>) -> Self {
        let server = Server::new();
        server.register(spec.clone()).expect("fresh registry");
        let key = DeviceKey::from_seed(seed);
        server.enroll_device(SESSION_TOKEN, key.clone());
        Self {
            screen: ScreenState::new(spec.clone()),
            sup: Supervisor::new(),
            server,
            pose,
            noise,
            seed,
            frame_interval_ms: frame_interval_ms.unwrap_or(spec.policy.frame_interval_ms).max(1),
            key,
            next_frame_ms: 0,
            alarmed_since: None,
            verified: false,
            trace: Vec::new(),
            finished: None,
        }
    }

    fn apply(&mut self, e: EditEvent) -> Result<(), ScreenError> {
        self.screen.apply_edit(&e)?;
        self.trace.push(e);
        Ok(())
    }

    fn frame(&mut self) {
        let t = self.next_frame_ms;
        self.next_frame_ms += self.frame_interval_ms;
        self.screen.advance_to(t);
        let raw = render(&self.screen, &self.pose);
        let canonical = realign_to_canonical(&raw).expect("camera poses keep the form boundary convex");
        let seen = ocr_observe(&canonical, &self.noise, self.seed);
        match self.sup.phase() {
            Phase::Submitted => return,
            Phase::Locating => {
                let (title, _) = self.sup.observe_title(read_title(&seen).as_deref(), t).expect("locating");
                if let Some(title) = title {
                    match self.server.serve_spec(&title) {
                        Ok(spec) => {
                            self.sup.load_spec(spec).expect("loading");
                            self.process(&seen);
                        }
                        Err(e) => {
                            log::debug!("{e}");
                            self.sup.spec_unavailable();
                        }
                    }
                }
            }
            Phase::LoadingSpec => {}
            _ => self.process(&seen),
        }
        if self.sup.phase() == Phase::Supervising {
            self.verified = true;
        }
        if self.sup.phase() == Phase::Alarmed {
            self.alarmed_since.get_or_insert(t);
        } else {
            self.alarmed_since = None;
        }
    }

    fn process(&mut self, seen: &crate::screen::FrameObservation) {
        let spec = self.sup.spec().expect("loaded").clone();
        let obs = match_to_spec(seen, &spec);
        self.sup.process_frame(&obs).expect("frames are strictly increasing");
    }

    /// The user gives up, or the session can no longer progress.
    fn stalled(&self, t: u64) -> bool {
        self.sup.is_halted() || self.alarmed_since.is_some_and(|s| t - s >= ABANDON_AFTER_MS)
    }

    /// Both channels submit. `tamper` may alter the client fields.
    fn submit(&mut self, t: u64, tamper: impl FnOnce(&mut BTreeMap<String, String>)) {
        if self.finished.is_some() {
            return;
        }
        let mut client = self.screen.input_values();
        tamper(&mut client);
        let poi = self.sup.submit(SESSION_TOKEN, &self.key, t).ok();
        let poi_fields = poi.as_ref().map(|p| p.fields.clone());
        if let Some(p) = poi {
            self.server.submit_poi(p, t).expect("fresh session");
        }
        let page_id = self.screen.spec().page_id.clone();
        self.server.submit_client(SESSION_TOKEN, &page_id, client.clone(), t).expect("fresh session");
        self.server.expire(t + crate::server::PAIRING_TIMEOUT_MS);
        self.finished = Some((t, client, poi_fields));
    }

    fn outcome(mut self, kind: AttackKind, start: Option<u64>, target: Option<String>, t: u64) -> ScenarioOutcome {
        if self.finished.is_none() {
            self.submit(t, |_| {});
        }
        let (end_ms, client_fields, poi_fields) = self.finished.take().expect("submitted");
        let verdict = self.server.verdict(SESSION_TOKEN).unwrap_or_else(Verdict::timed_out);
        let alarms = self.sup.alarms().to_vec();
        ScenarioOutcome {
            attack: kind,
            attack_start_ms: start,
            attack_target: target,
            outcome: classify(kind, start, &alarms, &verdict),
            alarms,
            verdict,
            frames: self.sup.frames_processed(),
            verification: self.sup.verification_record(),
            verified: self.verified,
            client_fields,
            poi_fields,
            end_ms,
            trace: self.trace,
        }
    }
}

pub fn run_scenario(p: &ScenarioParams) -> ScenarioOutcome {
    let mut engine = Engine::new(&p.spec, p.pose, p.noise.clone(), p.seed, p.frame_interval_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x7e57_7e57);
    let mut attacker = Attacker::new(p.attack, &p.spec, p.typist.typed_chars());
    let mut typist = Typist::new(p.typist.clone(), p.spec.policy.min_focus_dwell_ms);
    if let Some((after, pause)) = attacker.typist_pause() {
        typist = typist.with_pause(after, pause);
    }
    let mut typist_started = false;

    let end = loop {
        let tf = engine.next_frame_ms;
        let tt = typist.next_ms().unwrap_or(u64::MAX);
        let ta = attacker.next_ms().unwrap_or(u64::MAX);
        let t = tf.min(tt).min(ta);
        if t > SCENARIO_LIMIT_MS {
            break t;
        }
        if tt == t {
            if engine.sup.phase() != Phase::Supervising {
                typist.postpone_to(tf + 1);
                continue;
            }
            if let Some(e) = typist.step(t, &engine.screen, &mut rng) {
                let typed_char = matches!(e.action, EditAction::Keypress { key: Key::Char(_), .. });
                let submit = matches!(e.action, EditAction::Submit);
                engine.apply(e).expect("typist events are valid");
                if typed_char {
                    let field = typist.current_field().unwrap_or("").to_string();
                    attacker.on_typed(TypingContext {
                        typed: typist.typed(),
                        t_ms: t,
                        field: &field,
                        field_focus_ms: typist.focus_gained_ms(),
                        dwell_ms: p.spec.policy.min_focus_dwell_ms,
                    });
                }
                if submit {
                    engine.submit(t, |fields| attacker.tamper(fields, t));
                    break t;
                }
            }
            continue;
        }
        if ta == t {
            if let Some(e) = attacker.step(t, &engine.screen) {
                if let EditAction::Focus { element, additional: false } = &e.action {
                    typist.note_focus(element, t);
                }
                engine.apply(e).expect("attacker targets known elements");
            }
            continue;
        }
        engine.frame();
        if !typist_started && engine.sup.phase() == Phase::Supervising {
            typist.start(t + FOCUS_SETTLE_MS);
            typist_started = true;
        }
        if engine.stalled(t) {
            break t;
        }
    };
    let start = attacker.started_ms();
    let target = attacker.target().map(str::to_string);
    engine.outcome(p.attack.kind, start, target, end)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {index} at {t_ms} ms: {source}")]
pub struct ReplayError {
    pub index: usize,
    pub t_ms: u64,
    #[source]
    pub source: ScreenError,
}

/// Re-executes a recorded event trace.
///
/// Frames continue after the last event until the session stalls, or until
/// it has been quiet and supervised for [`ABANDON_AFTER_MS`]; both channels
/// then submit unless the trace submitted earlier.
pub fn replay(
    spec: &FormSpecification,
    events: &[EditEvent],
    attack: AttackKind,
    noise: &OcrNoiseModel,
    pose: CameraPose,
    seed: u64,
    frame_interval_ms: Option<u64>,
) -> Result<ScenarioOutcome, ReplayError> {
    let mut engine = Engine::new(spec, pose, noise.clone(), seed, frame_interval_ms);
    let last_event = events.last().map_or(0, |e| e.t_ms);
    let start = events.iter().find(|e| e.actor == crate::screen::Actor::Attacker).map(|e| e.t_ms);
    let target = events.iter().find_map(|e| match (&e.actor, &e.action) {
        (crate::screen::Actor::Attacker, EditAction::Replace { element, .. }) => Some(element.clone()),
        _ => None,
    });
    let mut next = 0;
    let end = loop {
        let tf = engine.next_frame_ms;
        if let Some(e) = events.get(next).filter(|e| e.t_ms <= tf) {
            let t = e.t_ms;
            let submit = matches!(e.action, EditAction::Submit);
            engine.apply(e.clone()).map_err(|source| ReplayError { index: next, t_ms: t, source })?;
            next += 1;
            if submit {
                engine.submit(t, |_| {});
                break t;
            }
            continue;
        }
        if tf > last_event.saturating_add(SCENARIO_LIMIT_MS) {
            break tf;
        }
        engine.frame();
        let quiet = next == events.len() && tf >= last_event + ABANDON_AFTER_MS && engine.sup.phase() == Phase::Supervising;
        if engine.stalled(tf) || quiet {
            break tf;
        }
    };
    Ok(engine.outcome(attack, start, target, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervisor::AlarmKind;

    fn verdict(d: Decision) -> Verdict {
        Verdict { decision: d, mismatches: Vec::new(), mac_valid: true }
    }

    fn alarm(t: u64) -> Alarm {
        Alarm { kind: AlarmKind::IllegalChange, element_ids: vec![], expected: "a".into(), detected: "b".into(), timestamp_ms: t }
    }

    #[test]
    fn classification_rules() {
        use AttackKind as K;
        use OutcomeClass as O;
        let accept = verdict(Decision::Accept);
        let reject = verdict(Decision::Reject);
        assert_eq!(classify(K::None, None, &[], &accept), O::NoAttackClean);
        assert_eq!(classify(K::None, None, &[alarm(5)], &accept), O::FalseAlarm);
        assert_eq!(classify(K::None, None, &[], &reject), O::FalseAlarm);
        assert_eq!(classify(K::B1, Some(10), &[alarm(12)], &accept), O::EngineDetected);
        assert_eq!(classify(K::B1, Some(10), &[alarm(5)], &accept), O::EngineMissed);
        assert_eq!(classify(K::Tamper, Some(10), &[], &reject), O::ServerCaught);
        assert_eq!(classify(K::A1, Some(10), &[], &accept), O::UserDependent);
        assert_eq!(classify(K::A2Slow, Some(10), &[], &accept), O::UserDependent);
        assert_eq!(classify(K::A2Fast, Some(10), &[], &accept), O::EngineMissed);
        assert_eq!(classify(K::A1, Some(10), &[alarm(11)], &reject), O::EngineDetected);
    }
}
