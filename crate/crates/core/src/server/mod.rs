//! The trusted endpoint: spec registry, two-channel session pairing and
//! input trace matching.

pub mod net;
pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use thiserror::Error;

use crate::formspec::FormSpecification;
use crate::supervisor::{DeviceKey, ProofOfIntent};
use crate::vision::lenient_equal;

/// Simulated time after which a half-submitted session is dropped.
pub const PAIRING_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Accept,
    Reject,
    TimedOut,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Accept => "Accept",
            Self::Reject => "Reject",
            Self::TimedOut => "TimedOut",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Accept" => Ok(Self::Accept),
            "Reject" => Ok(Self::Reject),
            "TimedOut" => Ok(Self::TimedOut),
            _ => Err(format!("unknown decision {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub element_id: String,
    pub client_value: String,
    pub poi_value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub decision: Decision,
    pub mismatches: Vec<Mismatch>,
    pub mac_valid: bool,
}

impl Verdict {
    pub fn timed_out() -> Self {
        Self { decision: Decision::TimedOut, mismatches: Vec::new(), mac_valid: false }
    }
}

/// Field-by-field comparison under lenient equality. A field present on one
/// side only is compared against the empty string.
pub fn match_traces(client: &BTreeMap<String, String>, poi: &BTreeMap<String, String>) -> Verdict {
    let mut ids: Vec<&String> = client.keys().chain(poi.keys()).collect();
    ids.sort();
    ids.dedup();
    let mut mismatches = Vec::new();
    for id in ids {
        let c = client.get(id);
        let p = poi.get(id);
        let equal = matches!((c, p), (Some(c), Some(p)) if lenient_equal(c, p));
        if !equal {
            mismatches.push(Mismatch {
                element_id: id.clone(),
                client_value: c.cloned().unwrap_or_default(),
                poi_value: p.cloned().unwrap_or_default(),
            });
        }
    }
    let decision = if mismatches.is_empty() { Decision::Accept } else { Decision::Reject };
    Verdict { decision, mismatches, mac_valid: true }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("no form titled {0:?}")]
    UnknownForm(String),
    #[error("form {0:?} is already registered")]
    AlreadyRegistered(String),
    #[error("session {token:?} already has a {channel} submission")]
    DuplicateSubmission { token: String, channel: &'static str },
    #[error("session {0:?} timed out")]
    SessionTimedOut(String),
    #[error("session {0:?} belongs to another form")]
    PageMismatch(String),
}

#[derive(Debug, Clone)]
pub struct SessionRecord {
    pub session_token: String,
    pub page_id: String,
    pub client_submission: Option<(BTreeMap<String, String>, u64)>,
    pub poi_submission: Option<(ProofOfIntent, u64)>,
    pub verdict: Option<Verdict>,
    pub created_at_ms: u64,
}

/// What a channel gets back from a submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ack {
    /// Waiting for the other channel.
    Pending,
    Verdict(Verdict),
}

#[derive(Default)]
struct State {
    registry: BTreeMap<String, FormSpecification>,
    sessions: HashMap<String, SessionRecord>,
    device_keys: HashMap<String, DeviceKey>,
    default_key: Option<DeviceKey>,
}

/// Thread-safe server state. Each session's verdict is computed under the
/// store lock, so concurrent submissions to one session serialize.
#[derive(Default)]
pub struct Server {
    state: Mutex<State>,
}

impl Server {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn register(&self, spec: FormSpecification) -> Result<(), ServerError> {
        let mut st = self.lock();
        if st.registry.contains_key(&spec.page_id) {
            return Err(ServerError::AlreadyRegistered(spec.page_id));
        }
        st.registry.insert(spec.page_id.clone(), spec);
        Ok(())
    }

    /// Looks the title up exactly, then under lenient equality since it was read by OCR.
    pub fn serve_spec(&self, page_id: &str) -> Result<FormSpecification, ServerError> {
        let state = self.lock();
        state
            .registry
            .get(page_id)
            .or_else(|| state.registry.iter().find(|(k, _)| lenient_equal(k, page_id)).map(|(_, v)| v))
            .cloned()
            .ok_or_else(|| ServerError::UnknownForm(page_id.to_string()))
    }

    /// Registers the key a session's device will sign with.
    pub fn enroll_device(&self, session_token: &str, key: DeviceKey) {
        self.lock().device_keys.insert(session_token.to_string(), key);
    }

    /// Key used for sessions without an enrolled device key.
    pub fn set_default_key(&self, key: DeviceKey) {
        self.lock().default_key = Some(key);
    }

    pub fn session(&self, token: &str) -> Option<SessionRecord> {
        self.lock().sessions.get(token).cloned()
    }

    fn session_mut<'a>(st: &'a mut State, token: &str, page_id: &str, now_ms: u64) -> Result<&'a mut SessionRecord, ServerError> {
        let s = st.sessions.entry(token.to_string()).or_insert_with(|| SessionRecord {
            session_token: token.to_string(),
            page_id: page_id.to_string(),
            client_submission: None,
            poi_submission: None,
            verdict: None,
            created_at_ms: now_ms,
        });
        if s.verdict.as_ref().is_some_and(|v| v.decision == Decision::TimedOut)
            || now_ms.saturating_sub(s.created_at_ms) >= PAIRING_TIMEOUT_MS
        {
            if s.verdict.is_none() {
                s.verdict = Some(Verdict::timed_out());
            }
            return Err(ServerError::SessionTimedOut(token.to_string()));
        }
        Ok(s)
    }

    fn conclude(key: Option<&DeviceKey>, s: &mut SessionRecord) -> Ack {
        let (Some((client, _)), Some((poi, _))) = (&s.client_submission, &s.poi_submission) else {
            return Ack::Pending;
        };
        let mac_valid = key.is_some_and(|k| poi.verify(k)) && poi.session_token == s.session_token;
        let mut verdict = match_traces(client, &poi.fields);
        if poi.page_id != s.page_id {
            verdict.decision = Decision::Reject;
        }
        if !mac_valid {
            verdict.decision = Decision::Reject;
            verdict.mac_valid = false;
        }
        log::info!("session {} verdict {}", s.session_token, verdict.decision);
        s.verdict = Some(verdict.clone());
        Ack::Verdict(verdict)
    }

    pub fn submit_client(
        &self,
        session_token: &str,
        page_id: &str,
        fields: BTreeMap<String, String>,
        now_ms: u64,
    ) -> Result<Ack, ServerError> {
        let mut guard = self.lock();
        let st = &mut *guard;
        let key = st.device_keys.get(session_token).or(st.default_key.as_ref()).cloned();
        let s = Self::session_mut(st, session_token, page_id, now_ms)?;
        if s.client_submission.is_some() {
            return Err(ServerError::DuplicateSubmission { token: session_token.to_string(), channel: "client" });
        }
        if s.page_id != page_id {
            return Err(ServerError::PageMismatch(session_token.to_string()));
        }
        s.client_submission = Some((fields, now_ms));
        Ok(Self::conclude(key.as_ref(), s))
    }

    pub fn submit_poi(&self, poi: ProofOfIntent, now_ms: u64) -> Result<Ack, ServerError> {
        let mut guard = self.lock();
        let st = &mut *guard;
        let token = poi.session_token.clone();
        let key = st.device_keys.get(&token).or(st.default_key.as_ref()).cloned();
        let s = Self::session_mut(st, &token, &poi.page_id, now_ms)?;
        if s.poi_submission.is_some() {
            return Err(ServerError::DuplicateSubmission { token, channel: "proof-of-intent" });
        }
        s.poi_submission = Some((poi, now_ms));
        Ok(Self::conclude(key.as_ref(), s))
    }

    /// Times out every undecided session older than the pairing timeout.
    /// Returns the tokens that timed out.
    pub fn expire(&self, now_ms: u64) -> Vec<String> {
        let mut st = self.lock();
        let mut out = Vec::new();
        for s in st.sessions.values_mut() {
            if s.verdict.is_none() && now_ms.saturating_sub(s.created_at_ms) >= PAIRING_TIMEOUT_MS {
                s.verdict = Some(Verdict::timed_out());
                out.push(s.session_token.clone());
            }
        }
        out.sort();
        out
    }

    pub fn verdict(&self, token: &str) -> Option<Verdict> {
        self.lock().sessions.get(token).and_then(|s| s.verdict.clone())
    }

    /// Removes decided sessions, returning how many were dropped.
    pub fn purge_decided(&self) -> usize {
        let mut st = self.lock();
        let before = st.sessions.len();
        st.sessions.retain(|_, s| s.verdict.is_none());
        before - st.sessions.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formspec::bank_transfer;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn server() -> (Server, DeviceKey) {
        let s = Server::new();
        s.register(bank_transfer()).unwrap();
        let key = DeviceKey([5; 32]);
        s.enroll_device("tok", key.clone());
        (s, key)
    }

    #[test]
    fn spec_registry() {
        let (s, _) = server();
        assert_eq!(s.serve_spec("Bank Transfer").unwrap(), bank_transfer());
        assert_eq!(s.serve_spec("Nope"), Err(ServerError::UnknownForm("Nope".into())));
        assert_eq!(s.register(bank_transfer()), Err(ServerError::AlreadyRegistered("Bank Transfer".into())));
    }

    #[test]
    fn trace_matching() {
        assert_eq!(match_traces(&map(&[("a", "1")]), &map(&[("a", "1")])).decision, Decision::Accept);
        let v = match_traces(&map(&[("IBAN", "XY123")]), &map(&[("IBAN", "AB123")]));
        assert_eq!(v.decision, Decision::Reject);
        assert_eq!(v.mismatches[0], Mismatch { element_id: "IBAN".into(), client_value: "XY123".into(), poi_value: "AB123".into() });
        assert_eq!(match_traces(&map(&[("a", "ch 93")]), &map(&[("a", "CH93")])).decision, Decision::Accept);
        let v = match_traces(&map(&[("a", "x")]), &map(&[]));
        assert_eq!(v.mismatches[0].poi_value, "");
        // Absent on one side is a mismatch even when the value is empty.
        assert_eq!(match_traces(&map(&[("a", "")]), &map(&[])).decision, Decision::Reject);
    }

    #[test]
    fn order_independent_pairing() {
        let fields = map(&[("IBAN_value", "CH93")]);
        let results: Vec<Verdict> = [false, true]
            .into_iter()
            .map(|poi_first| {
                let (s, key) = server();
                let poi = ProofOfIntent::sign("Bank Transfer", fields.clone(), "tok", 10, &key).unwrap();
                let (a, b) = if poi_first {
                    let a = s.submit_poi(poi, 10).unwrap();
                    (a, s.submit_client("tok", "Bank Transfer", fields.clone(), 20).unwrap())
                } else {
                    let a = s.submit_client("tok", "Bank Transfer", fields.clone(), 10).unwrap();
                    (a, s.submit_poi(poi, 20).unwrap())
                };
                assert_eq!(a, Ack::Pending);
                match b {
                    Ack::Verdict(v) => v,
                    Ack::Pending => panic!("both channels present"),
                }
            })
            .collect();
        assert_eq!(results[0], results[1]);
        assert_eq!(results[0].decision, Decision::Accept);
    }

    #[test]
    fn bad_mac_rejects() {
        let (s, key) = server();
        let fields = map(&[("IBAN_value", "CH93")]);
        let mut poi = ProofOfIntent::sign("Bank Transfer", fields.clone(), "tok", 10, &key).unwrap();
        poi.mac[3] ^= 0x80;
        s.submit_poi(poi, 10).unwrap();
        let Ack::Verdict(v) = s.submit_client("tok", "Bank Transfer", fields, 11).unwrap() else { panic!() };
        assert_eq!(v.decision, Decision::Reject);
        assert!(!v.mac_valid);
        assert!(v.mismatches.is_empty());
    }

    #[test]
    fn duplicate_and_timeout() {
        let (s, _) = server();
        s.submit_client("tok", "Bank Transfer", map(&[]), 0).unwrap();
        assert!(matches!(s.submit_client("tok", "Bank Transfer", map(&[]), 1), Err(ServerError::DuplicateSubmission { .. })));
        assert!(s.expire(29_999).is_empty());
        assert_eq!(s.expire(30_000), vec!["tok".to_string()]);
        assert_eq!(s.verdict("tok").unwrap().decision, Decision::TimedOut);
        let key = DeviceKey([5; 32]);
        let poi = ProofOfIntent::sign("Bank Transfer", map(&[]), "tok", 0, &key).unwrap();
        assert_eq!(s.submit_poi(poi, 30_001), Err(ServerError::SessionTimedOut("tok".into())));
    }

    #[test]
    fn late_second_channel_times_out() {
        let (s, key) = server();
        s.submit_client("tok", "Bank Transfer", map(&[]), 0).unwrap();
        let poi = ProofOfIntent::sign("Bank Transfer", map(&[]), "tok", 0, &key).unwrap();
        assert_eq!(s.submit_poi(poi, 31_000), Err(ServerError::SessionTimedOut("tok".into())));
        assert_eq!(s.verdict("tok").unwrap().decision, Decision::TimedOut);
    }

    #[test]
    fn unknown_device_rejects() {
        let s = Server::new();
        let key = DeviceKey([1; 32]);
        let poi = ProofOfIntent::sign("F", map(&[]), "other", 0, &key).unwrap();
        s.submit_poi(poi, 0).unwrap();
        let Ack::Verdict(v) = s.submit_client("other", "F", map(&[]), 0).unwrap() else { panic!() };
        assert_eq!(v.decision, Decision::Reject);
    }
}
