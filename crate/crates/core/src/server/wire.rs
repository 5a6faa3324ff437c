//! Length-prefixed textual records: `<byte length>\n<payload>`.
//!
//! A payload is a verb followed by space-separated tokens escaped with
//! [`crate::textenc`]. `SPEC_RESP` carries the raw specification document
//! after its verb instead.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{Decision, Mismatch, Verdict};
use crate::supervisor::ProofOfIntent;
use crate::textenc::{decode, encode};

/// Upper bound on a record payload.
pub const MAX_RECORD_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    SpecReq { page_id: String },
    SpecResp { document: String },
    ClientSubmit { token: String, page_id: String, fields: BTreeMap<String, String> },
    PoiSubmit { poi: ProofOfIntent },
    Verdict { token: String, verdict: Verdict },
    Error { reason: String },
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad length prefix {0:?}")]
    BadLength(String),
    #[error("record of {0} bytes exceeds the limit")]
    TooLong(usize),
    #[error("record is not UTF-8")]
    NotUtf8,
    #[error("malformed {verb} message: {reason}")]
    Malformed { verb: String, reason: String },
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
}

fn malformed(verb: &str, reason: impl Into<String>) -> WireError {
    WireError::Malformed { verb: verb.to_string(), reason: reason.into() }
}

impl Message {
    pub fn to_payload(&self) -> String {
        match self {
            Self::SpecReq { page_id } => format!("SPEC_REQ {}", encode(page_id)),
            Self::SpecResp { document } => format!("SPEC_RESP {document}"),
            Self::ClientSubmit { token, page_id, fields } => {
                let mut s = format!("CLIENT_SUBMIT {} {}", encode(token), encode(page_id));
                for (k, v) in fields {
                    s.push_str(&format!(" {}={}", encode(k), encode(v)));
                }
                s
            }
            Self::PoiSubmit { poi } => {
                let canonical = String::from_utf8(poi.canonical()).expect("canonical payload is UTF-8");
                format!("POI_SUBMIT {} {} {}", encode(&poi.session_token), encode(&canonical), hex::encode(poi.mac))
            }
            Self::Verdict { token, verdict } => {
                let mut s = format!("VERDICT {} {} {}", encode(token), verdict.decision, verdict.mac_valid);
                for m in &verdict.mismatches {
                    s.push_str(&format!(
                        " {}={}={}",
                        encode(&m.element_id),
                        encode(&m.client_value),
                        encode(&m.poi_value)
                    ));
                }
                s
            }
            Self::Error { reason } => format!("ERROR {}", encode(reason)),
        }
    }

    pub fn from_payload(payload: &str) -> Result<Self, WireError> {
        let (verb, rest) = payload.split_once(' ').unwrap_or((payload, ""));
        if verb == "SPEC_RESP" {
            return Ok(Self::SpecResp { document: rest.to_string() });
        }
        let tokens: Vec<&str> = rest.split(' ').filter(|t| !t.is_empty()).collect();
        let dec = |t: &str| decode(t).map_err(|e| malformed(verb, e.to_string()));
        let need = |n: usize| {
            if tokens.len() < n {
                Err(malformed(verb, format!("expected at least {n} fields, found {}", tokens.len())))
            } else {
                Ok(())
            }
        };
        match verb {
            "SPEC_REQ" => {
                need(1)?;
                Ok(Self::SpecReq { page_id: dec(tokens[0])? })
            }
            "CLIENT_SUBMIT" => {
                need(2)?;
                let mut fields = BTreeMap::new();
                for kv in &tokens[2..] {
                    let (k, v) = kv.split_once('=').ok_or_else(|| malformed(verb, format!("field {kv:?} lacks '='")))?;
                    if fields.insert(dec(k)?, dec(v)?).is_some() {
                        return Err(malformed(verb, format!("field {k:?} repeated")));
                    }
                }
                Ok(Self::ClientSubmit { token: dec(tokens[0])?, page_id: dec(tokens[1])?, fields })
            }
            "POI_SUBMIT" => {
                if tokens.len() != 3 {
                    return Err(malformed(verb, "expected token, payload and mac"));
                }
                let token = dec(tokens[0])?;
                let canonical = dec(tokens[1])?;
                let mac: [u8; 32] = hex::decode(tokens[2])
                    .ok()
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| malformed(verb, "mac must be 64 hex digits"))?;
                let poi = ProofOfIntent::from_canonical(canonical.as_bytes(), mac).map_err(|e| malformed(verb, e.to_string()))?;
                if poi.session_token != token {
                    return Err(malformed(verb, "token differs from the signed token"));
                }
                Ok(Self::PoiSubmit { poi })
            }
            "VERDICT" => {
                need(3)?;
                let decision: Decision = tokens[1].parse().map_err(|e: String| malformed(verb, e))?;
                let mac_valid = tokens[2].parse().map_err(|_| malformed(verb, "mac flag must be true or false"))?;
                let mut mismatches = Vec::new();
                for m in &tokens[3..] {
                    let parts: Vec<&str> = m.split('=').collect();
                    let [id, c, p] = parts[..] else {
                        return Err(malformed(verb, format!("bad mismatch {m:?}")));
                    };
                    mismatches.push(Mismatch { element_id: dec(id)?, client_value: dec(c)?, poi_value: dec(p)? });
                }
                Ok(Self::Verdict { token: dec(tokens[0])?, verdict: Verdict { decision, mismatches, mac_valid } })
            }
            "ERROR" => Ok(Self::Error { reason: tokens.first().map(|t| dec(t)).transpose()?.unwrap_or_default() }),
            other => Err(WireError::UnknownVerb(other.to_string())),
        }
    }
}

pub fn write_record<W: Write>(w: &mut W, payload: &str) -> io::Result<()> {
    write!(w, "{}\n{}", payload.len(), payload)?;
    w.flush()
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    write_record(w, &msg.to_payload())
}

/// Reads one record; `None` on a clean end of stream.
pub fn read_record<R: BufRead>(r: &mut R) -> Result<Option<String>, WireError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let digits = line.trim_end_matches(['\n', '\r']);
    let len: usize = digits.parse().map_err(|_| WireError::BadLength(digits.to_string()))?;
    if len > MAX_RECORD_BYTES {
        return Err(WireError::TooLong(len));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map(Some).map_err(|_| WireError::NotUtf8)
}

pub fn read_message<R: BufRead>(r: &mut R) -> Result<Option<Message>, WireError> {
    read_record(r)?.map(|p| Message::from_payload(&p)).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervisor::DeviceKey;

    fn round_trip(m: Message) {
        let mut buf = Vec::new();
        write_message(&mut buf, &m).unwrap();
        let mut r = io::Cursor::new(buf);
        assert_eq!(read_message(&mut r).unwrap(), Some(m));
        assert!(read_message(&mut r).unwrap().is_none());
    }

    #[test]
    fn messages_round_trip() {
        let fields: BTreeMap<String, String> =
            [("IBAN_value", "CH93 0076"), ("note", ""), ("x=y", "a%b")].into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        round_trip(Message::SpecReq { page_id: "Bank Transfer".into() });
        round_trip(Message::SpecResp { document: "{\n  \"a\": 1\n}\n".into() });
        round_trip(Message::ClientSubmit { token: "t 1".into(), page_id: "Bank Transfer".into(), fields: fields.clone() });
        let poi = ProofOfIntent::sign("Bank Transfer", fields.clone(), "t 1", 77, &DeviceKey([2; 32])).unwrap();
        round_trip(Message::PoiSubmit { poi });
        round_trip(Message::Verdict {
            token: "t".into(),
            verdict: Verdict {
                decision: Decision::Reject,
                mismatches: vec![Mismatch { element_id: "IBAN".into(), client_value: "XY123".into(), poi_value: "".into() }],
                mac_valid: true,
            },
        });
        round_trip(Message::Error { reason: "no form titled \"x\"".into() });
    }

    #[test]
    fn framing_errors() {
        let mut r = io::Cursor::new(b"abc\nxyz".to_vec());
        assert!(matches!(read_record(&mut r), Err(WireError::BadLength(_))));
        let mut r = io::Cursor::new(b"10\nshort".to_vec());
        assert!(matches!(read_record(&mut r), Err(WireError::Io(_))));
        assert!(matches!(Message::from_payload("HELLO x"), Err(WireError::UnknownVerb(_))));
        assert!(matches!(Message::from_payload("POI_SUBMIT a b"), Err(WireError::Malformed { .. })));
    }
}
