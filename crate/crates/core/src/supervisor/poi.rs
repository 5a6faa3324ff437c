//! Proof-of-intent payload and its canonical serialization.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

pub const FIELD_SEP: u8 = 0x1F;
pub const RECORD_SEP: u8 = 0x1E;

/// A 32-byte secret shared between one device and the server.
#[derive(Clone, PartialEq, Eq)]
pub struct DeviceKey(pub [u8; 32]);

impl fmt::Debug for DeviceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DeviceKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("device key must be 64 hex digits")]
pub struct BadDeviceKey;

impl DeviceKey {
    pub fn from_hex(s: &str) -> Result<Self, BadDeviceKey> {
        let bytes = hex::decode(s.trim()).map_err(|_| BadDeviceKey)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| BadDeviceKey)?;
        Ok(Self(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// A key derived from a seed, for simulations.
    pub fn from_seed(seed: u64) -> Self {
        let mut mac = HmacSha256::new_from_slice(b"device-key").expect("any key length");
        mac.update(&seed.to_le_bytes());
        Self(mac.finalize().into_bytes().into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofOfIntent {
    pub page_id: String,
    pub fields: BTreeMap<String, String>,
    pub session_token: String,
    pub created_at_ms: u64,
    pub mac: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonicalError {
    #[error("payload is not UTF-8")]
    NotUtf8,
    #[error("payload must end with a record separator")]
    Unterminated,
    #[error("malformed header record")]
    Header,
    #[error("malformed field record {0}")]
    Field(usize),
    #[error("field {0:?} appears twice or out of order")]
    FieldOrder(String),
    #[error("separator byte inside {0:?}")]
    SeparatorInValue(String),
}

fn has_separator(s: &str) -> bool {
    s.bytes().any(|b| b == FIELD_SEP || b == RECORD_SEP)
}

/// `page_id US token US created_at RS (id US value RS)*`, ids in sorted order.
pub fn canonical_bytes(
    page_id: &str,
    session_token: &str,
    created_at_ms: u64,
    fields: &BTreeMap<String, String>,
) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::new();
    let created = created_at_ms.to_string();
    for (i, part) in [page_id, session_token, created.as_str()].into_iter().enumerate() {
        if has_separator(part) {
            return Err(CanonicalError::SeparatorInValue(part.to_string()));
        }
        if i > 0 {
            out.push(FIELD_SEP);
        }
        out.extend_from_slice(part.as_bytes());
    }
    out.push(RECORD_SEP);
    for (id, value) in fields {
        for s in [id, value] {
            if has_separator(s) {
                return Err(CanonicalError::SeparatorInValue(s.clone()));
            }
        }
        out.extend_from_slice(id.as_bytes());
        out.push(FIELD_SEP);
        out.extend_from_slice(value.as_bytes());
        out.push(RECORD_SEP);
    }
    Ok(out)
}

pub fn compute_mac(key: &DeviceKey, payload: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(&key.0).expect("any key length");
    mac.update(payload);
    mac.finalize().into_bytes().into()
}

impl ProofOfIntent {
    pub fn sign(
        page_id: impl Into<String>,
        fields: BTreeMap<String, String>,
        session_token: impl Into<String>,
        created_at_ms: u64,
        key: &DeviceKey,
    ) -> Result<Self, CanonicalError> {
        let page_id = page_id.into();
        let session_token = session_token.into();
        let payload = canonical_bytes(&page_id, &session_token, created_at_ms, &fields)?;
        let mac = compute_mac(key, &payload);
        Ok(Self { page_id, fields, session_token, created_at_ms, mac })
    }

    pub fn canonical(&self) -> Vec<u8> {
        canonical_bytes(&self.page_id, &self.session_token, self.created_at_ms, &self.fields)
            .expect("checked when signed or parsed")
    }

    /// Constant-time check of the tag.
    pub fn verify(&self, key: &DeviceKey) -> bool {
        let mut mac = HmacSha256::new_from_slice(&key.0).expect("any key length");
        mac.update(&self.canonical());
        mac.verify_slice(&self.mac).is_ok()
    }

    pub fn from_canonical(payload: &[u8], mac: [u8; 32]) -> Result<Self, CanonicalError> {
        let text = std::str::from_utf8(payload).map_err(|_| CanonicalError::NotUtf8)?;
        let body = text.strip_suffix(char::from(RECORD_SEP)).ok_or(CanonicalError::Unterminated)?;
        let mut records = body.split(char::from(RECORD_SEP));
        let header: Vec<&str> = records.next().unwrap_or("").split(char::from(FIELD_SEP)).collect();
        let [page_id, token, created] = header[..] else {
            return Err(CanonicalError::Header);
        };
        let created_at_ms = created.parse().map_err(|_| CanonicalError::Header)?;
        let mut fields = BTreeMap::new();
        let mut last: Option<&str> = None;
        for (i, rec) in records.enumerate() {
            let (id, value) = rec.split_once(char::from(FIELD_SEP)).ok_or(CanonicalError::Field(i))?;
            if value.contains(char::from(FIELD_SEP)) {
                return Err(CanonicalError::Field(i));
            }
            if last.is_some_and(|l| l >= id) {
                return Err(CanonicalError::FieldOrder(id.to_string()));
            }
            last = Some(id);
            fields.insert(id.to_string(), value.to_string());
        }
        Ok(Self {
            page_id: page_id.to_string(),
            fields,
            session_token: token.to_string(),
            created_at_ms,
            mac,
        })
    }
}
