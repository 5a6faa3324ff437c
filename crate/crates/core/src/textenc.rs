//! Token escaping shared by the line-oriented formats (traces, alarm logs, wire).
//!
//! A token never contains whitespace, `%`, `=`, `"` or control characters;
//! those are written as `%XX` per UTF-8 byte. The empty string is `""`.

const EMPTY: &str = "\"\"";

fn needs_escape(b: u8) -> bool {
    b <= 0x20 || b == 0x7f || b == b'%' || b == b'=' || b == b'"'
}

pub fn encode(s: &str) -> String {
    if s.is_empty() {
        return EMPTY.to_string();
    }
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if (c.is_ascii() && needs_escape(c as u8)) || c.is_whitespace() || c.is_control() {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed escape in token {0:?}")]
pub struct DecodeError(pub String);

pub fn decode(token: &str) -> Result<String, DecodeError> {
    if token == EMPTY {
        return Ok(String::new());
    }
    let bytes = token.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = token
                .get(i + 1..i + 3)
                .ok_or_else(|| DecodeError(token.to_string()))?;
            let v = u8::from_str_radix(hex, 16).map_err(|_| DecodeError(token.to_string()))?;
            out.push(v);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| DecodeError(token.to_string()))
}
