//! Edit events and their line-oriented trace format.
//!
//! One record per line: `t_ms actor action element_id payload`.
//! `actor` is `user` or `attacker`; `action` is one of `keypress`, `replace`,
//! `focus`, `hold`, `drop`, `occlude`, `reveal`, `submit`. Unused fields are `-`.
//! Payloads: a keypress carries one escaped character or `<BS>` for
//! backspace; a replace carries `start:text` (start counted in characters);
//! a focus carries `-`, or `+` to show an additional focus rectangle.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;

use thiserror::Error;

use crate::textenc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    User,
    Attacker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Key {
    Char(char),
    Backspace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditAction {
    Keypress { element: String, key: Key },
    Replace { element: String, start: usize, text: String },
    Focus { element: String, additional: bool },
    /// The client stops echoing keystrokes until focus returns to their target.
    Hold,
    /// The client discards every held keystroke and echoes again.
    Drop,
    Occlude,
    Reveal,
    Submit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditEvent {
    pub t_ms: u64,
    pub actor: Actor,
    pub action: EditAction,
}

impl EditEvent {
    pub fn user(t_ms: u64, action: EditAction) -> Self {
        Self { t_ms, actor: Actor::User, action }
    }

    pub fn attacker(t_ms: u64, action: EditAction) -> Self {
        Self { t_ms, actor: Actor::Attacker, action }
    }
}

impl fmt::Display for EditEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let actor = match self.actor {
            Actor::User => "user",
            Actor::Attacker => "attacker",
        };
        let (action, element, payload) = match &self.action {
            EditAction::Keypress { element, key } => (
                "keypress",
                textenc::encode(element),
                match key {
                    Key::Char(c) => textenc::encode(&c.to_string()),
                    Key::Backspace => "<BS>".to_string(),
                },
            ),
            EditAction::Replace { element, start, text } => {
                ("replace", textenc::encode(element), format!("{start}:{}", textenc::encode(text)))
            }
            EditAction::Focus { element, additional } => {
                ("focus", textenc::encode(element), if *additional { "+" } else { "-" }.to_string())
            }
            EditAction::Hold => ("hold", "-".into(), "-".into()),
            EditAction::Drop => ("drop", "-".into(), "-".into()),
            EditAction::Occlude => ("occlude", "-".into(), "-".into()),
            EditAction::Reveal => ("reveal", "-".into(), "-".into()),
            EditAction::Submit => ("submit", "-".into(), "-".into()),
        };
        write!(f, "{} {actor} {action} {element} {payload}", self.t_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct TraceError {
    pub line: usize,
    pub reason: String,
}

fn parse_record(text: &str) -> Result<EditEvent, String> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    }
    let t_ms = fields[0].parse::<u64>().map_err(|_| format!("bad timestamp {:?}", fields[0]))?;
    let actor = match fields[1] {
        "user" => Actor::User,
        "attacker" => Actor::Attacker,
        other => return Err(format!("unknown actor {other:?}")),
    };
    let element = || textenc::decode(fields[3]).map_err(|e| e.to_string());
    let payload = fields[4];
    let action = match fields[2] {
        "keypress" => {
            let key = if payload == "<BS>" {
                Key::Backspace
            } else {
                let s = textenc::decode(payload).map_err(|e| e.to_string())?;
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Key::Char(c),
                    _ => return Err(format!("keypress payload must be one character, got {payload:?}")),
                }
            };
            EditAction::Keypress { element: element()?, key }
        }
        "replace" => {
            let (start, text) = payload
                .split_once(':')
                .ok_or_else(|| format!("replace payload must be start:text, got {payload:?}"))?;
            EditAction::Replace {
                element: element()?,
                start: start.parse().map_err(|_| format!("bad replace start {start:?}"))?,
                text: textenc::decode(text).map_err(|e| e.to_string())?,
            }
        }
        "focus" => EditAction::Focus {
            element: element()?,
            additional: match payload {
                "-" => false,
                "+" => true,
                other => return Err(format!("focus payload must be - or +, got {other:?}")),
            },
        },
        "hold" => EditAction::Hold,
        "drop" => EditAction::Drop,
        "occlude" => EditAction::Occlude,
        "reveal" => EditAction::Reveal,
        "submit" => EditAction::Submit,
        other => return Err(format!("unknown action {other:?}")),
    };
    Ok(EditEvent { t_ms, actor, action })
}

/// Parses a whole trace; timestamps must not decrease.
pub fn parse_trace(text: &str) -> Result<Vec<EditEvent>, TraceError> {
    let mut events: Vec<EditEvent> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ev = parse_record(line).map_err(|reason| TraceError { line: i + 1, reason })?;
        if events.last().is_some_and(|prev| prev.t_ms > ev.t_ms) {
            return Err(TraceError { line: i + 1, reason: "timestamp goes backwards".into() });
        }
        events.push(ev);
    }
    Ok(events)
}

pub fn format_trace(events: &[EditEvent]) -> String {
    events.iter().map(|e| format!("{e}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn record_examples() {
        let ev = parse_trace("1200 user keypress IBAN_value A\n").unwrap();
        assert_eq!(
            ev,
            vec![EditEvent::user(1200, EditAction::Keypress { element: "IBAN_value".into(), key: Key::Char('A') })]
        );
        let ev = parse_trace("# header\n\n5 attacker replace amount 2:XYZ\n6 user keypress amount %20\n").unwrap();
        assert_eq!(ev[0].action, EditAction::Replace { element: "amount".into(), start: 2, text: "XYZ".into() });
        assert_eq!(ev[1].action, EditAction::Keypress { element: "amount".into(), key: Key::Char(' ') });
    }

    #[test]
    fn truncated_record_reports_line() {
        let err = parse_trace("0 user focus a -\n10 user keypress a\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(parse_trace("5 user submit - -\n4 user submit - -\n").is_err());
        assert!(parse_trace("5 robot submit - -\n").is_err());
    }

    fn arb_event() -> impl Strategy<Value = EditEvent> {
        let element = "[a-zA-Z_ ]{1,8}";
        let action = prop_oneof![
            (element, any::<char>()).prop_map(|(e, c)| EditAction::Keypress { element: e, key: Key::Char(c) }),
            element.prop_map(|e| EditAction::Keypress { element: e, key: Key::Backspace }),
            (element, 0usize..30, "\\PC{0,6}").prop_map(|(e, s, t)| EditAction::Replace { element: e, start: s, text: t }),
            (element, any::<bool>()).prop_map(|(e, a)| EditAction::Focus { element: e, additional: a }),
            Just(EditAction::Hold),
            Just(EditAction::Drop),
            Just(EditAction::Occlude),
            Just(EditAction::Reveal),
            Just(EditAction::Submit),
        ];
        (any::<u32>(), any::<bool>(), action).prop_map(|(t, user, action)| EditEvent {
            t_ms: u64::from(t),
            actor: if user { Actor::User } else { Actor::Attacker },
            action,
        })
    }

    proptest! {
        #[test]
        fn trace_round_trip(ev in arb_event()) {
            let text = format_trace(std::slice::from_ref(&ev));
            prop_assert_eq!(parse_trace(&text).unwrap(), vec![ev]);
        }
    }
}
