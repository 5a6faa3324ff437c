//! Attack scripts and the attacker that carries them out on the screen.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::formspec::FormSpecification;
use crate::screen::{EditAction, EditEvent, ScreenState};

pub const DEFAULT_TRIGGER_KEYPRESSES: usize = 6;
pub const DEFAULT_INACTIVITY_MS: u64 = 3000;
pub const REPLACEMENT_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackKind {
    None,
    /// Concurrent change of an input that is not in focus.
    B1,
    /// Change of an element while the form loads.
    B2,
    /// Change of the focused IBAN field while the user types in it.
    A1,
    /// Focus steal, change, and return, too fast for the timing bounds.
    A2Fast,
    /// Focus steal, change, and return, respecting the timing bounds.
    A2Slow,
    /// Change of an inactive input while the user types elsewhere.
    A3,
    /// Change of the focused field after the user stopped typing.
    A4,
    /// Client-channel values altered after supervision.
    Tamper,
}

impl AttackKind {
    pub const ALL: [AttackKind; 9] = [
        Self::None,
        Self::B1,
        Self::B2,
        Self::A1,
        Self::A2Fast,
        Self::A2Slow,
        Self::A3,
        Self::A4,
        Self::Tamper,
    ];

    /// The kinds a `mixed` campaign cycles through.
    pub const MIXED: [AttackKind; 7] =
        [Self::B1, Self::B2, Self::A1, Self::A2Fast, Self::A2Slow, Self::A3, Self::A4];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::B1 => "b1",
            Self::B2 => "b2",
            Self::A1 => "a1",
            Self::A2Fast => "a2-fast",
            Self::A2Slow => "a2-slow",
            Self::A3 => "a3",
            Self::A4 => "a4",
            Self::Tamper => "tamper",
        }
    }

    /// Attacks the engine is not expected to see.
    pub fn is_user_dependent(self) -> bool {
        matches!(self, Self::A1 | Self::A2Slow)
    }

    /// The user-study attacks run on the bank-transfer form by default.
    pub fn prefers_bank_form(self) -> bool {
        matches!(self, Self::A1 | Self::A2Fast | Self::A2Slow | Self::A3 | Self::A4)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| format!("unknown attack {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackScript {
    pub kind: AttackKind,
    /// Typed characters (backspaces excluded) before the attack starts.
    pub trigger_keypresses: usize,
    /// User inactivity before an A4 change.
    pub inactivity_ms: u64,
    pub seed: u64,
}

impl AttackScript {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        Self { kind, trigger_keypresses: DEFAULT_TRIGGER_KEYPRESSES, inactivity_ms: DEFAULT_INACTIVITY_MS, seed }
    }

    pub fn none() -> Self {
        Self::new(AttackKind::None, 0)
    }
}

fn other_in_class(c: char, rng: &mut ChaCha8Rng) -> char {
    let (base, n) = if c.is_ascii_digit() {
        (b'0', 10u8)
    } else if c.is_ascii_uppercase() {
        (b'A', 26)
    } else if c.is_ascii_lowercase() {
        (b'a', 26)
    } else {
        return c;
    };
    let cur = c as u8 - base;
    let pick = (cur + rng.random_range(1..n)) % n;
    char::from(base + pick)
}

/// Picks `REPLACEMENT_LEN` consecutive characters of `value` and replaces
/// each with a different character of the same class.
///
/// Returns the start index in characters and the replacement. Values too
/// short to hold a window get uppercase letters appended instead.
pub fn mutate_value(value: &str, rng: &mut ChaCha8Rng) -> (usize, String) {
    let chars: Vec<char> = value.chars().collect();
    let n = REPLACEMENT_LEN;
    if chars.len() >= n {
        let starts = |pred: &dyn Fn(&[char]) -> bool| -> Vec<usize> {
            (0..=chars.len() - n).filter(|&i| pred(&chars[i..i + n])).collect()
        };
        let same_class = |w: &[char]| {
            w.iter().all(|c| c.is_ascii_alphanumeric())
                && w.iter().all(|c| {
                    (c.is_ascii_digit(), c.is_ascii_uppercase()) == (w[0].is_ascii_digit(), w[0].is_ascii_uppercase())
                })
        };
        let mut candidates = starts(&same_class);
        if candidates.is_empty() {
            candidates = starts(&|w: &[char]| w.iter().any(|c| c.is_ascii_alphanumeric()));
        }
        if let Some(&start) = candidates.choose(rng) {
            let text = chars[start..start + n].iter().map(|&c| other_in_class(c, rng)).collect();
            return (start, text);
        }
    }
    let text = (0..n).map(|_| char::from(b'A' + rng.random_range(0..26u8))).collect();
    (chars.len(), text)
}

pub fn apply_mutation(value: &str, start: usize, text: &str) -> String {
    let chars: Vec<char> = value.chars().collect();
    let start = start.min(chars.len());
    let end = (start + text.chars().count()).min(chars.len());
    chars[..start].iter().copied().chain(text.chars()).chain(chars[end..].iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Planned {
    Mutate(String),
    MutateNonFocused,
    MutateAnyElement,
    Focus(String),
    Hold,
    Drop,
}

/// What the attacker learns from the scenario about the user.
#[derive(Debug, Clone, Copy)]
pub struct TypingContext<'a> {
    pub typed: usize,
    pub t_ms: u64,
    pub field: &'a str,
    pub field_focus_ms: u64,
    pub dwell_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Attacker {
    script: AttackScript,
    rng: ChaCha8Rng,
    inputs: Vec<String>,
    planned: Vec<(u64, Planned)>,
    fire_at_typed: usize,
    triggered: bool,
    started_ms: Option<u64>,
    target: Option<String>,
}

impl Attacker {
    /// `typed_total` is the number of characters the typist will type.
    pub fn new(script: AttackScript, spec: &FormSpecification, typed_total: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(script.seed ^ 0xa77a_c4e5);
        let trigger = script.trigger_keypresses.max(1);
        let fire_at_typed = match script.kind {
            AttackKind::B1 => rng.random_range(trigger..=typed_total.clamp(trigger, trigger + 12)),
            _ => trigger,
        };
        let mut planned = Vec::new();
        if script.kind == AttackKind::B2 {
            planned.push((0, Planned::MutateAnyElement));
        }
        Self {
            script,
            rng,
            inputs: spec.inputs().map(|e| e.id.clone()).collect(),
            planned,
            fire_at_typed,
            triggered: false,
            started_ms: None,
            target: None,
        }
    }

    pub fn kind(&self) -> AttackKind {
        self.script.kind
    }

    /// Time of the first attacker action that reached the screen or channel.
    pub fn started_ms(&self) -> Option<u64> {
        self.started_ms
    }

    /// The element the attack modified, once known.
    pub fn target(&self) -> Option<&str> {
        self.target.as_deref()
    }

    pub fn next_ms(&self) -> Option<u64> {
        self.planned.iter().map(|(t, _)| *t).min()
    }

    /// Extra pause the typist takes after the trigger.
    pub fn typist_pause(&self) -> Option<(usize, u64)> {
        (self.script.kind == AttackKind::A4).then_some((self.script.trigger_keypresses, self.script.inactivity_ms + 500))
    }

    fn other_input(&mut self, not: &str) -> String {
        let others: Vec<&String> = self.inputs.iter().filter(|i| *i != not).collect();
        others.choose(&mut self.rng).map(|s| s.to_string()).unwrap_or_else(|| not.to_string())
    }

    /// Reacts to a typed character.
    pub fn on_typed(&mut self, ctx: TypingContext<'_>) {
        if self.triggered || ctx.typed < self.fire_at_typed {
            return;
        }
        self.triggered = true;
        let t6 = ctx.t_ms;
        let x = ctx.field.to_string();
        match self.script.kind {
            AttackKind::None | AttackKind::B2 | AttackKind::Tamper => {}
            AttackKind::B1 => {
                let delay = self.rng.random_range(10..=100);
                self.planned.push((t6 + delay, Planned::MutateNonFocused));
            }
            AttackKind::A1 => self.planned.push((t6 + 50, Planned::Mutate(x))),
            AttackKind::A3 => {
                let y = self.other_input(&x);
                self.planned.push((t6 + 50, Planned::Mutate(y)));
            }
            AttackKind::A4 => self.planned.push((t6 + self.script.inactivity_ms, Planned::Mutate(x))),
            AttackKind::A2Fast => {
                let y = self.other_input(&x);
                self.planned.push((t6 + 50, Planned::Focus(y.clone())));
                self.planned.push((t6 + 150, Planned::Mutate(y)));
                self.planned.push((t6 + 1000, Planned::Focus(x)));
            }
            AttackKind::A2Slow => {
                let y = self.other_input(&x);
                let t0 = (t6 + 600).max(ctx.field_focus_ms + ctx.dwell_ms + 400);
                self.planned.push((t6, Planned::Hold));
                self.planned.push((t0, Planned::Focus(y.clone())));
                self.planned.push((t0 + 50, Planned::Mutate(y)));
                self.planned.push((t0 + ctx.dwell_ms + 400, Planned::Drop));
                self.planned.push((t0 + ctx.dwell_ms + 400, Planned::Focus(x)));
            }
        }
    }

    /// The attacker action due at `now`, resolved against the screen.
    pub fn step(&mut self, now: u64, screen: &ScreenState) -> Option<EditEvent> {
        let idx = self.planned.iter().position(|(t, _)| *t <= now)?;
        let (_, action) = self.planned.remove(idx);
        let mutate = |this: &mut Self, element: String| {
            let value = screen.value(&element).unwrap_or("").to_string();
            let (start, text) = mutate_value(&value, &mut this.rng);
            this.target.get_or_insert(element.clone());
            EditAction::Replace { element, start, text }
        };
        let action = match action {
            Planned::Mutate(e) => mutate(self, e),
            Planned::MutateNonFocused => {
                let focus = screen.focus().unwrap_or("").to_string();
                let e = self.other_input(&focus);
                mutate(self, e)
            }
            Planned::MutateAnyElement => {
                let ids: Vec<String> = screen.spec().elements.iter().map(|e| e.id.clone()).collect();
                let e = ids.choose(&mut self.rng).expect("spec has elements").clone();
                mutate(self, e)
            }
            Planned::Focus(element) => EditAction::Focus { element, additional: false },
            Planned::Hold => EditAction::Hold,
            Planned::Drop => EditAction::Drop,
        };
        self.started_ms.get_or_insert(now);
        Some(EditEvent::attacker(now, action))
    }

    /// Alters the client-channel submission for a tamper attack.
    pub fn tamper(&mut self, fields: &mut BTreeMap<String, String>, now: u64) {
        if self.script.kind != AttackKind::Tamper {
            return;
        }
        let ids: Vec<String> = fields.keys().cloned().collect();
        let Some(id) = ids.choose(&mut self.rng).cloned() else {
            return;
        };
        let value = fields[&id].clone();
        let (start, text) = mutate_value(&value, &mut self.rng);
        fields.insert(id.clone(), apply_mutation(&value, start, &text));
        self.target = Some(id);
        self.started_ms.get_or_insert(now);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::lenient_equal;
    use proptest::prelude::*;

    #[test]
    fn kind_names() {
        for k in AttackKind::ALL {
            assert_eq!(k.as_str().parse::<AttackKind>().unwrap(), k);
        }
        assert!("a5".parse::<AttackKind>().is_err());
    }

    #[test]
    fn short_values_get_appended() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (start, text) = mutate_value("", &mut rng);
        assert_eq!(start, 0);
        assert_eq!(text.len(), 3);
        assert!(text.chars().all(|c| c.is_ascii_uppercase()));
    }

    #[test]
    fn prefers_alphanumeric_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let (start, text) = mutate_value("a b cde", &mut rng);
            assert_eq!(start, 4);
            assert!(text.chars().all(|c| c.is_ascii_lowercase()));
        }
    }

    proptest! {
        #[test]
        fn mutation_preserves_class(value in "[A-Za-z0-9 ]{0,24}", seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (start, text) = mutate_value(&value, &mut rng);
            let out = apply_mutation(&value, start, &text);
            prop_assert!(!lenient_equal(&out, &value));
            let old: Vec<char> = value.chars().collect();
            for (i, c) in text.chars().enumerate() {
                if let Some(&o) = old.get(start + i) {
                    prop_assert_eq!(o.is_ascii_digit(), c.is_ascii_digit());
                    prop_assert_eq!(o.is_ascii_uppercase(), c.is_ascii_uppercase());
                    prop_assert_eq!(o.is_ascii_lowercase(), c.is_ascii_lowercase());
                }
            }
            prop_assert_eq!(text.chars().count(), REPLACEMENT_LEN);
        }
    }
}
