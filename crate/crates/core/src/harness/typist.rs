//! A reactive touch typist that copies source values into the form.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::formspec::{iban_like, iban_like_len, ContentClass, FormSpecification};
use crate::screen::{EditAction, EditEvent, Key, ScreenState};

pub const DEFAULT_MIN_DELAY_MS: u64 = 120;
pub const DEFAULT_MAX_DELAY_MS: u64 = 200;
/// Pause after focusing a field before the first key.
pub const FOCUS_SETTLE_MS: u64 = 300;
/// Pause after the last key of a field before moving on.
pub const FIELD_SETTLE_MS: u64 = 600;
/// Margin on top of the dwell bound before leaving a field.
pub const DWELL_MARGIN_MS: u64 = 400;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypistModel {
    pub min_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Input element ids with the text to copy into each, in typing order.
    pub fields: Vec<(String, String)>,
}

impl TypistModel {
    pub fn new(fields: Vec<(String, String)>) -> Self {
        Self { min_delay_ms: DEFAULT_MIN_DELAY_MS, max_delay_ms: DEFAULT_MAX_DELAY_MS, fields }
    }

    /// Sources for every input of `spec`, top to bottom. The first input
    /// gets an IBAN-like account code; `iban_len` fixes its length.
    pub fn for_form(spec: &FormSpecification, rng: &mut ChaCha8Rng, iban_len: Option<usize>) -> Self {
        let mut inputs: Vec<_> = spec.inputs().collect();
        inputs.sort_by(|a, b| a.rect.y.total_cmp(&b.rect.y).then(a.rect.x.total_cmp(&b.rect.x)));
        let fields = inputs
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let text = if i == 0 {
                    match iban_len {
                        Some(n) => iban_like_len(rng, n),
                        None => iban_like(rng),
                    }
                } else {
                    let class = ContentClass::ALL[rng.random_range(0..ContentClass::ALL.len())];
                    class.sample(rng, 4, 16)
                };
                (e.id.clone(), text)
            })
            .collect();
        Self::new(fields)
    }

    pub fn typed_chars(&self) -> usize {
        self.fields.iter().map(|(_, s)| s.chars().count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Focus,
    StartClear,
    Clearing(usize),
    Typing(usize),
    AwaitMove,
    Done,
}

/// Runtime state of a typist copying its fields.
#[derive(Debug, Clone)]
pub struct Typist {
    model: TypistModel,
    field: usize,
    stage: Stage,
    next_ms: Option<u64>,
    typed: usize,
    last_key_ms: u64,
    focus_gained_ms: u64,
    pause: Option<(usize, u64)>,
    dwell_ms: u64,
}

impl Typist {
    pub fn new(model: TypistModel, dwell_ms: u64) -> Self {
        let stage = if model.fields.is_empty() { Stage::AwaitMove } else { Stage::Focus };
        Self { model, field: 0, stage, next_ms: None, typed: 0, last_key_ms: 0, focus_gained_ms: 0, pause: None, dwell_ms }
    }

    pub fn model(&self) -> &TypistModel {
        &self.model
    }

    /// Stops for `pause_ms` after the `after_typed`-th typed character.
    pub fn with_pause(mut self, after_typed: usize, pause_ms: u64) -> Self {
        self.pause = Some((after_typed, pause_ms));
        self
    }

    pub fn start(&mut self, t_ms: u64) {
        if self.next_ms.is_none() && self.stage != Stage::Done {
            self.next_ms = Some(t_ms);
        }
    }

    pub fn next_ms(&self) -> Option<u64> {
        if self.stage == Stage::Done { None } else { self.next_ms }
    }

    /// Pushes the next action back, e.g. while an alarm is shown.
    pub fn postpone_to(&mut self, t_ms: u64) {
        if let Some(n) = self.next_ms.as_mut() {
            *n = (*n).max(t_ms);
        }
    }

    pub fn typed(&self) -> usize {
        self.typed
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    pub fn current_field(&self) -> Option<&str> {
        self.model.fields.get(self.field).map(|(id, _)| id.as_str())
    }

    pub fn focus_gained_ms(&self) -> u64 {
        self.focus_gained_ms
    }

    /// Tells the typist that `element` gained focus on screen at `t_ms`.
    pub fn note_focus(&mut self, element: &str, t_ms: u64) {
        if self.current_field() == Some(element) {
            self.focus_gained_ms = t_ms;
        }
    }

    fn delay(&self, rng: &mut ChaCha8Rng) -> u64 {
        rng.random_range(self.model.min_delay_ms..=self.model.max_delay_ms)
    }

    fn key(&mut self, now: u64, key: Key) -> EditEvent {
        self.last_key_ms = now;
        let element = self.model.fields[self.field].0.clone();
        EditEvent::user(now, EditAction::Keypress { element, key })
    }

    /// The action due at `now`, if any. Call when `now >= next_ms()`.
    pub fn step(&mut self, now: u64, screen: &ScreenState, rng: &mut ChaCha8Rng) -> Option<EditEvent> {
        if self.next_ms.is_none_or(|n| now < n) {
            return None;
        }
        loop {
            match self.stage {
                Stage::Done => return None,
                Stage::Focus => {
                    let element = self.model.fields[self.field].0.clone();
                    self.focus_gained_ms = now;
                    self.stage = Stage::StartClear;
                    self.next_ms = Some(now + FOCUS_SETTLE_MS);
                    return Some(EditEvent::user(now, EditAction::Focus { element, additional: false }));
                }
                Stage::StartClear => {
                    let id = &self.model.fields[self.field].0;
                    let n = screen.value(id).map_or(0, |v| v.chars().count());
                    self.stage = if n > 0 { Stage::Clearing(n) } else { Stage::Typing(0) };
                }
                Stage::Clearing(n) => {
                    self.stage = if n > 1 { Stage::Clearing(n - 1) } else { Stage::Typing(0) };
                    self.next_ms = Some(now + self.delay(rng));
                    return Some(self.key(now, Key::Backspace));
                }
                Stage::Typing(pos) => {
                    let c = self.model.fields[self.field].1.chars().nth(pos);
                    let Some(c) = c else {
                        self.stage = Stage::AwaitMove;
                        continue;
                    };
                    self.typed += 1;
                    let len = self.model.fields[self.field].1.chars().count();
                    self.stage = if pos + 1 < len { Stage::Typing(pos + 1) } else { Stage::AwaitMove };
                    let mut next = now + self.delay(rng);
                    if self.pause.is_some_and(|(after, _)| after == self.typed) {
                        next += self.pause.map_or(0, |(_, p)| p);
                    }
                    self.next_ms = Some(next);
                    return Some(self.key(now, Key::Char(c)));
                }
                Stage::AwaitMove => {
                    if screen.has_held_keys() {
                        self.next_ms = Some(now + 50);
                        return None;
                    }
                    let ready = (self.last_key_ms + FIELD_SETTLE_MS).max(self.focus_gained_ms + self.dwell_ms + DWELL_MARGIN_MS);
                    let ready = if self.model.fields.is_empty() { now } else { ready };
                    if now < ready {
                        self.next_ms = Some(ready);
                        return None;
                    }
                    if self.field + 1 < self.model.fields.len() {
                        self.field += 1;
                        self.stage = Stage::Focus;
                        continue;
                    }
                    self.stage = Stage::Done;
                    self.next_ms = None;
                    return Some(EditEvent::user(now, EditAction::Submit));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formspec::bank_transfer;
    use rand::SeedableRng;

    fn run(model: TypistModel) -> Vec<EditEvent> {
        let mut screen = ScreenState::new(bank_transfer());
        let mut t = Typist::new(model, 2000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        t.start(1000);
        let mut out = Vec::new();
        while let Some(n) = t.next_ms() {
            if let Some(e) = t.step(n, &screen, &mut rng) {
                screen.apply_edit(&e).unwrap();
                out.push(e);
            }
        }
        assert_eq!(screen.input_values()["IBAN_value"], "CH93");
        out
    }

    #[test]
    fn copies_fields_with_bounded_delays() {
        let model = TypistModel::new(vec![("IBAN_value".into(), "CH93".into()), ("amount_value".into(), "100".into())]);
        let ev = run(model);
        assert!(matches!(ev.last().unwrap().action, EditAction::Submit));
        let keys: Vec<u64> = ev.iter().filter(|e| matches!(e.action, EditAction::Keypress { .. })).map(|e| e.t_ms).collect();
        for w in keys[..4].windows(2) {
            assert!((120..=200).contains(&(w[1] - w[0])));
        }
        let focus: Vec<u64> = ev.iter().filter(|e| matches!(e.action, EditAction::Focus { .. })).map(|e| e.t_ms).collect();
        assert_eq!(focus[0], 1000);
        assert_eq!(keys[0], 1300);
        assert!(focus[1] >= 1000 + 2000 + DWELL_MARGIN_MS);
    }

    #[test]
    fn form_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = TypistModel::for_form(&bank_transfer(), &mut rng, Some(24));
        assert_eq!(m.fields.len(), 5);
        assert_eq!(m.fields[0].0, "IBAN_value");
        assert_eq!(m.fields[0].1.len(), 24);
        assert_eq!(m.fields[4].0, "reference_value");
    }
}
