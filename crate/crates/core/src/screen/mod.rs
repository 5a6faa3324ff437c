//! The simulated client: form state, edits, and what the camera sees.

mod pose;
mod trace;

pub use pose::{make_pose, AngleOutOfRange, CameraPose, PoseKind, FORM_FRACTION};
pub use trace::{format_trace, parse_trace, Actor, EditAction, EditEvent, Key, TraceError};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::formspec::{FormSpecification, TITLE_RECT};
use crate::geometry::{Quad, Rect};

/// Element id addressing the form title in edit events.
pub const TITLE_ELEMENT: &str = "_title";

/// How long the hand-activity signal stays raised after a user keypress.
pub const ACTIVITY_WINDOW_MS: u64 = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct TextRegion {
    pub quad: Quad,
    pub text: String,
}

/// One simulated camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub timestamp_ms: u64,
    pub corners: Quad,
    pub regions: Vec<TextRegion>,
    pub focus_rects: Vec<Quad>,
    /// Hand movement over the keyboard.
    pub activity: bool,
    pub occluded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScreenError {
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("the user cannot {action} label {element:?}")]
    UserTargetsLabel { element: String, action: &'static str },
    #[error("event at {event_ms} ms precedes the screen clock {clock_ms} ms")]
    ClockWentBack { event_ms: u64, clock_ms: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenState {
    spec: FormSpecification,
    /// Current text of every element, labels included.
    values: BTreeMap<String, String>,
    title: String,
    focus: Option<String>,
    extra_focus: Vec<String>,
    occluded: bool,
    clock_ms: u64,
    last_user_key_ms: Option<u64>,
    holding: bool,
    held: Vec<(String, Key)>,
    overlays: Vec<(Rect, String)>,
}

fn apply_key(value: &mut String, key: Key) {
    match key {
        Key::Char(c) => value.push(c),
        Key::Backspace => {
            value.pop();
        }
    }
}

fn replace_chars(value: &str, start: usize, text: &str) -> String {
    let chars: Vec<char> = value.chars().collect();
    let start = start.min(chars.len());
    let end = (start + text.chars().count()).min(chars.len());
    chars[..start].iter().copied().chain(text.chars()).chain(chars[end..].iter().copied()).collect()
}

impl ScreenState {
    /// A freshly loaded form showing its initial values, without focus.
    pub fn new(spec: FormSpecification) -> Self {
        let values = spec.elements.iter().map(|e| (e.id.clone(), e.initial_value.clone())).collect();
        let title = spec.page_id.clone();
        Self {
            spec,
            values,
            title,
            focus: None,
            extra_focus: Vec::new(),
            occluded: false,
            clock_ms: 0,
            last_user_key_ms: None,
            holding: false,
            held: Vec::new(),
            overlays: Vec::new(),
        }
    }

    pub fn spec(&self) -> &FormSpecification {
        &self.spec
    }

    pub fn value(&self, id: &str) -> Option<&str> {
        self.values.get(id).map(String::as_str)
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Current values of the input elements: what the client submits.
    pub fn input_values(&self) -> BTreeMap<String, String> {
        self.spec.inputs().map(|e| (e.id.clone(), self.values[&e.id].clone())).collect()
    }

    pub fn focus(&self) -> Option<&str> {
        self.focus.as_deref()
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn is_occluded(&self) -> bool {
        self.occluded
    }

    pub fn has_held_keys(&self) -> bool {
        !self.held.is_empty()
    }

    pub fn last_user_key_ms(&self) -> Option<u64> {
        self.last_user_key_ms
    }

    pub fn activity(&self) -> bool {
        self.last_user_key_ms
            .is_some_and(|k| k <= self.clock_ms && self.clock_ms - k <= ACTIVITY_WINDOW_MS)
    }

    /// Moves the clock forward; earlier times are ignored.
    pub fn advance_to(&mut self, t_ms: u64) {
        self.clock_ms = self.clock_ms.max(t_ms);
    }

    /// Draws extra text outside the specified elements.
    pub fn add_overlay(&mut self, rect: Rect, text: impl Into<String>) {
        self.overlays.push((rect, text.into()));
    }

    fn check_element(&self, id: &str) -> Result<(), ScreenError> {
        if id == TITLE_ELEMENT || self.values.contains_key(id) {
            Ok(())
        } else {
            Err(ScreenError::UnknownElement(id.to_string()))
        }
    }

    fn check_user_input(&self, id: &str, action: &'static str) -> Result<(), ScreenError> {
        match self.spec.element(id) {
            Some(e) if e.is_input() => Ok(()),
            Some(_) => Err(ScreenError::UserTargetsLabel { element: id.to_string(), action }),
            None => Err(ScreenError::UnknownElement(id.to_string())),
        }
    }

    fn text_mut(&mut self, id: &str) -> &mut String {
        if id == TITLE_ELEMENT {
            &mut self.title
        } else {
            self.values.get_mut(id).expect("checked element")
        }
    }

    pub fn apply_edit(&mut self, edit: &EditEvent) -> Result<(), ScreenError> {
        if edit.t_ms < self.clock_ms {
            return Err(ScreenError::ClockWentBack { event_ms: edit.t_ms, clock_ms: self.clock_ms });
        }
        match (&edit.action, edit.actor) {
            (EditAction::Keypress { element, key }, Actor::User) => {
                self.check_user_input(element, "type into")?;
                self.last_user_key_ms = Some(edit.t_ms);
                if self.holding || self.focus.as_deref() != Some(element.as_str()) {
                    self.held.push((element.clone(), *key));
                } else {
                    apply_key(self.text_mut(element), *key);
                }
            }
            (EditAction::Keypress { element, key }, Actor::Attacker) => {
                self.check_element(element)?;
                apply_key(self.text_mut(element), *key);
            }
            (EditAction::Replace { element, start, text }, actor) => {
                if actor == Actor::User {
                    self.check_user_input(element, "edit")?;
                } else {
                    self.check_element(element)?;
                }
                let v = self.text_mut(element);
                *v = replace_chars(v, *start, text);
            }
            (EditAction::Focus { element, additional }, actor) => {
                if actor == Actor::User {
                    self.check_user_input(element, "focus")?;
                } else {
                    self.check_element(element)?;
                }
                if *additional {
                    if !self.extra_focus.contains(element) {
                        self.extra_focus.push(element.clone());
                    }
                } else {
                    self.focus = Some(element.clone());
                    self.extra_focus.clear();
                    self.flush_held(element);
                }
            }
            (EditAction::Hold, _) => self.holding = true,
            (EditAction::Drop, _) => {
                self.held.clear();
                self.holding = false;
            }
            (EditAction::Occlude, _) => self.occluded = true,
            (EditAction::Reveal, _) => self.occluded = false,
            (EditAction::Submit, _) => {}
        }
        self.clock_ms = edit.t_ms;
        Ok(())
    }

    fn flush_held(&mut self, element: &str) {
        let (mine, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.held).into_iter().partition(|(e, _)| e == element);
        for (_, key) in mine {
            apply_key(self.text_mut(element), key);
        }
        self.held = rest;
        if self.held.is_empty() {
            self.holding = false;
        }
    }
}

/// What the camera sees of `state` from `pose`.
pub fn render(state: &ScreenState, pose: &CameraPose) -> FrameObservation {
    let mut frame = FrameObservation {
        timestamp_ms: state.clock_ms,
        corners: pose.corners,
        regions: Vec::new(),
        focus_rects: Vec::new(),
        activity: state.activity(),
        occluded: state.occluded,
    };
    if state.occluded {
        return frame;
    }
    let h = pose.homography();
    let mut push = |rect: &Rect, text: &str| {
        if !text.is_empty() {
            frame.regions.push(TextRegion { quad: h.apply_quad(&rect.to_quad()), text: text.to_string() });
        }
    };
    push(&TITLE_RECT, &state.title);
    for e in &state.spec.elements {
        push(&e.rect, &state.values[&e.id]);
    }
    for (rect, text) in &state.overlays {
        push(rect, text);
    }
    let focused = state.focus.iter().chain(&state.extra_focus);
    for id in focused {
        if let Some(e) = state.spec.element(id) {
            frame.focus_rects.push(h.apply_quad(&e.rect.to_quad()));
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formspec::bank_transfer;

    fn key(t: u64, element: &str, c: char) -> EditEvent {
        EditEvent::user(t, EditAction::Keypress { element: element.into(), key: Key::Char(c) })
    }

    fn focus(t: u64, element: &str) -> EditEvent {
        EditEvent::user(t, EditAction::Focus { element: element.into(), additional: false })
    }

    #[test]
    fn keypress_on_focused_field() {
        let mut s = ScreenState::new(bank_transfer());
        s.apply_edit(&focus(0, "IBAN_value")).unwrap();
        s.apply_edit(&key(10, "IBAN_value", 'A')).unwrap();
        assert_eq!(s.value("IBAN_value"), Some("A"));
        assert!(s.activity());
        s.advance_to(10 + ACTIVITY_WINDOW_MS + 1);
        assert!(!s.activity());
    }

    #[test]
    fn attacker_replaces_three_characters() {
        let mut s = ScreenState::new(bank_transfer());
        s.apply_edit(&EditEvent::attacker(0, EditAction::Replace { element: "amount_value".into(), start: 0, text: "123456789".into() })).unwrap();
        s.apply_edit(&EditEvent::attacker(1, EditAction::Replace { element: "amount_value".into(), start: 2, text: "XYZ".into() })).unwrap();
        assert_eq!(s.value("amount_value"), Some("12XYZ6789"));
        assert_eq!(s.last_user_key_ms(), None);
        s.apply_edit(&EditEvent::attacker(2, EditAction::Replace { element: "currency_label".into(), start: 0, text: "EUR".into() })).unwrap();
        assert_eq!(s.value("currency_label"), Some("EUR"));
    }

    #[test]
    fn focus_change_keeps_values() {
        let mut s = ScreenState::new(bank_transfer());
        let before = s.values().clone();
        s.apply_edit(&focus(5, "amount_value")).unwrap();
        assert_eq!(s.focus(), Some("amount_value"));
        assert_eq!(s.values(), &before);
    }

    #[test]
    fn edit_errors() {
        let mut s = ScreenState::new(bank_transfer());
        assert_eq!(s.apply_edit(&focus(0, "nope")), Err(ScreenError::UnknownElement("nope".into())));
        assert!(matches!(s.apply_edit(&key(0, "IBAN_label", 'x')), Err(ScreenError::UserTargetsLabel { .. })));
        s.apply_edit(&focus(100, "IBAN_value")).unwrap();
        assert!(matches!(s.apply_edit(&focus(50, "IBAN_value")), Err(ScreenError::ClockWentBack { .. })));
    }

    #[test]
    fn held_keys_flush_when_focus_returns() {
        let mut s = ScreenState::new(bank_transfer());
        s.apply_edit(&focus(0, "IBAN_value")).unwrap();
        s.apply_edit(&key(10, "IBAN_value", 'C')).unwrap();
        s.apply_edit(&EditEvent::attacker(20, EditAction::Hold)).unwrap();
        s.apply_edit(&key(30, "IBAN_value", 'H')).unwrap();
        assert_eq!(s.value("IBAN_value"), Some("C"));
        s.apply_edit(&EditEvent::attacker(40, EditAction::Focus { element: "amount_value".into(), additional: false })).unwrap();
        s.apply_edit(&key(50, "IBAN_value", '9')).unwrap();
        assert!(s.has_held_keys());
        s.apply_edit(&EditEvent::attacker(60, EditAction::Focus { element: "IBAN_value".into(), additional: false })).unwrap();
        assert_eq!(s.value("IBAN_value"), Some("CH9"));
        assert!(!s.has_held_keys());
        s.apply_edit(&key(70, "IBAN_value", '3')).unwrap();
        assert_eq!(s.value("IBAN_value"), Some("CH93"));
    }

    #[test]
    fn render_occluded_is_empty() {
        let mut s = ScreenState::new(bank_transfer());
        s.apply_edit(&focus(0, "IBAN_value")).unwrap();
        s.apply_edit(&EditEvent::user(1, EditAction::Occlude)).unwrap();
        let f = render(&s, &make_pose(PoseKind::Straight, (1280, 960)).unwrap());
        assert!(f.occluded && f.regions.is_empty() && f.focus_rects.is_empty());
    }

    #[test]
    fn render_maps_spec_geometry() {
        let mut s = ScreenState::new(bank_transfer());
        s.apply_edit(&EditEvent::attacker(0, EditAction::Replace { element: "IBAN_value".into(), start: 0, text: "CH9300762011623852957".into() })).unwrap();
        let pose = make_pose(PoseKind::Straight, (1280, 960)).unwrap();
        let f = render(&s, &pose);
        let region = f.regions.iter().find(|r| r.text.starts_with("CH93")).unwrap();
        // (42, 25, 50, 8) percent of a 960 x 720 form placed at (160, 120).
        let expected = Rect::new(160.0 + 4.2 * 96.0, 120.0 + 2.5 * 72.0, 480.0, 57.6).to_quad();
        for (a, b) in region.quad.0.iter().zip(expected.0) {
            assert!(a.dist(b) < 1e-6, "{a:?} vs {b:?}");
        }
        // Empty inputs produce no region: title plus six labels.
        assert_eq!(f.regions.len(), 1 + 6 + 1);
        assert!(f.focus_rects.is_empty());
    }

    #[test]
    fn two_focus_rectangles() {
        let mut s = ScreenState::new(bank_transfer());
        s.apply_edit(&focus(0, "IBAN_value")).unwrap();
        s.apply_edit(&EditEvent::attacker(1, EditAction::Focus { element: "amount_value".into(), additional: true })).unwrap();
        let f = render(&s, &make_pose(PoseKind::Straight, (1280, 960)).unwrap());
        assert_eq!(f.focus_rects.len(), 2);
    }
}
