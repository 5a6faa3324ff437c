//! Form specifications: the server-published layout contract.
//!
//! Element geometry is expressed in percent of the form-boundary interior,
//! so a specification is independent of screen resolution. The form title
//! occupies the fixed [`TITLE_RECT`] in the top-left corner of every form.

mod document;
mod generate;

pub use document::{parse_spec, parse_unchecked, to_document, SpecError};
pub use generate::{iban_like, iban_like_len, generate_random_form, ContentClass, GenerateError, MAX_ROWS};

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::geometry::Rect;

/// Where the form title is displayed, in form percent coordinates.
pub const TITLE_RECT: Rect = Rect::new(4.0, 4.0, 60.0, 8.0);

/// The bundled "Bank Transfer" form used by the examples, the replay command
/// and the service's default registry.
pub const BANK_TRANSFER_DOC: &str = include_str!("../../assets/bank_transfer.json");

pub fn bank_transfer() -> FormSpecification {
    parse_spec(BANK_TRANSFER_DOC).expect("bundled form is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Label,
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub id: String,
    pub kind: ElementKind,
    pub initial_value: String,
    pub rect: Rect,
}

impl ElementSpec {
    pub fn is_input(&self) -> bool {
        self.kind == ElementKind::Input
    }
}

/// Timing rules enforced during input supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionPolicy {
    /// Minimum time between the last edit of an element and focus leaving it.
    pub min_ms_after_last_edit: u64,
    /// Minimum time an edited element must have held focus before leaving.
    pub min_focus_dwell_ms: u64,
    pub verification_budget_ms: u64,
    pub frame_interval_ms: u64,
}

impl Default for SupervisionPolicy {
    fn default() -> Self {
        Self {
            min_ms_after_last_edit: 300,
            min_focus_dwell_ms: 2000,
            verification_budget_ms: 5000,
            frame_interval_ms: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormSpecification {
    pub page_id: String,
    pub ratio: (u32, u32),
    pub elements: Vec<ElementSpec>,
    pub policy: SupervisionPolicy,
}

impl FormSpecification {
    pub fn element(&self, id: &str) -> Option<&ElementSpec> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ElementSpec> {
        self.elements.iter().filter(|e| e.is_input())
    }

    pub fn labels(&self) -> impl Iterator<Item = &ElementSpec> {
        self.elements.iter().filter(|e| !e.is_input())
    }
}

/// One invariant violation found by [`validate_spec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    EmptyPageId,
    BadRatio,
    NoInput,
    DuplicateId { id: String },
    NonPositiveSize { id: String },
    OutOfBounds { id: String },
    Overlap { first: String, second: String },
    TitleOverlap { id: String },
    Policy { reason: String },
}

impl ValidationIssue {
    pub fn element_ids(&self) -> Vec<&str> {
        match self {
            Self::DuplicateId { id }
            | Self::NonPositiveSize { id }
            | Self::OutOfBounds { id }
            | Self::TitleOverlap { id } => vec![id],
            Self::Overlap { first, second } => vec![first, second],
            _ => vec![],
        }
    }
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EmptyPageId => write!(f, "page_id is empty"),
            Self::BadRatio => write!(f, "ratio components must be positive"),
            Self::NoInput => write!(f, "form has no input element"),
            Self::DuplicateId { id } => write!(f, "duplicate element id {id:?}"),
            Self::NonPositiveSize { id } => write!(f, "element {id:?} has non-positive size"),
            Self::OutOfBounds { id } => write!(f, "element {id:?} exceeds the form boundary"),
            Self::Overlap { first, second } => {
                write!(f, "elements {first:?} and {second:?} overlap")
            }
            Self::TitleOverlap { id } => write!(f, "element {id:?} overlaps the title area"),
            Self::Policy { reason } => write!(f, "policy: {reason}"),
        }
    }
}

/// Checks every specification invariant; an empty report means the spec is valid.
pub fn validate_spec(spec: &FormSpecification) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    if spec.page_id.trim().is_empty() {
        issues.push(ValidationIssue::EmptyPageId);
    }
    if spec.ratio.0 == 0 || spec.ratio.1 == 0 {
        issues.push(ValidationIssue::BadRatio);
    }
    if spec.inputs().next().is_none() {
        issues.push(ValidationIssue::NoInput);
    }

    let mut seen = HashSet::new();
    let mut reported = BTreeSet::new();
    for e in &spec.elements {
        if !seen.insert(e.id.as_str()) && reported.insert(e.id.as_str()) {
            issues.push(ValidationIssue::DuplicateId { id: e.id.clone() });
        }
    }

    for e in &spec.elements {
        let r = &e.rect;
        let finite = [r.x, r.y, r.width, r.height].iter().all(|v| v.is_finite());
        if !finite || r.width <= 0.0 || r.height <= 0.0 {
            issues.push(ValidationIssue::NonPositiveSize { id: e.id.clone() });
        }
        if !finite || r.x < 0.0 || r.y < 0.0 || r.right() > 100.0 || r.bottom() > 100.0 {
            issues.push(ValidationIssue::OutOfBounds { id: e.id.clone() });
        }
        if r.overlaps(&TITLE_RECT) {
            issues.push(ValidationIssue::TitleOverlap { id: e.id.clone() });
        }
    }

    for (i, a) in spec.elements.iter().enumerate() {
        for b in &spec.elements[i + 1..] {
            if a.rect.overlaps(&b.rect) {
                issues.push(ValidationIssue::Overlap {
                    first: a.id.clone(),
                    second: b.id.clone(),
                });
            }
        }
    }

    let p = &spec.policy;
    if p.frame_interval_ms == 0 {
        issues.push(ValidationIssue::Policy {
            reason: "frame_interval_ms must be positive".into(),
        });
    } else if p.min_ms_after_last_edit < 2 * p.frame_interval_ms {
        issues.push(ValidationIssue::Policy {
            reason: format!(
                "x_ms ({}) must be at least twice frame_interval_ms ({})",
                p.min_ms_after_last_edit, p.frame_interval_ms
            ),
        });
    }
    if p.verification_budget_ms == 0 {
        issues.push(ValidationIssue::Policy {
            reason: "verify_budget_ms must be positive".into(),
        });
    }
    issues
}
