//! The textual specification document.
//!
//! Top-level keys are `ratio` ("W:H"), `page_id`, `elements` and an optional
//! `policy` object. Unknown keys anywhere are rejected.

use serde::Deserialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{validate_spec, ElementKind, ElementSpec, FormSpecification, SupervisionPolicy, ValidationIssue};
use crate::geometry::Rect;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("malformed document: {0}")]
    Syntax(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("geometry: {0}")]
    Geometry(ValidationIssue),
    #[error("duplicate element id {0:?}")]
    DuplicateId(String),
    #[error("policy: {0}")]
    Policy(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    ratio: String,
    page_id: String,
    elements: Vec<RawElement>,
    #[serde(default)]
    policy: Option<RawPolicy>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElement {
    id: String,
    #[serde(rename = "type")]
    kind: ElementKind,
    initialvalue: String,
    x_position: f64,
    y_position: f64,
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    x_ms: Option<u64>,
    y_ms: Option<u64>,
    verify_budget_ms: Option<u64>,
    frame_interval_ms: Option<u64>,
}

fn parse_ratio(s: &str) -> Result<(u32, u32), SpecError> {
    let bad = || SpecError::Schema(format!("ratio must be \"W:H\", got {s:?}"));
    let (w, h) = s.split_once(':').ok_or_else(bad)?;
    let w = w.trim().parse::<u32>().map_err(|_| bad())?;
    let h = h.trim().parse::<u32>().map_err(|_| bad())?;
    Ok((w, h))
}

/// Parses a document without checking the geometric and policy invariants.
pub fn parse_unchecked(text: &str) -> Result<FormSpecification, SpecError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => SpecError::Syntax(e.to_string()),
            Category::Data => SpecError::Schema(e.to_string()),
        }
    })?;
    let defaults = SupervisionPolicy::default();
    let policy = match raw.policy {
        None => defaults,
        Some(p) => SupervisionPolicy {
            min_ms_after_last_edit: p.x_ms.unwrap_or(defaults.min_ms_after_last_edit),
            min_focus_dwell_ms: p.y_ms.unwrap_or(defaults.min_focus_dwell_ms),
            verification_budget_ms: p.verify_budget_ms.unwrap_or(defaults.verification_budget_ms),
            frame_interval_ms: p.frame_interval_ms.unwrap_or(defaults.frame_interval_ms),
        },
    };
    Ok(FormSpecification {
        page_id: raw.page_id,
        ratio: parse_ratio(&raw.ratio)?,
        elements: raw
            .elements
            .into_iter()
            .map(|e| ElementSpec {
                id: e.id,
                kind: e.kind,
                initial_value: e.initialvalue,
                rect: Rect::new(e.x_position, e.y_position, e.width, e.height),
            })
            .collect(),
        policy,
    })
}

/// Parses and validates a specification document.
pub fn parse_spec(text: &str) -> Result<FormSpecification, SpecError> {
    let spec = parse_unchecked(text)?;
    if let Some(issue) = validate_spec(&spec).into_iter().next() {
        return Err(match issue {
            ValidationIssue::DuplicateId { id } => SpecError::DuplicateId(id),
            ValidationIssue::Policy { reason } => SpecError::Policy(reason),
            ValidationIssue::EmptyPageId | ValidationIssue::BadRatio | ValidationIssue::NoInput => {
                SpecError::Schema(issue.to_string())
            }
            geometry => SpecError::Geometry(geometry),
        });
    }
    Ok(spec)
}

fn num(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        json!(v as i64)
    } else {
        json!(v)
    }
}

/// Serialises a specification; the policy block is always written out.
pub fn to_document(spec: &FormSpecification) -> String {
    let elements: Vec<Value> = spec
        .elements
        .iter()
        .map(|e| {
            let mut m = Map::new();
            m.insert("id".into(), json!(e.id));
            m.insert(
                "type".into(),
                json!(match e.kind {
                    ElementKind::Label => "label",
                    ElementKind::Input => "input",
                }),
            );
            m.insert("initialvalue".into(), json!(e.initial_value));
            m.insert("x_position".into(), num(e.rect.x));
            m.insert("y_position".into(), num(e.rect.y));
            m.insert("width".into(), num(e.rect.width));
            m.insert("height".into(), num(e.rect.height));
            Value::Object(m)
        })
        .collect();
    let p = &spec.policy;
    let mut root = Map::new();
    root.insert("ratio".into(), json!(format!("{}:{}", spec.ratio.0, spec.ratio.1)));
    root.insert("page_id".into(), json!(spec.page_id));
    root.insert("elements".into(), Value::Array(elements));
    root.insert(
        "policy".into(),
        json!({
            "x_ms": p.min_ms_after_last_edit,
            "y_ms": p.min_focus_dwell_ms,
            "verify_budget_ms": p.verification_budget_ms,
            "frame_interval_ms": p.frame_interval_ms,
        }),
    );
    let mut out = serde_json::to_string_pretty(&Value::Object(root)).expect("json values serialise");
    out.push('\n');
    out
}
