//! Assigning realigned text regions to specification elements.

use std::collections::BTreeMap;

use crate::formspec::{FormSpecification, TITLE_RECT};
use crate::geometry::Rect;
use crate::screen::{FrameObservation, TextRegion};

/// Slack around each element rectangle, in percent of the form size.
pub const POSITION_TOLERANCE: f64 = 2.0;

/// One realigned frame interpreted against a specification.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedForm {
    pub page_id_text: Option<String>,
    /// `None` when no region was found for the element.
    pub element_readings: BTreeMap<String, Option<String>>,
    pub unexpected_regions: Vec<TextRegion>,
    pub focus_element_ids: Vec<String>,
    pub activity: bool,
    pub occluded: bool,
    pub timestamp_ms: u64,
}

fn tolerant(r: &Rect) -> Rect {
    r.dilate(POSITION_TOLERANCE, POSITION_TOLERANCE)
}

/// The title text, if a region sits in the title area.
pub fn read_title(frame: &FrameObservation) -> Option<String> {
    let area = tolerant(&TITLE_RECT);
    frame
        .regions
        .iter()
        .find(|r| area.contains(r.quad.centroid()))
        .map(|r| r.text.clone())
}

pub fn match_to_spec(frame: &FrameObservation, spec: &FormSpecification) -> ObservedForm {
    let title_area = tolerant(&TITLE_RECT);
    let mut readings: BTreeMap<String, Option<String>> =
        spec.elements.iter().map(|e| (e.id.clone(), None)).collect();
    let mut page_id_text = None;
    let mut unexpected = Vec::new();

    for region in &frame.regions {
        let c = region.quad.centroid();
        if page_id_text.is_none() && title_area.contains(c) {
            page_id_text = Some(region.text.clone());
            continue;
        }
        let best = spec
            .elements
            .iter()
            .filter(|e| tolerant(&e.rect).contains(c))
            .min_by(|a, b| a.rect.center().dist(c).total_cmp(&b.rect.center().dist(c)));
        match best {
            Some(e) if readings[&e.id].is_none() => {
                readings.insert(e.id.clone(), Some(region.text.clone()));
            }
            _ => unexpected.push(region.clone()),
        }
    }

    let mut focus_element_ids = Vec::new();
    for q in &frame.focus_rects {
        let c = q.centroid();
        if let Some(e) = spec.elements.iter().find(|e| tolerant(&e.rect).contains(c)) {
            if !focus_element_ids.contains(&e.id) {
                focus_element_ids.push(e.id.clone());
            }
        }
    }

    ObservedForm {
        page_id_text,
        element_readings: readings,
        unexpected_regions: unexpected,
        focus_element_ids,
        activity: frame.activity,
        occluded: frame.occluded,
        timestamp_ms: frame.timestamp_ms,
    }
}
