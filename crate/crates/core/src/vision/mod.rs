//! From camera frames to spec-aligned observations.
//!
//! Frames are realigned into the canonical form space (percent coordinates,
//! `0..100` on both axes), perturbed by an OCR noise model, and matched
//! against the form specification.

mod homography;
mod matching;
mod ocr;

pub use homography::{estimate_homography, Homography, HomographyError};
pub use matching::{match_to_spec, read_title, ObservedForm, POSITION_TOLERANCE};
pub use ocr::{ocr_observe, NoiseProfileError, OcrNoiseModel};

use crate::geometry::{Point, Quad};
use crate::screen::FrameObservation;

/// The form boundary in canonical space.
pub const CANONICAL_CORNERS: Quad = Quad([
    Point::new(0.0, 0.0),
    Point::new(100.0, 0.0),
    Point::new(100.0, 100.0),
    Point::new(0.0, 100.0),
]);

/// String equality that ignores all whitespace and letter case.
pub fn lenient_equal(a: &str, b: &str) -> bool {
    fn norm(s: &str) -> impl Iterator<Item = char> + '_ {
        s.chars().filter(|c| !c.is_whitespace()).flat_map(char::to_lowercase)
    }
    norm(a).eq(norm(b))
}

/// Maps every geometric feature of a camera-space frame through `h`.
pub fn realign(frame: &FrameObservation, h: &Homography) -> FrameObservation {
    FrameObservation {
        timestamp_ms: frame.timestamp_ms,
        corners: h.apply_quad(&frame.corners),
        regions: frame
            .regions
            .iter()
            .map(|r| crate::screen::TextRegion { quad: h.apply_quad(&r.quad), text: r.text.clone() })
            .collect(),
        focus_rects: frame.focus_rects.iter().map(|q| h.apply_quad(q)).collect(),
        activity: frame.activity,
        occluded: frame.occluded,
    }
}

/// Estimates the camera-to-canonical transform from the frame's own corners
/// and realigns it.
pub fn realign_to_canonical(frame: &FrameObservation) -> Result<FrameObservation, HomographyError> {
    let h = estimate_homography(frame.corners.corners(), CANONICAL_CORNERS.corners())?;
    Ok(realign(frame, &h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lenient_examples() {
        assert!(lenient_equal("CH93 0076", "ch930076"));
        assert!(lenient_equal("AB", "AB"));
        assert!(!lenient_equal("AB", "A8"));
        assert!(lenient_equal(" a\tb\n", "AB"));
        assert!(!lenient_equal("ab", "abc"));
    }

    fn arb_text() -> impl Strategy<Value = String> {
        // Small alphabet so that equal pairs actually occur.
        proptest::collection::vec(prop_oneof![Just('a'), Just('A'), Just('b'), Just('B'), Just(' '), Just('\t'), Just('1')], 0..6)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn lenient_is_an_equivalence(a in arb_text(), b in arb_text(), c in arb_text()) {
            prop_assert!(lenient_equal(&a, &a));
            prop_assert_eq!(lenient_equal(&a, &b), lenient_equal(&b, &a));
            if lenient_equal(&a, &b) && lenient_equal(&b, &c) {
                prop_assert!(lenient_equal(&a, &c));
            }
        }
    }
}
