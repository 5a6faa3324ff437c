use std::collections::BTreeSet;

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intentguard::formspec::{generate_random_form, ContentClass};
use intentguard::geometry::{Point, Quad};
use intentguard::screen::{make_pose, render, EditAction, EditEvent, FrameObservation, Key, PoseKind, ScreenState, TextRegion};
use intentguard::vision::{
    estimate_homography, match_to_spec, ocr_observe, realign_to_canonical, Homography, OcrNoiseModel, CANONICAL_CORNERS,
};

const IMAGE: (u32, u32) = (1280, 960);

/// Direct linear transform solved with nalgebra's LU decomposition.
fn dlt_oracle(src: &[Point; 4], dst: &[Point; 4]) -> Matrix3<f64> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y, u, v) = (src[i].x, src[i].y, dst[i].x, dst[i].y);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a.lu().solve(&b).expect("non-degenerate correspondences");
    Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0)
}

fn apply(m: &Matrix3<f64>, p: Point) -> Point {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    Point::new(v.x / v.z, v.y / v.z)
}

/// A convex quad: a rectangle with each corner jittered by under a quarter of its side.
fn arb_convex_quad() -> impl Strategy<Value = Quad> {
    (10.0..500.0f64, 10.0..500.0f64, 50.0..800.0f64, 50.0..800.0f64, proptest::array::uniform8(-0.24..0.24f64)).prop_map(
        |(x, y, w, h, j)| {
            Quad([
                Point::new(x + j[0] * w, y + j[1] * h),
                Point::new(x + w + j[2] * w, y + j[3] * h),
                Point::new(x + w + j[4] * w, y + h + j[5] * h),
                Point::new(x + j[6] * w, y + h + j[7] * h),
            ])
        },
    )
}

proptest! {
    #[test]
    fn homography_matches_dlt_oracle(q in arb_convex_quad()) {
        let canon = CANONICAL_CORNERS.0;
        let h = estimate_homography(&q.0, &canon).unwrap();
        let oracle = dlt_oracle(&q.0, &canon);
        for p in q.0.iter().chain([Point::new(250.0, 300.0), Point::new(17.0, 640.0)].iter()) {
            let (a, b) = (h.apply(*p), apply(&oracle, *p));
            let scale = b.x.abs().max(b.y.abs()).max(1.0);
            prop_assert!(a.dist(b) < 1e-9 * scale, "{a:?} vs {b:?}");
        }
        for (o, c) in q.0.iter().zip(canon) {
            prop_assert!(h.apply(*o).dist(c) < 1e-9);
        }
    }

    #[test]
    fn homography_of_quad_onto_itself_is_identity(q in arb_convex_quad()) {
        let h = estimate_homography(&q.0, &q.0).unwrap();
        let id = Homography::identity().matrix();
        for (r, row) in h.matrix().iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                prop_assert!((v - id[r][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_residual(q in arb_convex_quad(), u in 0.0..100.0f64, v in 0.0..100.0f64) {
        let h = estimate_homography(&CANONICAL_CORNERS.0, &q.0).unwrap();
        let back = h.inverse().unwrap();
        let p = Point::new(u, v);
        prop_assert!(back.apply(h.apply(p)).dist(p) < 1e-6);
    }

    #[test]
    fn zero_noise_is_identity(seed in any::<u64>(), texts in proptest::collection::vec("[a-zA-Z0-9 ]{0,12}", 0..8)) {
        let frame = FrameObservation {
            timestamp_ms: 5,
            corners: CANONICAL_CORNERS,
            regions: texts
                .iter()
                .enumerate()
                .map(|(i, t)| TextRegion { quad: intentguard::Rect::new(5.0, 10.0 * i as f64, 30.0, 5.0).to_quad(), text: t.clone() })
                .collect(),
            focus_rects: Vec::new(),
            activity: false,
            occluded: false,
        };
        prop_assert_eq!(ocr_observe(&frame, &OcrNoiseModel::zero(), seed), frame);
    }
}

#[test]
fn translation_is_pure_translation() {
    let canon = CANONICAL_CORNERS.0;
    let moved = canon.map(|p| Point::new(p.x + 10.0, p.y + 20.0));
    let m = estimate_homography(&canon, &moved).unwrap().matrix();
    let expected = [[1.0, 0.0, 10.0], [0.0, 1.0, 20.0], [0.0, 0.0, 1.0]];
    for r in 0..3 {
        for c in 0..3 {
            assert!((m[r][c] - expected[r][c]).abs() < 1e-9, "{m:?}");
        }
    }
}

/// Projects the canonical form through an explicit camera: the screen is a
/// plane facing the camera, rotated about its vertical axis.
fn pinhole(deg: f64, p: Point) -> Point {
    let (w, h) = (f64::from(IMAGE.0), f64::from(IMAGE.1));
    let focal = w;
    let (sx, sy) = (w * 0.75 / 100.0, h * 0.75 / 100.0);
    let local = Vector3::new((p.x - 50.0) * sx, (p.y - 50.0) * sy, 0.0);
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), -deg.to_radians());
    let world = rot * local + Vector3::new(0.0, 0.0, focal);
    Point::new(w / 2.0 + focal * world.x / world.z, h / 2.0 + focal * world.y / world.z)
}

#[test]
fn inclined_pose_matches_pinhole_camera() {
    for deg in [0.0, 10.0, 30.0, 45.0, 60.0] {
        let pose = make_pose(PoseKind::Inclined(deg), IMAGE).unwrap();
        let h = pose.homography();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = Point::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let (a, b) = (h.apply(p), pinhole(deg, p));
            assert!(a.dist(b) < 1e-6, "{deg} deg at {p:?}: {a:?} vs {b:?}");
        }
    }
}

/// A random form with one focused field and some typing on it.
fn random_state(seed: u64) -> ScreenState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=9);
    let mix: BTreeSet<ContentClass> = ContentClass::ALL.into_iter().collect();
    let (spec, _) = generate_random_form(seed, n, &mix).unwrap();
    let inputs: Vec<String> = spec.inputs().map(|e| e.id.clone()).collect();
    let mut s = ScreenState::new(spec);
    let target = &inputs[rng.random_range(0..inputs.len())];
    let mut t = 10;
    s.apply_edit(&EditEvent::user(t, EditAction::Focus { element: target.clone(), additional: false })).unwrap();
    for _ in 0..rng.random_range(0..12) {
        t += 150;
        let key = if rng.random_bool(0.2) { Key::Backspace } else { Key::Char(rng.random_range('a'..='z')) };
        s.apply_edit(&EditEvent::user(t, EditAction::Keypress { element: target.clone(), key })).unwrap();
    }
    s.advance_to(t + 50);
    s
}

#[test]
fn inclined_and_straight_poses_observe_the_same_form() {
    let straight = make_pose(PoseKind::Straight, IMAGE).unwrap();
    for deg in [20.0, 45.0, 60.0] {
        let inclined = make_pose(PoseKind::Inclined(deg), IMAGE).unwrap();
        for seed in 0..200 {
            let s = random_state(seed);
            let a = realign_to_canonical(&render(&s, &straight)).unwrap();
            let b = realign_to_canonical(&render(&s, &inclined)).unwrap();
            assert_eq!(match_to_spec(&a, s.spec()), match_to_spec(&b, s.spec()), "seed {seed} at {deg} deg");
            assert_eq!(a.regions.len(), b.regions.len());
            // Within 0.5% of the form width (100 canonical units).
            for (ra, rb) in a.regions.iter().zip(&b.regions) {
                assert_eq!(ra.text, rb.text);
                for (pa, pb) in ra.quad.0.iter().zip(rb.quad.0) {
                    assert!(pa.dist(pb) < 0.5, "seed {seed}: {pa:?} vs {pb:?}");
                }
            }
        }
    }
}

#[test]
fn region_miss_rate_is_binomial() {
    let model = OcrNoiseModel::new(0.0, 0.0025, 0.0, &[]).unwrap();
    let frame = FrameObservation {
        timestamp_ms: 0,
        corners: CANONICAL_CORNERS,
        regions: (0..8)
            .map(|i| TextRegion { quad: intentguard::Rect::new(10.0, 5.0 + 11.0 * i as f64, 40.0, 6.0).to_quad(), text: format!("value {i}") })
            .collect(),
        focus_rects: Vec::new(),
        activity: false,
        occluded: false,
    };
    let forms = 10_000;
    let survived = (0..forms).filter(|&seed| ocr_observe(&frame, &model, seed).regions.len() == 8).count();
    let rate = survived as f64 / forms as f64;
    let expected = 0.9975f64.powi(8);
    assert!((rate - expected).abs() <= 0.005, "all-regions rate {rate} vs {expected}");
}

#[test]
fn occluded_frame_stays_empty() {
    let mut s = random_state(3);
    s.apply_edit(&EditEvent::attacker(100_000, EditAction::Occlude)).unwrap();
    let inclined = make_pose(PoseKind::Inclined(45.0), IMAGE).unwrap();
    let f = realign_to_canonical(&render(&s, &inclined)).unwrap();
    assert!(f.occluded && f.regions.is_empty() && f.focus_rects.is_empty());
}
