//! Camera placement relative to the client screen.

use thiserror::Error;

use crate::geometry::{Point, Quad};
use crate::vision::{estimate_homography, Homography, CANONICAL_CORNERS};

/// Fraction of the image width (and height) the form covers in the straight pose.
pub const FORM_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseKind {
    Straight,
    /// Screen plane rotated about its vertical axis by this many degrees.
    Inclined(f64),
}

impl std::str::FromStr for PoseKind {
    type Err = String;

    /// `straight` or `inclined:<degrees>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "straight" => Ok(Self::Straight),
            Some(("inclined", deg)) => deg
                .parse::<f64>()
                .map(Self::Inclined)
                .map_err(|_| format!("bad inclination angle {deg:?}")),
            _ => Err(format!("unknown pose {s:?}; expected straight or inclined:<deg>")),
        }
    }
}

impl std::fmt::Display for PoseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Straight => f.write_str("straight"),
            Self::Inclined(deg) => write!(f, "inclined:{deg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("inclination {0} degrees is outside [0, 60]")]
pub struct AngleOutOfRange(pub f64);

/// Where the form boundary's corners appear in the camera image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub corners: Quad,
    pub image_size: (u32, u32),
}

impl CameraPose {
    /// Canonical form space to camera pixels.
    pub fn homography(&self) -> Homography {
        estimate_homography(CANONICAL_CORNERS.corners(), self.corners.corners())
            .expect("pose corners form a convex quadrilateral")
    }
}

/// Builds a camera pose.
///
/// The inclined pose is a pinhole projection with focal length equal to the
/// image width, the screen centred on the optical axis at the distance where
/// it covers [`FORM_FRACTION`] of the image when facing the camera, then
/// turned about its vertical axis so that its right edge recedes.
pub fn make_pose(kind: PoseKind, image_size: (u32, u32)) -> Result<CameraPose, AngleOutOfRange> {
    let (w, h) = (f64::from(image_size.0), f64::from(image_size.1));
    let (cx, cy) = (w / 2.0, h / 2.0);
    let half_w = w * FORM_FRACTION / 2.0;
    let half_h = h * FORM_FRACTION / 2.0;
    let angle = match kind {
        PoseKind::Straight => 0.0,
        PoseKind::Inclined(a) if (0.0..=60.0).contains(&a) => a,
        PoseKind::Inclined(a) => return Err(AngleOutOfRange(a)),
    };
    let (sin, cos) = angle.to_radians().sin_cos();
    let focal = w;
    let distance = focal;
    let project = |x: f64, y: f64| {
        let depth = distance + x * sin;
        Point::new(cx + focal * x * cos / depth, cy + focal * y / depth)
    };
    let corners = Quad([
        project(-half_w, -half_h),
        project(half_w, -half_h),
        project(half_w, half_h),
        project(-half_w, half_h),
    ]);
    Ok(CameraPose { corners, image_size })
}
