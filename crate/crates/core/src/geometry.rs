//! Plane geometry shared by the screen model and the vision pipeline.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle given by its top-left corner and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self { x, y, width, height }
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    /// Interiors intersect. Rectangles that only share an edge do not overlap.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x <= self.right() && p.y >= self.y && p.y <= self.bottom()
    }

    pub fn dilate(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x - dx, self.y - dy, self.width + 2.0 * dx, self.height + 2.0 * dy)
    }

    /// Corners in top-left, top-right, bottom-right, bottom-left order.
    pub fn to_quad(&self) -> Quad {
        Quad([
            Point::new(self.x, self.y),
            Point::new(self.right(), self.y),
            Point::new(self.right(), self.bottom()),
            Point::new(self.x, self.bottom()),
        ])
    }
}

/// Four points in top-left, top-right, bottom-right, bottom-left order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad(pub [Point; 4]);

impl Quad {
    pub fn corners(&self) -> &[Point; 4] {
        &self.0
    }

    pub fn centroid(&self) -> Point {
        let (sx, sy) = self.0.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / 4.0, sy / 4.0)
    }

    /// Shoelace area, positive when the vertices run counter-clockwise in
    /// the numeric (x, y) frame.
    pub fn signed_area(&self) -> f64 {
        let p = &self.0;
        (0..4)
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % 4]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn is_convex_ccw(&self) -> bool {
        let p = &self.0;
        (0..4).all(|i| {
            let (a, b, c) = (p[i], p[(i + 1) % 4], p[(i + 2) % 4]);
            cross(a, b, c) > 0.0
        })
    }

    pub fn bounding_rect(&self) -> Rect {
        let xs = self.0.iter().map(|p| p.x);
        let ys = self.0.iter().map(|p| p.y);
        let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Point-in-convex-quad test (boundary inclusive, small slack).
    pub fn contains(&self, q: Point) -> bool {
        let p = &self.0;
        let eps = 1e-6;
        let signs: Vec<f64> = (0..4).map(|i| cross(p[i], p[(i + 1) % 4], q)).collect();
        signs.iter().all(|&s| s >= -eps) || signs.iter().all(|&s| s <= eps)
    }
}

/// z-component of (b - a) x (c - a).
pub(crate) fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn touching_rects_do_not_overlap() {
        let a = Rect::new(10.0, 10.0, 20.0, 10.0);
        assert!(!a.overlaps(&Rect::new(30.0, 10.0, 5.0, 5.0)));
        assert!(a.overlaps(&Rect::new(15.0, 12.0, 20.0, 10.0)));
    }

    #[test]
    fn rect_quad_orientation() {
        let q = Rect::new(160.0, 120.0, 960.0, 720.0).to_quad();
        assert!(q.signed_area() > 0.0);
        assert!(q.is_convex_ccw());
        assert!(q.contains(Point::new(500.0, 500.0)));
        assert!(!q.contains(Point::new(50.0, 500.0)));
    }
}
