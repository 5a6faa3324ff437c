//! Four-point perspective transforms.
//!
//! The transform is solved exactly from the four corner correspondences with
//! the bottom-right entry fixed to 1. Both point sets are first normalised
//! (centroid at the origin, mean distance sqrt(2)) to keep the 8x8 system
//! well conditioned.

use thiserror::Error;

use crate::geometry::{cross, Point, Quad};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HomographyError {
    #[error("three of the four corners are collinear")]
    DegenerateQuad,
    #[error("transform is not invertible")]
    Singular,
}

/// Projective transform of the plane, normalised so that `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub const fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self, HomographyError> {
        let s = m[2][2];
        if s.abs() < 1e-300 {
            return Err(HomographyError::Singular);
        }
        let mut out = [[0.0; 3]; 3];
        for (r, row) in m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out[r][c] = v / s;
            }
        }
        let h = Self { m: out };
        if h.determinant().abs() < 1e-9 {
            return Err(HomographyError::Singular);
        }
        Ok(h)
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.m)
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        Point::new(
            (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
            (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
        )
    }

    pub fn apply_quad(&self, q: &Quad) -> Quad {
        Quad(q.0.map(|p| self.apply(p)))
    }

    pub fn inverse(&self) -> Result<Self, HomographyError> {
        let m = &self.m;
        let det = det3(m);
        if det.abs() < 1e-300 {
            return Err(HomographyError::Singular);
        }
        let mut adj = [[0.0; 3]; 3];
        for (r, row) in adj.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                // Transposed cofactor.
                let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                *v = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
            }
        }
        Self::from_matrix(adj)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self, HomographyError> {
        Self::from_matrix(matmul(&self.m, &first.m))
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

fn is_degenerate(q: &[Point; 4]) -> bool {
    let scale = q.iter().map(|p| p.dist(q[0])).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return true;
    }
    let tol = 1e-9 * scale * scale;
    (0..4).any(|skip| {
        let t: Vec<Point> = (0..4).filter(|&i| i != skip).map(|i| q[i]).collect();
        cross(t[0], t[1], t[2]).abs() <= tol
    })
}

/// Similarity transform taking the points to zero mean and mean distance sqrt(2).
fn normaliser(q: &[Point; 4]) -> [[f64; 3]; 3] {
    let cx = q.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = q.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mean = q.iter().map(|p| p.dist(Point::new(cx, cy))).sum::<f64>() / 4.0;
    let s = std::f64::consts::SQRT_2 / mean;
    [[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]]
}

fn apply_raw(m: &[[f64; 3]; 3], p: Point) -> Point {
    let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
    Point::new((m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w, (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w)
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve8(mut a: [[f64; 8]; 8], mut b: [f64; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..8 {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                let pivot_row = a[col];
                for (v, p) in a[row].iter_mut().zip(pivot_row).skip(col) {
                    *v -= f * p;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = [0.0; 8];
    for row in (0..8).rev() {
        let tail: f64 = (row + 1..8).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// The transform mapping each `observed[i]` onto `canonical[i]`.
pub fn estimate_homography(observed: &[Point; 4], canonical: &[Point; 4]) -> Result<Homography, HomographyError> {
    if is_degenerate(observed) || is_degenerate(canonical) {
        return Err(HomographyError::DegenerateQuad);
    }
    let t_src = normaliser(observed);
    let t_dst = normaliser(canonical);
    let src = observed.map(|p| apply_raw(&t_src, p));
    let dst = canonical.map(|p| apply_raw(&t_dst, p));

    let mut a = [[0.0; 8]; 8];
    let mut b = [0.0; 8];
    for i in 0..4 {
        let (x, y) = (src[i].x, src[i].y);
        let (u, v) = (dst[i].x, dst[i].y);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
        b[2 * i] = u;
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
        b[2 * i + 1] = v;
    }
    let h = solve8(a, b).ok_or(HomographyError::DegenerateQuad)?;
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]];

    let t_dst_inv = Homography::from_matrix(t_dst)?.inverse()?;
    Homography::from_matrix(matmul(&t_dst_inv.m, &matmul(&hn, &t_src)))
}
