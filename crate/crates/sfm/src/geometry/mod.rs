//! Minimal-solver and linear multi-view geometry.

pub mod alignment;
pub mod epipolar;
pub mod homography;
pub mod pnp;
pub mod ransac;
pub mod triangulation;

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Vector3};

/// Unit right-null vector of `a` (smallest right singular vector).
/// Zero rows are appended when `a` is wide so the decomposition is full.
pub fn null_vector(a: &DMatrix<f64>) -> DVector<f64> {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
        padded
    } else {
        a.clone()
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
    v_t.row(imin).transpose()
}

/// Similarity `T` moving the centroid to the origin and the mean distance
/// to √2. Returns `None` when all points coincide.
pub fn normalizing_transform(points: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points.iter().map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

#[inline]
pub fn apply(t: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// True when every point lies within `tol` of one line (or they coincide).
pub fn all_collinear(points: &[Point2<f64>], tol: f64) -> bool {
    if points.len() < 3 {
        return true;
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
    }
    // Smallest eigenvalue of the 2x2 scatter is the residual along the normal.
    let tr = cxx + cyy;
    let det = cxx * cyy - cxy * cxy;
    let lmin = tr / 2.0 - ((tr * tr / 4.0 - det).max(0.0)).sqrt();
    (lmin / n).max(0.0).sqrt() <= tol
}

/// Frobenius distance between two matrices after scaling each to unit norm
/// and aligning signs.
pub fn projective_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return f64::INFINITY;
    }
    let (a, b) = (a / na, b / nb);
    (a - b).norm().min((a + b).norm())
}
