use nalgebra::{DMatrix, Matrix3, Point2, Vector3};

use super::{apply, normalizing_transform, null_vector};

/// Normalised DLT over ≥ 4 correspondences `dst ~ H src`.
/// The result is scaled so that `h33 = 1` when that entry is not vanishing.
pub fn estimate_homography(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return None;
    }
    let t1 = normalizing_transform(src)?;
    let t2 = normalizing_transform(dst)?;
    let mut a = DMatrix::zeros(2 * n, 9);
    for i in 0..n {
        let p = apply(&t1, &src[i]);
        let q = apply(&t2, &dst[i]);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        a.row_mut(2 * i).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * i + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let h = null_vector(&a);
    let hn = Matrix3::from_row_slice(h.as_slice());
    let t2_inv = t2.try_inverse()?;
    let h = t2_inv * hn * t1;
    normalize_homography(h)
}

pub fn normalize_homography(h: Matrix3<f64>) -> Option<Matrix3<f64>> {
    let norm = h.norm();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    if h[(2, 2)].abs() > 1e-12 * norm {
        Some(h / h[(2, 2)])
    } else {
        Some(h / norm)
    }
}

/// Forward transfer error `‖H x − x'‖` in pixels.
pub fn transfer_error(h: &Matrix3<f64>, src: &Point2<f64>, dst: &Point2<f64>) -> f64 {
    let v = h * Vector3::new(src.x, src.y, 1.0);
    if v.z.abs() < 1e-15 {
        return f64::INFINITY;
    }
    ((v.x / v.z - dst.x).powi(2) + (v.y / v.z - dst.y).powi(2)).sqrt()
}

pub fn map_point(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    apply(h, p)
}
