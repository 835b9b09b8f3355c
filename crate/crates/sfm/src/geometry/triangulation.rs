use evrecon_core::Pose;
use nalgebra::{DMatrix, Point2, Point3};

use super::null_vector;

/// Linear multi-view triangulation from normalised image coordinates.
pub fn triangulate_dlt(views: &[(Pose, Point2<f64>)]) -> Option<Point3<f64>> {
    if views.len() < 2 {
        return None;
    }
    let mut a = DMatrix::zeros(2 * views.len(), 4);
    for (i, (pose, n)) in views.iter().enumerate() {
        let r = pose.rotation_matrix();
        let t = pose.translation;
        let row = |k: usize| [r[(k, 0)], r[(k, 1)], r[(k, 2)], t[k]];
        let (p0, p1, p2) = (row(0), row(1), row(2));
        for (j, (coef, pk)) in [(n.x, p0), (n.y, p1)].into_iter().enumerate() {
            let mut eq = [0.0; 4];
            for c in 0..4 {
                eq[c] = coef * p2[c] - pk[c];
            }
            let norm = eq.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for c in 0..4 {
                    a[(2 * i + j, c)] = eq[c] / norm;
                }
            }
        }
    }
    let x = null_vector(&a);
    if x[3].abs() < 1e-14 * x.norm() {
        return None;
    }
    let p = Point3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]);
    p.coords.iter().all(|v| v.is_finite()).then_some(p)
}

/// Angle at `x` between rays towards two camera centres, radians.
pub fn triangulation_angle(c1: &Point3<f64>, c2: &Point3<f64>, x: &Point3<f64>) -> f64 {
    let a = c1 - x;
    let b = c2 - x;
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / denom).clamp(-1.0, 1.0).acos()
}

/// `(min, max)` of the pairwise triangulation angles over all centre pairs.
pub fn pairwise_angle_range(centers: &[Point3<f64>], x: &Point3<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let a = triangulation_angle(&centers[i], &centers[j], x);
            lo = lo.min(a);
            hi = hi.max(a);
        }
    }
    if centers.len() < 2 {
        lo = 0.0;
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    #[test]
    fn two_view_exact_point() {
        let a = Pose::identity();
        let b = Pose::new(UnitQuaternion::identity(), Vector3::new(-1.0, 0.0, 0.0));
        let x = Point3::new(0.0, 0.0, 5.0);
        let na = {
            let c = a.transform(&x);
            Point2::new(c.x / c.z, c.y / c.z)
        };
        let nb = {
            let c = b.transform(&x);
            Point2::new(c.x / c.z, c.y / c.z)
        };
        let p = triangulate_dlt(&[(a, na), (b, nb)]).unwrap();
        assert!((p - x).norm() < 1e-9);
    }

    #[test]
    fn angle_of_symmetric_baseline() {
        let x = Point3::new(0.0, 0.0, 1.0);
        let a = triangulation_angle(&Point3::new(-1.0, 0.0, 0.0), &Point3::new(1.0, 0.0, 0.0), &x);
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let (lo, hi) = pairwise_angle_range(
            &[Point3::new(-1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 0.0, 0.0)],
            &x,
        );
        assert!((lo - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!((hi - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
