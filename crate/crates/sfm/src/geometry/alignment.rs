use evrecon_core::Pose;
use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};

/// `x ↦ s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    /// The same camera expressed in the transformed world frame.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        let rotation = pose.rotation * self.rotation.inverse();
        let translation = self.scale * pose.translation - (rotation * self.translation);
        Pose { rotation, translation }
    }
}

fn centroid(points: &[Point3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / points.len() as f64
}

fn best_rotation(cov: &Matrix3<f64>) -> Option<(Matrix3<f64>, f64)> {
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let sv = svd.singular_values;
    // Singular values are unordered: the sign flip belongs on the smallest.
    let imin = sv.imin();
    let mut flip = Vector3::new(1.0, 1.0, 1.0);
    flip[imin] = d;
    let r = u * Matrix3::from_diagonal(&flip) * v_t;
    let trace = sv.component_mul(&flip).sum();
    Some((r, trace))
}

/// Least-squares rigid motion with `dst ≈ R src + t` (Kabsch).
pub fn rigid_transform(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Option<Pose> {
    if src.len() < 3 || src.len() != dst.len() {
        return None;
    }
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d.coords - cd) * (s.coords - cs).transpose();
    }
    let (r, _) = best_rotation(&cov)?;
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Some(Pose::new(rotation, cd - rotation * cs))
}

/// Least-squares similarity with `dst ≈ s R src + t` (Umeyama).
pub fn similarity_transform(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Option<Similarity> {
    if src.len() < 3 || src.len() != dst.len() {
        return None;
    }
    let n = src.len() as f64;
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s.coords - cs;
        cov += (d.coords - cd) * a.transpose();
        var += a.norm_squared();
    }
    if var <= 0.0 {
        return None;
    }
    let (r, trace) = best_rotation(&(cov / n))?;
    let scale = trace / (var / n);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Some(Similarity {
        scale,
        rotation,
        translation: cd - scale * (rotation * cs),
    })
}

/// Similarity taking an estimated camera set onto a reference one. The
/// rotation is the chordal mean of the per-camera orientation offsets; scale
/// and translation then fit the centres. Unlike [`similarity_transform`] on
/// centres alone, this stays well conditioned for cameras on a shallow arc.
pub fn align_cameras(estimated: &[Pose], reference: &[Pose]) -> Option<Similarity> {
    if estimated.len() < 2 || estimated.len() != reference.len() {
        return None;
    }
    let sum: Matrix3<f64> = estimated
        .iter()
        .zip(reference)
        .map(|(e, r)| r.rotation_matrix().transpose() * e.rotation_matrix())
        .sum();
    let (q, _) = best_rotation(&sum)?;
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(q));
    let src: Vec<Point3<f64>> = estimated.iter().map(Pose::center).collect();
    let dst: Vec<Point3<f64>> = reference.iter().map(Pose::center).collect();
    let (cs, cd) = (centroid(&src), centroid(&dst));
    let (mut num, mut den) = (0.0, 0.0);
    for (s, d) in src.iter().zip(&dst) {
        let a = rotation * (s.coords - cs);
        num += a.dot(&(d.coords - cd));
        den += a.norm_squared();
    }
    if den <= 0.0 || num <= 0.0 {
        return None;
    }
    let scale = num / den;
    Some(Similarity {
        scale,
        rotation,
        translation: cd - scale * (rotation * cs),
    })
}
