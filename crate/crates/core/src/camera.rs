//! Pinhole camera model with one radial distortion term, and rigid poses.

use nalgebra::{Matrix3, Point2, Point3, UnitQuaternion, Vector2, Vector3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Radial distortion `k1` applied as `(1 + k1 r²)` on normalised coordinates.
    pub k1: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, k1: 0.0 }
    }

    /// Self-calibration prior: `f = 1.2 · max(w, h)`, principal point at the centre.
    pub fn prior_for(width: u32, height: u32) -> Self {
        let f = 1.2 * f64::from(width.max(height));
        Self::new(f, f, f64::from(width) / 2.0, f64::from(height) / 2.0)
    }

    pub fn is_valid_for(&self, width: u32, height: u32) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx <= f64::from(width)
            && self.cy <= f64::from(height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point. `None` when `z ≤ 0`.
    pub fn project(&self, pc: &Vector3<f64>) -> Option<Point2<f64>> {
        if pc.z <= 0.0 {
            return None;
        }
        Some(self.project_normalized(&Vector2::new(pc.x / pc.z, pc.y / pc.z)))
    }

    pub fn project_normalized(&self, n: &Vector2<f64>) -> Point2<f64> {
        let r2 = n.norm_squared();
        let d = 1.0 + self.k1 * r2;
        Point2::new(self.fx * d * n.x + self.cx, self.fy * d * n.y + self.cy)
    }

    /// Pixel to normalised image coordinates, inverting the radial term by
    /// fixed-point iteration.
    pub fn unproject(&self, px: &Point2<f64>) -> Vector2<f64> {
        let distorted = Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy);
        if self.k1 == 0.0 {
            return distorted;
        }
        let mut n = distorted;
        for _ in 0..20 {
            let d = 1.0 + self.k1 * n.norm_squared();
            n = distorted / d;
        }
        n
    }

    /// Unit bearing vector in the camera frame.
    pub fn bearing(&self, px: &Point2<f64>) -> Vector3<f64> {
        let n = self.unproject(px);
        Vector3::new(n.x, n.y, 1.0).normalize()
    }
}

/// Rigid world-to-camera transform `x_c = R x_w + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Pose of a camera at `center` looking at `target`, with image "down"
    /// roughly along `-up` (camera axes: x right, y down, z forward).
    pub fn look_at(center: &Point3<f64>, target: &Point3<f64>, up: &Vector3<f64>) -> Self {
        let z = (target - center).normalize();
        let x = z.cross(up).normalize();
        let y = z.cross(&x);
        // Rows of R are the camera axes in world coordinates.
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
        let translation = -(rotation * center.coords);
        Self { rotation, translation }
    }

    #[inline]
    pub fn transform(&self, pw: &Point3<f64>) -> Vector3<f64> {
        self.rotation * pw.coords + self.translation
    }

    /// Camera centre in world coordinates: `-Rᵀ t`.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Geodesic interpolation between two poses of the camera (centre lerp,
    /// orientation slerp).
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let c = self.center().coords.lerp(&other.center().coords, s);
        let rotation = self
            .rotation
            .try_slerp(&other.rotation, s, 1e-12)
            .unwrap_or(self.rotation);
        Pose {
            rotation,
            translation: -(rotation * c),
        }
    }
}
