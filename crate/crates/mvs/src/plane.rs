//! Slanted support planes in the reference camera frame.
//!
//! A hypothesis at pixel `p` is a depth `d` along the optical axis and a unit
//! normal `n` (camera frame, `n_z < 0`). The plane is `nᵀX = c` with
//! `c = nᵀX_p`, `X_p = d·K⁻¹p̃`.

use evrecon_core::{CameraIntrinsics, Pose};
use nalgebra::{Matrix3, Point2, Vector3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hypothesis {
    pub depth: f64,
    pub normal: Vector3<f64>,
}

impl Hypothesis {
    pub fn fronto_parallel(depth: f64) -> Self {
        Self {
            depth,
            normal: -Vector3::z(),
        }
    }

    /// Plane offset `c` for the hypothesis at the pixel with ray `ray`
    /// (`ray.z == 1`).
    pub fn offset(&self, ray: &Vector3<f64>) -> f64 {
        self.normal.dot(&(ray * self.depth))
    }

    /// The same plane re-expressed at another pixel; `None` when the ray is
    /// parallel to the plane or the intersection lies behind the camera.
    pub fn transfer(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> Option<Self> {
        let denom = self.normal.dot(to);
        if denom.abs() < 1e-12 {
            return None;
        }
        let depth = self.offset(from) / denom;
        (depth > 0.0).then_some(Self { depth, normal: self.normal })
    }
}

/// Pixel ray with unit z through `p` (pinhole, no distortion).
pub fn pixel_ray(k: &CameraIntrinsics, x: f64, y: f64) -> Vector3<f64> {
    Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0)
}

/// Homography mapping reference pixels to source pixels for the plane
/// `nᵀX = c` in the reference frame; `relative` maps reference camera
/// coordinates into source camera coordinates.
pub fn plane_homography(
    k_ref: &CameraIntrinsics,
    k_src: &CameraIntrinsics,
    relative: &Pose,
    normal: &Vector3<f64>,
    c: f64,
) -> Matrix3<f64> {
    let r = relative.rotation_matrix();
    k_src.matrix() * (r + relative.translation * normal.transpose() / c) * k_ref.inverse_matrix()
}

/// Relative pose taking reference camera coordinates to source ones.
pub fn relative_pose(reference: &Pose, source: &Pose) -> Pose {
    source.compose(&reference.inverse())
}

#[inline]
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Option<Point2<f64>> {
    let w = h[(2, 0)] * x + h[(2, 1)] * y + h[(2, 2)];
    if w <= 1e-12 {
        return None;
    }
    Some(Point2::new(
        (h[(0, 0)] * x + h[(0, 1)] * y + h[(0, 2)]) / w,
        (h[(1, 0)] * x + h[(1, 1)] * y + h[(1, 2)]) / w,
    ))
}
