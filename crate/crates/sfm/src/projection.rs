//! Pinhole-plus-k1 projection and its analytic derivatives.
//!
//! Pose increments are applied on the left: `R ← exp(δω) R`, `t ← t + δt`.

use evrecon_core::{CameraIntrinsics, Pose};
use nalgebra::{Matrix2x3, Point2, Point3, SMatrix, UnitQuaternion, Vector3, Vector6};

use crate::geometry::skew;

pub type PoseJacobian = SMatrix<f64, 2, 6>;
pub type PointJacobian = Matrix2x3<f64>;
pub type IntrinsicsJacobian = SMatrix<f64, 2, 5>;

/// Number of intrinsic parameters in the order `fx, fy, cx, cy, k1`.
pub const INTRINSIC_PARAMS: usize = 5;

pub fn project(k: &CameraIntrinsics, pose: &Pose, x: &Point3<f64>) -> Option<Point2<f64>> {
    k.project(&pose.transform(x))
}

/// Depth of `x` along the camera axis.
pub fn depth(pose: &Pose, x: &Point3<f64>) -> f64 {
    pose.transform(x).z
}

pub struct ProjectionDerivatives {
    pub value: Point2<f64>,
    pub d_pose: PoseJacobian,
    pub d_point: PointJacobian,
    pub d_intrinsics: IntrinsicsJacobian,
}

/// Projection together with its Jacobians. `None` for non-positive depth.
pub fn project_with_derivatives(k: &CameraIntrinsics, pose: &Pose, x: &Point3<f64>) -> Option<ProjectionDerivatives> {
    let r = pose.rotation_matrix();
    let rx = r * x.coords;
    let xc = rx + pose.translation;
    if xc.z <= 0.0 {
        return None;
    }
    let iz = 1.0 / xc.z;
    let (nx, ny) = (xc.x * iz, xc.y * iz);
    let r2 = nx * nx + ny * ny;
    let d = 1.0 + k.k1 * r2;

    let dn_dxc = Matrix2x3::new(iz, 0.0, -nx * iz, 0.0, iz, -ny * iz);
    let duv_dn = nalgebra::Matrix2::new(
        k.fx * (d + 2.0 * k.k1 * nx * nx),
        k.fx * 2.0 * k.k1 * nx * ny,
        k.fy * 2.0 * k.k1 * nx * ny,
        k.fy * (d + 2.0 * k.k1 * ny * ny),
    );
    let duv_dxc = duv_dn * dn_dxc;

    let mut d_pose = PoseJacobian::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(duv_dxc * -skew(&rx)));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&duv_dxc);
    let d_point = duv_dxc * r;
    let d_intrinsics = IntrinsicsJacobian::from_row_slice(&[
        d * nx, 0.0, 1.0, 0.0, k.fx * r2 * nx, //
        0.0, d * ny, 0.0, 1.0, k.fy * r2 * ny,
    ]);
    Some(ProjectionDerivatives {
        value: Point2::new(k.fx * d * nx + k.cx, k.fy * d * ny + k.cy),
        d_pose,
        d_point,
        d_intrinsics,
    })
}

/// Applies a left increment `(δω, δt)`.
pub fn retract_pose(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let dw = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    let dr = UnitQuaternion::from_scaled_axis(dw);
    let rotation = UnitQuaternion::new_normalize((dr * pose.rotation).into_inner());
    Pose {
        rotation,
        translation: pose.translation + dt,
    }
}

pub fn intrinsics_to_array(k: &CameraIntrinsics) -> [f64; INTRINSIC_PARAMS] {
    [k.fx, k.fy, k.cx, k.cy, k.k1]
}

pub fn intrinsics_from_array(a: &[f64; INTRINSIC_PARAMS]) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: a[0],
        fy: a[1],
        cx: a[2],
        cy: a[3],
        k1: a[4],
    }
}

/// Rotation angle in radians between two orientations.
pub fn rotation_error(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}
