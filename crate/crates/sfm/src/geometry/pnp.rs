//! Absolute pose from 2D-3D correspondences.

use evrecon_core::{CameraIntrinsics, Pose};
use nalgebra::{DMatrix, Matrix6, Point2, Point3, Vector3, Vector6};
use rand::Rng;

use super::alignment::rigid_transform;
use super::ransac::{ransac, RansacParams, RansacResult};
use crate::projection::{project, project_with_derivatives, retract_pose};

/// Real roots of `c[0] xⁿ + … + c[n]`, from companion-matrix eigenvalues
/// followed by Newton polishing.
pub fn real_polynomial_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|v| v / scale).collect();
    while c.len() > 1 && c[0].abs() < 1e-12 {
        c.remove(0);
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[0];
    let mut comp = DMatrix::zeros(deg, deg);
    for j in 0..deg {
        comp[(0, j)] = -c[j + 1] / lead;
    }
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    let eval = |x: f64| {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &a in &c {
            dp = dp * x + p;
            p = p * x + a;
        }
        (p, dp)
    };
    let mut roots = Vec::new();
    for z in comp.complex_eigenvalues().iter() {
        if z.im.abs() > 1e-4 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..8 {
            let (p, dp) = eval(x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if x.is_finite() {
            roots.push(x);
        }
    }
    roots
}

/// Grunert's three-point solution. `bearings` are unit rays in the camera
/// frame; returns every pose consistent with positive distances.
pub fn p3p(bearings: &[Vector3<f64>; 3], world: &[Point3<f64>; 3]) -> Vec<Pose> {
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let ca = bearings[1].dot(&bearings[2]);
    let cb = bearings[0].dot(&bearings[2]);
    let cg = bearings[0].dot(&bearings[1]);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let (ca2, cb2, cg2) = (ca * ca, cb * cb, cg * cg);

    let a4 = (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca2;
    let a3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca2 * cb);
    let a2c = 2.0
        * (amc * amc - 1.0 + 2.0 * amc * amc * cb2 + 2.0 * bmc * ca2 - 4.0 * apc * ca * cb * cg
            + 2.0 * bma * cg2);
    let a1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg2 * cb - (1.0 - apc) * ca * cg);
    let a0 = (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg2;

    let mut poses = Vec::new();
    for v in real_polynomial_roots(&[a4, a3, a2c, a1, a0]) {
        if v <= 0.0 {
            continue;
        }
        let den = 2.0 * (cg - v * ca);
        if den.abs() < 1e-12 {
            continue;
        }
        let u = ((amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den;
        if u <= 0.0 {
            continue;
        }
        let q = 1.0 + v * v - 2.0 * v * cb;
        if q <= 0.0 {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let cam = [
            Point3::from(bearings[0] * s1),
            Point3::from(bearings[1] * (u * s1)),
            Point3::from(bearings[2] * (v * s1)),
        ];
        if let Some(pose) = rigid_transform(world, &cam) {
            poses.push(pose);
        }
    }
    poses
}

/// Gauss-Newton with Levenberg damping on the reprojection error of a
/// single camera with fixed intrinsics and structure.
pub fn refine_pose(
    initial: &Pose,
    world: &[Point3<f64>],
    pixels: &[Point2<f64>],
    k: &CameraIntrinsics,
    max_iterations: usize,
) -> Pose {
    let cost = |pose: &Pose| -> f64 {
        world
            .iter()
            .zip(pixels)
            .map(|(x, p)| match project(k, pose, x) {
                Some(q) => (q - p).norm_squared(),
                None => 1e12,
            })
            .sum()
    };
    let mut pose = *initial;
    let mut current = cost(&pose);
    let mut lambda = 1e-4;
    for _ in 0..max_iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (x, p) in world.iter().zip(pixels) {
            if let Some(d) = project_with_derivatives(k, &pose, x) {
                let r = d.value - p;
                h += d.d_pose.transpose() * d.d_pose;
                g += d.d_pose.transpose() * r;
            }
        }
        if g.amax() < 1e-12 {
            break;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = retract_pose(&pose, &step);
            let c = cost(&candidate);
            if c < current {
                let rel = (current - c) / current.max(1e-300);
                pose = candidate;
                current = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

/// P3P inside RANSAC on pixel reprojection error, followed by refinement on
/// the inliers.
pub fn estimate_pose_ransac<R: Rng + ?Sized>(
    world: &[Point3<f64>],
    pixels: &[Point2<f64>],
    k: &CameraIntrinsics,
    params: &RansacParams,
    rng: &mut R,
) -> Option<RansacResult<Pose>> {
    let bearings: Vec<Vector3<f64>> = pixels.iter().map(|p| k.bearing(p)).collect();
    let residual = |pose: &Pose, i: usize| match project(k, pose, &world[i]) {
        Some(q) => (q - pixels[i]).norm(),
        None => f64::INFINITY,
    };
    let mut res = ransac(
        world.len(),
        3,
        params,
        rng,
        |s| {
            p3p(
                &[bearings[s[0]], bearings[s[1]], bearings[s[2]]],
                &[world[s[0]], world[s[1]], world[s[2]]],
            )
        },
        residual,
    )?;
    if res.inliers.len() < 3 {
        return None;
    }
    for _ in 0..2 {
        let w: Vec<_> = res.inliers.iter().map(|&i| world[i]).collect();
        let p: Vec<_> = res.inliers.iter().map(|&i| pixels[i]).collect();
        let refined = refine_pose(&res.model, &w, &p, k, 50);
        let inliers: Vec<usize> = (0..world.len()).filter(|&i| residual(&refined, i) <= params.threshold).collect();
        if inliers.len() < res.inliers.len() {
            break;
        }
        res.model = refined;
        res.inliers = inliers;
    }
    Some(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quartic_roots() {
        // (x-1)(x+2)(x-3)(x-0.5) = x⁴ - 2.5x³ - 4x² + 8.5x - 3
        let mut r = real_polynomial_roots(&[1.0, -2.5, -4.0, 8.5, -3.0]);
        r.sort_by(f64::total_cmp);
        let expect = [-2.0, 0.5, 1.0, 3.0];
        assert_eq!(r.len(), 4);
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // x² + 1 has no real roots; leading zeros are stripped.
        assert!(real_polynomial_roots(&[0.0, 0.0, 1.0, 0.0, 1.0]).is_empty());
    }

    fn truth() -> Pose {
        Pose::new(UnitQuaternion::from_euler_angles(0.2, -0.3, 0.1), Vector3::new(0.3, -0.2, 4.0))
    }

    #[test]
    fn p3p_contains_true_pose() {
        let pose = truth();
        let world = [Point3::new(-1.0, 0.5, 0.2), Point3::new(0.8, 0.9, -0.3), Point3::new(0.1, -1.0, 0.6)];
        let bearings = world.map(|x| pose.transform(&x).normalize());
        let sols = p3p(&bearings, &world);
        assert!(!sols.is_empty() && sols.len() <= 4);
        assert!(sols
            .iter()
            .any(|s| s.rotation.angle_to(&pose.rotation) < 1e-8 && (s.translation - pose.translation).norm() < 1e-8));
        for s in &sols {
            for (x, b) in world.iter().zip(&bearings) {
                assert!((s.transform(x).normalize() - b).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn ransac_pnp_noiseless() {
        let pose = truth();
        let k = CameraIntrinsics::new(400.0, 400.0, 160.0, 120.0);
        let world: Vec<Point3<f64>> = (0..50)
            .map(|i| {
                let f = i as f64;
                Point3::new((f * 0.91).sin(), (f * 0.37).cos(), (f * 1.7).sin() * 0.5)
            })
            .collect();
        let mut pixels: Vec<Point2<f64>> = world.iter().map(|x| project(&k, &pose, x).unwrap()).collect();
        for p in pixels.iter_mut().step_by(5) {
            p.x += 40.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let res = estimate_pose_ransac(&world, &pixels, &k, &RansacParams { threshold: 2.0, ..Default::default() }, &mut rng).unwrap();
        assert_eq!(res.inliers.len(), 40);
        assert!(res.model.rotation.angle_to(&pose.rotation) < 1e-4);
        assert!((res.model.translation - pose.translation).norm() < 1e-4);
    }
}
