use evrecon_core::{CameraIntrinsics, Pose};
use evrecon_sfm::bundle::{bundle_adjust, robust_cost, BundleOptions, Termination};
use evrecon_sfm::geometry::alignment::Similarity;
use evrecon_sfm::projection::{intrinsics_from_array, intrinsics_to_array, project, project_with_derivatives, retract_pose};
use evrecon_sfm::synthetic::SyntheticScene;
use nalgebra::{Point2, Point3, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_config(rng: &mut ChaCha8Rng) -> (CameraIntrinsics, Pose, Point3<f64>) {
    let k = CameraIntrinsics {
        fx: rng.random_range(200.0..600.0),
        fy: rng.random_range(200.0..600.0),
        cx: rng.random_range(100.0..200.0),
        cy: rng.random_range(80.0..160.0),
        k1: rng.random_range(-0.2..0.2),
    };
    let pose = Pose::new(
        UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0)),
        Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
    );
    let pc = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..10.0));
    let x = Point3::from(pose.rotation.inverse() * (pc - pose.translation));
    (k, pose, x)
}

/// Projection written out by hand from quaternion components.
fn expanded_projection(k: &CameraIntrinsics, pose: &Pose, x: &Point3<f64>) -> Point2<f64> {
    let q = pose.rotation.quaternion();
    let (w, a, b, c) = (q.w, q.i, q.j, q.k);
    let r00 = 1.0 - 2.0 * (b * b + c * c);
    let r01 = 2.0 * (a * b - c * w);
    let r02 = 2.0 * (a * c + b * w);
    let r10 = 2.0 * (a * b + c * w);
    let r11 = 1.0 - 2.0 * (a * a + c * c);
    let r12 = 2.0 * (b * c - a * w);
    let r20 = 2.0 * (a * c - b * w);
    let r21 = 2.0 * (b * c + a * w);
    let r22 = 1.0 - 2.0 * (a * a + b * b);
    let t = pose.translation;
    let xc = r00 * x.x + r01 * x.y + r02 * x.z + t.x;
    let yc = r10 * x.x + r11 * x.y + r12 * x.z + t.y;
    let zc = r20 * x.x + r21 * x.y + r22 * x.z + t.z;
    let u = xc / zc;
    let v = yc / zc;
    let d = 1.0 + k.k1 * (u * u + v * v);
    Point2::new(k.fx * d * u + k.cx, k.fy * d * v + k.cy)
}

#[test]
fn projection_of_axis_point_is_principal_point() {
    let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0);
    let q = project(&k, &Pose::identity(), &Point3::new(0.0, 0.0, 1.0)).unwrap();
    assert_eq!(q, Point2::new(0.0, 0.0));
}

#[test]
fn projection_matches_expanded_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (k, pose, x) = random_config(&mut rng);
        let a = project(&k, &pose, &x).unwrap();
        let b = expanded_projection(&k, &pose, &x);
        assert!((a - b).norm() <= 1e-12 * (1.0 + b.coords.norm()), "{a} vs {b}");
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

#[test]
fn jacobians_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let (k, pose, x) = random_config(&mut rng);
        let d = project_with_derivatives(&k, &pose, &x).unwrap();
        for j in 0..6 {
            let mut e = Vector6::zeros();
            e[j] = h;
            let p = project(&k, &retract_pose(&pose, &e), &x).unwrap();
            let m = project(&k, &retract_pose(&pose, &(-e)), &x).unwrap();
            let fd = (p - m) / (2.0 * h);
            for r in 0..2 {
                worst[0] = worst[0].max(rel_err(d.d_pose[(r, j)], fd[r]));
            }
        }
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = h;
            let fd = (project(&k, &pose, &(x + e)).unwrap() - project(&k, &pose, &(x - e)).unwrap()) / (2.0 * h);
            for r in 0..2 {
                worst[1] = worst[1].max(rel_err(d.d_point[(r, j)], fd[r]));
            }
        }
        for j in 0..5 {
            let (mut a, mut b) = (intrinsics_to_array(&k), intrinsics_to_array(&k));
            a[j] += h;
            b[j] -= h;
            let fd = (project(&intrinsics_from_array(&a), &pose, &x).unwrap() - project(&intrinsics_from_array(&b), &pose, &x).unwrap())
                / (2.0 * h);
            for r in 0..2 {
                worst[2] = worst[2].max(rel_err(d.d_intrinsics[(r, j)], fd[r]));
            }
        }
    }
    assert!(worst.iter().all(|&w| w < 1e-4), "pose/point/intrinsics worst relative error {worst:?}");
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let scene = SyntheticScene::ring(4, 50, 40.0, 3);
    let mut recon = scene.ground_truth();
    let report = bundle_adjust(&mut recon, &BundleOptions::default()).unwrap();
    assert!(report.final_cost < 1e-18);
    assert_eq!(report.iterations, 0);
    assert_eq!(report.termination, Termination::GradientTolerance);
    for (i, p) in scene.poses.iter().enumerate() {
        assert_eq!(recon.pose(i).unwrap(), p);
    }
}

/// Rotates each camera about its own centre and shifts the centre.
fn perturb(recon: &mut evrecon_sfm::Reconstruction, rng: &mut ChaCha8Rng, sigma: f64) {
    let n = Normal::new(0.0, sigma).unwrap();
    let (g0, _) = recon.gauge.unwrap();
    for i in recon.registered_images() {
        if i == g0 {
            continue;
        }
        let pose = recon.pose(i).unwrap();
        let dr = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| n.sample(rng)));
        let c = pose.center().coords + Vector3::from_fn(|_, _| n.sample(rng));
        let rotation = dr * pose.rotation;
        recon.poses[i] = Some(Pose::new(rotation, -(rotation * c)));
    }
}

#[test]
fn perturbed_ring_converges() {
    let scene = SyntheticScene::ring(10, 200, 60.0, 4);
    let mut recon = scene.ground_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    perturb(&mut recon, &mut rng, 0.01);
    let before = recon.mean_reprojection_error();
    let report = bundle_adjust(&mut recon, &BundleOptions::default()).unwrap();
    assert!(before > 1.0);
    assert!(recon.mean_reprojection_error() < 0.1, "{}", recon.mean_reprojection_error());
    assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
    assert!(recon.cheirality_holds());
}

#[test]
fn intrinsics_refinement_recovers_focal_length() {
    let scene = SyntheticScene::ring(6, 150, 60.0, 6);
    let mut recon = scene.ground_truth();
    recon.cameras[0].intrinsics.fx *= 1.03;
    recon.cameras[0].intrinsics.fy *= 0.98;
    let opts = BundleOptions {
        refine_intrinsics: [true, true, false, false, true],
        ..BundleOptions::default()
    };
    let report = bundle_adjust(&mut recon, &opts).unwrap();
    assert!(report.final_cost < 1e-6 * report.initial_cost);
    assert!((recon.cameras[0].intrinsics.fx - 300.0).abs() < 0.1);
    assert!((recon.cameras[0].intrinsics.fy - 300.0).abs() < 0.1);
}

#[test]
fn cost_is_invariant_to_similarity_of_the_model() {
    let scene = SyntheticScene::ring(5, 80, 50.0, 7);
    let mut recon = scene.ground_truth();
    // Measurement noise so the optimum has non-zero cost.
    let n = Normal::new(0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for kp in recon.keypoints.iter_mut() {
        for p in kp.iter_mut() {
            p.x += n.sample(&mut rng);
            p.y += n.sample(&mut rng);
        }
    }
    let sim = Similarity {
        scale: 1.7,
        rotation: UnitQuaternion::from_euler_angles(0.4, -0.2, 1.1),
        translation: Vector3::new(2.0, -1.0, 0.5),
    };
    let mut moved = recon.clone();
    for p in moved.poses.iter_mut().flatten() {
        *p = sim.apply_pose(p);
    }
    for p in moved.points.values_mut() {
        p.position = sim.apply(&p.position);
    }
    assert!((robust_cost(&recon, 2.0) - robust_cost(&moved, 2.0)).abs() < 1e-9);
    let tight = BundleOptions {
        function_tolerance: 1e-15,
        gradient_tolerance: 1e-12,
        ..BundleOptions::default()
    };
    let a = bundle_adjust(&mut recon, &tight).unwrap();
    let b = bundle_adjust(&mut moved, &tight).unwrap();
    assert!((a.final_cost - b.final_cost).abs() < 1e-9, "{} vs {}", a.final_cost, b.final_cost);
}

#[test]
fn local_adjustment_keeps_other_cameras() {
    let scene = SyntheticScene::ring(6, 120, 60.0, 9);
    let mut recon = scene.ground_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    perturb(&mut recon, &mut rng, 0.005);
    let fixed = *recon.pose(5).unwrap();
    let opts = BundleOptions {
        variable_images: Some(vec![2, 3]),
        ..BundleOptions::default()
    };
    let report = bundle_adjust(&mut recon, &opts).unwrap();
    assert_eq!(*recon.pose(5).unwrap(), fixed);
    assert!(report.final_cost < report.initial_cost);
}
