use evrecon_core::sim::OrbitScene;
use evrecon_core::{CameraIntrinsics, Pose};
use evrecon_sfm::geometry::epipolar::essential_from_pose;
use evrecon_sfm::incremental::{
    choose_initial_pair, filter_outliers, initialize_two_view, rank_next_images, register_next_image, relative_pose_from_essential,
    run_incremental, select_initial_pair, triangulate_tracks, InitialPairCandidate, IncrementalOptions,
};
use evrecon_sfm::reconstruction::{read_text, write_text};
use evrecon_sfm::synthetic::SyntheticScene;
use evrecon_sfm::verify::{verify_points, Verification, VerifyParams};
use evrecon_sfm::{build_scene_graph, CameraModel, MatchSet, ModelKind, Reconstruction, SceneGraph, SfmError, TwoViewGeometry};
use nalgebra::{Matrix3, Point2, Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera() -> CameraModel {
    CameraModel {
        width: 320,
        height: 240,
        intrinsics: CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0),
    }
}

/// Graph whose edges link every pair of images sharing a track.
fn graph_of(num_images: usize, tracks: &[Vec<(usize, usize)>]) -> SceneGraph {
    let mut edges: Vec<TwoViewGeometry> = Vec::new();
    for a in 0..num_images {
        for b in a + 1..num_images {
            let inliers: Vec<(usize, usize)> = tracks
                .iter()
                .filter_map(|t| Some((t.iter().find(|o| o.0 == a)?.1, t.iter().find(|o| o.0 == b)?.1)))
                .collect();
            if !inliers.is_empty() {
                edges.push(TwoViewGeometry {
                    image_a: a,
                    image_b: b,
                    kind: ModelKind::Essential,
                    matrix: Matrix3::identity(),
                    homography_inliers: 0,
                    epipolar_inliers: inliers.len(),
                    inliers,
                });
            }
        }
    }
    build_scene_graph(num_images, edges)
}

fn candidate(pair: (usize, usize), inliers: usize, angle: f64, usable: bool) -> InitialPairCandidate {
    InitialPairCandidate {
        pair,
        inliers,
        median_angle_deg: angle,
        usable,
    }
}

#[test]
fn initial_pair_prefers_inliers_above_angle_gate() {
    let cands = [candidate((0, 1), 100, 5.0, true), candidate((1, 2), 200, 1.0, true)];
    assert_eq!(choose_initial_pair(&cands, 3.0).unwrap(), (0, 1));
    assert_eq!(choose_initial_pair(&cands[..1], 3.0).unwrap(), (0, 1));
    let flagged = [candidate((0, 1), 500, 10.0, false), candidate((1, 2), 300, 20.0, false)];
    assert!(matches!(choose_initial_pair(&flagged, 3.0), Err(SfmError::NoValidInitialPair)));
}

#[test]
fn essential_factorisation_triangulates_point() {
    let r = Matrix3::identity();
    let t = Vector3::new(1.0, 0.0, 0.0);
    let e = essential_from_pose(&r, &t);
    let x = Point3::new(0.0, 0.0, 5.0);
    let na = vec![Point2::new(x.x / x.z, x.y / x.z)];
    let xb = x.coords + t;
    let nb = vec![Point2::new(xb.x / xb.z, xb.y / xb.z)];
    let sol = relative_pose_from_essential(&e, &na, &nb, 1.2).unwrap();
    assert!(sol.pose.rotation.angle() < 1e-9);
    assert!((sol.pose.translation.normalize() - t).norm() < 1e-9);
    assert!((sol.points[0].unwrap() - x).norm() < 1e-9);
}

fn direction_error_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Box-surface points seen by views `a` and `b` of the orbit simulator, in
/// pixels quantised to 0.01.
fn orbit_pair(a: usize, b: usize, n: usize) -> (CameraIntrinsics, Pose, Pose, Vec<Point2<f64>>, Vec<Point2<f64>>) {
    let scene = OrbitScene::default();
    let sim = scene.build();
    let k = sim.intrinsics;
    let (pa, pb) = (scene.view_pose(a), scene.view_pose(b));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = |p: Point2<f64>| Point2::new((p.x * 100.0).round() / 100.0, (p.y * 100.0).round() / 100.0);
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    while xa.len() < n {
        let (u, v) = (rng.random_range(0.0..240.0), rng.random_range(0.0..180.0));
        let (_, depth) = sim.shade(&pa, u, v, 1.0);
        if depth <= 0.0 {
            continue;
        }
        let pc = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0) * depth;
        let x = Point3::from(pa.rotation.inverse() * (pc - pa.translation));
        if let Some(pbx) = k.project(&pb.transform(&x)) {
            xa.push(q(Point2::new(u, v)));
            xb.push(q(pbx));
        }
    }
    (k, pa, pb, xa, xb)
}

#[test]
fn simulator_pair_recovers_relative_pose() {
    let (k, pa, pb, a, b) = orbit_pair(0, 1, 150);
    let matches = MatchSet {
        image_a: 0,
        image_b: 1,
        matches: (0..a.len()).map(|i| (i, i)).collect(),
    };
    let Verification::Verified(g) = verify_points(&matches, &a, &b, Some((&k, &k)), &VerifyParams::default()).unwrap() else {
        panic!("pair rejected");
    };
    let na: Vec<Point2<f64>> = g.inliers.iter().map(|&(i, _)| Point2::from(k.unproject(&a[i]))).collect();
    let nb: Vec<Point2<f64>> = g.inliers.iter().map(|&(_, j)| Point2::from(k.unproject(&b[j]))).collect();
    let sol = relative_pose_from_essential(&g.matrix, &na, &nb, 1.2).unwrap();
    let truth = pb.compose(&pa.inverse());
    let rot_err = sol.pose.rotation.angle_to(&truth.rotation).to_degrees();
    let dir_err = direction_error_deg(&sol.pose.translation, &truth.translation);
    assert!(rot_err < 0.5, "rotation error {rot_err}");
    assert!(dir_err < 1.0, "direction error {dir_err}");
}

#[test]
fn fronto_parallel_plane_with_lateral_motion() {
    let t = Vector3::new(-0.5, 0.0, 0.0);
    let mut na = Vec::new();
    let mut nb = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            let x = Vector3::new(-2.0 + 0.4 * i as f64, -2.0 + 0.4 * j as f64, 5.0);
            na.push(Point2::new(x.x / x.z, x.y / x.z));
            let xb = x + t;
            nb.push(Point2::new(xb.x / xb.z, xb.y / xb.z));
        }
    }
    let e = essential_from_pose(&Matrix3::identity(), &t);
    let sol = relative_pose_from_essential(&e, &na, &nb, 1.2).unwrap();
    assert!(sol.pose.rotation.angle() < 1e-9);
    assert!(direction_error_deg(&sol.pose.translation, &t) < 1e-6);
    assert!(sol.points.iter().all(|p| p.is_some_and(|p| (p.z - 10.0).abs() < 1e-6)));
}

/// Ring scene where image 2 sees only the first `n2` points and image 3 the
/// first `n3`; images 0 and 1 are registered at ground truth.
fn partial_visibility(n2: usize, n3: usize) -> (SyntheticScene, Reconstruction, SceneGraph) {
    let scene = SyntheticScene::ring(4, 60, 30.0, 8);
    let (kp, tracks) = scene.observations();
    let trimmed: Vec<Vec<(usize, usize)>> = tracks
        .iter()
        .enumerate()
        .map(|(k, t)| t.iter().copied().filter(|&(i, _)| (i != 2 || k < n2) && (i != 3 || k < n3)).collect())
        .collect();
    let graph = graph_of(4, &trimmed);
    let mut recon = Reconstruction::new(scene.camera, kp);
    recon.poses[0] = Some(scene.poses[0]);
    recon.poses[1] = Some(scene.poses[1]);
    recon.gauge = Some((0, 1));
    triangulate_tracks(&mut recon, &graph, &IncrementalOptions::default());
    (scene, recon, graph)
}

#[test]
fn registration_prefers_more_visible_points() {
    let (scene, mut recon, graph) = partial_visibility(30, 40);
    assert_eq!(rank_next_images(&recon, &graph, 12), vec![3, 2]);
    let (image, pose) = register_next_image(&mut recon, &graph, &IncrementalOptions::default()).unwrap();
    assert_eq!(image, 3);
    assert!(pose.rotation.angle_to(&scene.poses[3].rotation) < 1e-4);
    assert!((pose.translation - scene.poses[3].translation).norm() < 1e-4);
}

#[test]
fn noiseless_registration_is_exact() {
    let (scene, mut recon, graph) = partial_visibility(0, 50);
    let (image, pose) = register_next_image(&mut recon, &graph, &IncrementalOptions::default()).unwrap();
    assert_eq!(image, 3);
    assert!(pose.rotation.angle_to(&scene.poses[3].rotation) < 1e-4);
    assert!((pose.center() - scene.poses[3].center()).norm() < 1e-4);
}

#[test]
fn too_few_correspondences_cannot_register() {
    let (_, mut recon, graph) = partial_visibility(8, 8);
    assert!(rank_next_images(&recon, &graph, 12).is_empty());
    assert!(matches!(
        register_next_image(&mut recon, &graph, &IncrementalOptions::default()),
        Err(SfmError::NoRegistrableImage)
    ));
}

/// Pinhole pixel without the cheirality check.
fn raw_pixel(k: &CameraIntrinsics, pose: &Pose, x: &Point3<f64>) -> Point2<f64> {
    let c = pose.transform(x);
    Point2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy)
}

fn two_camera_track(second: Pose, x: Point3<f64>) -> (Reconstruction, SceneGraph) {
    let k = camera().intrinsics;
    let first = Pose::identity();
    let kp = vec![vec![raw_pixel(&k, &first, &x)], vec![raw_pixel(&k, &second, &x)]];
    let graph = graph_of(2, &[vec![(0, 0), (1, 0)]]);
    let mut recon = Reconstruction::new(camera(), kp);
    recon.poses[0] = Some(first);
    recon.poses[1] = Some(second);
    (recon, graph)
}

fn centred_at(c: Point3<f64>) -> Pose {
    Pose::new(UnitQuaternion::identity(), -c.coords)
}

#[test]
fn triangulation_of_single_track() {
    let x = Point3::new(0.0, 0.0, 5.0);
    let (mut recon, graph) = two_camera_track(centred_at(Point3::new(1.0, 0.0, 0.0)), x);
    assert_eq!(triangulate_tracks(&mut recon, &graph, &IncrementalOptions::default()), 1);
    let p = recon.points.values().next().unwrap();
    assert!((p.position - x).norm() < 1e-9);
    assert_eq!(p.observations, vec![(0, 0), (1, 0)]);
}

#[test]
fn narrow_triangulation_angle_is_rejected() {
    let x = Point3::new(0.0, 0.0, 5.0);
    let baseline = 5.0 * 0.5f64.to_radians().tan();
    let (mut recon, graph) = two_camera_track(centred_at(Point3::new(baseline, 0.0, 0.0)), x);
    assert_eq!(triangulate_tracks(&mut recon, &graph, &IncrementalOptions::default()), 0);
    assert!(recon.points.is_empty());
}

#[test]
fn point_behind_a_camera_is_rejected() {
    let x = Point3::new(0.0, 0.0, 5.0);
    let c = Point3::new(1.0, 0.0, 0.0);
    let turned = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI);
    let second = Pose::new(turned, -(turned * c.coords));
    assert!(second.transform(&x).z < 0.0);
    let (mut recon, graph) = two_camera_track(second, x);
    assert_eq!(triangulate_tracks(&mut recon, &graph, &IncrementalOptions::default()), 0);
}

#[test]
fn outlier_filter_cases() {
    let scene = SyntheticScene::ring(4, 80, 30.0, 9);
    let mut recon = scene.ground_truth();
    let before = recon.points.len();
    let counts = filter_outliers(&mut recon, 4.0, 1.5);
    assert_eq!((counts.observations, counts.points), (0, 0));
    assert_eq!(recon.points.len(), before);

    let (&id, p) = recon.points.iter().find(|(_, p)| p.observations.len() >= 3).unwrap();
    let (img, feat) = p.observations[0];
    recon.keypoints[img][feat].x += 50.0;
    let counts = filter_outliers(&mut recon, 4.0, 1.5);
    assert_eq!((counts.observations, counts.points), (1, 0));
    assert!(!recon.points[&id].observations.contains(&(img, feat)));

    let (img, feat) = recon.points[&id].observations[0];
    recon.add_point(recon.points[&id].position, vec![(img, feat)], None);
    let counts = filter_outliers(&mut recon, 4.0, 1.5);
    assert_eq!(counts.points, 1);
}

fn aligned_center_error(recon: &Reconstruction, scene: &SyntheticScene) -> f64 {
    let images = recon.registered_images();
    let est: Vec<Point3<f64>> = images.iter().map(|&i| recon.pose(i).unwrap().center()).collect();
    let truth: Vec<Point3<f64>> = images.iter().map(|&i| scene.poses[i].center()).collect();
    let sim = evrecon_sfm::geometry::alignment::similarity_transform(&est, &truth).unwrap();
    est.iter().zip(&truth).map(|(e, t)| (sim.apply(e) - t).norm()).fold(0.0, f64::max)
}

#[test]
fn full_ring_registers_every_image() {
    let scene = SyntheticScene::ring(8, 300, 60.0, 21);
    let graph = scene.scene_graph();
    let recon = Reconstruction::new(scene.camera, scene.observations().0);
    let out = run_incremental(recon, &graph, &IncrementalOptions::default()).unwrap();
    assert_eq!(out.registered_images().len(), 8);
    assert!(out.mean_reprojection_error() < 1e-3);
    assert!(out.points.len() >= 250);
    assert!(aligned_center_error(&out, &scene) < 1e-4);
}

#[test]
fn two_image_scene() {
    let scene = SyntheticScene::ring(2, 100, 20.0, 22);
    let graph = scene.scene_graph();
    let recon = Reconstruction::new(scene.camera, scene.observations().0);
    assert_eq!(select_initial_pair(&recon, &graph, &IncrementalOptions::default()).unwrap(), (0, 1));
    let out = run_incremental(recon, &graph, &IncrementalOptions::default()).unwrap();
    assert_eq!(out.registered_images(), vec![0, 1]);
    assert_eq!(out.gauge, Some((0, 1)));
    assert!(out.points.len() >= 90);
}

#[test]
fn disconnected_component_stays_unregistered() {
    let scene = SyntheticScene::ring(6, 200, 50.0, 23);
    let full = scene.scene_graph();
    let edges: Vec<TwoViewGeometry> = full.edges.into_iter().filter(|e| (e.image_a < 3) == (e.image_b < 3)).collect();
    let graph = build_scene_graph(6, edges);
    let recon = Reconstruction::new(scene.camera, scene.observations().0);
    let out = run_incremental(recon, &graph, &IncrementalOptions::default()).unwrap();
    assert_eq!(out.registered_images().len(), 3);
    let reg = out.registered_images();
    assert!(reg.iter().all(|&i| i < 3) || reg.iter().all(|&i| i >= 3));
}

#[test]
fn seeded_model_has_points_and_gauge() {
    let scene = SyntheticScene::ring(3, 100, 30.0, 24);
    let graph = scene.scene_graph();
    let mut recon = Reconstruction::new(scene.camera, scene.observations().0);
    let n = initialize_two_view(&mut recon, &graph, (0, 2), &IncrementalOptions::default()).unwrap();
    assert!(n > 50);
    assert_eq!(recon.gauge, Some((0, 2)));
    assert!((recon.pose(2).unwrap().translation.norm() - 1.0).abs() < 1e-9);
    assert!(recon.cheirality_holds());
}

#[test]
fn text_export_round_trip() {
    let scene = SyntheticScene::ring(3, 40, 30.0, 25);
    let mut recon = scene.ground_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in recon.points.values_mut() {
        p.position.x += rng.random_range(-1e-3..1e-3);
    }
    recon.refresh_errors();
    let dir = tempfile::tempdir().unwrap();
    write_text(&recon, dir.path()).unwrap();
    let back = read_text(dir.path()).unwrap();
    assert_eq!(back.registered_images(), recon.registered_images());
    assert_eq!(back.points.len(), recon.points.len());
    for (a, b) in recon.points.values().zip(back.points.values()) {
        assert!((a.position - b.position).norm() < 1e-9);
        assert_eq!(a.observations, b.observations);
        assert!((a.error - b.error).abs() < 1e-9);
    }
    for i in 0..3 {
        let (pa, pb) = (recon.pose(i).unwrap(), back.pose(i).unwrap());
        assert!(pa.rotation.angle_to(&pb.rotation) < 1e-12);
        assert!((pa.translation - pb.translation).norm() < 1e-12);
        for (ka, kb) in recon.keypoints[i].iter().zip(&back.keypoints[i]) {
            assert!((ka - kb).norm() < 1e-9);
        }
    }
    assert_eq!(back.cameras[0].intrinsics, recon.cameras[0].intrinsics);
}
