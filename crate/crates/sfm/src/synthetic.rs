//! Noise-free multi-camera scenes with known structure, for tests and
//! benchmarks.

use evrecon_core::{CameraIntrinsics, Pose};
use nalgebra::{Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{build_scene_graph, SceneGraph};
use crate::projection::project;
use crate::reconstruction::{CameraModel, Reconstruction};
use crate::verify::{ModelKind, TwoViewGeometry};

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub camera: CameraModel,
    pub poses: Vec<Pose>,
    pub points: Vec<Point3<f64>>,
}

impl SyntheticScene {
    /// `n_cams` cameras on an arc of `arc_deg` around the origin at radius
    /// 6, looking at `n_points` points drawn uniformly in `[-1.5, 1.5]³`.
    pub fn ring(n_cams: usize, n_points: usize, arc_deg: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let camera = CameraModel {
            width: 320,
            height: 240,
            intrinsics: CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0),
        };
        let poses = (0..n_cams)
            .map(|i| {
                let s = if n_cams > 1 { i as f64 / (n_cams - 1) as f64 - 0.5 } else { 0.0 };
                let a = (s * arc_deg).to_radians();
                let c = Point3::new(6.0 * a.sin(), 0.8 * (i as f64 * 0.7).sin(), -6.0 * a.cos());
                Pose::look_at(&c, &Point3::origin(), &Vector3::new(0.0, -1.0, 0.0))
            })
            .collect();
        let points = (0..n_points)
            .map(|_| Point3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)))
            .collect();
        Self { camera, poses, points }
    }

    fn visible(&self, pose: &Pose, x: &Point3<f64>) -> Option<Point2<f64>> {
        let q = project(&self.camera.intrinsics, pose, x)?;
        let (w, h) = (f64::from(self.camera.width), f64::from(self.camera.height));
        (q.x >= 0.0 && q.y >= 0.0 && q.x < w && q.y < h).then_some(q)
    }

    /// Keypoints per image and, per point, its `(image, feature)` list.
    pub fn observations(&self) -> (Vec<Vec<Point2<f64>>>, Vec<Vec<(usize, usize)>>) {
        let mut keypoints = vec![Vec::new(); self.poses.len()];
        let mut tracks = vec![Vec::new(); self.points.len()];
        for (k, x) in self.points.iter().enumerate() {
            for (i, pose) in self.poses.iter().enumerate() {
                if let Some(q) = self.visible(pose, x) {
                    tracks[k].push((i, keypoints[i].len()));
                    keypoints[i].push(q);
                }
            }
        }
        (keypoints, tracks)
    }

    /// The exact model: all cameras registered, every visible point observed.
    pub fn ground_truth(&self) -> Reconstruction {
        let (keypoints, tracks) = self.observations();
        let mut recon = Reconstruction::new(self.camera, keypoints);
        for (i, p) in self.poses.iter().enumerate() {
            recon.poses[i] = Some(*p);
        }
        recon.gauge = (self.poses.len() >= 2).then_some((0, 1));
        for (k, obs) in tracks.into_iter().enumerate() {
            if obs.len() >= 2 {
                recon.add_point(self.points[k], obs, Some(k));
            }
        }
        recon
    }

    /// Scene graph whose edges carry every shared point as an inlier.
    pub fn scene_graph(&self) -> SceneGraph {
        let (_, tracks) = self.observations();
        let n = self.poses.len();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let inliers: Vec<(usize, usize)> = tracks
                    .iter()
                    .filter_map(|t| {
                        let fa = t.iter().find(|o| o.0 == a)?.1;
                        let fb = t.iter().find(|o| o.0 == b)?.1;
                        Some((fa, fb))
                    })
                    .collect();
                if inliers.len() >= 15 {
                    let rel = self.poses[b].compose(&self.poses[a].inverse());
                    let e = crate::geometry::epipolar::essential_from_pose(&rel.rotation_matrix(), &rel.translation);
                    edges.push(TwoViewGeometry {
                        image_a: a,
                        image_b: b,
                        kind: ModelKind::Essential,
                        matrix: e / e.norm(),
                        homography_inliers: 0,
                        epipolar_inliers: inliers.len(),
                        inliers,
                    });
                }
            }
        }
        build_scene_graph(n, edges)
    }
}
