//! Incremental reconstruction: seed pair, image registration, track
//! triangulation, outlier filtering and bundle adjustment cadence.

use std::collections::HashSet;

use log::{debug, info};
use nalgebra::{Point2, Point3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use evrecon_core::{CameraIntrinsics, Pose};

use crate::bundle::{bundle_adjust, BundleOptions};
use crate::error::{Result, SfmError};
use crate::geometry::epipolar::{decompose_essential, project_to_essential};
use crate::geometry::pnp::estimate_pose_ransac;
use crate::geometry::ransac::RansacParams;
use crate::geometry::triangulation::{pairwise_angle_range, triangulate_dlt, triangulation_angle};
use crate::graph::SceneGraph;
use crate::reconstruction::Reconstruction;
use crate::verify::{ModelKind, TwoViewGeometry};

#[derive(Clone, Debug, PartialEq)]
pub struct IncrementalOptions {
    pub min_2d3d: usize,
    pub pnp_threshold: f64,
    pub max_reprojection_error: f64,
    pub min_triangulation_angle_deg: f64,
    pub init_min_median_angle_deg: f64,
    pub cheirality_margin: f64,
    pub local_ba_cameras: usize,
    /// Global refinement whenever the registered set grows by this fraction.
    pub global_ba_growth: f64,
    pub bundle: BundleOptions,
    /// Intrinsics refined during global adjustment (`fx, fy, cx, cy, k1`).
    pub refine_intrinsics: [bool; 5],
    pub seed: u64,
}

impl Default for IncrementalOptions {
    fn default() -> Self {
        Self {
            min_2d3d: 12,
            pnp_threshold: 4.0,
            max_reprojection_error: 4.0,
            min_triangulation_angle_deg: 1.5,
            init_min_median_angle_deg: 3.0,
            cheirality_margin: 1.2,
            local_ba_cameras: 5,
            global_ba_growth: 0.25,
            bundle: BundleOptions::default(),
            refine_intrinsics: [false; 5],
            seed: 0,
        }
    }
}

/// Relative pose of the second view and the points triangulated from the
/// correspondences (`None` where cheirality fails).
#[derive(Clone, Debug)]
pub struct TwoViewSolution {
    pub pose: Pose,
    pub points: Vec<Option<Point3<f64>>>,
}

fn triangulate_pair(pose: &Pose, na: &Point2<f64>, nb: &Point2<f64>) -> Option<Point3<f64>> {
    let x = triangulate_dlt(&[(Pose::identity(), *na), (*pose, *nb)])?;
    (x.z > 0.0 && pose.transform(&x).z > 0.0).then_some(x)
}

/// Picks the factorisation of `E` that puts the most points in front of
/// both cameras; it must beat the runner-up by `margin`.
pub fn relative_pose_from_essential(
    e: &nalgebra::Matrix3<f64>,
    na: &[Point2<f64>],
    nb: &[Point2<f64>],
    margin: f64,
) -> Result<TwoViewSolution> {
    let cands = decompose_essential(e).ok_or_else(|| SfmError::NumericalFailure("essential SVD failed".into()))?;
    let mut scored: Vec<(usize, TwoViewSolution)> = cands
        .iter()
        .map(|(r, t)| {
            let rot = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r));
            let pose = Pose::new(rot, *t);
            let points: Vec<Option<Point3<f64>>> = na.iter().zip(nb).map(|(a, b)| triangulate_pair(&pose, a, b)).collect();
            (points.iter().filter(|p| p.is_some()).count(), TwoViewSolution { pose, points })
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0));
    let (best, second) = (scored[0].0, scored[1].0);
    if best == 0 || (best as f64) < margin * second as f64 {
        return Err(SfmError::CheiralityAmbiguity { best, second });
    }
    Ok(scored.swap_remove(0).1)
}

/// Essential matrix of an edge, derived from `F` with the camera priors
/// when the pair was verified without calibration.
pub fn edge_essential(edge: &TwoViewGeometry, ka: &CameraIntrinsics, kb: &CameraIntrinsics) -> Option<nalgebra::Matrix3<f64>> {
    match edge.kind {
        ModelKind::Essential => Some(edge.matrix),
        ModelKind::Fundamental => project_to_essential(&(kb.matrix().transpose() * edge.matrix * ka.matrix())),
        ModelKind::Homography => None,
    }
}

fn edge_normalized(recon: &Reconstruction, edge: &TwoViewGeometry) -> (Vec<Point2<f64>>, Vec<Point2<f64>>) {
    let (a, b) = (edge.image_a, edge.image_b);
    let na = edge.inliers.iter().map(|&(i, _)| Point2::from(recon.intrinsics(a).unproject(&recon.pixel(a, i)))).collect();
    let nb = edge.inliers.iter().map(|&(_, j)| Point2::from(recon.intrinsics(b).unproject(&recon.pixel(b, j)))).collect();
    (na, nb)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialPairCandidate {
    pub pair: (usize, usize),
    pub inliers: usize,
    pub median_angle_deg: f64,
    pub usable: bool,
}

/// Most inliers among usable pairs clearing the median-angle gate; ties go
/// to the larger angle, then to the lower pair.
pub fn choose_initial_pair(cands: &[InitialPairCandidate], min_median_angle_deg: f64) -> Result<(usize, usize)> {
    cands
        .iter()
        .filter(|c| c.usable && c.median_angle_deg >= min_median_angle_deg)
        .min_by(|x, y| {
            y.inliers
                .cmp(&x.inliers)
                .then(y.median_angle_deg.total_cmp(&x.median_angle_deg))
                .then(x.pair.cmp(&y.pair))
        })
        .map(|c| c.pair)
        .ok_or(SfmError::NoValidInitialPair)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn initial_pair_candidates(recon: &Reconstruction, graph: &SceneGraph, margin: f64) -> Vec<InitialPairCandidate> {
    graph
        .edges
        .iter()
        .map(|edge| {
            let pair = (edge.image_a, edge.image_b);
            let unusable = InitialPairCandidate {
                pair,
                inliers: edge.inliers.len(),
                median_angle_deg: 0.0,
                usable: false,
            };
            if !edge.usable_for_initialization() {
                return unusable;
            }
            let Some(e) = edge_essential(edge, recon.intrinsics(pair.0), recon.intrinsics(pair.1)) else {
                return unusable;
            };
            let (na, nb) = edge_normalized(recon, edge);
            let Ok(sol) = relative_pose_from_essential(&e, &na, &nb, margin) else {
                return unusable;
            };
            let cb = sol.pose.center();
            let angles: Vec<f64> = sol
                .points
                .iter()
                .flatten()
                .map(|x| triangulation_angle(&Point3::origin(), &cb, x).to_degrees())
                .collect();
            InitialPairCandidate {
                pair,
                inliers: edge.inliers.len(),
                median_angle_deg: median(angles),
                usable: true,
            }
        })
        .collect()
}

pub fn select_initial_pair(recon: &Reconstruction, graph: &SceneGraph, options: &IncrementalOptions) -> Result<(usize, usize)> {
    choose_initial_pair(
        &initial_pair_candidates(recon, graph, options.cheirality_margin),
        options.init_min_median_angle_deg,
    )
}

/// Seeds the model from one verified pair: image `a` at the origin, unit
/// baseline to `b`, and the pair's tracks triangulated.
pub fn initialize_two_view(recon: &mut Reconstruction, graph: &SceneGraph, pair: (usize, usize), options: &IncrementalOptions) -> Result<usize> {
    let edge = graph.edge(pair.0, pair.1).ok_or(SfmError::NoValidInitialPair)?;
    let (a, b) = (edge.image_a, edge.image_b);
    let e = edge_essential(edge, recon.intrinsics(a), recon.intrinsics(b)).ok_or(SfmError::NoValidInitialPair)?;
    let (na, nb) = edge_normalized(recon, edge);
    let sol = relative_pose_from_essential(&e, &na, &nb, options.cheirality_margin)?;
    recon.poses[a] = Some(Pose::identity());
    recon.poses[b] = Some(sol.pose);
    recon.gauge = Some((a, b));
    Ok(triangulate_tracks(recon, graph, options))
}

/// 2D-3D correspondences of an unregistered image: `(point id, feature)`.
fn correspondences(recon: &Reconstruction, graph: &SceneGraph, image: usize) -> Vec<(usize, usize)> {
    graph
        .tracks_in_image(image)
        .iter()
        .filter_map(|&(t, f)| recon.point_of_track(t).map(|p| (p, f)))
        .collect()
}

fn grid_coverage(recon: &Reconstruction, image: usize, feats: impl Iterator<Item = usize>) -> usize {
    let cam = &recon.cameras[recon.image_camera[image]];
    let mut cells = HashSet::new();
    for f in feats {
        let p = recon.pixel(image, f);
        let cx = ((p.x / f64::from(cam.width)) * 4.0).clamp(0.0, 3.0) as usize;
        let cy = ((p.y / f64::from(cam.height)) * 4.0).clamp(0.0, 3.0) as usize;
        cells.insert((cx, cy));
    }
    cells.len()
}

/// Unregistered images with enough 2D-3D matches, best first: more
/// visible points, then wider 4×4 grid coverage, then lower id.
pub fn rank_next_images(recon: &Reconstruction, graph: &SceneGraph, min_2d3d: usize) -> Vec<usize> {
    let mut ranked: Vec<(usize, usize, usize)> = (0..recon.num_images())
        .filter(|&i| !recon.is_registered(i))
        .filter_map(|i| {
            let c = correspondences(recon, graph, i);
            (c.len() >= min_2d3d).then(|| (i, c.len(), grid_coverage(recon, i, c.iter().map(|x| x.1))))
        })
        .collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(y.2.cmp(&x.2)).then(x.0.cmp(&y.0)));
    ranked.into_iter().map(|r| r.0).collect()
}

/// Registers the best-ranked image that admits a pose and attaches its
/// inlier measurements to the existing points.
pub fn register_next_image(recon: &mut Reconstruction, graph: &SceneGraph, options: &IncrementalOptions) -> Result<(usize, Pose)> {
    for image in rank_next_images(recon, graph, options.min_2d3d) {
        let corr = correspondences(recon, graph, image);
        let world: Vec<Point3<f64>> = corr.iter().map(|&(p, _)| recon.points[&p].position).collect();
        let pixels: Vec<Point2<f64>> = corr.iter().map(|&(_, f)| recon.pixel(image, f)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (image as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let params = RansacParams {
            threshold: options.pnp_threshold,
            ..RansacParams::default()
        };
        let Some(res) = estimate_pose_ransac(&world, &pixels, recon.intrinsics(image), &params, &mut rng) else {
            continue;
        };
        if res.inliers.len() < options.min_2d3d {
            debug!("image {image}: only {} pose inliers", res.inliers.len());
            continue;
        }
        recon.poses[image] = Some(res.model);
        for &k in &res.inliers {
            let (pid, f) = corr[k];
            let p = recon.points.get_mut(&pid).unwrap();
            if !p.observations.iter().any(|o| o.0 == image) {
                p.observations.push((image, f));
                p.observations.sort_unstable();
            }
        }
        return Ok((image, res.model));
    }
    Err(SfmError::NoRegistrableImage)
}

/// Triangulates every track with at least two registered views and no point
/// yet, and extends existing points with newly registered views. Returns the
/// number of new points.
pub fn triangulate_tracks(recon: &mut Reconstruction, graph: &SceneGraph, options: &IncrementalOptions) -> usize {
    let min_angle = options.min_triangulation_angle_deg.to_radians();
    let mut created = 0;
    for (t, track) in graph.tracks.iter().enumerate() {
        let obs: Vec<(usize, usize)> = track.observations.iter().copied().filter(|o| recon.is_registered(o.0)).collect();
        if obs.len() < 2 {
            continue;
        }
        if let Some(pid) = recon.point_of_track(t) {
            let position = recon.points[&pid].position;
            let extra: Vec<(usize, usize)> = obs
                .iter()
                .copied()
                .filter(|o| !recon.points[&pid].observations.iter().any(|q| q.0 == o.0))
                .filter(|&(i, f)| recon.reprojection_error(&position, i, f).is_some_and(|e| e <= options.max_reprojection_error))
                .collect();
            if !extra.is_empty() {
                let p = recon.points.get_mut(&pid).unwrap();
                p.observations.extend(extra);
                p.observations.sort_unstable();
            }
            continue;
        }
        let views: Vec<(Pose, Point2<f64>)> = obs
            .iter()
            .map(|&(i, f)| (*recon.pose(i).unwrap(), Point2::from(recon.intrinsics(i).unproject(&recon.pixel(i, f)))))
            .collect();
        let Some(x) = triangulate_dlt(&views) else { continue };
        if !accept_point(recon, &x, &obs, options.max_reprojection_error, min_angle) {
            continue;
        }
        recon.add_point(x, obs, Some(t));
        created += 1;
    }
    created
}

fn accept_point(recon: &Reconstruction, x: &Point3<f64>, obs: &[(usize, usize)], max_err: f64, min_angle: f64) -> bool {
    for &(i, f) in obs {
        match recon.reprojection_error(x, i, f) {
            Some(e) if e <= max_err => {}
            _ => return false,
        }
    }
    let centers: Vec<Point3<f64>> = obs.iter().map(|&(i, _)| recon.pose(i).unwrap().center()).collect();
    pairwise_angle_range(&centers, x).0 >= min_angle
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FilterCounts {
    pub observations: usize,
    pub points: usize,
}

/// Drops measurements above `max_err` pixels (or behind the camera), then
/// points left with fewer than two views or whose widest triangulation
/// angle is below `min_angle_deg`.
pub fn filter_outliers(recon: &mut Reconstruction, max_err: f64, min_angle_deg: f64) -> FilterCounts {
    let mut counts = FilterCounts::default();
    let ids: Vec<usize> = recon.points.keys().copied().collect();
    for id in ids {
        let p = &recon.points[&id];
        let keep: Vec<(usize, usize)> = p
            .observations
            .iter()
            .copied()
            .filter(|&(i, f)| recon.reprojection_error(&p.position, i, f).is_some_and(|e| e <= max_err))
            .collect();
        counts.observations += p.observations.len() - keep.len();
        let p = recon.points.get_mut(&id).unwrap();
        p.observations = keep;
        let p = &recon.points[&id];
        let too_short = p.observations.len() < 2;
        if too_short || recon.angle_range(p).1 < min_angle_deg.to_radians() {
            // Measurements of a discarded point are not counted as removed observations.
            recon.remove_point(id);
            counts.points += 1;
        }
    }
    recon.refresh_errors();
    counts
}

fn most_connected(recon: &Reconstruction, image: usize, count: usize) -> Vec<usize> {
    let mut others: Vec<(usize, usize)> = recon
        .registered_images()
        .into_iter()
        .filter(|&i| i != image)
        .map(|i| (recon.covisibility(image, i), i))
        .collect();
    others.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out = vec![image];
    out.extend(others.into_iter().take(count.saturating_sub(1)).map(|x| x.1));
    out
}

fn global_adjust(recon: &mut Reconstruction, graph: &SceneGraph, options: &IncrementalOptions) -> Result<()> {
    let mut opts = options.bundle.clone();
    opts.variable_images = None;
    opts.refine_intrinsics = options.refine_intrinsics;
    bundle_adjust(recon, &opts)?;
    filter_outliers(recon, options.max_reprojection_error, options.min_triangulation_angle_deg);
    triangulate_tracks(recon, graph, options);
    Ok(())
}

/// Full incremental loop. Images that never connect to the seeded model are
/// left unregistered.
pub fn run_incremental(mut recon: Reconstruction, graph: &SceneGraph, options: &IncrementalOptions) -> Result<Reconstruction> {
    let pair = select_initial_pair(&recon, graph, options)?;
    let n0 = initialize_two_view(&mut recon, graph, pair, options)?;
    info!("initial pair {:?}: {n0} points", pair);
    global_adjust(&mut recon, graph, options)?;

    let mut registered_at_global = recon.registered_images().len();
    loop {
        let image = match register_next_image(&mut recon, graph, options) {
            Ok((image, _)) => image,
            Err(SfmError::NoRegistrableImage) => break,
            Err(e) => return Err(e),
        };
        let created = triangulate_tracks(&mut recon, graph, options);
        debug!("registered image {image}, {created} new points");
        let mut local = options.bundle.clone();
        local.variable_images = Some(most_connected(&recon, image, options.local_ba_cameras));
        bundle_adjust(&mut recon, &local)?;
        filter_outliers(&mut recon, options.max_reprojection_error, options.min_triangulation_angle_deg);

        let n = recon.registered_images().len();
        if n as f64 >= (1.0 + options.global_ba_growth) * registered_at_global as f64 {
            global_adjust(&mut recon, graph, options)?;
            registered_at_global = n;
        }
    }
    global_adjust(&mut recon, graph, options)?;
    let mut opts = options.bundle.clone();
    opts.variable_images = None;
    opts.refine_intrinsics = options.refine_intrinsics;
    bundle_adjust(&mut recon, &opts)?;
    filter_outliers(&mut recon, options.max_reprojection_error, options.min_triangulation_angle_deg);
    info!(
        "registered {}/{} images, {} points",
        recon.registered_images().len(),
        recon.num_images(),
        recon.points.len()
    );
    Ok(recon)
}
