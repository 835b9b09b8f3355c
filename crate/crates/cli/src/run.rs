//! Stage computations on in-memory data. File handling lives in
//! [`crate::pipeline`].

use evrecon_core::events::{window_by_count, window_by_duration, EventStream, EventWindow, SensorGeometry};
use evrecon_core::recon::reconstruct_all;
use evrecon_core::{CameraIntrinsics, Grid, IntegratorConfig, IntensityImage};
use evrecon_sfm::incremental::IncrementalOptions;
use evrecon_sfm::verify::Verification;
use evrecon_sfm::{
    build_scene_graph, detect_features, match_exhaustive, run_incremental, verify_pair, CameraModel, FeatureSet, MatchSet, Reconstruction,
    SceneGraph, SiftParams, TwoViewGeometry, VerifyParams,
};
use log::{debug, info};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowPolicy {
    Count(usize),
    DurationUs(u64),
}

pub fn split_windows(stream: &EventStream, policy: WindowPolicy) -> evrecon_core::Result<Vec<EventWindow>> {
    match policy {
        WindowPolicy::Count(n) => window_by_count(stream, n),
        WindowPolicy::DurationUs(dt) => window_by_duration(stream, dt),
    }
}

/// Events to normalised intensity images through the integrator.
pub fn integrate_events(
    stream: &EventStream,
    geometry: &SensorGeometry,
    policy: WindowPolicy,
    config: &IntegratorConfig<f32>,
) -> evrecon_core::Result<Vec<IntensityImage<f32>>> {
    let windows = split_windows(stream, policy)?;
    reconstruct_all(&windows, geometry, config)
}

pub fn detect_all(images: &[Grid<f32>], params: &SiftParams) -> evrecon_sfm::Result<Vec<FeatureSet>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let features = detect_features(img, params)?;
            debug!("image {i}: {} features", features.len());
            Ok(FeatureSet { image_id: i, features })
        })
        .collect()
}

/// Mutual ratio-test matches for every image pair `a < b`.
pub fn match_all(sets: &[FeatureSet], ratio: f64) -> Vec<MatchSet> {
    let pairs: Vec<(usize, usize)> = (0..sets.len()).flat_map(|a| (a + 1..sets.len()).map(move |b| (a, b))).collect();
    pairs.par_iter().map(|&(a, b)| match_exhaustive(&sets[a], &sets[b], ratio)).collect()
}

/// Geometric verification of every match set; rejected or too-small pairs
/// are dropped.
pub fn verify_all(
    sets: &[FeatureSet],
    matches: &[MatchSet],
    intrinsics: Option<&CameraIntrinsics>,
    params: &VerifyParams,
) -> evrecon_sfm::Result<Vec<TwoViewGeometry>> {
    let results: Vec<evrecon_sfm::Result<Option<TwoViewGeometry>>> = matches
        .par_iter()
        .map(|m| {
            let k = intrinsics.map(|k| (k, k));
            match verify_pair(m, &sets[m.image_a].features, &sets[m.image_b].features, k, params) {
                Ok(Verification::Verified(g)) => Ok(Some(g)),
                Ok(Verification::Rejected { .. }) => Ok(None),
                Err(evrecon_sfm::SfmError::TooFewCorrespondences { .. } | evrecon_sfm::SfmError::DegenerateConfiguration(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        if let Some(g) = r? {
            debug!("pair ({}, {}): {:?} with {} inliers", g.image_a, g.image_b, g.kind, g.inliers.len());
            out.push(g);
        }
    }
    info!("{} of {} pairs verified", out.len(), matches.len());
    Ok(out)
}

/// Incremental reconstruction from detected features and verified pairs.
pub fn reconstruct_sparse(
    camera: CameraModel,
    sets: &[FeatureSet],
    verified: Vec<TwoViewGeometry>,
    options: &IncrementalOptions,
) -> evrecon_sfm::Result<(Reconstruction, SceneGraph)> {
    let keypoints = sets
        .iter()
        .map(|s| s.features.iter().map(|f| nalgebra::Point2::new(f.x, f.y)).collect())
        .collect();
    let graph = build_scene_graph(sets.len(), verified);
    info!("scene graph: {} edges, {} tracks", graph.edges.len(), graph.tracks.len());
    let recon = run_incremental(Reconstruction::new(camera, keypoints), &graph, options)?;
    Ok((recon, graph))
}

/// Settings for the whole image-to-sparse chain.
#[derive(Clone, Debug)]
pub struct SparseSettings {
    pub sift: SiftParams,
    pub ratio: f64,
    pub verify: VerifyParams,
    pub incremental: IncrementalOptions,
    /// Known calibration; when absent a prior is used and refined.
    pub intrinsics: Option<CameraIntrinsics>,
}

impl Default for SparseSettings {
    fn default() -> Self {
        Self {
            sift: SiftParams::default(),
            ratio: evrecon_sfm::features::DEFAULT_RATIO,
            verify: VerifyParams::default(),
            incremental: IncrementalOptions::default(),
            intrinsics: None,
        }
    }
}

pub fn sparse_from_images(images: &[Grid<f32>], settings: &SparseSettings) -> evrecon_sfm::Result<(Reconstruction, SceneGraph)> {
    let first = images.first().ok_or_else(|| evrecon_sfm::SfmError::InvalidInput("no images".into()))?;
    let sets = detect_all(images, &settings.sift)?;
    let matches = match_all(&sets, settings.ratio);
    let verified = verify_all(&sets, &matches, settings.intrinsics.as_ref(), &settings.verify)?;
    let (camera, options) = camera_setup(first.width() as u32, first.height() as u32, settings);
    reconstruct_sparse(camera, &sets, verified, &options)
}

/// Camera model and incremental options: known intrinsics stay fixed,
/// otherwise a prior is refined.
pub fn camera_setup(width: u32, height: u32, settings: &SparseSettings) -> (CameraModel, IncrementalOptions) {
    let mut options = settings.incremental.clone();
    let intrinsics = match settings.intrinsics {
        Some(k) => k,
        None => {
            options.refine_intrinsics = SELF_CALIBRATION_MASK;
            CameraIntrinsics::prior_for(width, height)
        }
    };
    (CameraModel { width, height, intrinsics }, options)
}

/// Refined intrinsics when none are given: focal lengths and `k1`.
pub const SELF_CALIBRATION_MASK: [bool; 5] = [true, true, false, false, true];
