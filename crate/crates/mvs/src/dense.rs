//! Dense reconstruction over every registered view of a sparse model.

use evrecon_core::Grid;
use evrecon_sfm::Reconstruction;
use log::{info, warn};
use rayon::prelude::*;

use crate::error::{MvsError, Result};
use crate::fusion::{fuse_depth_maps, DensePointCloud, FusionParams};
use crate::neighbors::select_stereo_neighbors;
use crate::patchmatch::{depth_range_from_points, patchmatch_depth, DepthMap, StereoParams, StereoView};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseOptions {
    pub neighbors: usize,
    pub stereo: StereoParams,
    pub fusion: FusionParams,
}

impl Default for DenseOptions {
    fn default() -> Self {
        Self {
            neighbors: 4,
            stereo: StereoParams::default(),
            fusion: FusionParams::default(),
        }
    }
}

/// Registered views of the model paired with their images (indexed by
/// image id). Distortion is ignored.
pub fn stereo_views(recon: &Reconstruction, images: &[Grid<f32>]) -> Result<Vec<StereoView>> {
    if images.len() != recon.num_images() {
        return Err(MvsError::InvalidInput(format!("{} images for {} model images", images.len(), recon.num_images())));
    }
    Ok(recon
        .registered_images()
        .into_iter()
        .map(|i| StereoView {
            id: i,
            image: images[i].clone(),
            intrinsics: *recon.intrinsics(i),
            pose: *recon.pose(i).unwrap(),
        })
        .collect())
}

/// Depth maps for every registered view that has stereo neighbours (views
/// without are skipped), computed in parallel, then fused.
pub fn reconstruct_dense(recon: &Reconstruction, images: &[Grid<f32>], options: &DenseOptions) -> Result<(Vec<DepthMap>, DensePointCloud)> {
    let views = stereo_views(recon, images)?;
    let mut jobs = Vec::new();
    for (vi, v) in views.iter().enumerate() {
        let neighbors = match select_stereo_neighbors(recon, v.id, options.neighbors) {
            Ok(n) => n,
            Err(MvsError::NoUsableNeighbors { image }) => {
                warn!("image {image}: no stereo neighbours, skipped");
                continue;
            }
            Err(e) => return Err(e),
        };
        let visible = recon
            .points
            .values()
            .filter(|p| p.observations.iter().any(|o| o.0 == v.id))
            .map(|p| &p.position);
        let Some(range) = depth_range_from_points(&v.pose, visible) else {
            warn!("image {}: no sparse points in view, skipped", v.id);
            continue;
        };
        let src: Vec<usize> = neighbors.iter().map(|n| views.iter().position(|w| w.id == *n).unwrap()).collect();
        jobs.push((vi, src, range));
    }
    let maps: Vec<DepthMap> = jobs
        .par_iter()
        .map(|(vi, src, range)| {
            let params = StereoParams {
                depth_range: *range,
                ..options.stereo.clone()
            };
            let sources: Vec<&StereoView> = src.iter().map(|&s| &views[s]).collect();
            let map = patchmatch_depth(&views[*vi], &sources, &params);
            info!("depth map {}: {} valid pixels", map.reference, map.valid_count());
            map
        })
        .collect();
    let cloud = fuse_depth_maps(&maps, &views, &options.fusion);
    info!("fused {} dense points", cloud.len());
    Ok((maps, cloud))
}
