use evrecon_sfm::geometry::triangulation::triangulation_angle;
use evrecon_sfm::Reconstruction;

use crate::error::{MvsError, Result};

/// Angle band (degrees) a source view's median triangulation angle with the
/// reference must fall in.
pub const ANGLE_BAND_DEG: (f64, f64) = (2.0, 45.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborScore {
    pub image: usize,
    pub shared_points: usize,
    pub median_angle_deg: f64,
}

/// Every other registered image sharing sparse points with `reference`.
pub fn neighbor_scores(recon: &Reconstruction, reference: usize) -> Vec<NeighborScore> {
    let Some(ref_pose) = recon.pose(reference) else { return Vec::new() };
    let c_ref = ref_pose.center();
    let mut out = Vec::new();
    for other in recon.registered_images() {
        if other == reference {
            continue;
        }
        let c_other = recon.pose(other).unwrap().center();
        let mut angles: Vec<f64> = recon
            .points
            .values()
            .filter(|p| p.observations.iter().any(|o| o.0 == reference) && p.observations.iter().any(|o| o.0 == other))
            .map(|p| triangulation_angle(&c_ref, &c_other, &p.position).to_degrees())
            .collect();
        if angles.is_empty() {
            continue;
        }
        angles.sort_by(f64::total_cmp);
        out.push(NeighborScore {
            image: other,
            shared_points: angles.len(),
            median_angle_deg: angles[angles.len() / 2],
        });
    }
    out
}

/// Up to `k` source images for dense matching: most shared sparse points
/// first (ties to the lower id), restricted to the angle band.
pub fn select_stereo_neighbors(recon: &Reconstruction, reference: usize, k: usize) -> Result<Vec<usize>> {
    if !recon.is_registered(reference) {
        return Err(MvsError::Unregistered(reference));
    }
    let mut scores: Vec<NeighborScore> = neighbor_scores(recon, reference)
        .into_iter()
        .filter(|s| s.median_angle_deg >= ANGLE_BAND_DEG.0 && s.median_angle_deg <= ANGLE_BAND_DEG.1)
        .collect();
    scores.sort_by(|a, b| b.shared_points.cmp(&a.shared_points).then(a.image.cmp(&b.image)));
    let chosen: Vec<usize> = scores.into_iter().take(k).map(|s| s.image).collect();
    if chosen.is_empty() {
        return Err(MvsError::NoUsableNeighbors { image: reference });
    }
    Ok(chosen)
}
