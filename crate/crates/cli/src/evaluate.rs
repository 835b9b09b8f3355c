//! Pose accuracy against ground truth after similarity alignment.

use evrecon_core::Pose;
use evrecon_sfm::geometry::alignment::{align_cameras, Similarity};

#[derive(Clone, Debug)]
pub struct PoseEvaluation {
    pub registered: Vec<usize>,
    pub alignment: Similarity,
    /// Per registered image, in degrees.
    pub rotation_errors_deg: Vec<f64>,
    /// Per registered image, in ground-truth units.
    pub center_errors: Vec<f64>,
}

impl PoseEvaluation {
    pub fn max_rotation_error_deg(&self) -> f64 {
        self.rotation_errors_deg.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_center_error(&self) -> f64 {
        self.center_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Aligns the registered cameras to `truth` and measures each one. `None`
/// when fewer than two images are registered.
pub fn evaluate_poses(estimated: &[Option<Pose>], truth: &[Pose]) -> Option<PoseEvaluation> {
    let registered: Vec<usize> = (0..estimated.len().min(truth.len())).filter(|&i| estimated[i].is_some()).collect();
    let est: Vec<Pose> = registered.iter().map(|&i| estimated[i].expect("registered")).collect();
    let reference: Vec<Pose> = registered.iter().map(|&i| truth[i]).collect();
    let alignment = align_cameras(&est, &reference)?;
    let mut rotation_errors_deg = Vec::with_capacity(est.len());
    let mut center_errors = Vec::with_capacity(est.len());
    for (e, t) in est.iter().zip(&reference) {
        let aligned = alignment.apply_pose(e);
        rotation_errors_deg.push(aligned.rotation.angle_to(&t.rotation).to_degrees());
        center_errors.push((aligned.center() - t.center()).norm());
    }
    Some(PoseEvaluation {
        registered,
        alignment,
        rotation_errors_deg,
        center_errors,
    })
}
