//! Robust two-view model estimation over tentative matches.

use evrecon_core::CameraIntrinsics;
use nalgebra::{Matrix3, Point2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SfmError};
use crate::features::{Feature, MatchSet};
use crate::geometry::epipolar::{estimate_essential, estimate_fundamental, fundamental_from_essential, sampson_distance};
use crate::geometry::homography::{estimate_homography, transfer_error};
use crate::geometry::ransac::{ransac, RansacParams};
use crate::geometry::all_collinear;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Homography,
    Essential,
    Fundamental,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoViewGeometry {
    pub image_a: usize,
    pub image_b: usize,
    pub kind: ModelKind,
    /// `H` maps pixels of `a` to `b`; `E` acts on normalised coordinates and
    /// `F` on pixels, both with `x_bᵀ M x_a = 0`.
    pub matrix: Matrix3<f64>,
    /// Inlier correspondences, a subset of the tentative matches.
    pub inliers: Vec<(usize, usize)>,
    /// Inlier counts of the competing models.
    pub homography_inliers: usize,
    pub epipolar_inliers: usize,
}

impl TwoViewGeometry {
    /// Near-planar or rotation-only pairs lack the parallax needed to seed a
    /// reconstruction.
    pub fn usable_for_initialization(&self) -> bool {
        self.kind != ModelKind::Homography
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verification {
    Verified(TwoViewGeometry),
    Rejected { best_inliers: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyParams {
    pub homography_threshold: f64,
    pub epipolar_threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    /// `H` wins when its inlier count reaches this fraction of the
    /// epipolar model's.
    pub homography_ratio: f64,
    pub seed: u64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            homography_threshold: 2.0,
            epipolar_threshold: 1.5,
            confidence: 0.999,
            max_iterations: 10_000,
            min_inliers: 15,
            homography_ratio: 0.9,
            seed: 0,
        }
    }
}

/// Per-pair RNG stream derived from the global seed.
fn pair_rng(seed: u64, a: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((a as u64) << 32) ^ b as u64);
    rng
}

/// Fits `H` and `F` (or `E` when intrinsics are known) to the tentative
/// matches and keeps the preferred model if it has enough inliers.
pub fn verify_pair(
    matches: &MatchSet,
    fa: &[Feature],
    fb: &[Feature],
    intrinsics: Option<(&CameraIntrinsics, &CameraIntrinsics)>,
    params: &VerifyParams,
) -> Result<Verification> {
    let pa: Vec<Point2<f64>> = matches.matches.iter().map(|&(i, _)| Point2::new(fa[i].x, fa[i].y)).collect();
    let pb: Vec<Point2<f64>> = matches.matches.iter().map(|&(_, j)| Point2::new(fb[j].x, fb[j].y)).collect();
    verify_points(matches, &pa, &pb, intrinsics, params)
}

/// As [`verify_pair`] on explicit pixel coordinates, parallel to `matches`.
pub fn verify_points(
    matches: &MatchSet,
    pa: &[Point2<f64>],
    pb: &[Point2<f64>],
    intrinsics: Option<(&CameraIntrinsics, &CameraIntrinsics)>,
    params: &VerifyParams,
) -> Result<Verification> {
    let n = pa.len();
    let needed = if intrinsics.is_some() { 5 } else { 8 };
    if n < needed {
        return Err(SfmError::TooFewCorrespondences { found: n, needed });
    }
    if all_collinear(pa, 1e-6) || all_collinear(pb, 1e-6) {
        return Err(SfmError::DegenerateConfiguration("correspondences are collinear or coincident".into()));
    }
    let mut rng = pair_rng(params.seed, matches.image_a, matches.image_b);

    let h_params = RansacParams {
        threshold: params.homography_threshold,
        confidence: params.confidence,
        max_iterations: params.max_iterations,
    };
    let h_residual = |h: &Matrix3<f64>, i: usize| transfer_error(h, &pa[i], &pb[i]);
    let h_fit = |idx: &[usize]| -> Option<Matrix3<f64>> {
        let s: Vec<_> = idx.iter().map(|&i| pa[i]).collect();
        let d: Vec<_> = idx.iter().map(|&i| pb[i]).collect();
        if all_collinear(&s, 1e-9) || all_collinear(&d, 1e-9) {
            return None;
        }
        estimate_homography(&s, &d)
    };
    let h_result = ransac(n, 4, &h_params, &mut rng, |idx| h_fit(idx).into_iter().collect(), h_residual)
        .map(|r| polish(r.model, r.inliers, n, &h_fit, &h_residual, params.homography_threshold));

    // Epipolar model, evaluated in (undistorted) pixels either way.
    let e_params = RansacParams {
        threshold: params.epipolar_threshold,
        ..h_params
    };
    let (kind, epi) = match intrinsics {
        Some((ka, kb)) => {
            let na: Vec<Point2<f64>> = pa.iter().map(|p| Point2::from(ka.unproject(p))).collect();
            let nb: Vec<Point2<f64>> = pb.iter().map(|p| Point2::from(kb.unproject(p))).collect();
            let (ka_inv, kb_inv) = (ka.inverse_matrix(), kb.inverse_matrix());
            // Undistorted pixel positions for the Sampson residual.
            let ua: Vec<Point2<f64>> = na.iter().map(|p| pixel(ka, p)).collect();
            let ub: Vec<Point2<f64>> = nb.iter().map(|p| pixel(kb, p)).collect();
            let residual = |e: &Matrix3<f64>, i: usize| {
                sampson_distance(&fundamental_from_essential(e, &ka_inv, &kb_inv), &ua[i], &ub[i])
            };
            let fit = |idx: &[usize]| -> Option<Matrix3<f64>> {
                let s: Vec<_> = idx.iter().map(|&i| na[i]).collect();
                let d: Vec<_> = idx.iter().map(|&i| nb[i]).collect();
                estimate_essential(&s, &d)
            };
            let r = ransac(n, 8, &e_params, &mut rng, |idx| fit(idx).into_iter().collect(), residual)
                .map(|r| polish(r.model, r.inliers, n, &fit, &residual, params.epipolar_threshold));
            (ModelKind::Essential, r)
        }
        None => {
            let residual = |f: &Matrix3<f64>, i: usize| sampson_distance(f, &pa[i], &pb[i]);
            let fit = |idx: &[usize]| -> Option<Matrix3<f64>> {
                let s: Vec<_> = idx.iter().map(|&i| pa[i]).collect();
                let d: Vec<_> = idx.iter().map(|&i| pb[i]).collect();
                estimate_fundamental(&s, &d)
            };
            let r = ransac(n, 8, &e_params, &mut rng, |idx| fit(idx).into_iter().collect(), residual)
                .map(|r| polish(r.model, r.inliers, n, &fit, &residual, params.epipolar_threshold));
            (ModelKind::Fundamental, r)
        }
    };

    let h_count = h_result.as_ref().map_or(0, |r| r.1.len());
    let e_count = epi.as_ref().map_or(0, |r| r.1.len());
    let prefer_h = h_count > 0 && (h_count as f64) >= params.homography_ratio * e_count as f64;
    let chosen = if prefer_h {
        h_result.map(|(m, i)| (ModelKind::Homography, m, i))
    } else {
        epi.map(|(m, i)| (kind, m, i))
    };
    match chosen {
        Some((kind, matrix, inl)) if inl.len() >= params.min_inliers => Ok(Verification::Verified(TwoViewGeometry {
            image_a: matches.image_a,
            image_b: matches.image_b,
            kind,
            matrix,
            inliers: inl.iter().map(|&i| matches.matches[i]).collect(),
            homography_inliers: h_count,
            epipolar_inliers: e_count,
        })),
        _ => Ok(Verification::Rejected {
            best_inliers: h_count.max(e_count),
        }),
    }
}

fn pixel(k: &CameraIntrinsics, n: &Point2<f64>) -> Point2<f64> {
    Point2::new(k.fx * n.x + k.cx, k.fy * n.y + k.cy)
}

/// Re-fits on all inliers while that gains support, or keeps it with a
/// smaller summed inlier residual (the order RANSAC ranks hypotheses by).
fn polish<F, E>(
    model: Matrix3<f64>,
    inliers: Vec<usize>,
    n: usize,
    fit: &F,
    residual: &E,
    threshold: f64,
) -> (Matrix3<f64>, Vec<usize>)
where
    F: Fn(&[usize]) -> Option<Matrix3<f64>>,
    E: Fn(&Matrix3<f64>, usize) -> f64,
{
    let score = |m: &Matrix3<f64>| {
        let mut inl = Vec::new();
        let mut sum = 0.0;
        for i in 0..n {
            let r = residual(m, i);
            if r <= threshold {
                inl.push(i);
                sum += r;
            }
        }
        (inl, sum)
    };
    let (mut model, mut inliers) = (model, inliers);
    let mut sum = inliers.iter().map(|&i| residual(&model, i)).sum::<f64>();
    for _ in 0..3 {
        let Some(refit) = fit(&inliers) else { break };
        let (next, next_sum) = score(&refit);
        if next.len() < inliers.len() || (next.len() == inliers.len() && next_sum >= sum) {
            break;
        }
        model = refit;
        inliers = next;
        sum = next_sum;
    }
    (model, inliers)
}
