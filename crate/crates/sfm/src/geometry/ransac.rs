use rand::seq::index::sample;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    /// Inlier residual threshold (same units as the residual function).
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 2.0,
            confidence: 0.999,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult<M> {
    pub model: M,
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

/// Iterations needed to draw one all-inlier sample with the given confidence.
pub fn adaptive_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64, cap: usize) -> usize {
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let all_good = inlier_ratio.powi(sample_size as i32);
    if all_good <= f64::EPSILON {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - all_good).ln();
    if !n.is_finite() {
        return cap;
    }
    (n.ceil() as usize).clamp(1, cap)
}

/// Hypothesise-and-verify over `n` data items. `fit` may return several
/// candidate models per minimal sample. Ties in inlier count go to the
/// smaller summed inlier residual.
pub fn ransac<M, R, F, E>(
    n: usize,
    sample_size: usize,
    params: &RansacParams,
    rng: &mut R,
    mut fit: F,
    residual: E,
) -> Option<RansacResult<M>>
where
    R: Rng + ?Sized,
    F: FnMut(&[usize]) -> Vec<M>,
    E: Fn(&M, usize) -> f64,
{
    if n < sample_size || sample_size == 0 {
        return None;
    }
    let mut best: Option<(M, Vec<usize>, f64)> = None;
    let mut needed = params.max_iterations.max(1);
    let mut iterations = 0;
    let mut idx = vec![0usize; sample_size];
    while iterations < needed {
        iterations += 1;
        for (slot, i) in idx.iter_mut().zip(sample(rng, n, sample_size).iter()) {
            *slot = i;
        }
        for model in fit(&idx) {
            let mut inliers = Vec::new();
            let mut score = 0.0;
            for i in 0..n {
                let r = residual(&model, i);
                if r <= params.threshold {
                    inliers.push(i);
                    score += r;
                }
            }
            let better = match &best {
                None => !inliers.is_empty(),
                Some((_, b, s)) => inliers.len() > b.len() || (inliers.len() == b.len() && score < *s),
            };
            if better {
                let ratio = inliers.len() as f64 / n as f64;
                needed = adaptive_iterations(ratio, sample_size, params.confidence, params.max_iterations).max(1);
                best = Some((model, inliers, score));
            }
        }
    }
    best.map(|(model, inliers, _)| RansacResult {
        model,
        inliers,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iteration_formula() {
        // 50% inliers, 4-point samples, 99.9%: ln(0.001)/ln(1 - 1/16) = 107.03.
        assert_eq!(adaptive_iterations(0.5, 4, 0.999, 10_000), 108);
        assert_eq!(adaptive_iterations(1.0, 8, 0.999, 10_000), 1);
        assert_eq!(adaptive_iterations(0.01, 8, 0.999, 10_000), 10_000);
    }

    #[test]
    fn fits_a_line_through_outliers() {
        // y = 2x + 1 with every fourth sample corrupted.
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let x = i as f64;
                if i % 4 == 0 { (x, 100.0 - x) } else { (x, 2.0 * x + 1.0) }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let res = ransac(
            pts.len(),
            2,
            &RansacParams { threshold: 1e-6, ..Default::default() },
            &mut rng,
            |s| {
                let (a, b) = (pts[s[0]], pts[s[1]]);
                if a.0 == b.0 {
                    return vec![];
                }
                let m = (b.1 - a.1) / (b.0 - a.0);
                vec![(m, a.1 - m * a.0)]
            },
            |&(m, c), i| (pts[i].1 - (m * pts[i].0 + c)).abs(),
        )
        .unwrap();
        assert_eq!(res.inliers.len(), 30);
        assert!((res.model.0 - 2.0).abs() < 1e-12);
    }
}
