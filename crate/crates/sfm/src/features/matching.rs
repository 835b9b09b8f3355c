use rayon::prelude::*;

use super::sift::{Feature, FeatureSet};

pub const DEFAULT_RATIO: f64 = 0.8;

/// One-to-one correspondences `(index in a, index in b)` between two images.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MatchSet {
    pub image_a: usize,
    pub image_b: usize,
    pub matches: Vec<(usize, usize)>,
}

#[inline]
fn squared_distance(a: &Feature, b: &Feature) -> f32 {
    a.descriptor.iter().zip(&b.descriptor).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy)]
struct Best {
    index: usize,
    first: f32,
    second: f32,
}

impl Best {
    fn new() -> Self {
        Self {
            index: usize::MAX,
            first: f32::INFINITY,
            second: f32::INFINITY,
        }
    }

    fn push(&mut self, index: usize, d: f32) {
        if d < self.first {
            self.second = self.first;
            self.first = d;
            self.index = index;
        } else if d < self.second {
            self.second = d;
        }
    }

    /// Ratio test on distances; waived when there is no second candidate.
    fn passes(&self, ratio: f64) -> bool {
        if !self.second.is_finite() {
            return true;
        }
        f64::from(self.first) < ratio * ratio * f64::from(self.second)
    }
}

/// Mutual nearest neighbours passing the ratio test in both directions.
/// Returns the matches and the number of descriptor distances evaluated.
pub fn match_descriptors(a: &[Feature], b: &[Feature], ratio: f64) -> (Vec<(usize, usize)>, u64) {
    assert!(ratio > 0.0 && ratio <= 1.0, "ratio must lie in (0, 1]");
    if a.is_empty() || b.is_empty() {
        return (Vec::new(), 0);
    }
    let rows: Vec<Vec<f32>> = a
        .par_iter()
        .map(|fa| b.iter().map(|fb| squared_distance(fa, fb)).collect())
        .collect();
    let evaluations = (a.len() * b.len()) as u64;
    let mut forward = vec![Best::new(); a.len()];
    let mut backward = vec![Best::new(); b.len()];
    for (i, row) in rows.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            forward[i].push(j, d);
            backward[j].push(i, d);
        }
    }
    let matches = forward
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let j = f.index;
            (j != usize::MAX && backward[j].index == i && f.passes(ratio) && backward[j].passes(ratio)).then_some((i, j))
        })
        .collect();
    (matches, evaluations)
}

pub fn match_exhaustive(fa: &FeatureSet, fb: &FeatureSet, ratio: f64) -> MatchSet {
    MatchSet {
        image_a: fa.image_id,
        image_b: fb.image_id,
        matches: match_descriptors(&fa.features, &fb.features, ratio).0,
    }
}
