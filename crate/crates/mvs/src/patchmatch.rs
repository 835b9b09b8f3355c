//! PatchMatch stereo over slanted support windows with a multi-view
//! photometric cost (mean of `1 − NCC` over the source views).

use evrecon_core::{CameraIntrinsics, Grid, Pose};
use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::plane::{apply_homography, pixel_ray, plane_homography, relative_pose, Hypothesis};

/// A calibrated grayscale image taking part in dense matching. The pinhole
/// model is used as is; distortion must be removed beforehand.
#[derive(Clone, Debug)]
pub struct StereoView {
    pub id: usize,
    pub image: Grid<f32>,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoParams {
    pub window_radius: usize,
    /// Sampling stride inside the window; 1 uses every pixel.
    pub window_step: usize,
    pub iterations: usize,
    /// Random refinement trials per pixel and sweep, each with half the
    /// search radius of the previous one.
    pub refinement_steps: usize,
    pub depth_range: (f64, f64),
    pub cost_threshold: f64,
    pub seed: u64,
}

impl Default for StereoParams {
    fn default() -> Self {
        Self {
            window_radius: 5,
            window_step: 1,
            iterations: 3,
            refinement_steps: 5,
            depth_range: (0.5, 50.0),
            cost_threshold: 0.6,
            seed: 0,
        }
    }
}

/// Per-pixel depth (0 marks invalid), unit normal and matching cost.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub reference: usize,
    pub depth: Grid<f64>,
    pub normals: Grid<Vector3<f64>>,
    pub cost: Grid<f64>,
}

impl DepthMap {
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.depth.at(x, y) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.depth.data().iter().filter(|&&d| d > 0.0).count()
    }
}

/// `[0.25 × nearest, 4 × farthest]` depth of the given points in front of
/// the camera.
pub fn depth_range_from_points<'a>(pose: &Pose, points: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for p in points {
        let z = pose.transform(p).z;
        if z > 0.0 {
            lo = lo.min(z);
            hi = hi.max(z);
        }
    }
    (hi > 0.0).then_some((0.25 * lo, 4.0 * hi))
}

#[inline]
fn bilinear(img: &Grid<f32>, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let d = img.data();
    let v = |xx: usize, yy: usize| f64::from(d[yy * w + xx]);
    let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
    let bottom = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

struct Source<'a> {
    image: &'a Grid<f32>,
    intrinsics: CameraIntrinsics,
    relative: Pose,
}

/// Photometric cost of plane hypotheses at reference pixels.
pub struct PlaneCost<'a> {
    reference: &'a StereoView,
    sources: Vec<Source<'a>>,
    radius: isize,
    step: usize,
    min_samples: usize,
}

impl<'a> PlaneCost<'a> {
    pub fn new(reference: &'a StereoView, sources: &[&'a StereoView], radius: usize, step: usize) -> Self {
        let step = step.max(1);
        let per_axis = (2 * radius) / step + 1;
        Self {
            reference,
            sources: sources
                .iter()
                .map(|s| Source {
                    image: &s.image,
                    intrinsics: s.intrinsics,
                    relative: relative_pose(&reference.pose, &s.pose),
                })
                .collect(),
            radius: radius as isize,
            step,
            min_samples: (per_axis * per_axis).div_ceil(4).max(3),
        }
    }

    pub fn homography(&self, source: usize, x: usize, y: usize, hyp: &Hypothesis) -> Matrix3<f64> {
        let k = &self.reference.intrinsics;
        let c = hyp.offset(&pixel_ray(k, x as f64, y as f64));
        let s = &self.sources[source];
        plane_homography(k, &s.intrinsics, &s.relative, &hyp.normal, c)
    }

    /// `1 − NCC` against one source; `None` when too little of the warped
    /// window lands inside both images. Flat windows score 1.
    pub fn source_cost(&self, source: usize, x: usize, y: usize, hyp: &Hypothesis) -> Option<f64> {
        let h = self.homography(source, x, y, hyp);
        let img = &self.reference.image;
        let src = self.sources[source].image;
        let (w, ht) = (img.width() as isize, img.height() as isize);
        let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
        let r = self.radius;
        for dy in (-r..=r).step_by(self.step) {
            let ry = y as isize + dy;
            if ry < 0 || ry >= ht {
                continue;
            }
            for dx in (-r..=r).step_by(self.step) {
                let rx = x as isize + dx;
                if rx < 0 || rx >= w {
                    continue;
                }
                let Some(q) = apply_homography(&h, rx as f64, ry as f64) else { continue };
                let Some(b) = bilinear(src, q.x, q.y) else { continue };
                let a = f64::from(img.at(rx as usize, ry as usize));
                n += 1;
                sa += a;
                sb += b;
                saa += a * a;
                sbb += b * b;
                sab += a * b;
            }
        }
        if n < self.min_samples {
            return None;
        }
        let nf = n as f64;
        let var_a = saa / nf - (sa / nf).powi(2);
        let var_b = sbb / nf - (sb / nf).powi(2);
        if var_a < 1e-10 || var_b < 1e-10 {
            return Some(1.0);
        }
        let ncc = (sab / nf - sa * sb / (nf * nf)) / (var_a * var_b).sqrt();
        Some(1.0 - ncc.clamp(-1.0, 1.0))
    }

    /// Mean single-source cost over the sources that see the window; 2 when
    /// none does.
    pub fn cost(&self, x: usize, y: usize, hyp: &Hypothesis) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for s in 0..self.sources.len() {
            if let Some(c) = self.source_cost(s, x, y, hyp) {
                sum += c;
                n += 1;
            }
        }
        if n == 0 {
            2.0
        } else {
            sum / n as f64
        }
    }
}

/// Mutable PatchMatch state for one reference view.
pub struct PatchMatch<'a> {
    cost: PlaneCost<'a>,
    params: StereoParams,
    width: usize,
    height: usize,
    rays: Vec<Vector3<f64>>,
    hyps: Vec<Hypothesis>,
    costs: Vec<f64>,
    rng: ChaCha8Rng,
}

impl<'a> PatchMatch<'a> {
    /// Random initialisation: inverse depth uniform over the range and
    /// normals within 45° of each axis around the viewing direction.
    pub fn new(reference: &'a StereoView, sources: &[&'a StereoView], params: &StereoParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (reference.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (w, h) = (reference.image.width(), reference.image.height());
        let (lo, hi) = params.depth_range;
        let hyps = (0..w * h)
            .map(|i| {
                let ray = pixel_ray(&reference.intrinsics, (i % w) as f64, (i / w) as f64);
                let inv = rng.random_range(1.0 / hi..=1.0 / lo);
                let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -1.0).normalize();
                let normal = if n.dot(&ray) < 0.0 { n } else { -Vector3::z() };
                Hypothesis { depth: 1.0 / inv, normal }
            })
            .collect();
        Self::with_hypotheses(reference, sources, params, hyps, rng)
    }

    /// Starts from given per-pixel hypotheses (row-major).
    pub fn from_hypotheses(reference: &'a StereoView, sources: &[&'a StereoView], params: &StereoParams, hyps: Vec<Hypothesis>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(params.seed ^ (reference.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self::with_hypotheses(reference, sources, params, hyps, rng)
    }

    fn with_hypotheses(
        reference: &'a StereoView,
        sources: &[&'a StereoView],
        params: &StereoParams,
        hyps: Vec<Hypothesis>,
        rng: ChaCha8Rng,
    ) -> Self {
        let (w, h) = (reference.image.width(), reference.image.height());
        assert_eq!(hyps.len(), w * h, "one hypothesis per pixel");
        let cost = PlaneCost::new(reference, sources, params.window_radius, params.window_step);
        let rays: Vec<Vector3<f64>> = (0..w * h)
            .map(|i| pixel_ray(&reference.intrinsics, (i % w) as f64, (i / w) as f64))
            .collect();
        let costs = hyps.iter().enumerate().map(|(i, hp)| cost.cost(i % w, i / w, hp)).collect();
        Self {
            cost,
            params: params.clone(),
            width: w,
            height: h,
            rays,
            hyps,
            costs,
            rng,
        }
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hyps
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn admissible(&self, i: usize, hyp: &Hypothesis) -> bool {
        let (lo, hi) = self.params.depth_range;
        hyp.depth >= lo && hyp.depth <= hi && hyp.normal.z < 0.0 && hyp.normal.dot(&self.rays[i]) < 0.0
    }

    /// Replaces the pixel's hypothesis only on a strict cost improvement.
    fn try_hypothesis(&mut self, i: usize, hyp: Hypothesis) -> bool {
        if !self.admissible(i, &hyp) {
            return false;
        }
        let c = self.cost.cost(i % self.width, i / self.width, &hyp);
        if c < self.costs[i] {
            self.hyps[i] = hyp;
            self.costs[i] = c;
            true
        } else {
            false
        }
    }

    fn propagate(&mut self, i: usize, from: usize) {
        if let Some(h) = self.hyps[from].transfer(&self.rays[from], &self.rays[i]) {
            self.try_hypothesis(i, h);
        }
    }

    fn refine(&mut self, i: usize) {
        let (lo, hi) = self.params.depth_range;
        let inv_span = 1.0 / lo - 1.0 / hi;
        let mut scale = 0.5;
        for _ in 0..self.params.refinement_steps {
            let cur = self.hyps[i];
            let inv = (1.0 / cur.depth + self.rng.random_range(-1.0..1.0) * inv_span * scale * 0.5).clamp(1.0 / hi, 1.0 / lo);
            let jitter = Vector3::new(
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(-1.0..1.0),
            ) * scale;
            let n = cur.normal + jitter;
            if n.norm() > 1e-9 {
                self.try_hypothesis(
                    i,
                    Hypothesis {
                        depth: 1.0 / inv,
                        normal: n.normalize(),
                    },
                );
            }
            scale *= 0.5;
        }
    }

    /// One raster sweep. Forward visits row-major and pulls from the left
    /// and upper neighbours; backward runs in reverse and pulls from the
    /// right and lower ones.
    pub fn sweep(&mut self, forward: bool, refine: bool) {
        let (w, h) = (self.width, self.height);
        for k in 0..w * h {
            let i = if forward { k } else { w * h - 1 - k };
            let (x, y) = (i % w, i / w);
            if forward {
                if x > 0 {
                    self.propagate(i, i - 1);
                }
                if y > 0 {
                    self.propagate(i, i - w);
                }
            } else {
                if x + 1 < w {
                    self.propagate(i, i + 1);
                }
                if y + 1 < h {
                    self.propagate(i, i + w);
                }
            }
            if refine {
                self.refine(i);
            }
        }
    }

    pub fn run(&mut self) {
        for _ in 0..self.params.iterations {
            self.sweep(true, true);
            self.sweep(false, true);
        }
    }

    /// Current state with pixels above the cost gate invalidated.
    pub fn depth_map(&self) -> DepthMap {
        let (w, h) = (self.width, self.height);
        let gate = self.params.cost_threshold;
        DepthMap {
            reference: self.cost.reference.id,
            depth: Grid::from_fn(w, h, |x, y| {
                let i = y * w + x;
                if self.costs[i] <= gate {
                    self.hyps[i].depth
                } else {
                    0.0
                }
            }),
            normals: Grid::from_fn(w, h, |x, y| self.hyps[y * w + x].normal),
            cost: Grid::from_fn(w, h, |x, y| self.costs[y * w + x]),
        }
    }
}

/// Full PatchMatch run for one reference view.
pub fn patchmatch_depth(reference: &StereoView, sources: &[&StereoView], params: &StereoParams) -> DepthMap {
    let mut pm = PatchMatch::new(reference, sources, params);
    pm.run();
    pm.depth_map()
}
