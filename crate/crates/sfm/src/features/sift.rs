//! Difference-of-Gaussian keypoints with orientation histograms and a 4×4×8
//! gradient descriptor.

use std::f64::consts::PI;

use evrecon_core::Grid;
use nalgebra::{Matrix3, Vector3};

use crate::error::{Result, SfmError};

pub const DESCRIPTOR_LEN: usize = 128;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const ORI_BINS: usize = 36;
const BORDER: usize = 5;
const MIN_SIZE: usize = 32;
/// Blur assumed already present in the input.
const INPUT_SIGMA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub x: f64,
    pub y: f64,
    /// Blur scale in input pixels.
    pub scale: f64,
    /// Dominant gradient direction, radians in `[0, 2π)`.
    pub orientation: f64,
    pub response: f64,
    pub descriptor: [f32; DESCRIPTOR_LEN],
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureSet {
    pub image_id: usize,
    pub features: Vec<Feature>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiftParams {
    pub max_features: usize,
    /// DoG contrast threshold on `[0, 1]` intensities, spread over the
    /// scales of one octave.
    pub contrast_threshold: f64,
    /// Maximum principal-curvature ratio.
    pub edge_threshold: f64,
    pub scales_per_octave: usize,
    pub sigma: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            max_features: 4000,
            contrast_threshold: 0.02,
            edge_threshold: 10.0,
            scales_per_octave: 3,
            sigma: 1.6,
        }
    }
}

impl SiftParams {
    /// Threshold applied to interpolated DoG values.
    pub fn dog_threshold(&self) -> f64 {
        self.contrast_threshold / self.scales_per_octave as f64
    }
}

/// Gaussian and difference-of-Gaussian stacks, one entry per octave.
#[derive(Clone, Debug)]
pub struct ScaleSpace {
    pub gaussians: Vec<Vec<Grid<f32>>>,
    pub dogs: Vec<Vec<Grid<f32>>>,
    pub scales_per_octave: usize,
    pub sigma: f64,
}

pub fn octave_count(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    ((usize::BITS - 1 - m.leading_zeros()) as usize).saturating_sub(3).max(1)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Grid<f32>, sigma: f64) -> Grid<f32> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let src = img.data();
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0f32;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * row[clamp(x as isize + i as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let yy = clamp(y as isize + i as isize - r, h);
            let src_row = &tmp[yy * w..(yy + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst_row[x] += kv * src_row[x];
            }
        }
    }
    Grid::from_vec(w, h, out)
}

fn downsample(img: &Grid<f32>) -> Grid<f32> {
    let (w, h) = (img.width() / 2, img.height() / 2);
    Grid::from_fn(w, h, |x, y| img.at(2 * x, 2 * y))
}

pub fn build_scale_space(image: &Grid<f32>, params: &SiftParams) -> Result<ScaleSpace> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_SIZE || h < MIN_SIZE {
        return Err(SfmError::ImageTooSmall { width: w, height: h });
    }
    let s = params.scales_per_octave;
    let k = 2f64.powf(1.0 / s as f64);
    // Incremental blur between consecutive levels.
    let steps: Vec<f64> = (1..s + 3)
        .map(|i| {
            let prev = params.sigma * k.powi(i as i32 - 1);
            let next = prev * k;
            (next * next - prev * prev).sqrt()
        })
        .collect();
    let mut gaussians = Vec::new();
    let mut dogs = Vec::new();
    let mut base = gaussian_blur(image, (params.sigma.powi(2) - INPUT_SIGMA.powi(2)).max(0.01).sqrt());
    for o in 0..octave_count(w, h) {
        if o > 0 {
            let prev: &Vec<Grid<f32>> = &gaussians[o - 1];
            base = downsample(&prev[s]);
        }
        let mut levels = vec![base.clone()];
        for step in &steps {
            let next = gaussian_blur(levels.last().unwrap(), *step);
            levels.push(next);
        }
        let diffs: Vec<Grid<f32>> = levels
            .windows(2)
            .map(|p| {
                let data = p[1].data().iter().zip(p[0].data()).map(|(a, b)| a - b).collect();
                Grid::from_vec(p[0].width(), p[0].height(), data)
            })
            .collect();
        gaussians.push(levels);
        dogs.push(diffs);
    }
    Ok(ScaleSpace {
        gaussians,
        dogs,
        scales_per_octave: s,
        sigma: params.sigma,
    })
}

/// A DoG sample that is at least as extreme as its 26 neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Extremum {
    pub octave: usize,
    pub layer: usize,
    pub x: usize,
    pub y: usize,
}

fn is_extremum(dogs: &[Grid<f32>], layer: usize, x: usize, y: usize) -> bool {
    let v = dogs[layer].at(x, y);
    let maximum = v > 0.0;
    for l in layer - 1..=layer + 1 {
        let d = &dogs[l];
        for yy in y - 1..=y + 1 {
            let row = d.row(yy);
            for &n in &row[x - 1..=x + 1] {
                if (maximum && n > v) || (!maximum && n < v) {
                    return false;
                }
            }
        }
    }
    true
}

/// Extrema of the DoG stack whose magnitude exceeds half the interpolated
/// contrast threshold, away from the image border.
pub fn scan_extrema(space: &ScaleSpace, params: &SiftParams) -> Vec<Extremum> {
    let pre = (0.5 * params.dog_threshold()) as f32;
    let mut out = Vec::new();
    for (o, dogs) in space.dogs.iter().enumerate() {
        let (w, h) = (dogs[0].width(), dogs[0].height());
        if w <= 2 * BORDER || h <= 2 * BORDER {
            continue;
        }
        for layer in 1..=space.scales_per_octave {
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    if dogs[layer].at(x, y).abs() > pre && is_extremum(dogs, layer, x, y) {
                        out.push(Extremum { octave: o, layer, x, y });
                    }
                }
            }
        }
    }
    out
}

struct Refined {
    x: f64,
    y: f64,
    layer: usize,
    layer_frac: f64,
    response: f64,
}

fn refine(dogs: &[Grid<f32>], e: &Extremum, params: &SiftParams) -> Option<Refined> {
    let s = params.scales_per_octave;
    let (w, h) = (dogs[0].width(), dogs[0].height());
    let (mut x, mut y, mut l) = (e.x, e.y, e.layer);
    let d = |l: usize, x: usize, y: usize| f64::from(dogs[l].at(x, y));
    for _ in 0..5 {
        let g = Vector3::new(
            0.5 * (d(l, x + 1, y) - d(l, x - 1, y)),
            0.5 * (d(l, x, y + 1) - d(l, x, y - 1)),
            0.5 * (d(l + 1, x, y) - d(l - 1, x, y)),
        );
        let c = d(l, x, y);
        let dxx = d(l, x + 1, y) + d(l, x - 1, y) - 2.0 * c;
        let dyy = d(l, x, y + 1) + d(l, x, y - 1) - 2.0 * c;
        let dss = d(l + 1, x, y) + d(l - 1, x, y) - 2.0 * c;
        let dxy = 0.25 * (d(l, x + 1, y + 1) - d(l, x - 1, y + 1) - d(l, x + 1, y - 1) + d(l, x - 1, y - 1));
        let dxs = 0.25 * (d(l + 1, x + 1, y) - d(l + 1, x - 1, y) - d(l - 1, x + 1, y) + d(l - 1, x - 1, y));
        let dys = 0.25 * (d(l + 1, x, y + 1) - d(l + 1, x, y - 1) - d(l - 1, x, y + 1) + d(l - 1, x, y - 1));
        let hess = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let off = -(hess.try_inverse()? * g);
        if off.iter().all(|v| v.abs() < 0.5) {
            let response = c + 0.5 * g.dot(&off);
            if response.abs() < params.dog_threshold() {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = params.edge_threshold;
            if det <= 0.0 || tr * tr * r >= (r + 1.0).powi(2) * det {
                return None;
            }
            return Some(Refined {
                x: x as f64 + off.x,
                y: y as f64 + off.y,
                layer: l,
                layer_frac: l as f64 + off.z,
                response: response.abs(),
            });
        }
        if off.iter().any(|v| !v.is_finite() || v.abs() > 1e3) {
            return None;
        }
        let nx = x as isize + off.x.round() as isize;
        let ny = y as isize + off.y.round() as isize;
        let nl = l as isize + off.z.round() as isize;
        if nl < 1 || nl > s as isize || nx < BORDER as isize || ny < BORDER as isize {
            return None;
        }
        if nx >= (w - BORDER) as isize || ny >= (h - BORDER) as isize {
            return None;
        }
        (x, y, l) = (nx as usize, ny as usize, nl as usize);
    }
    None
}

#[inline]
fn gradient(img: &Grid<f32>, x: usize, y: usize) -> (f64, f64) {
    (
        f64::from(img.at(x + 1, y) - img.at(x - 1, y)),
        f64::from(img.at(x, y + 1) - img.at(x, y - 1)),
    )
}

fn orientations(img: &Grid<f32>, x: f64, y: f64, sigma: f64) -> Vec<f64> {
    let weight_sigma = 1.5 * sigma;
    let radius = (3.0 * weight_sigma).round() as isize;
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut hist = [0f64; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (cx + dx, cy + dy);
            if px < 1 || py < 1 || px >= w - 1 || py >= h - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, px as usize, py as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * weight_sigma * weight_sigma)).exp();
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((angle / (2.0 * PI) * ORI_BINS as f64).round() as usize) % ORI_BINS;
            hist[bin] += wgt * mag;
        }
    }
    let mut smooth = [0f64; ORI_BINS];
    for i in 0..ORI_BINS {
        let at = |o: isize| hist[(i as isize + o).rem_euclid(ORI_BINS as isize) as usize];
        smooth[i] = (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0;
    }
    let peak = smooth.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let l = smooth[(i + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(i + 1) % ORI_BINS];
        let c = smooth[i];
        if c > l && c > r && c >= 0.8 * peak {
            let denom = l - 2.0 * c + r;
            let shift = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
            let bin = (i as f64 + shift).rem_euclid(ORI_BINS as f64);
            out.push(bin / ORI_BINS as f64 * 2.0 * PI);
        }
    }
    out
}

fn describe(img: &Grid<f32>, x: f64, y: f64, sigma: f64, angle: f64) -> Option<[f32; DESCRIPTOR_LEN]> {
    let d = DESC_WIDTH as f64;
    let hist_width = 3.0 * sigma;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let diag = ((w * w + h * h) as f64).sqrt();
    let radius = (hist_width * std::f64::consts::SQRT_2 * (d + 1.0) * 0.5).round().min(diag) as isize;
    let (cos, sin) = (angle.cos(), angle.sin());
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let mut hist = [0f64; (DESC_WIDTH + 2) * (DESC_WIDTH + 2) * (DESC_BINS + 2)];
    let idx = |r: usize, c: usize, o: usize| (r * (DESC_WIDTH + 2) + c) * (DESC_BINS + 2) + o;
    let bins_per_rad = DESC_BINS as f64 / (2.0 * PI);
    let exp_scale = -1.0 / (d * d * 0.5);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let rx = (cos * dx as f64 + sin * dy as f64) / hist_width;
            let ry = (-sin * dx as f64 + cos * dy as f64) / hist_width;
            let rbin = ry + d / 2.0 - 0.5;
            let cbin = rx + d / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                continue;
            }
            let (px, py) = (cx + dx, cy + dy);
            if px < 1 || py < 1 || px >= w - 1 || py >= h - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, px as usize, py as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let ori = (gy.atan2(gx) - angle).rem_euclid(2.0 * PI);
            let obin = ori * bins_per_rad;
            let wgt = mag * ((rx * rx + ry * ry) * exp_scale).exp();
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 as isize + 1) as usize, (c0 as isize + 1) as usize);
            let o0 = (o0 as usize) % DESC_BINS;
            for (ri, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (ci, wc) in [(0, 1.0 - fc), (1, fc)] {
                    for (oi, wo) in [(0, 1.0 - fo), (1, fo)] {
                        hist[idx(r0 + ri, c0 + ci, o0 + oi)] += wgt * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut desc = [0f64; DESCRIPTOR_LEN];
    for r in 0..DESC_WIDTH {
        for c in 0..DESC_WIDTH {
            for o in 0..DESC_BINS {
                // Wrap the circular orientation overflow bin.
                let mut v = hist[idx(r + 1, c + 1, o)];
                if o == 0 {
                    v += hist[idx(r + 1, c + 1, DESC_BINS)];
                }
                desc[(r * DESC_WIDTH + c) * DESC_BINS + o] = v;
            }
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    let clip = 0.2 * norm;
    desc.iter_mut().for_each(|v| *v = v.min(clip));
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = [0f32; DESCRIPTOR_LEN];
    for (o, v) in out.iter_mut().zip(desc) {
        *o = (v / norm) as f32;
    }
    Some(out)
}

/// Keypoints sorted by decreasing response and truncated to `max_features`.
pub fn detect_features(image: &Grid<f32>, params: &SiftParams) -> Result<Vec<Feature>> {
    let space = build_scale_space(image, params)?;
    let s = params.scales_per_octave as f64;
    let mut features = Vec::new();
    for e in scan_extrema(&space, params) {
        let Some(r) = refine(&space.dogs[e.octave], &e, params) else {
            continue;
        };
        let octave_sigma = params.sigma * 2f64.powf(r.layer_frac / s);
        let img = &space.gaussians[e.octave][r.layer];
        let factor = f64::from(1u32 << e.octave);
        for angle in orientations(img, r.x, r.y, octave_sigma) {
            if let Some(descriptor) = describe(img, r.x, r.y, octave_sigma, angle) {
                features.push(Feature {
                    x: r.x * factor,
                    y: r.y * factor,
                    scale: octave_sigma * factor,
                    orientation: angle,
                    response: r.response,
                    descriptor,
                });
            }
        }
    }
    features.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.orientation.total_cmp(&b.orientation))
    });
    features.truncate(params.max_features);
    Ok(features)
}
