//! Multi-view consistency fusion of depth maps into one point cloud.

use std::collections::HashMap;

use evrecon_core::ply::PointCloud;
use nalgebra::{Point2, Point3, Vector3};

use crate::patchmatch::{DepthMap, StereoView};
use crate::plane::pixel_ray;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub max_reprojection_px: f64,
    pub max_relative_depth: f64,
    /// Consistent views required, the reference view included.
    pub min_support: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            max_reprojection_px: 1.0,
            max_relative_depth: 0.01,
            min_support: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensePoint {
    pub position: Point3<f64>,
    pub normal: Vector3<f64>,
    pub color: [u8; 3],
    /// `(view id, x, y)` of every depth-map pixel that supports the point.
    pub support: Vec<(usize, usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensePointCloud {
    pub points: Vec<DensePoint>,
}

impl DensePointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_point_cloud(&self) -> PointCloud {
        let f = |v: f64| v as f32;
        PointCloud {
            positions: self.points.iter().map(|p| [f(p.position.x), f(p.position.y), f(p.position.z)]).collect(),
            colors: Some(self.points.iter().map(|p| p.color).collect()),
            normals: Some(self.points.iter().map(|p| [f(p.normal.x), f(p.normal.y), f(p.normal.z)]).collect()),
        }
    }
}

fn back_project(view: &StereoView, depth: f64, x: usize, y: usize) -> Point3<f64> {
    let pc = pixel_ray(&view.intrinsics, x as f64, y as f64) * depth;
    view.pose.inverse().transform(&Point3::from(pc)).into()
}

fn project(view: &StereoView, p: &Point3<f64>) -> Option<(Point2<f64>, f64)> {
    let pc = view.pose.transform(p);
    if pc.z <= 0.0 {
        return None;
    }
    let k = &view.intrinsics;
    Some((Point2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy), pc.z))
}

/// Whether `p` projects within `max_reprojection_px` of pixel `(x, y)` of
/// `view` with a depth matching the stored one to `max_relative_depth`.
pub fn consistent_with(view: &StereoView, map: &DepthMap, p: &Point3<f64>, x: usize, y: usize, params: &FusionParams) -> bool {
    let Some((q, z)) = project(view, p) else { return false };
    let d = map.depth.at(x, y);
    if d <= 0.0 {
        return false;
    }
    let reproj = (q - Point2::new(x as f64, y as f64)).norm();
    reproj <= params.max_reprojection_px && (d - z).abs() <= params.max_relative_depth * z
}

/// Fuses per-view depth maps. Reference views are visited in the given
/// order; pixels that already contributed to a point are not reused.
/// Points are averaged over their supporting views, then re-checked
/// against every supporter.
pub fn fuse_depth_maps(maps: &[DepthMap], views: &[StereoView], params: &FusionParams) -> DensePointCloud {
    let by_id: HashMap<usize, &StereoView> = views.iter().map(|v| (v.id, v)).collect();
    let mut consumed: Vec<Vec<bool>> = maps.iter().map(|m| vec![false; m.width() * m.height()]).collect();
    let mut out = DensePointCloud::default();
    if maps.len() < 2 || params.min_support > maps.len() {
        return out;
    }
    for (ri, rmap) in maps.iter().enumerate() {
        let Some(rview) = by_id.get(&rmap.reference) else { continue };
        let w = rmap.width();
        for y in 0..rmap.height() {
            for x in 0..w {
                if consumed[ri][y * w + x] || !rmap.is_valid(x, y) {
                    continue;
                }
                let p = back_project(rview, rmap.depth.at(x, y), x, y);
                // (map index, pixel) of each consistent view, reference first.
                let mut support = vec![(ri, x, y)];
                for (si, smap) in maps.iter().enumerate() {
                    if si == ri {
                        continue;
                    }
                    let Some(sview) = by_id.get(&smap.reference) else { continue };
                    let Some((q, _)) = project(sview, &p) else { continue };
                    let (sx, sy) = (q.x.round(), q.y.round());
                    if sx < 0.0 || sy < 0.0 || sx >= smap.width() as f64 || sy >= smap.height() as f64 {
                        continue;
                    }
                    let (sx, sy) = (sx as usize, sy as usize);
                    if consumed[si][sy * smap.width() + sx] || !smap.is_valid(sx, sy) {
                        continue;
                    }
                    let sp = back_project(sview, smap.depth.at(sx, sy), sx, sy);
                    if consistent_with(sview, smap, &p, sx, sy, params) && consistent_with(rview, rmap, &sp, x, y, params) {
                        support.push((si, sx, sy));
                    }
                }
                if support.len() < params.min_support {
                    continue;
                }
                let mean = |s: &[(usize, usize, usize)]| {
                    let sum: Vector3<f64> = s
                        .iter()
                        .map(|&(m, sx, sy)| back_project(by_id[&maps[m].reference], maps[m].depth.at(sx, sy), sx, sy).coords)
                        .sum();
                    Point3::from(sum / s.len() as f64)
                };
                let mut position = mean(&support);
                let before = support.len();
                support.retain(|&(m, sx, sy)| consistent_with(by_id[&maps[m].reference], &maps[m], &position, sx, sy, params));
                if support.len() != before {
                    if support.len() < params.min_support {
                        continue;
                    }
                    position = mean(&support);
                    if !support
                        .iter()
                        .all(|&(m, sx, sy)| consistent_with(by_id[&maps[m].reference], &maps[m], &position, sx, sy, params))
                    {
                        continue;
                    }
                }
                let mut normal = Vector3::zeros();
                let mut gray = 0.0;
                for &(m, sx, sy) in &support {
                    consumed[m][sy * maps[m].width() + sx] = true;
                    let v = by_id[&maps[m].reference];
                    normal += v.pose.rotation.inverse() * maps[m].normals.at(sx, sy);
                    gray += f64::from(v.image.at(sx, sy));
                }
                let g = (gray / support.len() as f64 * 255.0).round().clamp(0.0, 255.0) as u8;
                out.points.push(DensePoint {
                    position,
                    normal: normal.try_normalize(1e-12).unwrap_or_else(Vector3::zeros),
                    color: [g, g, g],
                    support: support.iter().map(|&(m, sx, sy)| (maps[m].reference, sx, sy)).collect(),
                });
            }
        }
    }
    out
}
