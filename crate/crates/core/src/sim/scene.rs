use nalgebra::{Point3, Unit, Vector3};

use super::trajectory::{TimedPose, Trajectory};
use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::events::SensorGeometry;

/// Multi-octave 3D value noise evaluated on surface points, so the pattern is
/// consistent between views.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub seed: u64,
    /// Lattice cells per scene unit of the coarsest octave.
    pub base_frequency: f64,
    pub octaves: u32,
    /// Stretch applied around 0.5 before clamping to `[0.02, 0.98]`.
    pub contrast: f64,
}

impl Default for Texture {
    fn default() -> Self {
        Self {
            seed: 1,
            base_frequency: 6.0,
            octaves: 4,
            contrast: 2.0,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Texture {
    fn lattice(&self, ix: i64, iy: i64, iz: i64, octave: u32) -> f64 {
        let mut h = splitmix64(self.seed ^ u64::from(octave).wrapping_mul(0xA24B_AED4_963E_E407));
        h = splitmix64(h ^ (ix as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25));
        h = splitmix64(h ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
        h = splitmix64(h ^ (iz as u64).wrapping_mul(0x1656_67B1_9E37_79F9));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn value_noise(&self, p: &Vector3<f64>, octave: u32) -> f64 {
        let base = p.map(f64::floor);
        let f = p - base;
        let s = f.map(|v| v * v * (3.0 - 2.0 * v));
        let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
        let mut acc = 0.0;
        for corner in 0..8 {
            let dx = corner & 1;
            let dy = (corner >> 1) & 1;
            let dz = (corner >> 2) & 1;
            let w = (if dx == 1 { s.x } else { 1.0 - s.x })
                * (if dy == 1 { s.y } else { 1.0 - s.y })
                * (if dz == 1 { s.z } else { 1.0 - s.z });
            acc += w * self.lattice(ix + dx as i64, iy + dy as i64, iz + dz as i64, octave);
        }
        acc
    }

    /// Albedo in `[0.02, 0.98]`.
    pub fn albedo(&self, p: &Point3<f64>) -> f64 {
        let mut sum = 0.0;
        let mut norm = 0.0;
        let mut freq = self.base_frequency;
        let mut amp = 1.0;
        for octave in 0..self.octaves.max(1) {
            sum += amp * self.value_noise(&(p.coords * freq), octave);
            norm += amp;
            freq *= 2.0;
            amp *= 0.5;
        }
        let v = sum / norm;
        (0.5 + self.contrast * (v - 0.5)).clamp(0.02, 0.98)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    /// Infinite plane through `point`.
    Plane {
        point: Point3<f64>,
        normal: Unit<Vector3<f64>>,
    },
    AxisAlignedBox {
        min: Point3<f64>,
        max: Point3<f64>,
    },
}

impl Surface {
    /// Smallest ray parameter `t > 0` with `origin + t·dir` on the surface.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match self {
            Surface::Plane { point, normal } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                (t > EPS).then_some(t)
            }
            Surface::AxisAlignedBox { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for i in 0..3 {
                    if dir[i].abs() < 1e-15 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[i] - origin[i]) / dir[i];
                    let b = (max[i] - origin[i]) / dir[i];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far || t_far <= EPS {
                    return None;
                }
                if t_near > EPS {
                    Some(t_near)
                } else {
                    // Origin inside the box.
                    None
                }
            }
        }
    }

    /// True when a camera centre at `c` would be inside (or on) the geometry.
    pub fn encloses(&self, c: &Point3<f64>) -> bool {
        match self {
            Surface::Plane { point, normal } => normal.dot(&(c - point)).abs() < 1e-9,
            Surface::AxisAlignedBox { min, max } => (0..3).all(|i| c[i] >= min[i] && c[i] <= max[i]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub geometry: SensorGeometry,
    pub intrinsics: CameraIntrinsics,
    pub surfaces: Vec<Surface>,
    pub texture: Texture,
    pub trajectory: Trajectory,
    /// Texture contrast ramps linearly from zero over this span from t = 0,
    /// so an integrator started at zero sees the scene's absolute pattern.
    pub contrast_fade_us: u64,
    /// Intensity of rays that hit nothing.
    pub background: f64,
}

impl SyntheticScene {
    /// Camera at the origin looking down +z at a textured plane `z = depth`.
    pub fn fronto_parallel_plane(geometry: SensorGeometry, focal: f64, depth: f64, seed: u64) -> Self {
        let intrinsics = CameraIntrinsics::new(
            focal,
            focal,
            (f64::from(geometry.width) - 1.0) / 2.0,
            (f64::from(geometry.height) - 1.0) / 2.0,
        );
        Self {
            geometry,
            intrinsics,
            surfaces: vec![Surface::Plane {
                point: Point3::new(0.0, 0.0, depth),
                normal: Vector3::z_axis(),
            }],
            texture: Texture {
                seed,
                ..Texture::default()
            },
            trajectory: Trajectory::stationary(Pose::identity()),
            contrast_fade_us: 0,
            background: 0.5,
        }
    }

    /// Intensity and depth seen through pixel `(u, v)` from `pose` with texture
    /// gain `gain ∈ [0, 1]`. Depth is 0 when the ray hits nothing.
    pub fn shade(&self, pose: &Pose, u: f64, v: f64, gain: f64) -> (f64, f64) {
        let k = &self.intrinsics;
        let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dir = pose.rotation.inverse() * dir_cam;
        let origin = pose.center();
        let hit = self
            .surfaces
            .iter()
            .filter_map(|s| s.intersect(&origin, &dir))
            .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))));
        match hit {
            Some(t) => {
                let p = origin + dir * t;
                let albedo = self.texture.albedo(&p);
                // dir_cam has unit z, so the ray parameter is the z-depth.
                (0.5 + gain * (albedo - 0.5), t)
            }
            None => (self.background, 0.0),
        }
    }

    pub fn gain_at(&self, t_us: f64) -> f64 {
        if self.contrast_fade_us == 0 {
            1.0
        } else {
            (t_us / self.contrast_fade_us as f64).clamp(0.0, 1.0)
        }
    }

    pub fn check_pose(&self, pose: &Pose) -> Result<()> {
        let c = pose.center();
        if self.surfaces.iter().any(|s| s.encloses(&c)) {
            return Err(Error::DegenerateTrajectory(format!(
                "camera centre ({:.3}, {:.3}, {:.3}) inside scene geometry",
                c.x, c.y, c.z
            )));
        }
        Ok(())
    }
}

/// A camera that fades the scene in at the first view, then visits a
/// sequence of views on a circular arc around a textured box. Segment `i`
/// moves from view `i - 1` to view `i` during its middle half and rests at
/// either end.
///
/// With duration windows of `segment_us`, window `k` ends while the camera
/// rests at view `k`, even when the windows start a little after t = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitScene {
    pub geometry: SensorGeometry,
    pub focal: f64,
    pub views: usize,
    pub step_deg: f64,
    pub radius: f64,
    pub height: f64,
    pub box_half_extent: Vector3<f64>,
    pub segment_us: u64,
    pub texture: Texture,
}

impl Default for OrbitScene {
    fn default() -> Self {
        Self {
            geometry: SensorGeometry {
                width: 240,
                height: 180,
            },
            focal: 200.0,
            views: 8,
            step_deg: 7.0,
            radius: 3.0,
            height: 2.0,
            box_half_extent: Vector3::new(1.0, 1.0, 1.0),
            segment_us: 100_000,
            texture: Texture::default(),
        }
    }
}

impl OrbitScene {
    pub fn view_pose(&self, i: usize) -> Pose {
        let start = -0.5 * self.step_deg * (self.views.saturating_sub(1)) as f64 + 45.0;
        let a = (start + self.step_deg * i as f64).to_radians();
        let center = Point3::new(self.radius * a.cos(), self.radius * a.sin(), self.height);
        Pose::look_at(&center, &Point3::origin(), &Vector3::z())
    }

    /// Ground-truth key views.
    pub fn view_poses(&self) -> Vec<Pose> {
        (0..self.views).map(|i| self.view_pose(i)).collect()
    }

    /// Time at which the camera arrives at view `i`.
    pub fn arrival_us(&self, i: usize) -> u64 {
        if i == 0 {
            0
        } else {
            i as u64 * self.segment_us + 3 * self.segment_us / 4
        }
    }

    pub fn total_us(&self) -> u64 {
        self.views as u64 * self.segment_us
    }

    /// Diameter of the observed geometry's bounding sphere.
    pub fn scene_diameter(&self) -> f64 {
        2.0 * self.box_half_extent.norm()
    }

    pub fn build(&self) -> SyntheticScene {
        let seg = self.segment_us;
        let mut keys = vec![TimedPose {
            t_us: 0,
            pose: self.view_pose(0),
        }];
        for i in 1..self.views {
            keys.push(TimedPose {
                t_us: i as u64 * seg + seg / 4,
                pose: self.view_pose(i - 1),
            });
            keys.push(TimedPose {
                t_us: self.arrival_us(i),
                pose: self.view_pose(i),
            });
        }
        let e = self.box_half_extent;
        let (w, h) = (f64::from(self.geometry.width), f64::from(self.geometry.height));
        SyntheticScene {
            geometry: self.geometry,
            intrinsics: CameraIntrinsics::new(self.focal, self.focal, (w - 1.0) / 2.0, (h - 1.0) / 2.0),
            surfaces: vec![Surface::AxisAlignedBox {
                min: Point3::from(-e),
                max: Point3::from(e),
            }],
            texture: self.texture.clone(),
            trajectory: Trajectory::new(keys).expect("keys are ordered"),
            contrast_fade_us: seg / 2,
            background: 0.5,
        }
    }
}
