//! Rendered views of a textured world plane `Z = depth`, for tests.

use evrecon_core::{CameraIntrinsics, Grid, Pose};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::patchmatch::StereoView;

/// Sum of random plane waves, values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    /// Wavelengths between `min_wavelength` and four times that.
    pub fn random(seed: u64, min_wavelength: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..16)
            .map(|_| {
                let lambda = min_wavelength * rng.random_range(1.0..4.0);
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / lambda;
                (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0))
            })
            .collect();
        Self { waves }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.3).sum();
        let v: f64 = self.waves.iter().map(|&(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin()).sum();
        0.5 + 0.5 * v / total
    }
}

#[derive(Clone, Debug)]
pub struct PlaneScene {
    pub depth: f64,
    pub texture: Texture,
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
}

impl PlaneScene {
    /// `width × height` views with focal length `width` and a texture whose
    /// finest wavelength spans about three pixels at the plane.
    pub fn new(width: usize, height: usize, depth: f64, seed: u64) -> Self {
        let f = width as f64;
        let intrinsics = CameraIntrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        Self {
            depth,
            texture: Texture::random(seed, 3.0 * depth / f),
            intrinsics,
            width,
            height,
        }
    }

    /// Depth of the plane along the optical axis at pixel `(x, y)`, if the
    /// ray meets it in front of the camera.
    pub fn true_depth(&self, pose: &Pose, x: f64, y: f64) -> Option<f64> {
        let ray_c = Vector3::new((x - self.intrinsics.cx) / self.intrinsics.fx, (y - self.intrinsics.cy) / self.intrinsics.fy, 1.0);
        let c = pose.center();
        let dir = pose.rotation.inverse() * ray_c;
        if dir.z.abs() < 1e-12 {
            return None;
        }
        let s = (self.depth - c.z) / dir.z;
        (s > 0.0).then_some(s)
    }

    pub fn render(&self, id: usize, pose: Pose) -> StereoView {
        let k = self.intrinsics;
        let image = Grid::from_fn(self.width, self.height, |x, y| {
            let Some(s) = self.true_depth(&pose, x as f64, y as f64) else { return 0.0 };
            let ray_c = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let p: Point3<f64> = pose.center() + pose.rotation.inverse() * ray_c * s;
            self.texture.value(p.x, p.y) as f32
        });
        StereoView {
            id,
            image,
            intrinsics: k,
            pose,
        }
    }

    /// Camera with centre `(cx, cy, 0)` looking down `+Z`.
    pub fn view_at(&self, id: usize, cx: f64, cy: f64) -> StereoView {
        self.render(id, Pose::new(nalgebra::UnitQuaternion::identity(), Vector3::new(-cx, -cy, 0.0)))
    }
}
