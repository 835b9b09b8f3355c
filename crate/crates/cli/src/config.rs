//! TOML pipeline configuration.
//!
//! Every section has defaults, so a minimal file only names the event input
//! and sensor size. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use evrecon_core::events::{EventFormat, SensorGeometry, TimeUnit};
use evrecon_core::ply::PlyFormat;
use evrecon_core::recon::Percentiles;
use evrecon_core::{CameraIntrinsics, IntegratorConfig};
use evrecon_mvs::{DenseOptions, FusionParams, StereoParams};
use evrecon_sfm::incremental::IncrementalOptions;
use evrecon_sfm::{SiftParams, VerifyParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::run::{SparseSettings, WindowPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub input: InputConfig,
    #[serde(default)]
    pub camera: Option<CameraConfig>,
    #[serde(default)]
    pub windows: WindowConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default)]
    pub sfm: SfmConfig,
    #[serde(default)]
    pub mvs: MvsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventFileFormat {
    /// `t x y p` lines, t in integer microseconds.
    TextUs,
    /// `t x y p` lines, t in decimal seconds.
    TextS,
    Binary,
}

impl EventFileFormat {
    pub fn to_format(self) -> EventFormat {
        match self {
            Self::TextUs => EventFormat::Text(TimeUnit::Microseconds),
            Self::TextS => EventFormat::Text(TimeUnit::Seconds),
            Self::Binary => EventFormat::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub events: PathBuf,
    pub format: EventFileFormat,
    pub width: u32,
    pub height: u32,
    /// Tolerate slightly out-of-order timestamps and skip malformed lines.
    #[serde(default)]
    pub lenient: bool,
}

impl InputConfig {
    pub fn geometry(&self) -> Result<SensorGeometry> {
        SensorGeometry::new(self.width, self.height).map_err(|e| CliError::Config(format!("input: {e}")))
    }
}

/// Known pinhole calibration with optional radial term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
}

impl CameraConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        let mut k = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy);
        k.k1 = self.k1;
        k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WindowConfig {
    /// Fixed event count; the sensor-size default when `events` is absent.
    Count { events: Option<usize> },
    Duration { duration_us: u64 },
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self::Count { events: None }
    }
}

impl WindowConfig {
    pub fn policy(&self, geometry: &SensorGeometry) -> WindowPolicy {
        match *self {
            Self::Count { events } => WindowPolicy::Count(events.unwrap_or_else(|| geometry.default_window_count())),
            Self::Duration { duration_us } => WindowPolicy::DurationUs(duration_us),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReconstructionConfig {
    Integrator {
        #[serde(default = "default_contrast")]
        contrast: f64,
        #[serde(default = "default_decay")]
        decay_per_s: f64,
        #[serde(default = "default_low")]
        low_percentile: f64,
        #[serde(default = "default_high")]
        high_percentile: f64,
    },
    /// Frames produced by another reconstructor, listed as `t path` lines.
    External { manifest: PathBuf },
}

fn default_contrast() -> f64 {
    0.1
}
fn default_decay() -> f64 {
    0.1
}
fn default_low() -> f64 {
    Percentiles::default().low
}
fn default_high() -> f64 {
    Percentiles::default().high
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self::Integrator {
            contrast: default_contrast(),
            decay_per_s: default_decay(),
            low_percentile: default_low(),
            high_percentile: default_high(),
        }
    }
}

impl ReconstructionConfig {
    pub fn integrator(&self) -> Option<IntegratorConfig<f32>> {
        match *self {
            Self::Integrator {
                contrast,
                decay_per_s,
                low_percentile,
                high_percentile,
            } => Some(IntegratorConfig {
                contrast: contrast as f32,
                decay_per_s: decay_per_s as f32,
                percentiles: Percentiles {
                    low: low_percentile,
                    high: high_percentile,
                },
            }),
            Self::External { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub max_features: usize,
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    pub ratio: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let s = SiftParams::default();
        Self {
            max_features: s.max_features,
            contrast_threshold: s.contrast_threshold,
            edge_threshold: s.edge_threshold,
            ratio: evrecon_sfm::features::DEFAULT_RATIO,
        }
    }
}

impl FeatureConfig {
    pub fn sift(&self) -> SiftParams {
        SiftParams {
            max_features: self.max_features,
            contrast_threshold: self.contrast_threshold,
            edge_threshold: self.edge_threshold,
            ..SiftParams::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationConfig {
    pub homography_threshold: f64,
    pub epipolar_threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        let v = VerifyParams::default();
        Self {
            homography_threshold: v.homography_threshold,
            epipolar_threshold: v.epipolar_threshold,
            confidence: v.confidence,
            max_iterations: v.max_iterations,
            min_inliers: v.min_inliers,
        }
    }
}

impl VerificationConfig {
    pub fn params(&self, seed: u64) -> VerifyParams {
        VerifyParams {
            homography_threshold: self.homography_threshold,
            epipolar_threshold: self.epipolar_threshold,
            confidence: self.confidence,
            max_iterations: self.max_iterations,
            min_inliers: self.min_inliers,
            seed,
            ..VerifyParams::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmConfig {
    pub min_2d3d: usize,
    pub pnp_threshold: f64,
    pub max_reprojection_error: f64,
    pub min_triangulation_angle_deg: f64,
    pub init_min_median_angle_deg: f64,
    pub loss_scale: f64,
    pub max_ba_iterations: usize,
}

impl Default for SfmConfig {
    fn default() -> Self {
        let o = IncrementalOptions::default();
        Self {
            min_2d3d: o.min_2d3d,
            pnp_threshold: o.pnp_threshold,
            max_reprojection_error: o.max_reprojection_error,
            min_triangulation_angle_deg: o.min_triangulation_angle_deg,
            init_min_median_angle_deg: o.init_min_median_angle_deg,
            loss_scale: o.bundle.loss_scale,
            max_ba_iterations: o.bundle.max_iterations,
        }
    }
}

impl SfmConfig {
    pub fn options(&self, seed: u64) -> IncrementalOptions {
        let mut o = IncrementalOptions {
            min_2d3d: self.min_2d3d,
            pnp_threshold: self.pnp_threshold,
            max_reprojection_error: self.max_reprojection_error,
            min_triangulation_angle_deg: self.min_triangulation_angle_deg,
            init_min_median_angle_deg: self.init_min_median_angle_deg,
            seed,
            ..IncrementalOptions::default()
        };
        o.bundle.loss_scale = self.loss_scale;
        o.bundle.max_iterations = self.max_ba_iterations;
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvsConfig {
    pub enabled: bool,
    pub neighbors: usize,
    pub window_radius: usize,
    pub window_step: usize,
    pub iterations: usize,
    pub refinement_steps: usize,
    pub cost_threshold: f64,
    pub max_reprojection_px: f64,
    pub max_relative_depth: f64,
    pub min_support: usize,
}

impl Default for MvsConfig {
    fn default() -> Self {
        let d = DenseOptions::default();
        Self {
            enabled: true,
            neighbors: d.neighbors,
            window_radius: d.stereo.window_radius,
            window_step: d.stereo.window_step,
            iterations: d.stereo.iterations,
            refinement_steps: d.stereo.refinement_steps,
            cost_threshold: d.stereo.cost_threshold,
            max_reprojection_px: d.fusion.max_reprojection_px,
            max_relative_depth: d.fusion.max_relative_depth,
            min_support: d.fusion.min_support,
        }
    }
}

impl MvsConfig {
    pub fn options(&self, seed: u64) -> DenseOptions {
        DenseOptions {
            neighbors: self.neighbors,
            stereo: StereoParams {
                window_radius: self.window_radius,
                window_step: self.window_step,
                iterations: self.iterations,
                refinement_steps: self.refinement_steps,
                cost_threshold: self.cost_threshold,
                seed,
                ..StereoParams::default()
            },
            fusion: FusionParams {
                max_reprojection_px: self.max_reprojection_px,
                max_relative_depth: self.max_relative_depth,
                min_support: self.min_support,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlyEncoding {
    Ascii,
    Binary,
}

impl PlyEncoding {
    pub fn format(self) -> PlyFormat {
        match self {
            Self::Ascii => PlyFormat::Ascii,
            Self::Binary => PlyFormat::BinaryLittleEndian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub ply: PlyEncoding,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            ply: PlyEncoding::Binary,
        }
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(what()))
    }
}

fn unit_interval(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.input.events);
        join(&mut self.output.dir);
        if let ReconstructionConfig::External { manifest } = &mut self.reconstruction {
            join(manifest);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let geometry = self.input.geometry()?;
        let needs_events = matches!(self.reconstruction, ReconstructionConfig::Integrator { .. });
        if needs_events {
            check(self.input.events.is_file(), || format!("event file {} does not exist", self.input.events.display()))?;
        }
        if let Some(cam) = &self.camera {
            let k = cam.intrinsics();
            check(k.is_valid_for(geometry.width, geometry.height), || format!("camera intrinsics {cam:?} invalid for the sensor"))?;
        }
        match self.windows {
            WindowConfig::Count { events } => check(events != Some(0), || "windows: count must be positive".into())?,
            WindowConfig::Duration { duration_us } => check(duration_us > 0, || "windows: duration must be positive".into())?,
        }
        match &self.reconstruction {
            ReconstructionConfig::Integrator {
                contrast,
                decay_per_s,
                low_percentile,
                high_percentile,
            } => {
                check(*contrast > 0.0 && contrast.is_finite(), || format!("reconstruction: contrast {contrast}"))?;
                check(*decay_per_s >= 0.0 && decay_per_s.is_finite(), || format!("reconstruction: decay {decay_per_s}"))?;
                check(unit_interval(*low_percentile) && unit_interval(*high_percentile) && low_percentile < high_percentile, || {
                    format!("reconstruction: percentiles {low_percentile}..{high_percentile}")
                })?;
            }
            ReconstructionConfig::External { manifest } => {
                check(manifest.is_file(), || format!("frame manifest {} does not exist", manifest.display()))?;
            }
        }
        let f = &self.features;
        check(f.max_features > 0, || "features: max_features must be positive".into())?;
        check(f.contrast_threshold > 0.0, || "features: contrast_threshold must be positive".into())?;
        check(f.edge_threshold > 1.0, || "features: edge_threshold must exceed 1".into())?;
        check(f.ratio > 0.0 && f.ratio <= 1.0, || format!("features: ratio {}", f.ratio))?;
        let v = &self.verification;
        check(v.homography_threshold > 0.0 && v.epipolar_threshold > 0.0, || "verification: thresholds must be positive".into())?;
        check(v.confidence > 0.0 && v.confidence < 1.0, || format!("verification: confidence {}", v.confidence))?;
        check(v.max_iterations > 0, || "verification: max_iterations must be positive".into())?;
        let s = &self.sfm;
        check(s.min_2d3d >= 4, || "sfm: min_2d3d must be at least 4".into())?;
        check(s.pnp_threshold > 0.0 && s.max_reprojection_error > 0.0, || "sfm: thresholds must be positive".into())?;
        check(s.loss_scale > 0.0, || "sfm: loss_scale must be positive".into())?;
        let m = &self.mvs;
        check(m.neighbors > 0, || "mvs: neighbors must be positive".into())?;
        check(m.window_radius > 0 && m.window_step > 0 && m.window_step <= m.window_radius, || {
            "mvs: need 0 < window_step <= window_radius".into()
        })?;
        check(m.iterations > 0, || "mvs: iterations must be positive".into())?;
        check(m.cost_threshold > 0.0 && m.cost_threshold <= 2.0, || format!("mvs: cost_threshold {}", m.cost_threshold))?;
        check(m.max_reprojection_px > 0.0 && m.max_relative_depth > 0.0, || "mvs: fusion tolerances must be positive".into())?;
        check(m.min_support >= 2, || "mvs: min_support must be at least 2".into())?;
        Ok(())
    }

    pub fn sparse_settings(&self) -> SparseSettings {
        SparseSettings {
            sift: self.features.sift(),
            ratio: self.features.ratio,
            verify: self.verification.params(self.seed),
            incremental: self.sfm.options(self.seed),
            intrinsics: self.camera.as_ref().map(CameraConfig::intrinsics),
        }
    }
}
