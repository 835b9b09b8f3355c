//! Stage orchestration over files in the output directory.
//!
//! Each stage lives in `<out>/<stage>/`, reads only the files its
//! predecessors declared in their `artifact.toml`, and records its own input
//! hash and outputs there once it finishes.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use evrecon_core::events::{parse_events, EventStream, ParseOptions};
use evrecon_core::image_io::write_pfm;
use evrecon_core::ply::write_ply_file;
use evrecon_core::recon::load_external_frames;
use evrecon_core::{Grid, IntensityImage};
use evrecon_mvs::io::{depth_map_paths, write_depth_map};
use evrecon_mvs::reconstruct_dense;
use evrecon_sfm::reconstruction::{read_text, write_text};
use evrecon_sfm::sidecar::{read_features, read_geometries, write_features, write_geometries, write_matches};
use evrecon_sfm::FeatureSet;
use log::info;

use crate::artifact::{section_text, InputHash, StageArtifact};
use crate::config::{PipelineConfig, ReconstructionConfig};
use crate::error::{CliError, Result};
use crate::run;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Frames,
    Features,
    Matching,
    Sfm,
    Mvs,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Frames, Stage::Features, Stage::Matching, Stage::Sfm, Stage::Mvs];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Frames => "frames",
            Stage::Features => "features",
            Stage::Matching => "matching",
            Stage::Sfm => "sfm",
            Stage::Mvs => "mvs",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown stage {s:?}; expected one of frames, features, matching, sfm, mvs")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Inputs unchanged since the recorded run.
    Skipped,
    /// Turned off in the configuration.
    Disabled,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
    pub outputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct PipelineReport {
    pub stages: Vec<StageOutcome>,
}

impl PipelineReport {
    pub fn status(&self, stage: Stage) -> Option<StageStatus> {
        self.stages.iter().find(|o| o.stage == stage).map(|o| o.status)
    }
}

pub const FRAME_MANIFEST: &str = "frames.txt";
pub const MATCHES_FILE: &str = "matches.evmt";
pub const GEOMETRIES_FILE: &str = "geometries.evtv";
pub const SPARSE_PLY: &str = "sparse.ply";
pub const DENSE_PLY: &str = "dense.ply";
pub const SFM_TEXT_FILES: [&str; 3] = ["cameras.txt", "images.txt", "points3D.txt"];

pub fn frame_file_name(k: usize) -> String {
    format!("frame_{k:04}.pfm")
}

pub fn feature_file_name(k: usize) -> String {
    format!("image_{k:04}.evft")
}

/// Writes frames as PFM plus a `t path` manifest (t in seconds). Timestamps
/// are nudged forward by 1 us where window midpoints tie.
pub fn write_frames(images: &[IntensityImage<f32>], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut outputs = Vec::with_capacity(images.len() + 1);
    let mut last: Option<u64> = None;
    for (k, image) in images.iter().enumerate() {
        let name = frame_file_name(k);
        write_pfm(&image.values, &dir.join(&name))?;
        let t = last.map_or(image.t_mid, |l| image.t_mid.max(l + 1));
        last = Some(t);
        manifest.push_str(&format!("{}.{:06} {name}\n", t / 1_000_000, t % 1_000_000));
        outputs.push(PathBuf::from(name));
    }
    std::fs::write(dir.join(FRAME_MANIFEST), manifest)?;
    outputs.push(PathBuf::from(FRAME_MANIFEST));
    Ok(outputs)
}

pub fn read_frames(dir: &Path) -> Result<Vec<Grid<f32>>> {
    let frames: Vec<IntensityImage<f32>> = load_external_frames(&dir.join(FRAME_MANIFEST))?;
    Ok(frames.into_iter().map(|f| f.values).collect())
}

pub fn load_events(config: &PipelineConfig) -> Result<EventStream> {
    let geometry = config.input.geometry()?;
    let mut options = ParseOptions::new(geometry, config.input.format.to_format());
    if config.input.lenient {
        options = options.lenient();
    }
    let file = File::open(&config.input.events)?;
    Ok(parse_events(BufReader::new(file), &options)?)
}

/// Images from the configured reconstructor.
pub fn reconstruct_images(config: &PipelineConfig) -> Result<Vec<IntensityImage<f32>>> {
    match &config.reconstruction {
        ReconstructionConfig::External { manifest } => Ok(load_external_frames(manifest)?),
        rc @ ReconstructionConfig::Integrator { .. } => {
            let geometry = config.input.geometry()?;
            let stream = load_events(config)?;
            let integrator = rc.integrator().expect("integrator variant");
            let policy = config.windows.policy(&geometry);
            Ok(run::integrate_events(&stream, &geometry, policy, &integrator)?)
        }
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

fn stage_dir(config: &PipelineConfig, stage: Stage) -> PathBuf {
    config.output.dir.join(stage.name())
}

fn upstream(config: &PipelineConfig, stage: Stage) -> Result<(PathBuf, StageArtifact)> {
    let dir = stage_dir(config, stage);
    let artifact = StageArtifact::read(&dir)?.ok_or(CliError::MissingArtifact { stage: stage.name() })?;
    if !artifact.paths(&dir).iter().all(|p| p.is_file()) {
        return Err(CliError::MissingArtifact { stage: stage.name() });
    }
    Ok((dir, artifact))
}

fn hash_outputs(hash: &mut InputHash, dir: &Path, artifact: &StageArtifact) -> Result<()> {
    for p in &artifact.outputs {
        hash.text(&p.to_string_lossy());
        hash.file(&dir.join(p))?;
    }
    Ok(())
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    /// Runs every stage in order, skipping those whose inputs are unchanged.
    pub fn run(&self) -> Result<PipelineReport> {
        self.config.validate()?;
        let mut report = PipelineReport::default();
        for stage in Stage::ALL {
            report.stages.push(self.run_stage(stage)?);
        }
        Ok(report)
    }

    /// Runs (or skips) one stage; its predecessors' artifacts must exist.
    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        self.stage_inner(stage).map_err(|e| e.in_stage(stage.name()))
    }

    fn stage_inner(&self, stage: Stage) -> Result<StageOutcome> {
        let config = &self.config;
        if stage == Stage::Mvs && !config.mvs.enabled {
            info!("mvs: disabled");
            return Ok(StageOutcome {
                stage,
                status: StageStatus::Disabled,
                outputs: Vec::new(),
            });
        }
        let hash = self.input_hash(stage)?;
        let dir = stage_dir(config, stage);
        if let Some(existing) = StageArtifact::read(&dir)? {
            if existing.is_current(&dir, hash) {
                info!("{stage}: up to date, skipped");
                return Ok(StageOutcome {
                    stage,
                    status: StageStatus::Skipped,
                    outputs: existing.paths(&dir),
                });
            }
        }
        std::fs::create_dir_all(&dir)?;
        let manifest = dir.join(crate::artifact::MANIFEST_NAME);
        if manifest.exists() {
            std::fs::remove_file(&manifest)?;
        }
        info!("{stage}: running");
        let outputs = match stage {
            Stage::Frames => self.frames(&dir)?,
            Stage::Features => self.features(&dir)?,
            Stage::Matching => self.matching(&dir)?,
            Stage::Sfm => self.sfm(&dir)?,
            Stage::Mvs => self.mvs(&dir)?,
        };
        let artifact = StageArtifact::new(stage.name(), hash, outputs);
        artifact.write(&dir)?;
        Ok(StageOutcome {
            stage,
            status: StageStatus::Ran,
            outputs: artifact.paths(&dir),
        })
    }

    /// FNV-1a over the stage's input files, its config sections and the
    /// seed. Paths themselves are not hashed, so moving a dataset keeps
    /// the artifacts valid.
    pub fn input_hash(&self, stage: Stage) -> Result<u64> {
        let c = &self.config;
        let mut h = InputHash::new();
        h.text(stage.name()).seed(c.seed);
        match stage {
            Stage::Frames => {
                h.text(&section_text(&(c.input.format, c.input.width, c.input.height, c.input.lenient)));
                match &c.reconstruction {
                    ReconstructionConfig::External { manifest } => {
                        h.file(manifest)?;
                        let base = manifest.parent().unwrap_or(Path::new("."));
                        for line in std::fs::read_to_string(manifest)?.lines() {
                            if let Some((_, path)) = line.trim().split_once(char::is_whitespace) {
                                let p = base.join(path.trim());
                                if p.is_file() {
                                    h.file(&p)?;
                                }
                            }
                        }
                    }
                    ReconstructionConfig::Integrator { .. } => {
                        h.file(&c.input.events)?;
                        h.text(&section_text(&c.windows));
                        h.text(&section_text(&c.reconstruction));
                    }
                }
            }
            Stage::Features => {
                let (dir, art) = upstream(c, Stage::Frames)?;
                hash_outputs(&mut h, &dir, &art)?;
                h.text(&section_text(&(c.features.max_features, c.features.contrast_threshold, c.features.edge_threshold)));
            }
            Stage::Matching => {
                let (dir, art) = upstream(c, Stage::Features)?;
                hash_outputs(&mut h, &dir, &art)?;
                h.text(&section_text(&c.features.ratio));
                h.text(&section_text(&c.verification));
                h.text(&section_text(&c.camera));
            }
            Stage::Sfm => {
                for up in [Stage::Frames, Stage::Features, Stage::Matching] {
                    let (dir, art) = upstream(c, up)?;
                    hash_outputs(&mut h, &dir, &art)?;
                }
                h.text(&section_text(&c.sfm));
                h.text(&section_text(&c.camera));
            }
            Stage::Mvs => {
                for up in [Stage::Frames, Stage::Sfm] {
                    let (dir, art) = upstream(c, up)?;
                    hash_outputs(&mut h, &dir, &art)?;
                }
                h.text(&section_text(&c.mvs));
            }
        }
        h.text(&section_text(&c.output.ply));
        Ok(h.finish())
    }

    fn frames(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let images = reconstruct_images(&self.config)?;
        if images.is_empty() {
            return Err(CliError::Config("event stream produced no windows".into()));
        }
        info!("frames: {} images", images.len());
        write_frames(&images, dir)
    }

    fn features(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let (frames_dir, _) = upstream(&self.config, Stage::Frames)?;
        let images = read_frames(&frames_dir)?;
        let sets = run::detect_all(&images, &self.config.features.sift())?;
        let mut outputs = Vec::with_capacity(sets.len());
        for set in &sets {
            let name = feature_file_name(set.image_id);
            let mut w = BufWriter::new(File::create(dir.join(&name))?);
            write_features(&mut w, set)?;
            w.flush()?;
            outputs.push(PathBuf::from(name));
        }
        Ok(outputs)
    }

    fn feature_sets(&self) -> Result<Vec<FeatureSet>> {
        let (dir, art) = upstream(&self.config, Stage::Features)?;
        art.paths(&dir)
            .iter()
            .map(|p| Ok(read_features(BufReader::new(File::open(p)?))?))
            .collect()
    }

    fn matching(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let c = &self.config;
        let sets = self.feature_sets()?;
        let matches = run::match_all(&sets, c.features.ratio);
        let intrinsics = c.camera.as_ref().map(|k| k.intrinsics());
        let verified = run::verify_all(&sets, &matches, intrinsics.as_ref(), &c.verification.params(c.seed))?;
        let mut w = BufWriter::new(File::create(dir.join(MATCHES_FILE))?);
        write_matches(&mut w, &matches)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join(GEOMETRIES_FILE))?);
        write_geometries(&mut w, &verified)?;
        w.flush()?;
        Ok(vec![PathBuf::from(MATCHES_FILE), PathBuf::from(GEOMETRIES_FILE)])
    }

    fn sfm(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let c = &self.config;
        let (frames_dir, _) = upstream(c, Stage::Frames)?;
        let images = read_frames(&frames_dir)?;
        let first = images.first().ok_or_else(|| CliError::Config("no frames".into()))?;
        let sets = self.feature_sets()?;
        let (match_dir, _) = upstream(c, Stage::Matching)?;
        let verified = read_geometries(BufReader::new(File::open(match_dir.join(GEOMETRIES_FILE))?))?;
        let settings = c.sparse_settings();
        let (camera, options) = run::camera_setup(first.width() as u32, first.height() as u32, &settings);
        let (recon, _) = run::reconstruct_sparse(camera, &sets, verified, &options)?;
        write_text(&recon, dir)?;
        write_ply_file(&recon.sparse_cloud(), &dir.join(SPARSE_PLY), c.output.ply.format())?;
        let mut outputs: Vec<PathBuf> = SFM_TEXT_FILES.iter().map(PathBuf::from).collect();
        outputs.push(PathBuf::from(SPARSE_PLY));
        Ok(outputs)
    }

    fn mvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let c = &self.config;
        let (frames_dir, _) = upstream(c, Stage::Frames)?;
        let images = read_frames(&frames_dir)?;
        let (sfm_dir, _) = upstream(c, Stage::Sfm)?;
        let recon = read_text(&sfm_dir)?;
        let (maps, cloud) = reconstruct_dense(&recon, &images, &c.mvs.options(c.seed))?;
        let mut outputs = Vec::new();
        for map in &maps {
            write_depth_map(map, dir)?;
            for p in depth_map_paths(Path::new(""), map.reference) {
                outputs.push(p);
            }
        }
        info!("mvs: {} depth maps, {} fused points", maps.len(), cloud.points.len());
        write_ply_file(&cloud.to_point_cloud(), &dir.join(DENSE_PLY), c.output.ply.format())?;
        outputs.push(PathBuf::from(DENSE_PLY));
        Ok(outputs)
    }
}
