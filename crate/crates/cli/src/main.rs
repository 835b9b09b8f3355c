use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evrecon::config::{CameraConfig, EventFileFormat, InputConfig, OutputConfig, PipelineConfig, PlyEncoding, ReconstructionConfig};
use evrecon::pipeline::{write_frames, Pipeline, Stage, StageStatus, DENSE_PLY};
use evrecon::run::WindowPolicy;
use evrecon::{simulate, tools, CliError, Result};
use evrecon_core::events::{parse_events, EventStream, ParseOptions, SensorGeometry};
use evrecon_core::ply::write_ply_file;
use evrecon_core::recon::{IntegratorConfig, Percentiles};
use evrecon_core::repr::DEFAULT_VOXEL_BINS;
use evrecon_core::sim::{OrbitScene, SimulatorConfig};
use log::info;

#[derive(Parser)]
#[command(name = "evrecon", version, about = "Dense 3D reconstruction from event-camera streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline described by a TOML config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single stage (frames, features, matching, sfm, mvs); earlier
        /// stages must already have run.
        #[arg(long)]
        stage_only: Option<String>,
    },
    /// Per-window signed event-count images.
    EventsToFrames {
        #[command(flatten)]
        events: EventArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-window voxel grids, one image per temporal bin.
    EventsToVoxel {
        #[command(flatten)]
        events: EventArgs,
        #[arg(long, default_value_t = DEFAULT_VOXEL_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Intensity images from events through the leaky integrator.
    Reconstruct {
        #[command(flatten)]
        events: EventArgs,
        #[arg(long, default_value_t = 0.1)]
        contrast: f64,
        #[arg(long, default_value_t = 0.1)]
        decay: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sparse reconstruction from a frame manifest ("t path" lines).
    Sfm {
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        camera: CameraArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ascii: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dense reconstruction from a sparse model directory and its frames.
    Mvs {
        /// Directory holding cameras.txt, images.txt and points3D.txt.
        #[arg(long)]
        sparse: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, default_value_t = 2)]
        window_step: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ascii: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the synthetic box orbit and write events, ground truth and a
    /// pipeline config.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000.0)]
        frame_rate: f64,
        #[arg(long, default_value_t = 0.1)]
        contrast_threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct EventArgs {
    #[arg(long)]
    events: PathBuf,
    /// binary, text-us or text-s.
    #[arg(long, default_value = "binary", value_parser = parse_format)]
    format: EventFileFormat,
    #[arg(long)]
    width: u32,
    #[arg(long)]
    height: u32,
    /// Events per window (default: sensor-size rule).
    #[arg(long, conflicts_with = "duration_us")]
    count: Option<usize>,
    #[arg(long)]
    duration_us: Option<u64>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct CameraArgs {
    #[arg(long, requires_all = ["fy", "cx", "cy"])]
    fx: Option<f64>,
    #[arg(long)]
    fy: Option<f64>,
    #[arg(long)]
    cx: Option<f64>,
    #[arg(long)]
    cy: Option<f64>,
}

fn parse_format(s: &str) -> std::result::Result<EventFileFormat, String> {
    match s {
        "binary" => Ok(EventFileFormat::Binary),
        "text-us" => Ok(EventFileFormat::TextUs),
        "text-s" => Ok(EventFileFormat::TextS),
        _ => Err(format!("unknown event format {s:?}")),
    }
}

impl EventArgs {
    fn geometry(&self) -> Result<SensorGeometry> {
        SensorGeometry::new(self.width, self.height).map_err(|e| CliError::Config(e.to_string()))
    }

    fn load(&self) -> Result<(EventStream, SensorGeometry, WindowPolicy)> {
        let geometry = self.geometry()?;
        if !self.events.is_file() {
            return Err(CliError::Config(format!("event file {} does not exist", self.events.display())));
        }
        let mut options = ParseOptions::new(geometry, self.format.to_format());
        if self.lenient {
            options = options.lenient();
        }
        let stream = parse_events(BufReader::new(File::open(&self.events)?), &options)?;
        let policy = match (self.count, self.duration_us) {
            (_, Some(0)) | (Some(0), _) => return Err(CliError::Config("window size must be positive".into())),
            (_, Some(d)) => WindowPolicy::DurationUs(d),
            (Some(n), None) => WindowPolicy::Count(n),
            (None, None) => WindowPolicy::Count(geometry.default_window_count()),
        };
        info!("{} events", stream.len());
        Ok((stream, geometry, policy))
    }
}

fn ply(ascii: bool) -> PlyEncoding {
    if ascii {
        PlyEncoding::Ascii
    } else {
        PlyEncoding::Binary
    }
}

fn run_pipeline(config: &Path, seed: Option<u64>, out: Option<PathBuf>, stage_only: Option<String>) -> Result<()> {
    let mut config = PipelineConfig::load(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.output.dir = out;
    }
    let only = stage_only.map(|s| s.parse::<Stage>()).transpose()?;
    let pipeline = Pipeline::new(config);
    let outcomes = match only {
        Some(stage) => vec![pipeline.run_stage(stage)?],
        None => pipeline.run()?.stages,
    };
    for o in outcomes {
        let status = match o.status {
            StageStatus::Ran => "done",
            StageStatus::Skipped => "skipped (up to date)",
            StageStatus::Disabled => "disabled",
        };
        println!("{:<9}{status}", o.stage.name());
    }
    println!("outputs in {}", pipeline.config.output.dir.display());
    Ok(())
}

fn run_sfm(frames: &Path, camera: &CameraArgs, seed: u64, ascii: bool, out: &Path) -> Result<()> {
    if !frames.is_file() {
        return Err(CliError::Config(format!("frame manifest {} does not exist", frames.display())));
    }
    let images: Vec<evrecon_core::IntensityImage<f32>> = evrecon_core::recon::load_external_frames(frames)?;
    let first = images.first().ok_or_else(|| CliError::Config("frame manifest lists no frames".into()))?;
    let camera = match (camera.fx, camera.fy, camera.cx, camera.cy) {
        (Some(fx), Some(fy), Some(cx), Some(cy)) => Some(CameraConfig { fx, fy, cx, cy, k1: 0.0 }),
        _ => None,
    };
    let config = PipelineConfig {
        seed,
        input: InputConfig {
            events: PathBuf::new(),
            format: EventFileFormat::Binary,
            width: first.values.width() as u32,
            height: first.values.height() as u32,
            lenient: false,
        },
        camera,
        windows: Default::default(),
        reconstruction: ReconstructionConfig::External {
            manifest: frames.to_path_buf(),
        },
        features: Default::default(),
        verification: Default::default(),
        sfm: Default::default(),
        mvs: Default::default(),
        output: OutputConfig {
            dir: out.to_path_buf(),
            ply: ply(ascii),
        },
    };
    config.validate()?;
    let pipeline = Pipeline::new(config);
    for stage in [Stage::Frames, Stage::Features, Stage::Matching, Stage::Sfm] {
        let o = pipeline.run_stage(stage)?;
        println!("{:<9}{:?}", stage.name(), o.status);
    }
    Ok(())
}

fn run_mvs(sparse: &Path, frames: &Path, window_step: usize, seed: u64, ascii: bool, out: &Path) -> Result<()> {
    if !frames.is_file() {
        return Err(CliError::Config(format!("frame manifest {} does not exist", frames.display())));
    }
    if !sparse.join("cameras.txt").is_file() {
        return Err(CliError::Config(format!("{} holds no sparse model", sparse.display())));
    }
    let images: Vec<_> = evrecon_core::recon::load_external_frames::<f32>(frames)?.into_iter().map(|f| f.values).collect();
    let recon = evrecon_sfm::reconstruction::read_text(sparse)?;
    let mvs = evrecon::config::MvsConfig {
        window_step,
        ..Default::default()
    };
    let (maps, cloud) = evrecon_mvs::reconstruct_dense(&recon, &images, &mvs.options(seed))?;
    std::fs::create_dir_all(out)?;
    for map in &maps {
        evrecon_mvs::io::write_depth_map(map, out)?;
    }
    write_ply_file(&cloud.to_point_cloud(), &out.join(DENSE_PLY), ply(ascii).format())?;
    println!("{} depth maps, {} points -> {}", maps.len(), cloud.points.len(), out.join(DENSE_PLY).display());
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Pipeline {
            config,
            seed,
            out,
            stage_only,
        } => run_pipeline(&config, seed, out, stage_only),
        Command::EventsToFrames { events, out } => {
            let (stream, geometry, policy) = events.load()?;
            let written = tools::write_event_frames(&stream, &geometry, policy, &out)?;
            println!("{} frames -> {}", written.len(), out.display());
            Ok(())
        }
        Command::EventsToVoxel { events, bins, out } => {
            if bins == 0 {
                return Err(CliError::Config("bins must be positive".into()));
            }
            let (stream, geometry, policy) = events.load()?;
            let written = tools::write_voxel_grids(&stream, &geometry, policy, bins, &out)?;
            println!("{} bin images -> {}", written.len(), out.display());
            Ok(())
        }
        Command::Reconstruct {
            events,
            contrast,
            decay,
            out,
        } => {
            let config = IntegratorConfig {
                contrast: contrast as f32,
                decay_per_s: decay as f32,
                percentiles: Percentiles::default(),
            };
            config.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let (stream, geometry, policy) = events.load()?;
            let images = evrecon::run::integrate_events(&stream, &geometry, policy, &config)?;
            write_frames(&images, &out)?;
            println!("{} images -> {}", images.len(), out.display());
            Ok(())
        }
        Command::Sfm {
            frames,
            camera,
            seed,
            ascii,
            out,
        } => run_sfm(&frames, &camera, seed, ascii, &out),
        Command::Mvs {
            sparse,
            frames,
            window_step,
            seed,
            ascii,
            out,
        } => run_mvs(&sparse, &frames, window_step, seed, ascii, &out),
        Command::Simulate {
            out,
            frame_rate,
            contrast_threshold,
            seed,
        } => {
            let simulator = SimulatorConfig::new(contrast_threshold).map_err(|e| CliError::Config(e.to_string()))?;
            if !(frame_rate > 0.0 && frame_rate.is_finite()) {
                return Err(CliError::Config(format!("frame rate {frame_rate}")));
            }
            let files = simulate::write_simulation(&out, &OrbitScene::default(), frame_rate, &simulator, seed)?;
            println!("{} events -> {}", files.event_count, files.events.display());
            println!("config: {}", files.config.display());
            Ok(())
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EVRECON_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("EVRECON_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
