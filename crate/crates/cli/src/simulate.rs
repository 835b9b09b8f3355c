//! Synthetic orbit datasets: events, ground-truth trajectory and a ready
//! pipeline configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use evrecon_core::events::EventStream;
use evrecon_core::sim::{generate_events, render_sequence, write_trajectory, OrbitScene, SimulatorConfig, TimedPose};
use evrecon_core::{events::write_events_binary, Pose};

use crate::config::{
    CameraConfig, EventFileFormat, FeatureConfig, InputConfig, MvsConfig, OutputConfig, PipelineConfig, ReconstructionConfig,
    SfmConfig, VerificationConfig, WindowConfig,
};
use crate::error::Result;

pub const EVENTS_FILE: &str = "events.bin";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const VIEWS_FILE: &str = "views.txt";
pub const CONFIG_FILE: &str = "pipeline.toml";

/// Renders the orbit at `frame_rate` Hz and converts it to events.
pub fn simulate_orbit(orbit: &OrbitScene, frame_rate: f64, simulator: &SimulatorConfig<f64>) -> Result<(EventStream, Vec<TimedPose>)> {
    let scene = orbit.build();
    let frames = (orbit.total_us() as f64 * frame_rate / 1e6).round() as usize + 1;
    let sequence = render_sequence::<f64>(&scene, frames, frame_rate)?;
    let stream = generate_events(&sequence.frames, simulator)?;
    Ok((stream, sequence.poses))
}

/// Key views as timed poses at their arrival times.
pub fn key_views(orbit: &OrbitScene) -> Vec<TimedPose> {
    (0..orbit.views)
        .map(|i| TimedPose {
            t_us: orbit.arrival_us(i),
            pose: orbit.view_pose(i),
        })
        .collect()
}

/// Configuration matching a simulated orbit: binary events next to the
/// config, known intrinsics and one duration window per view.
pub fn orbit_config(orbit: &OrbitScene, seed: u64) -> PipelineConfig {
    let k = orbit.build().intrinsics;
    PipelineConfig {
        seed,
        input: InputConfig {
            events: PathBuf::from(EVENTS_FILE),
            format: EventFileFormat::Binary,
            width: orbit.geometry.width,
            height: orbit.geometry.height,
            lenient: false,
        },
        camera: Some(CameraConfig {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            k1: k.k1,
        }),
        windows: WindowConfig::Duration {
            duration_us: orbit.segment_us,
        },
        reconstruction: ReconstructionConfig::default(),
        features: FeatureConfig::default(),
        verification: VerificationConfig::default(),
        sfm: SfmConfig::default(),
        mvs: MvsConfig {
            window_step: 2,
            ..MvsConfig::default()
        },
        output: OutputConfig::default(),
    }
}

#[derive(Clone, Debug)]
pub struct SimulationFiles {
    pub events: PathBuf,
    pub trajectory: PathBuf,
    pub views: PathBuf,
    pub config: PathBuf,
    pub event_count: usize,
}

fn write_poses(path: &Path, poses: &[TimedPose]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trajectory(&mut w, poses)?;
    w.flush()?;
    Ok(())
}

/// Writes events, the full trajectory, the key views and `pipeline.toml`
/// into `dir`.
pub fn write_simulation(dir: &Path, orbit: &OrbitScene, frame_rate: f64, simulator: &SimulatorConfig<f64>, seed: u64) -> Result<SimulationFiles> {
    std::fs::create_dir_all(dir)?;
    let (stream, poses) = simulate_orbit(orbit, frame_rate, simulator)?;
    let events = dir.join(EVENTS_FILE);
    let mut w = BufWriter::new(File::create(&events)?);
    write_events_binary(&mut w, orbit.geometry, &stream.events)?;
    w.flush()?;
    let trajectory = dir.join(TRAJECTORY_FILE);
    write_poses(&trajectory, &poses)?;
    let views = dir.join(VIEWS_FILE);
    write_poses(&views, &key_views(orbit))?;
    let config = dir.join(CONFIG_FILE);
    std::fs::write(&config, orbit_config(orbit, seed).to_toml())?;
    Ok(SimulationFiles {
        events,
        trajectory,
        views,
        config,
        event_count: stream.len(),
    })
}

/// Ground-truth key views written by [`write_simulation`], world-to-camera.
pub fn read_views(path: &Path) -> Result<Vec<Pose>> {
    let keys = evrecon_core::sim::read_trajectory(std::io::BufReader::new(File::open(path)?))?;
    Ok(keys.into_iter().map(|k| k.pose).collect())
}
