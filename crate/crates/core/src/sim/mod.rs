//! Synthetic event camera: procedural scenes, rendering with ground truth,
//! and threshold-crossing event generation.

mod generate;
mod render;
mod scene;
mod trajectory;

pub use generate::{generate_events, SimulatorConfig, DEFAULT_CONTRAST_THRESHOLD};
pub use render::{render_sequence, LogIntensityFrame, RenderedSequence, LOG_EPSILON};
pub use scene::{OrbitScene, Surface, SyntheticScene, Texture};
pub use trajectory::{read_trajectory, write_trajectory, TimedPose, Trajectory};
