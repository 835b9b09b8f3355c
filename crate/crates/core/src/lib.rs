//! Event-camera front end: event streams and their representations, a
//! synthetic event simulator with ground truth, intensity reconstruction,
//! and the image/point-cloud file formats shared by the pipeline.

pub mod camera;
pub mod error;
pub mod events;
pub mod grid;
pub mod image_io;
pub mod ply;
pub mod recon;
pub mod repr;
pub mod scalar;
pub mod sim;

pub use camera::{CameraIntrinsics, Pose};
pub use error::{Error, Result};
pub use events::{Event, EventStream, EventWindow, Polarity, SensorGeometry};
pub use grid::Grid;
pub use recon::{IntensityImage, IntegratorConfig, ReconState};
pub use repr::{EventFrame, VoxelGrid};
pub use scalar::Real;

pub type VoxelGridF32 = VoxelGrid<f32>;
pub type VoxelGridF64 = VoxelGrid<f64>;
pub type IntensityImageF32 = IntensityImage<f32>;
pub type IntensityImageF64 = IntensityImage<f64>;
pub type ReconStateF64 = ReconState<f64>;
pub type IntegratorConfigF64 = IntegratorConfig<f64>;
pub type LogIntensityFrameF64 = sim::LogIntensityFrame<f64>;
pub type ImageF32 = Grid<f32>;
