//! Sparse reconstruction: features, matching, two-view verification,
//! incremental registration and bundle adjustment.

pub mod bundle;
pub mod error;
pub mod features;
pub mod geometry;
pub mod graph;
pub mod incremental;
pub mod projection;
pub mod reconstruction;
pub mod sidecar;
pub mod synthetic;
pub mod verify;

pub use bundle::{bundle_adjust, BundleOptions, BundleReport};
pub use error::{Result, SfmError};
pub use features::{detect_features, match_exhaustive, Feature, FeatureSet, MatchSet, SiftParams};
pub use graph::{build_scene_graph, SceneGraph, Track};
pub use incremental::{
    filter_outliers, initialize_two_view, register_next_image, run_incremental, select_initial_pair, triangulate_tracks,
    IncrementalOptions,
};
pub use reconstruction::{CameraModel, Point3D, Reconstruction};
pub use verify::{verify_pair, ModelKind, TwoViewGeometry, Verification, VerifyParams};
