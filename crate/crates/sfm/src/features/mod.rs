//! Local features, descriptor matching and their binary sidecar files.

pub mod matching;
pub mod sift;

pub use matching::{match_exhaustive, MatchSet, DEFAULT_RATIO};
pub use sift::{detect_features, Feature, FeatureSet, SiftParams, DESCRIPTOR_LEN};
