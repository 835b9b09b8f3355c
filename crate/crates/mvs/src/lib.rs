//! Dense multi-view stereo: PatchMatch depth and normal estimation per
//! reference view, then cross-view consistency fusion.

pub mod dense;
pub mod error;
pub mod fusion;
pub mod io;
pub mod neighbors;
pub mod patchmatch;
pub mod plane;
pub mod synthetic;

pub use dense::{reconstruct_dense, stereo_views, DenseOptions};
pub use error::{MvsError, Result};
pub use fusion::{fuse_depth_maps, DensePoint, DensePointCloud, FusionParams};
pub use neighbors::select_stereo_neighbors;
pub use patchmatch::{depth_range_from_points, patchmatch_depth, DepthMap, PatchMatch, StereoParams, StereoView};
pub use plane::{plane_homography, Hypothesis};
