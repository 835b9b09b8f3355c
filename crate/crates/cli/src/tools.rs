//! Single-step conversions behind the debugging subcommands.

use std::path::{Path, PathBuf};

use evrecon_core::events::{EventStream, SensorGeometry};
use evrecon_core::image_io::write_pfm;
use evrecon_core::repr::{accumulate_frame, encode_voxel_grid};
use evrecon_core::{Grid, VoxelGrid};

use crate::error::Result;
use crate::run::{split_windows, WindowPolicy};

/// Signed per-pixel event counts, one PFM per window.
pub fn write_event_frames(stream: &EventStream, geometry: &SensorGeometry, policy: WindowPolicy, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (k, window) in split_windows(stream, policy)?.iter().enumerate() {
        let frame = accumulate_frame(window, geometry)?;
        let path = dir.join(format!("events_{k:04}.pfm"));
        write_pfm(&frame.values.map(|&v| v as f32), &path)?;
        out.push(path);
    }
    Ok(out)
}

/// One bin of a voxel grid as an image.
pub fn voxel_bin(grid: &VoxelGrid<f32>, bin: usize) -> Grid<f32> {
    Grid::from_fn(grid.width(), grid.height(), |x, y| grid.get(bin, x, y))
}

/// Voxel grids, one PFM per window and bin (`voxel_KKKK_bB.pfm`).
pub fn write_voxel_grids(
    stream: &EventStream,
    geometry: &SensorGeometry,
    policy: WindowPolicy,
    bins: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (k, window) in split_windows(stream, policy)?.iter().enumerate() {
        let grid: VoxelGrid<f32> = encode_voxel_grid(window, geometry, bins)?;
        for b in 0..bins {
            let path = dir.join(format!("voxel_{k:04}_b{b}.pfm"));
            write_pfm(&voxel_bin(&grid, b), &path)?;
            out.push(path);
        }
    }
    Ok(out)
}
