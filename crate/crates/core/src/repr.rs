//! Fixed-size tensor representations of an event window.

use crate::error::Result;
use crate::events::{EventWindow, SensorGeometry};
use crate::grid::Grid;
use crate::scalar::Real;

/// Default number of temporal bins of a voxel grid.
pub const DEFAULT_VOXEL_BINS: usize = 5;

/// Per-pixel signed polarity sum of a window (the "event accumulator" image).
#[derive(Clone, Debug, PartialEq)]
pub struct EventFrame {
    pub values: Grid<i32>,
}

pub fn accumulate_frame(window: &EventWindow, geometry: &SensorGeometry) -> Result<EventFrame> {
    let mut values = Grid::filled(geometry.width as usize, geometry.height as usize, 0i32);
    for e in &window.events {
        geometry.check(i64::from(e.x), i64::from(e.y))?;
        *values.get_mut(e.x as usize, e.y as usize) += e.p.sign();
    }
    Ok(EventFrame { values })
}

/// `bins × height × width` tensor where every event splits its polarity
/// between the two temporally closest bins.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    bins: usize,
    width: usize,
    height: usize,
    span_us: u64,
    data: Vec<T>,
}

impl<T: Real> VoxelGrid<T> {
    pub fn zeros(bins: usize, width: usize, height: usize) -> Self {
        Self {
            bins,
            width,
            height,
            span_us: 0,
            data: vec![T::zero(); bins * width * height],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Time span `ΔT` of the source window in microseconds.
    pub fn span_us(&self) -> u64 {
        self.span_us
    }

    #[inline]
    pub fn get(&self, bin: usize, x: usize, y: usize) -> T {
        self.data[(bin * self.height + y) * self.width + x]
    }

    /// Flat `[bin][y][x]` buffer.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn total(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum over bins: the per-pixel polarity sum.
    pub fn collapse(&self) -> Grid<T> {
        let plane = self.width * self.height;
        let mut out = vec![T::zero(); plane];
        for bin in 0..self.bins {
            for (o, v) in out.iter_mut().zip(&self.data[bin * plane..(bin + 1) * plane]) {
                *o += *v;
            }
        }
        Grid::from_vec(self.width, self.height, out)
    }
}

/// Normalised timestamp `t* = (B-1)/ΔT · (t - t0)`; zero when `ΔT = 0`.
#[inline]
pub fn normalized_time<T: Real>(t: u64, t0: u64, span_us: u64, bins: usize) -> T {
    if span_us == 0 {
        return T::zero();
    }
    let scale = T::from_usize_lossy(bins - 1) / T::from_u64(span_us).unwrap();
    scale * T::from_u64(t - t0).unwrap()
}

/// Encodes a window as a voxel grid with linear temporal interpolation.
///
/// Each event adds `p · max(0, 1 - |n - t*|)` to bin `n` at its own pixel; at
/// most two bins receive non-zero weight and the weights sum to one.
pub fn encode_voxel_grid<T: Real>(
    window: &EventWindow,
    geometry: &SensorGeometry,
    bins: usize,
) -> Result<VoxelGrid<T>> {
    if bins == 0 {
        return Err(crate::Error::InvalidParameter("voxel grid needs at least one bin".into()));
    }
    let width = geometry.width as usize;
    let height = geometry.height as usize;
    let mut grid = VoxelGrid::zeros(bins, width, height);
    grid.span_us = window.span();
    let t0 = window.start();
    let plane = width * height;
    for e in &window.events {
        geometry.check(i64::from(e.x), i64::from(e.y))?;
        let pixel = e.y as usize * width + e.x as usize;
        let p = if e.p.sign() > 0 { T::one() } else { -T::one() };
        let t_star: T = normalized_time(e.t, t0, grid.span_us, bins);
        let lower = t_star.floor();
        let frac = t_star - lower;
        let n0 = lower.to_usize().unwrap_or(0).min(bins - 1);
        grid.data[n0 * plane + pixel] += p * (T::one() - frac);
        if frac > T::zero() && n0 + 1 < bins {
            grid.data[(n0 + 1) * plane + pixel] += p * frac;
        }
    }
    Ok(grid)
}
