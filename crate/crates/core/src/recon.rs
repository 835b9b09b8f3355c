//! Intensity reconstruction from event windows.
//!
//! The reconstructor follows a recurrent contract: a window and the previous
//! state produce a normalised image and a new state. The built-in
//! reconstructor is a per-pixel leaky integrator of log intensity;
//! [`load_external_frames`] lets frames produced elsewhere (for example by a
//! learned reconstructor) enter the pipeline instead.

use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{parse_seconds_to_us, EventWindow, SensorGeometry};
use crate::grid::Grid;
use crate::image_io::{content_lines, read_image};
use crate::scalar::Real;

/// Normalised image in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityImage<T> {
    pub values: Grid<T>,
    /// Sequence index.
    pub k: usize,
    /// Representative timestamp: midpoint of the source window.
    pub t_mid: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Percentiles {
    /// Fraction in `[0, 1]` mapped to 0.
    pub low: f64,
    /// Fraction in `[0, 1]` mapped to 1.
    pub high: f64,
}

impl Default for Percentiles {
    fn default() -> Self {
        Self { low: 0.01, high: 0.99 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig<T> {
    /// Log-intensity step per event.
    pub contrast: T,
    /// Exponential decay rate toward the spatial mean, per second.
    pub decay_per_s: T,
    pub percentiles: Percentiles,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            contrast: T::lit(0.1),
            decay_per_s: T::lit(0.1),
            percentiles: Percentiles::default(),
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast > T::zero()) || !(self.decay_per_s >= T::zero()) {
            return Err(Error::InvalidParameter("integrator needs C > 0 and decay >= 0".into()));
        }
        let p = self.percentiles;
        if !(0.0..=1.0).contains(&p.low) || !(0.0..=1.0).contains(&p.high) || p.low > p.high {
            return Err(Error::InvalidParameter(format!("percentiles {p:?}")));
        }
        Ok(())
    }
}

/// Recurrent reconstructor state.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconState<T> {
    log: Grid<T>,
    last_update: Vec<u64>,
    time_us: u64,
    /// Low/high percentile values of the most recent output.
    bounds: Option<(T, T)>,
}

impl<T: Real> ReconState<T> {
    pub fn log_surface(&self) -> &Grid<T> {
        &self.log
    }

    pub fn time_us(&self) -> u64 {
        self.time_us
    }

    pub fn last_update(&self) -> &[u64] {
        &self.last_update
    }

    pub fn bounds(&self) -> Option<(T, T)> {
        self.bounds
    }
}

pub fn init_state<T: Real>(geometry: &SensorGeometry) -> ReconState<T> {
    let (w, h) = (geometry.width as usize, geometry.height as usize);
    ReconState {
        log: Grid::filled(w, h, T::zero()),
        last_update: vec![0; w * h],
        time_us: 0,
        bounds: None,
    }
}

/// Value at fraction `p` of the sorted values, using the nearest index
/// `round(p · (n - 1))`.
pub fn percentile_value<T: Real>(sorted: &[T], p: f64) -> T {
    let idx = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

pub fn percentile_bounds<T: Real>(surface: &Grid<T>, percentiles: Percentiles) -> (T, T) {
    let mut sorted = surface.data().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    (
        percentile_value(&sorted, percentiles.low),
        percentile_value(&sorted, percentiles.high),
    )
}

/// Affine map sending the low percentile to 0 and the high percentile to 1,
/// clamped. When the two percentiles coincide, values equal to them map to
/// 0.5 (and values outside clamp to 0 or 1).
pub fn normalize_image<T: Real>(surface: &Grid<T>, percentiles: Percentiles) -> Grid<T> {
    if surface.is_empty() {
        return surface.clone();
    }
    let (lo, hi) = percentile_bounds(surface, percentiles);
    normalize_with_bounds(surface, lo, hi)
}

fn normalize_with_bounds<T: Real>(surface: &Grid<T>, lo: T, hi: T) -> Grid<T> {
    let half = T::lit(0.5);
    if hi > lo {
        let scale = T::one() / (hi - lo);
        surface.map(|&v| ((v - lo) * scale).max(T::zero()).min(T::one()))
    } else {
        surface.map(|&v| {
            if v < lo {
                T::zero()
            } else if v > hi {
                T::one()
            } else {
                half
            }
        })
    }
}

#[inline]
fn decay_toward(v: f64, mean: f64, factor: f64) -> f64 {
    mean + (v - mean) * factor
}

/// Integrates one window into a copy of `state`.
///
/// Each event first decays its pixel toward the current spatial mean by
/// `exp(-λ·Δt)` (Δt since that pixel's last update) and then adds `p·C`. With
/// `λ > 0` every pixel is finally decayed to the window's end time.
pub fn reconstruct_window<T: Real>(
    window: &EventWindow,
    state: &ReconState<T>,
    config: &IntegratorConfig<T>,
) -> Result<(IntensityImage<T>, ReconState<T>)> {
    config.validate()?;
    if window.start() < state.time_us {
        return Err(Error::OutOfOrderWindow {
            window: window.index,
            start: window.start(),
            state_time: state.time_us,
        });
    }
    let mut next = state.clone();
    let w = next.log.width();
    let n = next.log.len();
    let lambda = config.decay_per_s.to_f64_lossy();
    let decaying = lambda > 0.0;
    let mut sum: f64 = next.log.data().iter().map(|v| v.to_f64_lossy()).sum();
    let inv_n = 1.0 / n as f64;
    for e in &window.events {
        let i = e.y as usize * w + e.x as usize;
        if i >= n || e.x as usize >= w {
            return Err(Error::CoordinateOutOfRange {
                x: i64::from(e.x),
                y: i64::from(e.y),
                width: w as u32,
                height: next.log.height() as u32,
            });
        }
        let v = &mut next.log.data_mut()[i];
        let before = v.to_f64_lossy();
        if decaying {
            let dt_s = (e.t - next.last_update[i]) as f64 * 1e-6;
            let decayed = decay_toward(before, sum * inv_n, (-lambda * dt_s).exp());
            *v = T::lit(decayed);
        }
        if e.p.sign() > 0 {
            *v += config.contrast;
        } else {
            *v -= config.contrast;
        }
        sum += v.to_f64_lossy() - before;
        next.last_update[i] = e.t;
    }
    let end = window.end();
    if decaying {
        let mean = sum * inv_n;
        for (v, last) in next.log.data_mut().iter_mut().zip(next.last_update.iter_mut()) {
            let dt_s = (end - *last) as f64 * 1e-6;
            *v = T::lit(decay_toward(v.to_f64_lossy(), mean, (-lambda * dt_s).exp()));
            *last = end;
        }
    }
    next.time_us = end;
    let (lo, hi) = percentile_bounds(&next.log, config.percentiles);
    next.bounds = Some((lo, hi));
    let image = IntensityImage {
        values: normalize_with_bounds(&next.log, lo, hi),
        k: window.index,
        t_mid: window.midpoint(),
    };
    Ok((image, next))
}

/// Runs the integrator over consecutive windows from a fresh state.
pub fn reconstruct_all<T: Real>(
    windows: &[EventWindow],
    geometry: &SensorGeometry,
    config: &IntegratorConfig<T>,
) -> Result<Vec<IntensityImage<T>>> {
    let mut state = init_state(geometry);
    let mut out = Vec::with_capacity(windows.len());
    for (k, window) in windows.iter().enumerate() {
        let (mut image, next) = reconstruct_window(window, &state, config)?;
        image.k = k;
        out.push(image);
        state = next;
    }
    Ok(out)
}

/// Loads externally reconstructed frames listed in a manifest of
/// "t path" lines (t in decimal seconds, paths relative to the manifest).
/// PGM samples are divided by maxval; PFM values are clamped to `[0, 1]`.
pub fn load_external_frames<T: Real>(manifest: &Path) -> Result<Vec<IntensityImage<T>>> {
    if !manifest.exists() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let lines = content_lines(std::fs::File::open(manifest)?)?;
    let mut out: Vec<IntensityImage<T>> = Vec::with_capacity(lines.len());
    let mut last_t = None;
    for (line, text) in lines {
        let (t_tok, path_tok) = text.split_once(char::is_whitespace).ok_or_else(|| Error::MalformedLine {
            line,
            reason: "expected \"t path\"".into(),
        })?;
        let t = parse_seconds_to_us(t_tok).ok_or_else(|| Error::MalformedLine {
            line,
            reason: format!("bad timestamp {t_tok:?}"),
        })?;
        if last_t.is_some_and(|l| t <= l) {
            return Err(Error::NonMonotoneManifest { line });
        }
        last_t = Some(t);
        let path = base.join(path_tok.trim());
        let values: Grid<T> = read_image(&path)?;
        let values = values.map(|v| v.max(T::zero()).min(T::one()));
        if let Some(first) = out.first() {
            if first.values.width() != values.width() || first.values.height() != values.height() {
                return Err(Error::InvalidParameter(format!(
                    "{} has a different size from the first frame",
                    path.display()
                )));
            }
        }
        out.push(IntensityImage {
            values,
            k: out.len(),
            t_mid: t,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, Polarity};
    use crate::image_io::write_pgm;

    fn geom(w: u32, h: u32) -> SensorGeometry {
        SensorGeometry::new(w, h).unwrap()
    }

    fn no_decay() -> IntegratorConfig<f64> {
        IntegratorConfig {
            decay_per_s: 0.0,
            ..IntegratorConfig::default()
        }
    }

    #[test]
    fn fresh_state_is_zero_and_deterministic() {
        let a: ReconState<f64> = init_state(&geom(4, 4));
        let b: ReconState<f64> = init_state(&geom(4, 4));
        assert_eq!(a, b);
        assert_eq!(a.log_surface().width(), 4);
        assert!(a.log_surface().data().iter().all(|&v| v == 0.0));
        let normalized = normalize_image(a.log_surface(), Percentiles::default());
        assert!(normalized.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn normalize_endpoints() {
        let g = Grid::from_vec(2, 1, vec![0.0, 1.0]);
        let n = normalize_image(&g, Percentiles { low: 0.0, high: 1.0 });
        assert_eq!(n.data(), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_hundred_values() {
        let g = Grid::from_vec(100, 1, (0..100).map(f64::from).collect());
        let n = normalize_image(&g, Percentiles::default());
        assert_eq!(n.at(1, 0), 0.0);
        assert_eq!(n.at(98, 0), 1.0);
        assert_eq!(n.at(0, 0), 0.0);
        assert_eq!(n.at(99, 0), 1.0);
        assert!((n.at(50, 0) - 49.0 / 97.0).abs() < 1e-15);
    }

    #[test]
    fn single_event_is_brightest_pixel() {
        let window = EventWindow::new(0, vec![Event::new(10, 2, 1, Polarity::Positive)]).unwrap();
        for g in [geom(4, 4), geom(64, 48)] {
            let (img, state) = reconstruct_window(&window, &init_state::<f64>(&g), &no_decay()).unwrap();
            let v = img.values.at(2, 1);
            for (i, &o) in img.values.data().iter().enumerate() {
                if i != img.values.index_of(2, 1) {
                    assert!(v > o);
                }
            }
            assert_eq!(state.log_surface().at(2, 1), 0.1);
            assert_eq!(state.log_surface().at(0, 0), 0.0);
        }
    }

    #[test]
    fn input_state_is_not_mutated_and_calls_are_pure() {
        let g = geom(3, 3);
        let window = EventWindow::new(
            0,
            vec![
                Event::new(10, 0, 0, Polarity::Positive),
                Event::new(20_000, 1, 1, Polarity::Negative),
            ],
        )
        .unwrap();
        let state: ReconState<f32> = init_state(&g);
        let config = IntegratorConfig::default();
        let a = reconstruct_window(&window, &state, &config).unwrap();
        let b = reconstruct_window(&window, &state, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(state, init_state(&g));
    }

    #[test]
    fn out_of_order_window_is_rejected() {
        let g = geom(2, 2);
        let late = EventWindow::new(0, vec![Event::new(100, 0, 0, Polarity::Positive)]).unwrap();
        let early = EventWindow::new(1, vec![Event::new(50, 0, 0, Polarity::Positive)]).unwrap();
        let (_, s) = reconstruct_window(&late, &init_state::<f64>(&g), &no_decay()).unwrap();
        assert!(matches!(
            reconstruct_window(&early, &s, &no_decay()),
            Err(Error::OutOfOrderWindow { start: 50, state_time: 100, .. })
        ));
    }

    #[test]
    fn decay_pulls_toward_mean() {
        let g = geom(2, 1);
        let config = IntegratorConfig {
            decay_per_s: 1.0,
            ..IntegratorConfig::default()
        };
        let w0 = EventWindow::new(0, vec![Event::new(0, 0, 0, Polarity::Positive)]).unwrap();
        let (_, s) = reconstruct_window(&w0, &init_state::<f64>(&g), &config).unwrap();
        let w1 = EventWindow::new(1, vec![Event::new(1_000_000, 1, 0, Polarity::Positive)]).unwrap();
        let (_, s) = reconstruct_window(&w1, &s, &config).unwrap();
        let log = s.log_surface();
        // Pixel 1 decays toward the mean 0.05 before its step; pixel 0 then
        // decays toward the updated mean over the same second.
        let f = (-1.0f64).exp();
        let p1 = 0.05 - 0.05 * f + 0.1;
        let mean = (0.1 + p1) / 2.0;
        let expected = mean + (0.1 - mean) * f;
        assert!((log.at(1, 0) - p1).abs() < 1e-12);
        assert!((log.at(0, 0) - expected).abs() < 1e-12, "{}", log.at(0, 0));
        assert!(s.last_update().iter().all(|&t| t == 1_000_000));
    }

    #[test]
    fn external_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for (i, v) in [0.0, 0.5, 1.0].iter().enumerate() {
            write_pgm(&Grid::filled(4, 3, *v), &dir.path().join(format!("f{i}.pgm"))).unwrap();
        }
        let manifest = dir.path().join("frames.txt");
        std::fs::write(&manifest, "0.1 f0.pgm\n0.2 f1.pgm\n# comment\n0.3 f2.pgm\n").unwrap();
        let frames: Vec<IntensityImage<f64>> = load_external_frames(&manifest).unwrap();
        assert_eq!(frames.iter().map(|f| f.k).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(frames[1].values.at(0, 0), 128.0 / 255.0);
        assert_eq!(frames[2].t_mid, 300_000);

        std::fs::write(&manifest, "0.2 f0.pgm\n0.1 f1.pgm\n").unwrap();
        assert!(matches!(
            load_external_frames::<f64>(&manifest),
            Err(Error::NonMonotoneManifest { line: 2 })
        ));
        std::fs::write(&manifest, "0.2 missing.pgm\n").unwrap();
        assert!(matches!(load_external_frames::<f64>(&manifest), Err(Error::MissingFile(_))));
        std::fs::write(dir.path().join("x.png"), b"\x89PNG....").unwrap();
        std::fs::write(&manifest, "0.2 x.png\n").unwrap();
        assert!(matches!(
            load_external_frames::<f64>(&manifest),
            Err(Error::UnsupportedImageFormat(_))
        ));
    }
}
