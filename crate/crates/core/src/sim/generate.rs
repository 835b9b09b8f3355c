use super::render::LogIntensityFrame;
use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity};
use crate::scalar::Real;

pub const DEFAULT_CONTRAST_THRESHOLD: f64 = 0.1;

/// Guards level comparisons against rounding when a ramp ends exactly on a
/// threshold level (in units of the contrast threshold).
const LEVEL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulatorConfig<T> {
    /// Contrast threshold `C` in log-intensity units.
    pub contrast_threshold: T,
}

impl<T: Real> Default for SimulatorConfig<T> {
    fn default() -> Self {
        Self {
            contrast_threshold: T::lit(DEFAULT_CONTRAST_THRESHOLD),
        }
    }
}

impl<T: Real> SimulatorConfig<T> {
    pub fn new(contrast_threshold: T) -> Result<Self> {
        if !(contrast_threshold > T::zero()) {
            return Err(Error::InvalidParameter("contrast threshold must be positive".into()));
        }
        Ok(Self { contrast_threshold })
    }
}

/// Emits an event whenever a pixel's log intensity moves a full threshold
/// away from its reference level.
///
/// Log intensity is linearly interpolated between frames to place crossings.
/// Each pixel's reference starts at its first-frame value and moves by `±C`
/// per event, so reference levels are `L₀ + m·C` for the signed event count
/// `m`. Output is sorted by time; ties keep row-major pixel order.
pub fn generate_events<T: Real>(frames: &[LogIntensityFrame<T>], config: &SimulatorConfig<T>) -> Result<EventStream> {
    if frames.len() < 2 {
        return Err(Error::InvalidParameter("need at least two frames".into()));
    }
    let c = config.contrast_threshold;
    if !(c > T::zero()) {
        return Err(Error::InvalidParameter("contrast threshold must be positive".into()));
    }
    let (w, h) = (frames[0].values.width(), frames[0].values.height());
    if frames.iter().any(|f| f.values.width() != w || f.values.height() != h) {
        return Err(Error::InvalidParameter("frames differ in size".into()));
    }
    if frames.windows(2).any(|p| p[1].t_us <= p[0].t_us) {
        return Err(Error::InvalidParameter("frame timestamps must increase".into()));
    }
    let tol = T::lit(LEVEL_TOLERANCE);
    let anchor = frames[0].values.data();
    let mut counts = vec![0i64; w * h];
    let mut events = Vec::new();
    let mut interval = Vec::new();
    for pair in frames.windows(2) {
        let (f0, f1) = (&pair[0], &pair[1]);
        let dt = T::from_u64(f1.t_us - f0.t_us).unwrap();
        interval.clear();
        for (i, (&l0, &l1)) in f0.values.data().iter().zip(f1.values.data()).enumerate() {
            if l1 == l0 {
                continue;
            }
            let q1 = (l1 - anchor[i]) / c;
            let m = &mut counts[i];
            let (x, y) = ((i % w) as u16, (i / w) as u16);
            let crossing = |level: i64| -> u64 {
                let target = anchor[i] + T::from_i64(level).unwrap() * c;
                let frac = ((target - l0) / (l1 - l0)).max(T::zero()).min(T::one());
                f0.t_us + (frac * dt).round().to_u64().unwrap_or(0)
            };
            while q1 + tol >= T::from_i64(*m + 1).unwrap() {
                *m += 1;
                interval.push(Event::new(crossing(*m), x, y, Polarity::Positive));
            }
            while q1 - tol <= T::from_i64(*m - 1).unwrap() {
                *m -= 1;
                interval.push(Event::new(crossing(*m), x, y, Polarity::Negative));
            }
        }
        // Stable: equal timestamps keep pixel order, and per-pixel order is
        // already chronological.
        interval.sort_by_key(|e| e.t);
        events.extend_from_slice(&interval);
    }
    Ok(EventStream::new(events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn frame(values: Vec<f64>, w: usize, t_us: u64) -> LogIntensityFrame<f64> {
        let h = values.len() / w;
        LogIntensityFrame {
            values: Grid::from_vec(w, h, values),
            t_us,
        }
    }

    fn config() -> SimulatorConfig<f64> {
        SimulatorConfig::default()
    }

    #[test]
    fn constant_brightness_gives_no_events() {
        let frames = vec![frame(vec![0.3; 4], 2, 0), frame(vec![0.3; 4], 2, 10), frame(vec![0.3; 4], 2, 20)];
        assert!(generate_events(&frames, &config()).unwrap().is_empty());
    }

    #[test]
    fn ramp_of_three_thresholds() {
        let c = 0.1;
        let frames = vec![frame(vec![-1.0, 0.0], 2, 0), frame(vec![-1.0 + 3.0 * c, 0.0], 2, 300)];
        let s = generate_events(&frames, &config()).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|e| e.p == Polarity::Positive && (e.x, e.y) == (0, 0)));
        let ts: Vec<u64> = s.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![100, 200, 300]);
    }

    #[test]
    fn negative_ramp_floors_magnitude() {
        let frames = vec![frame(vec![0.5], 1, 0), frame(vec![0.5 - 2.5 * 0.1], 1, 1000)];
        let s = generate_events(&frames, &config()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|e| e.p == Polarity::Negative));
        assert_eq!(s.events[0].t, 400);
        assert_eq!(s.events[1].t, 800);
    }

    #[test]
    fn reversal_respects_reference_hysteresis() {
        // Up 0.25 (two events, reference 0.2), back to 0.15: still within C of
        // the reference, so no negative event; then down to 0.05 -> one.
        let frames = vec![
            frame(vec![0.0], 1, 0),
            frame(vec![0.25], 1, 10),
            frame(vec![0.15], 1, 20),
            frame(vec![0.05], 1, 30),
        ];
        let s = generate_events(&frames, &config()).unwrap();
        let signs: Vec<i32> = s.iter().map(|e| e.p.sign()).collect();
        assert_eq!(signs, vec![1, 1, -1]);
    }

    #[test]
    fn output_is_time_sorted_across_pixels() {
        let frames = vec![frame(vec![0.0, 0.0], 2, 0), frame(vec![0.35, 0.15], 2, 100)];
        let s = generate_events(&frames, &config()).unwrap();
        assert!(s.events.windows(2).all(|w| w[0].t <= w[1].t));
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(generate_events::<f64>(&[frame(vec![0.0], 1, 0)], &config()).is_err());
        let frames = vec![frame(vec![0.0], 1, 10), frame(vec![0.0], 1, 10)];
        assert!(generate_events(&frames, &config()).is_err());
        assert!(SimulatorConfig::new(0.0f64).is_err());
    }
}
