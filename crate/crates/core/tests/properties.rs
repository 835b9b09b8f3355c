use evrecon_core::events::{window_by_count, window_by_duration, Event, EventStream, EventWindow, Polarity, SensorGeometry};
use evrecon_core::grid::Grid;
use evrecon_core::recon::{init_state, normalize_image, reconstruct_window, IntegratorConfig, Percentiles};
use evrecon_core::repr::{accumulate_frame, encode_voxel_grid, VoxelGrid};
use evrecon_core::sim::{generate_events, LogIntensityFrame, SimulatorConfig};
use proptest::prelude::*;

/// Literal triple loop over (bin, pixel, event) of the interpolation formula.
fn brute_force_voxels(window: &EventWindow, w: usize, h: usize, bins: usize) -> Vec<f64> {
    let t0 = window.events[0].t as f64;
    let span = (window.events[window.events.len() - 1].t - window.events[0].t) as f64;
    let mut out = vec![0.0; bins * w * h];
    for n in 0..bins {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for e in &window.events {
                    if e.x as usize != x || e.y as usize != y {
                        continue;
                    }
                    let t_star = if span == 0.0 {
                        0.0
                    } else {
                        (bins as f64 - 1.0) / span * (e.t as f64 - t0)
                    };
                    acc += f64::from(e.p.sign()) * (1.0 - (n as f64 - t_star).abs()).max(0.0);
                }
                out[(n * h + y) * w + x] = acc;
            }
        }
    }
    out
}

fn arb_window(w: u16, h: u16, max_len: usize) -> impl Strategy<Value = EventWindow> {
    prop::collection::vec((0u64..5_000, 0..w, 0..h, any::<bool>()), 1..=max_len).prop_map(|mut raw| {
        raw.sort_by_key(|r| r.0);
        let events = raw
            .into_iter()
            .map(|(t, x, y, p)| Event::new(t, x, y, if p { Polarity::Positive } else { Polarity::Negative }))
            .collect();
        EventWindow::new(0, events).unwrap()
    })
}

proptest! {
    #[test]
    fn voxel_grid_matches_brute_force(window in arb_window(8, 8, 100), bins in 1usize..8) {
        let g = SensorGeometry::new(8, 8).unwrap();
        let v: VoxelGrid<f64> = encode_voxel_grid(&window, &g, bins).unwrap();
        let oracle = brute_force_voxels(&window, 8, 8, bins);
        for (a, b) in v.data().iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        let polarity_sum: i32 = window.events.iter().map(|e| e.p.sign()).sum();
        prop_assert!((v.total() - f64::from(polarity_sum)).abs() <= 1e-9 * window.len() as f64);
    }

    #[test]
    fn voxel_magnitude_bounded_by_pixel_count(window in arb_window(4, 4, 60)) {
        let g = SensorGeometry::new(4, 4).unwrap();
        let v: VoxelGrid<f32> = encode_voxel_grid(&window, &g, 5).unwrap();
        let mut counts = [0usize; 16];
        for e in &window.events {
            counts[e.y as usize * 4 + e.x as usize] += 1;
        }
        for bin in 0..5 {
            for y in 0..4 {
                for x in 0..4 {
                    prop_assert!(v.get(bin, x, y).abs() <= counts[y * 4 + x] as f32 + 1e-5);
                }
            }
        }
    }

    #[test]
    fn frame_equals_voxels_summed_over_bins(window in arb_window(6, 5, 80)) {
        let g = SensorGeometry::new(6, 5).unwrap();
        let frame = accumulate_frame(&window, &g).unwrap();
        let collapsed = encode_voxel_grid::<f64>(&window, &g, 5).unwrap().collapse();
        for (a, b) in frame.values.data().iter().zip(collapsed.data()) {
            prop_assert!((f64::from(*a) - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn count_windows_partition_prefix(len in 0usize..200, n in 1usize..30) {
        let stream = EventStream::new((0..len as u64).map(|t| Event::new(t, 0, 0, Polarity::Positive)).collect());
        let windows = window_by_count(&stream, n).unwrap();
        let flat: Vec<Event> = windows.iter().flat_map(|w| w.events.iter().copied()).collect();
        prop_assert_eq!(flat.as_slice(), &stream.events[..n * (len / n)]);
        prop_assert!(windows.iter().all(|w| w.len() == n));
    }

    #[test]
    fn duration_windows_disjoint_and_ordered(mut ts in prop::collection::vec(0u64..10_000, 0..200), dt in 1u64..2_000) {
        ts.sort_unstable();
        let stream = EventStream::new(ts.iter().map(|&t| Event::new(t, 0, 0, Polarity::Positive)).collect());
        let windows = window_by_duration(&stream, dt).unwrap();
        let total: usize = windows.iter().map(|w| w.len()).sum();
        prop_assert_eq!(total, ts.len());
        for pair in windows.windows(2) {
            prop_assert!(pair[0].end() < pair[1].start());
        }
        if let Some(first) = ts.first() {
            for w in &windows {
                let bin = (w.start() - first) / dt;
                prop_assert!(w.events.iter().all(|e| (e.t - first) / dt == bin));
            }
        }
    }

    #[test]
    fn normalization_is_monotone(values in prop::collection::vec(-50.0f64..50.0, 2..64)) {
        let n = values.len();
        let g = Grid::from_vec(n, 1, values.clone());
        let out = normalize_image(&g, Percentiles::default());
        for i in 0..n {
            prop_assert!((0.0..=1.0).contains(&out.data()[i]));
            for j in 0..n {
                if values[i] <= values[j] {
                    prop_assert!(out.data()[i] <= out.data()[j]);
                }
            }
        }
    }

    /// Per-pixel log ramps: event count is the floor of |ΔL|/C and the signed
    /// count reproduces ΔL within one threshold; polarity follows the ramp.
    #[test]
    fn simulator_round_trip(deltas in prop::collection::vec(-2.0f64..2.0, 1..20), steps in 2usize..6) {
        let c = 0.1;
        let w = deltas.len();
        let frames: Vec<LogIntensityFrame<f64>> = (0..steps)
            .map(|k| {
                let s = k as f64 / (steps - 1) as f64;
                LogIntensityFrame { values: Grid::from_vec(w, 1, deltas.iter().map(|d| -0.7 + s * d).collect()), t_us: k as u64 * 1000 }
            })
            .collect();
        let stream = generate_events(&frames, &SimulatorConfig { contrast_threshold: c }).unwrap();
        for (x, d) in deltas.iter().enumerate() {
            let pixel: Vec<&Event> = stream.iter().filter(|e| e.x as usize == x).collect();
            prop_assert_eq!(pixel.len() as f64, (d.abs() / c).floor());
            let signed: i32 = pixel.iter().map(|e| e.p.sign()).sum();
            prop_assert!((f64::from(signed) * c - d).abs() < c);
            prop_assert!(pixel.iter().all(|e| e.p.sign() as f64 * d > 0.0));
        }
    }
}

#[test]
fn integrator_without_decay_counts_events_exactly() {
    let g = SensorGeometry::new(16, 8).unwrap();
    let frames: Vec<LogIntensityFrame<f64>> = (0..6)
        .map(|k| LogIntensityFrame {
            values: Grid::from_fn(16, 8, |x, y| ((x as f64 * 0.37 + y as f64 * 0.11 + k as f64 * 0.5).sin()) * 1.3),
            t_us: k * 10_000,
        })
        .collect();
    let stream = generate_events(&frames, &SimulatorConfig::default()).unwrap();
    let windows = window_by_count(&stream, 50).unwrap();
    let config = IntegratorConfig {
        decay_per_s: 0.0,
        ..IntegratorConfig::default()
    };
    let mut state = init_state::<f64>(&g);
    let mut counts = vec![0i64; 128];
    for w in &windows {
        let (_, next) = reconstruct_window(w, &state, &config).unwrap();
        for e in &w.events {
            counts[e.y as usize * 16 + e.x as usize] += i64::from(e.p.sign());
        }
        for (v, c) in next.log_surface().data().iter().zip(&counts) {
            assert!((v - 0.1 * *c as f64).abs() <= 1e-9);
        }
        state = next;
    }
}
