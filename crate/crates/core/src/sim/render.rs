use super::scene::SyntheticScene;
use super::trajectory::TimedPose;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

/// Additive floor inside the logarithm, `L = ln(I + ε)`.
pub const LOG_EPSILON: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct LogIntensityFrame<T> {
    pub values: Grid<T>,
    pub t_us: u64,
}

impl<T: Real> LogIntensityFrame<T> {
    pub fn from_intensity(intensity: &Grid<T>, t_us: u64) -> Self {
        let eps = T::lit(LOG_EPSILON);
        Self {
            values: intensity.map(|&v| (v + eps).ln()),
            t_us,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenderedSequence<T> {
    pub frames: Vec<LogIntensityFrame<T>>,
    pub poses: Vec<TimedPose>,
    /// Camera z-depth per pixel, 0 where no surface is hit.
    pub depths: Vec<Grid<f32>>,
}

/// Renders `frame_count` frames at `frame_rate` Hz starting at t = 0.
pub fn render_sequence<T: Real>(
    scene: &SyntheticScene,
    frame_count: usize,
    frame_rate: f64,
) -> Result<RenderedSequence<T>> {
    if frame_count < 2 {
        return Err(Error::InvalidParameter("need at least two frames".into()));
    }
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::InvalidParameter(format!("frame rate {frame_rate}")));
    }
    let (w, h) = (scene.geometry.width as usize, scene.geometry.height as usize);
    let mut frames = Vec::with_capacity(frame_count);
    let mut poses = Vec::with_capacity(frame_count);
    let mut depths = Vec::with_capacity(frame_count);
    let mut last_t = None;
    for k in 0..frame_count {
        let t_us = (k as f64 * 1e6 / frame_rate).round() as u64;
        if last_t.is_some_and(|l| l >= t_us) {
            return Err(Error::InvalidParameter("frame rate too high for microsecond timestamps".into()));
        }
        last_t = Some(t_us);
        let pose = scene.trajectory.pose_at(t_us as f64);
        scene.check_pose(&pose)?;
        let gain = scene.gain_at(t_us as f64);
        let mut intensity = Vec::with_capacity(w * h);
        let mut depth = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (i, d) = scene.shade(&pose, x as f64, y as f64, gain);
                intensity.push(T::lit(i));
                depth.push(d as f32);
            }
        }
        frames.push(LogIntensityFrame::from_intensity(&Grid::from_vec(w, h, intensity), t_us));
        poses.push(TimedPose { t_us, pose });
        depths.push(Grid::from_vec(w, h, depth));
    }
    Ok(RenderedSequence { frames, poses, depths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::events::SensorGeometry;
    use crate::sim::{Surface, TimedPose, Trajectory};
    use nalgebra::{Point3, Vector3};

    fn plane_scene() -> SyntheticScene {
        SyntheticScene::fronto_parallel_plane(SensorGeometry::new(32, 24).unwrap(), 30.0, 5.0, 9)
    }

    #[test]
    fn static_scene_frames_identical() {
        let seq: RenderedSequence<f64> = render_sequence(&plane_scene(), 3, 30.0).unwrap();
        assert_eq!(seq.frames[0].values, seq.frames[1].values);
        assert_eq!(seq.frames[1].values, seq.frames[2].values);
        assert_eq!(seq.frames[2].t_us, 66_667);
    }

    #[test]
    fn two_frames_two_poses() {
        let seq: RenderedSequence<f32> = render_sequence(&plane_scene(), 2, 10.0).unwrap();
        assert_eq!(seq.frames.len(), 2);
        assert_eq!(seq.poses.len(), 2);
        assert_eq!(seq.poses[1].t_us, seq.frames[1].t_us);
        assert!(render_sequence::<f32>(&plane_scene(), 1, 10.0).is_err());
    }

    #[test]
    fn translating_fronto_parallel_depth_is_constant() {
        let mut scene = plane_scene();
        let start = Pose::identity();
        let end = Pose::new(start.rotation, Vector3::new(-0.1 * 9.0, 0.0, 0.0));
        scene.trajectory = Trajectory::new(vec![
            TimedPose { t_us: 0, pose: start },
            TimedPose { t_us: 900_000, pose: end },
        ])
        .unwrap();
        let seq: RenderedSequence<f64> = render_sequence(&scene, 10, 10.0).unwrap();
        for (k, d) in seq.depths.iter().enumerate() {
            assert!((seq.poses[k].pose.center().x - 0.1 * k as f64).abs() < 1e-9);
            assert!(d.data().iter().all(|&z| (z - 5.0).abs() < 1e-5), "frame {k}");
        }
    }

    #[test]
    fn camera_inside_box_is_degenerate() {
        let mut scene = plane_scene();
        scene.surfaces = vec![Surface::AxisAlignedBox {
            min: Point3::new(-1.0, -1.0, -1.0),
            max: Point3::new(1.0, 1.0, 1.0),
        }];
        let err = render_sequence::<f64>(&scene, 2, 10.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateTrajectory(_)));
    }
}
