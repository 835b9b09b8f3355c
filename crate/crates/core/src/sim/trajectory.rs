use std::io::{Read, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::camera::Pose;
use crate::error::{Error, Result};
use crate::events::parse_seconds_to_us;
use crate::image_io::content_lines;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPose {
    pub t_us: u64,
    /// World-to-camera.
    pub pose: Pose,
}

/// Piecewise-geodesic camera path through timestamped key poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    keys: Vec<TimedPose>,
}

impl Trajectory {
    /// Keys must be non-empty with non-decreasing timestamps.
    pub fn new(keys: Vec<TimedPose>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::DegenerateTrajectory("trajectory has no poses".into()));
        }
        if keys.windows(2).any(|w| w[1].t_us < w[0].t_us) {
            return Err(Error::DegenerateTrajectory("trajectory timestamps decrease".into()));
        }
        Ok(Self { keys })
    }

    pub fn stationary(pose: Pose) -> Self {
        Self {
            keys: vec![TimedPose { t_us: 0, pose }],
        }
    }

    pub fn keys(&self) -> &[TimedPose] {
        &self.keys
    }

    /// Pose at `t_us`, clamped to the first/last key outside the covered span.
    pub fn pose_at(&self, t_us: f64) -> Pose {
        let first = &self.keys[0];
        if t_us <= first.t_us as f64 {
            return first.pose;
        }
        for w in self.keys.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if t_us <= b.t_us as f64 {
                if b.t_us == a.t_us {
                    return b.pose;
                }
                let s = (t_us - a.t_us as f64) / (b.t_us - a.t_us) as f64;
                return a.pose.interpolate(&b.pose, s);
            }
        }
        self.keys[self.keys.len() - 1].pose
    }
}

/// Writes "t tx ty tz qx qy qz qw" lines: `t` in seconds, and the
/// camera-to-world transform (camera centre and orientation in the world).
pub fn write_trajectory<W: Write>(mut w: W, poses: &[TimedPose]) -> Result<()> {
    for tp in poses {
        let c2w = tp.pose.inverse();
        let q = c2w.rotation.quaternion();
        let t = c2w.translation;
        writeln!(
            w,
            "{}.{:06} {} {} {} {} {} {} {}",
            tp.t_us / 1_000_000,
            tp.t_us % 1_000_000,
            t.x,
            t.y,
            t.z,
            q.i,
            q.j,
            q.k,
            q.w
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Vec<TimedPose>> {
    let mut out = Vec::new();
    for (line, text) in content_lines(r)? {
        let malformed = |reason: &str| Error::MalformedLine {
            line,
            reason: reason.to_string(),
        };
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(malformed("expected 8 fields"));
        }
        let t_us = parse_seconds_to_us(toks[0]).ok_or_else(|| malformed("bad timestamp"))?;
        let v: Vec<f64> = toks[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| malformed("bad number"))?;
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        if q.norm() < 1e-12 {
            return Err(malformed("zero quaternion"));
        }
        let c2w = Pose::new(UnitQuaternion::from_quaternion(q), Vector3::new(v[0], v[1], v[2]));
        out.push(TimedPose {
            t_us,
            pose: c2w.inverse(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn trajectory_file_round_trip() {
        let poses = vec![
            TimedPose {
                t_us: 1_500_000,
                pose: Pose::look_at(&Point3::new(1.0, 2.0, 3.0), &Point3::origin(), &Vector3::z()),
            },
            TimedPose {
                t_us: 1_600_001,
                pose: Pose::identity(),
            },
        ];
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &poses).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in poses.iter().zip(&back) {
            assert_eq!(a.t_us, b.t_us);
            assert!(a.pose.rotation.angle_to(&b.pose.rotation) < 1e-12);
            assert!((a.pose.translation - b.pose.translation).norm() < 1e-12);
        }
        // Camera centre is what the file stores as translation.
        let text = String::from_utf8(buf).unwrap();
        let fields: Vec<f64> = text.lines().next().unwrap().split(' ').map(|t| t.parse().unwrap()).collect();
        assert_eq!(fields[0], 1.5);
        assert!((fields[1] - 1.0).abs() < 1e-12 && (fields[2] - 2.0).abs() < 1e-12 && (fields[3] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn interpolates_between_keys() {
        let a = Pose::look_at(&Point3::new(0.0, 0.0, -5.0), &Point3::origin(), &Vector3::y());
        let b = Pose::look_at(&Point3::new(2.0, 0.0, -5.0), &Point3::new(2.0, 0.0, 0.0), &Vector3::y());
        let traj = Trajectory::new(vec![TimedPose { t_us: 0, pose: a }, TimedPose { t_us: 100, pose: b }]).unwrap();
        let mid = traj.pose_at(50.0);
        assert!((mid.center() - Point3::new(1.0, 0.0, -5.0)).norm() < 1e-12);
        assert_eq!(traj.pose_at(-1.0), a);
        assert_eq!(traj.pose_at(1e9), b);
        assert!(Trajectory::new(vec![]).is_err());
    }
}
