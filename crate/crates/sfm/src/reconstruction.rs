//! Sparse model state and its text export.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use evrecon_core::ply::PointCloud;
use evrecon_core::{CameraIntrinsics, Pose};
use nalgebra::{Point2, Point3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Result, SfmError};
use crate::geometry::triangulation::pairwise_angle_range;
use crate::projection::project;

/// Intrinsics together with the image size they apply to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Point3D {
    pub position: Point3<f64>,
    /// `(image, feature)` measurements, sorted by image.
    pub observations: Vec<(usize, usize)>,
    /// Mean reprojection error in pixels.
    pub error: f64,
    /// Scene-graph track this point was triangulated from.
    pub track: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub cameras: Vec<CameraModel>,
    pub image_camera: Vec<usize>,
    pub image_names: Vec<String>,
    /// Feature locations per image, indexed by feature id.
    pub keypoints: Vec<Vec<Point2<f64>>>,
    pub poses: Vec<Option<Pose>>,
    pub points: BTreeMap<usize, Point3D>,
    /// Images whose pose (first) and baseline (second) fix the gauge.
    pub gauge: Option<(usize, usize)>,
    next_point_id: usize,
    track_to_point: HashMap<usize, usize>,
}

impl Reconstruction {
    /// Empty model sharing one camera across all images.
    pub fn new(camera: CameraModel, keypoints: Vec<Vec<Point2<f64>>>) -> Self {
        let n = keypoints.len();
        Self {
            cameras: vec![camera],
            image_camera: vec![0; n],
            image_names: (0..n).map(|i| format!("image_{i:04}")).collect(),
            keypoints,
            poses: vec![None; n],
            points: BTreeMap::new(),
            gauge: None,
            next_point_id: 0,
            track_to_point: HashMap::new(),
        }
    }

    pub fn num_images(&self) -> usize {
        self.keypoints.len()
    }

    pub fn intrinsics(&self, image: usize) -> &CameraIntrinsics {
        &self.cameras[self.image_camera[image]].intrinsics
    }

    pub fn pose(&self, image: usize) -> Option<&Pose> {
        self.poses.get(image).and_then(|p| p.as_ref())
    }

    pub fn is_registered(&self, image: usize) -> bool {
        self.pose(image).is_some()
    }

    pub fn registered_images(&self) -> Vec<usize> {
        (0..self.num_images()).filter(|&i| self.is_registered(i)).collect()
    }

    pub fn pixel(&self, image: usize, feature: usize) -> Point2<f64> {
        self.keypoints[image][feature]
    }

    pub fn point_of_track(&self, track: usize) -> Option<usize> {
        self.track_to_point.get(&track).copied()
    }

    pub fn add_point(&mut self, position: Point3<f64>, mut observations: Vec<(usize, usize)>, track: Option<usize>) -> usize {
        observations.sort_unstable();
        let id = self.next_point_id;
        self.next_point_id += 1;
        if let Some(t) = track {
            self.track_to_point.insert(t, id);
        }
        let mut p = Point3D {
            position,
            observations,
            error: 0.0,
            track,
        };
        p.error = self.mean_error(&p);
        self.points.insert(id, p);
        id
    }

    pub fn remove_point(&mut self, id: usize) -> Option<Point3D> {
        let p = self.points.remove(&id)?;
        if let Some(t) = p.track {
            self.track_to_point.remove(&t);
        }
        Some(p)
    }

    /// Pixel residual of one observation; `None` when the point is behind
    /// the camera or the image is unregistered.
    pub fn reprojection_error(&self, position: &Point3<f64>, image: usize, feature: usize) -> Option<f64> {
        let pose = self.pose(image)?;
        let q = project(self.intrinsics(image), pose, position)?;
        Some((q - self.pixel(image, feature)).norm())
    }

    pub fn mean_error(&self, p: &Point3D) -> f64 {
        if p.observations.is_empty() {
            return 0.0;
        }
        let sum: f64 = p
            .observations
            .iter()
            .map(|&(i, f)| self.reprojection_error(&p.position, i, f).unwrap_or(f64::INFINITY))
            .sum();
        sum / p.observations.len() as f64
    }

    pub fn refresh_errors(&mut self) {
        let errors: Vec<(usize, f64)> = self.points.iter().map(|(&id, p)| (id, self.mean_error(p))).collect();
        for (id, e) in errors {
            self.points.get_mut(&id).unwrap().error = e;
        }
    }

    pub fn num_observations(&self) -> usize {
        self.points.values().map(|p| p.observations.len()).sum()
    }

    /// Mean pixel error over all observations.
    pub fn mean_reprojection_error(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in self.points.values() {
            for &(i, f) in &p.observations {
                sum += self.reprojection_error(&p.position, i, f).unwrap_or(f64::INFINITY);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Minimum and maximum pairwise triangulation angles of a point, radians.
    pub fn angle_range(&self, p: &Point3D) -> (f64, f64) {
        let centers: Vec<Point3<f64>> = p.observations.iter().filter_map(|&(i, _)| self.pose(i).map(|q| q.center())).collect();
        pairwise_angle_range(&centers, &p.position)
    }

    /// True when every point is in front of every camera observing it.
    pub fn cheirality_holds(&self) -> bool {
        self.points.values().all(|p| {
            p.observations
                .iter()
                .all(|&(i, _)| self.pose(i).is_some_and(|pose| pose.transform(&p.position).z > 0.0))
        })
    }

    /// Shared point count between two images.
    pub fn covisibility(&self, a: usize, b: usize) -> usize {
        self.points
            .values()
            .filter(|p| p.observations.iter().any(|o| o.0 == a) && p.observations.iter().any(|o| o.0 == b))
            .count()
    }

    pub fn sparse_cloud(&self) -> PointCloud {
        PointCloud {
            positions: self
                .points
                .values()
                .map(|p| [p.position.x as f32, p.position.y as f32, p.position.z as f32])
                .collect(),
            colors: None,
            normals: None,
        }
    }
}

const CAMERA_MODEL_NAME: &str = "PINHOLE_RADIAL_K1";

/// Writes `cameras.txt`, `images.txt` and `points3D.txt` into `dir`.
pub fn write_text(recon: &Reconstruction, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut cams = String::from("# camera_id model width height fx fy cx cy k1\n");
    for (id, c) in recon.cameras.iter().enumerate() {
        let k = &c.intrinsics;
        writeln!(cams, "{id} {CAMERA_MODEL_NAME} {} {} {} {} {} {} {}", c.width, c.height, k.fx, k.fy, k.cx, k.cy, k.k1).unwrap();
    }
    std::fs::write(dir.join("cameras.txt"), cams)?;

    let mut feature_point: HashMap<(usize, usize), usize> = HashMap::new();
    for (&id, p) in &recon.points {
        for &o in &p.observations {
            feature_point.insert(o, id);
        }
    }
    let mut imgs = String::from(
        "# image_id qw qx qy qz tx ty tz camera_id name registered\n# then one line of keypoints: x y point_id (-1 when untriangulated)\n",
    );
    for i in 0..recon.num_images() {
        let (q, t, reg) = match recon.pose(i) {
            Some(p) => (*p.rotation.quaternion(), p.translation, 1),
            None => (Quaternion::identity(), Vector3::zeros(), 0),
        };
        writeln!(
            imgs,
            "{i} {} {} {} {} {} {} {} {} {} {reg}",
            q.w, q.i, q.j, q.k, t.x, t.y, t.z, recon.image_camera[i], recon.image_names[i]
        )
        .unwrap();
        let obs: Vec<String> = recon.keypoints[i]
            .iter()
            .enumerate()
            .map(|(f, p)| {
                let pid = feature_point.get(&(i, f)).map_or(-1, |&id| id as i64);
                format!("{} {} {pid}", p.x, p.y)
            })
            .collect();
        imgs.push_str(&obs.join(" "));
        imgs.push('\n');
    }
    std::fs::write(dir.join("images.txt"), imgs)?;

    let mut pts = String::from("# point_id x y z error track[] as (image_id feature_id)\n");
    for (&id, p) in &recon.points {
        write!(pts, "{id} {} {} {} {}", p.position.x, p.position.y, p.position.z, p.error).unwrap();
        for &(i, f) in &p.observations {
            write!(pts, " {i} {f}").unwrap();
        }
        pts.push('\n');
    }
    std::fs::write(dir.join("points3D.txt"), pts)?;
    Ok(())
}

fn data_lines<R: Read>(r: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if !line.starts_with('#') {
            out.push(line);
        }
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| SfmError::InvalidInput(format!("bad or missing {what}")))
}

/// Reads a model written by [`write_text`].
pub fn read_text(dir: &Path) -> Result<Reconstruction> {
    let open = |name: &str| std::fs::File::open(dir.join(name));
    let mut cameras = Vec::new();
    for line in data_lines(open("cameras.txt")?)? {
        if line.trim().is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let _id: usize = field(t.next(), "camera id")?;
        let model: String = field(t.next(), "camera model")?;
        if model != CAMERA_MODEL_NAME {
            return Err(SfmError::InvalidInput(format!("unknown camera model {model}")));
        }
        let width = field(t.next(), "width")?;
        let height = field(t.next(), "height")?;
        let mut v = [0f64; 5];
        for x in v.iter_mut() {
            *x = field(t.next(), "intrinsic")?;
        }
        cameras.push(CameraModel {
            width,
            height,
            intrinsics: CameraIntrinsics {
                fx: v[0],
                fy: v[1],
                cx: v[2],
                cy: v[3],
                k1: v[4],
            },
        });
    }

    let lines = data_lines(open("images.txt")?)?;
    if lines.len() % 2 != 0 {
        return Err(SfmError::InvalidInput("images.txt needs pose and keypoint lines in pairs".into()));
    }
    let mut recon = Reconstruction::new(
        *cameras.first().ok_or_else(|| SfmError::InvalidInput("no cameras".into()))?,
        vec![Vec::new(); lines.len() / 2],
    );
    recon.cameras = cameras;
    for (i, pair) in lines.chunks(2).enumerate() {
        let mut t = pair[0].split_whitespace();
        let id: usize = field(t.next(), "image id")?;
        if id != i {
            return Err(SfmError::InvalidInput(format!("image ids must be consecutive, found {id}")));
        }
        let mut v = [0f64; 7];
        for x in v.iter_mut() {
            *x = field(t.next(), "pose value")?;
        }
        recon.image_camera[i] = field(t.next(), "camera id")?;
        recon.image_names[i] = field(t.next(), "image name")?;
        let registered: u8 = field(t.next(), "registered flag")?;
        if registered == 1 {
            recon.poses[i] = Some(Pose::new(
                UnitQuaternion::new_normalize(Quaternion::new(v[0], v[1], v[2], v[3])),
                Vector3::new(v[4], v[5], v[6]),
            ));
        }
        let toks: Vec<&str> = pair[1].split_whitespace().collect();
        if toks.len() % 3 != 0 {
            return Err(SfmError::InvalidInput(format!("keypoint list of image {i} is not x y id triples")));
        }
        recon.keypoints[i] = toks
            .chunks(3)
            .map(|c| Ok(Point2::new(field(Some(c[0]), "x")?, field(Some(c[1]), "y")?)))
            .collect::<Result<_>>()?;
    }
    if recon.image_camera.iter().any(|&c| c >= recon.cameras.len()) {
        return Err(SfmError::InvalidInput("image references an unknown camera".into()));
    }

    for line in data_lines(open("points3D.txt")?)? {
        if line.trim().is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let id: usize = field(t.next(), "point id")?;
        let xyz = Point3::new(field(t.next(), "x")?, field(t.next(), "y")?, field(t.next(), "z")?);
        let error: f64 = field(t.next(), "error")?;
        let rest: Vec<usize> = t.map(|s| field(Some(s), "track entry")).collect::<Result<_>>()?;
        if rest.len() % 2 != 0 {
            return Err(SfmError::InvalidInput(format!("track of point {id} has odd length")));
        }
        let observations: Vec<(usize, usize)> = rest.chunks(2).map(|c| (c[0], c[1])).collect();
        for &(i, f) in &observations {
            if i >= recon.num_images() || f >= recon.keypoints[i].len() {
                return Err(SfmError::InvalidInput(format!("point {id} references a missing keypoint")));
            }
        }
        recon.points.insert(
            id,
            Point3D {
                position: xyz,
                observations,
                error,
                track: None,
            },
        );
        recon.next_point_id = recon.next_point_id.max(id + 1);
    }
    Ok(recon)
}

/// One-line summary of the model.
pub fn describe<W: Write>(recon: &Reconstruction, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{} images ({} registered), {} points, {} observations, mean error {:.4} px",
        recon.num_images(),
        recon.registered_images().len(),
        recon.points.len(),
        recon.num_observations(),
        recon.mean_reprojection_error()
    )?;
    Ok(())
}
