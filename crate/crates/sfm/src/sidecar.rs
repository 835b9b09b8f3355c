//! Little-endian binary files for features, matches and verified pairs.
//!
//! Features (`EVFT`): magic, `u32` version, `u32` image id, `u32` count, then
//! per feature `f64` x, y, scale, orientation, response and 128 `f32`
//! descriptor values.
//!
//! Matches (`EVMT`): magic, `u32` version, `u32` pair count, then per pair
//! `u32` image a, image b, match count and `u32` index pairs.
//!
//! Verified pairs (`EVTV`): magic, `u32` version, `u32` pair count, then per
//! pair `u32` a, b, `u8` model kind (0 H, 1 E, 2 F), 9 `f64` row-major
//! matrix entries, `u32` H and epipolar inlier counts, `u32` inlier count and
//! the inlier index pairs.

use std::io::{Read, Write};

use nalgebra::Matrix3;

use crate::error::{Result, SfmError};
use crate::features::{Feature, FeatureSet, MatchSet, DESCRIPTOR_LEN};
use crate::verify::{ModelKind, TwoViewGeometry};

pub const FEATURE_MAGIC: &[u8; 4] = b"EVFT";
pub const MATCH_MAGIC: &[u8; 4] = b"EVMT";
pub const GEOMETRY_MAGIC: &[u8; 4] = b"EVTV";
const VERSION: u32 = 1;

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| SfmError::CorruptSidecar("unexpected end of file".into()))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if &self.bytes::<4>()? != magic {
            return Err(SfmError::CorruptSidecar(format!(
                "expected magic {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(SfmError::CorruptSidecar(format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn end(mut self) -> Result<()> {
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(SfmError::CorruptSidecar("trailing bytes".into())),
        }
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| SfmError::InvalidInput(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_pairs<W: Write>(w: &mut W, pairs: &[(usize, usize)]) -> Result<()> {
    put_u32(w, pairs.len())?;
    for &(a, b) in pairs {
        put_u32(w, a)?;
        put_u32(w, b)?;
    }
    Ok(())
}

fn get_pairs<R: Read>(r: &mut Reader<R>) -> Result<Vec<(usize, usize)>> {
    let n = r.usize()?;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        out.push((r.usize()?, r.usize()?));
    }
    Ok(out)
}

pub fn write_features<W: Write>(mut w: W, set: &FeatureSet) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    put_u32(&mut w, VERSION as usize)?;
    put_u32(&mut w, set.image_id)?;
    put_u32(&mut w, set.features.len())?;
    for f in &set.features {
        for v in [f.x, f.y, f.scale, f.orientation, f.response] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in f.descriptor {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<FeatureSet> {
    let mut r = Reader { inner: r };
    r.header(FEATURE_MAGIC)?;
    let image_id = r.usize()?;
    let n = r.usize()?;
    let mut features = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let (x, y, scale, orientation, response) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let mut descriptor = [0f32; DESCRIPTOR_LEN];
        for d in descriptor.iter_mut() {
            *d = r.f32()?;
        }
        features.push(Feature {
            x,
            y,
            scale,
            orientation,
            response,
            descriptor,
        });
    }
    r.end()?;
    Ok(FeatureSet { image_id, features })
}

pub fn write_matches<W: Write>(mut w: W, sets: &[MatchSet]) -> Result<()> {
    w.write_all(MATCH_MAGIC)?;
    put_u32(&mut w, VERSION as usize)?;
    put_u32(&mut w, sets.len())?;
    for m in sets {
        put_u32(&mut w, m.image_a)?;
        put_u32(&mut w, m.image_b)?;
        put_pairs(&mut w, &m.matches)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matches<R: Read>(r: R) -> Result<Vec<MatchSet>> {
    let mut r = Reader { inner: r };
    r.header(MATCH_MAGIC)?;
    let n = r.usize()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let (image_a, image_b) = (r.usize()?, r.usize()?);
        out.push(MatchSet {
            image_a,
            image_b,
            matches: get_pairs(&mut r)?,
        });
    }
    r.end()?;
    Ok(out)
}

pub fn write_geometries<W: Write>(mut w: W, pairs: &[TwoViewGeometry]) -> Result<()> {
    w.write_all(GEOMETRY_MAGIC)?;
    put_u32(&mut w, VERSION as usize)?;
    put_u32(&mut w, pairs.len())?;
    for g in pairs {
        put_u32(&mut w, g.image_a)?;
        put_u32(&mut w, g.image_b)?;
        let kind: u8 = match g.kind {
            ModelKind::Homography => 0,
            ModelKind::Essential => 1,
            ModelKind::Fundamental => 2,
        };
        w.write_all(&[kind])?;
        for r in 0..3 {
            for c in 0..3 {
                w.write_all(&g.matrix[(r, c)].to_le_bytes())?;
            }
        }
        put_u32(&mut w, g.homography_inliers)?;
        put_u32(&mut w, g.epipolar_inliers)?;
        put_pairs(&mut w, &g.inliers)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_geometries<R: Read>(r: R) -> Result<Vec<TwoViewGeometry>> {
    let mut r = Reader { inner: r };
    r.header(GEOMETRY_MAGIC)?;
    let n = r.usize()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let (image_a, image_b) = (r.usize()?, r.usize()?);
        let kind = match r.u8()? {
            0 => ModelKind::Homography,
            1 => ModelKind::Essential,
            2 => ModelKind::Fundamental,
            k => return Err(SfmError::CorruptSidecar(format!("unknown model kind {k}"))),
        };
        let mut m = [0f64; 9];
        for v in m.iter_mut() {
            *v = r.f64()?;
        }
        let homography_inliers = r.usize()?;
        let epipolar_inliers = r.usize()?;
        out.push(TwoViewGeometry {
            image_a,
            image_b,
            kind,
            matrix: Matrix3::from_row_slice(&m),
            inliers: get_pairs(&mut r)?,
            homography_inliers,
            epipolar_inliers,
        });
    }
    r.end()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_round_trip() {
        let mut d = [0f32; DESCRIPTOR_LEN];
        d[3] = 0.6;
        d[100] = 0.8;
        let set = FeatureSet {
            image_id: 7,
            features: vec![Feature {
                x: 10.25,
                y: 3.0 / 7.0,
                scale: 2.1,
                orientation: 6.0,
                response: 0.03,
                descriptor: d,
            }],
        };
        let mut buf = Vec::new();
        write_features(&mut buf, &set).unwrap();
        assert_eq!(&buf[..4], b"EVFT");
        assert_eq!(buf.len(), 16 + 40 + 512);
        assert_eq!(read_features(buf.as_slice()).unwrap(), set);
        buf.push(0);
        assert!(read_features(buf.as_slice()).is_err());
    }

    #[test]
    fn match_and_geometry_round_trip() {
        let m = vec![MatchSet {
            image_a: 0,
            image_b: 3,
            matches: vec![(1, 2), (5, 9)],
        }];
        let mut buf = Vec::new();
        write_matches(&mut buf, &m).unwrap();
        assert_eq!(read_matches(buf.as_slice()).unwrap(), m);
        assert!(read_features(buf.as_slice()).is_err());

        let g = vec![TwoViewGeometry {
            image_a: 1,
            image_b: 2,
            kind: ModelKind::Essential,
            matrix: Matrix3::new(0.0, -1.0, 0.5, 1.0, 0.0, -0.25, 0.1, 0.2, 0.3),
            inliers: vec![(4, 4)],
            homography_inliers: 3,
            epipolar_inliers: 1,
        }];
        let mut buf = Vec::new();
        write_geometries(&mut buf, &g).unwrap();
        assert_eq!(read_geometries(buf.as_slice()).unwrap(), g);
    }
}
