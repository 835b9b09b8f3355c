//! Minimal PLY 1.0 point-cloud reader/writer.
//!
//! Vertices carry `float x y z`, optionally `uchar red green blue` and
//! `float nx ny nz`, in that property order.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub normals: Option<Vec<[f32; 3]>>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<[f32; 3]>) -> Self {
        Self {
            positions,
            colors: None,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.colors.as_ref().is_some_and(|c| c.len() != n) || self.normals.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::InvalidParameter("point attribute count mismatch".into()));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite point coordinate".into()));
        }
        Ok(())
    }
}

pub fn write_ply<W: Write>(cloud: &PointCloud, mut w: W, format: PlyFormat) -> Result<()> {
    cloud.validate()?;
    let format_line = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format_line} 1.0")?;
    writeln!(w, "element vertex {}", cloud.positions.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    if cloud.colors.is_some() {
        for c in ["red", "green", "blue"] {
            writeln!(w, "property uchar {c}")?;
        }
    }
    if cloud.normals.is_some() {
        for n in ["nx", "ny", "nz"] {
            writeln!(w, "property float {n}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.positions.iter().enumerate() {
        let color = cloud.colors.as_ref().map(|c| c[i]);
        let normal = cloud.normals.as_ref().map(|n| n[i]);
        match format {
            PlyFormat::Ascii => {
                let mut line = format!("{} {} {}", p[0], p[1], p[2]);
                if let Some(c) = color {
                    line.push_str(&format!(" {} {} {}", c[0], c[1], c[2]));
                }
                if let Some(n) = normal {
                    line.push_str(&format!(" {} {} {}", n[0], n[1], n[2]));
                }
                writeln!(w, "{line}")?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = color {
                    w.write_all(&c)?;
                }
                if let Some(n) = normal {
                    for v in n {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ply_file(cloud: &PointCloud, path: &std::path::Path, format: PlyFormat) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(cloud, f, format)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Reads the vertex element of an ASCII or little-endian binary PLY.
/// The vertex element must be the first element in the file.
pub fn read_ply<R: Read>(reader: R) -> Result<PointCloud> {
    let mut reader = std::io::BufReader::new(reader);
    let mut line = String::new();
    let next_line = |reader: &mut std::io::BufReader<R>, line: &mut String| -> Result<()> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(Error::CorruptHeader("PLY header ended early".into()));
        }
        Ok(())
    };
    next_line(&mut reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::UnsupportedImageFormat("missing ply magic".into()));
    }
    let mut format = None;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, ScalarKind)> = Vec::new();
    loop {
        next_line(&mut reader, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => return Err(Error::UnsupportedImageFormat(format!("PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    if vertex_count.is_some() || format.is_none() {
                        return Err(Error::CorruptHeader("unexpected vertex element".into()));
                    }
                    vertex_count = Some(
                        count
                            .parse::<usize>()
                            .map_err(|_| Error::CorruptHeader(format!("bad vertex count {count}")))?,
                    );
                } else if vertex_count.is_none() {
                    return Err(Error::CorruptHeader("vertex element must come first".into()));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::CorruptHeader("list properties on vertices unsupported".into()))
            }
            ["property", kind, name] if in_vertex => {
                let kind = ScalarKind::parse(kind)
                    .ok_or_else(|| Error::CorruptHeader(format!("unknown property type {kind}")))?;
                props.push((name.to_string(), kind));
            }
            ["property", ..] => {}
            _ => return Err(Error::CorruptHeader(format!("unexpected header line {:?}", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| Error::CorruptHeader("missing format line".into()))?;
    let count = vertex_count.unwrap_or(0);
    let find = |n: &str| props.iter().position(|(name, _)| name == n);
    let xyz = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(Error::CorruptHeader("vertex needs x y z".into())),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let nrm = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };

    let mut values = vec![0f64; props.len()];
    let mut cloud = PointCloud {
        positions: Vec::with_capacity(count),
        colors: rgb.map(|_| Vec::with_capacity(count)),
        normals: nrm.map(|_| Vec::with_capacity(count)),
    };
    let stride: usize = props.iter().map(|(_, k)| k.size()).sum();
    let mut record = vec![0u8; stride];
    for i in 0..count {
        match format {
            PlyFormat::Ascii => {
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    return Err(Error::CorruptHeader(format!("PLY ends at vertex {i} of {count}")));
                }
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() < props.len() {
                    return Err(Error::CorruptHeader(format!("short vertex line {i}")));
                }
                for (v, t) in values.iter_mut().zip(toks) {
                    *v = t.parse().map_err(|_| Error::CorruptHeader(format!("bad value {t:?}")))?;
                }
            }
            PlyFormat::BinaryLittleEndian => {
                reader
                    .read_exact(&mut record)
                    .map_err(|_| Error::CorruptHeader(format!("PLY ends at vertex {i} of {count}")))?;
                let mut off = 0;
                for (v, (_, kind)) in values.iter_mut().zip(&props) {
                    *v = kind.decode_le(&record[off..off + kind.size()]);
                    off += kind.size();
                }
            }
        }
        cloud.positions.push(xyz.map(|j| values[j] as f32));
        if let (Some(c), Some(idx)) = (cloud.colors.as_mut(), rgb) {
            c.push(idx.map(|j| values[j] as u8));
        }
        if let (Some(n), Some(idx)) = (cloud.normals.as_mut(), nrm) {
            n.push(idx.map(|j| values[j] as f32));
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_ascii() {
        let mut buf = Vec::new();
        write_ply(&PointCloud::from_positions(vec![[0.0, 0.0, 0.0]]), &mut buf, PlyFormat::Ascii).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 1\n"));
        let body = text.split("end_header\n").nth(1).unwrap();
        assert_eq!(body, "0 0 0\n");
    }

    #[test]
    fn empty_cloud_is_valid() {
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_ply(&PointCloud::default(), &mut buf, format).unwrap();
            assert!(buf.ends_with(b"end_header\n"));
            assert!(read_ply(buf.as_slice()).unwrap().is_empty());
        }
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let positions: Vec<[f32; 3]> = (0..1000)
            .map(|_| [rng.random_range(-1e4..1e4), rng.random(), rng.random_range(-1e-3..1e-3)])
            .collect();
        let colors: Vec<[u8; 3]> = (0..1000).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let normals: Vec<[f32; 3]> = (0..1000).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let cloud = PointCloud {
            positions,
            colors: Some(colors),
            normals: Some(normals),
        };
        for format in [PlyFormat::BinaryLittleEndian, PlyFormat::Ascii] {
            let mut buf = Vec::new();
            write_ply(&cloud, &mut buf, format).unwrap();
            let back = read_ply(buf.as_slice()).unwrap();
            let bits = |c: &PointCloud| c.positions.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&cloud), bits(&back));
            assert_eq!(cloud.colors, back.colors);
            assert_eq!(cloud.normals, back.normals);
        }
    }

    #[test]
    fn rejects_nonfinite() {
        let mut buf = Vec::new();
        let err = write_ply(&PointCloud::from_positions(vec![[f32::NAN, 0.0, 0.0]]), &mut buf, PlyFormat::Ascii);
        assert!(err.is_err());
    }
}
