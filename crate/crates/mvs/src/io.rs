//! Depth, normal and cost maps as PFM files.

use std::fs;
use std::path::{Path, PathBuf};

use evrecon_core::image_io::{decode_pfm, encode_pfm};
use evrecon_core::{Error as CoreError, Grid};
use nalgebra::Vector3;

use crate::error::Result;
use crate::patchmatch::DepthMap;

pub fn depth_map_paths(dir: &Path, reference: usize) -> [PathBuf; 3] {
    [
        dir.join(format!("depth_{reference:04}.pfm")),
        dir.join(format!("normal_{reference:04}.pfm")),
        dir.join(format!("cost_{reference:04}.pfm")),
    ]
}

/// Three-channel little-endian PFM, rows bottom-to-top.
pub fn encode_pfm_vector(image: &Grid<Vector3<f64>>) -> Vec<u8> {
    let (w, h) = (image.width(), image.height());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for v in image.row(y) {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_pfm_vector(bytes: &[u8]) -> Result<Grid<Vector3<f64>>> {
    let text_end = |n: usize| -> Result<usize> {
        let mut seen = 0;
        for (i, b) in bytes.iter().enumerate() {
            if *b == b'\n' {
                seen += 1;
                if seen == n {
                    return Ok(i + 1);
                }
            }
        }
        Err(CoreError::CorruptHeader("truncated PFM header".into()).into())
    };
    let start = text_end(3)?;
    let header = std::str::from_utf8(&bytes[..start]).map_err(|_| CoreError::CorruptHeader("non-ASCII header".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "PF" {
        return Err(CoreError::UnsupportedImageFormat(format!("expected PF, got {:?}", toks.first())).into());
    }
    let parse = |s: &str| s.parse::<f64>().map_err(|_| CoreError::CorruptHeader(format!("bad field {s:?}")));
    let (w, h, scale) = (parse(toks[1])? as usize, parse(toks[2])? as usize, parse(toks[3])?);
    let body = &bytes[start..];
    if body.len() != w * h * 12 || scale == 0.0 {
        return Err(CoreError::CorruptHeader("PFM body size mismatch".into()).into());
    }
    let f = |i: usize| {
        let b = [body[4 * i], body[4 * i + 1], body[4 * i + 2], body[4 * i + 3]];
        f64::from(if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) })
    };
    Ok(Grid::from_fn(w, h, |x, y| {
        let base = 3 * ((h - 1 - y) * w + x);
        Vector3::new(f(base), f(base + 1), f(base + 2))
    }))
}

pub fn write_depth_map(map: &DepthMap, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let [d, n, c] = depth_map_paths(dir, map.reference);
    fs::write(d, encode_pfm(&map.depth))?;
    fs::write(n, encode_pfm_vector(&map.normals))?;
    fs::write(c, encode_pfm(&map.cost))?;
    Ok(())
}

/// Values come back at `f32` precision.
pub fn read_depth_map(dir: &Path, reference: usize) -> Result<DepthMap> {
    let [d, n, c] = depth_map_paths(dir, reference);
    Ok(DepthMap {
        reference,
        depth: decode_pfm(&fs::read(d)?)?,
        normals: decode_pfm_vector(&fs::read(n)?)?,
        cost: decode_pfm(&fs::read(c)?)?,
    })
}
