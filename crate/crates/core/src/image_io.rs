//! Binary PGM (P5) and PFM readers/writers for single-channel images.
//!
//! PGM samples are mapped to `[0, 1]` by dividing by the header's maxval.
//! PFM files are written little-endian (negative scale) with rows stored
//! bottom-to-top as the format requires; both byte orders are read.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::CorruptHeader("unexpected end of header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::CorruptHeader("non-ASCII header".into()))
    }

    fn number<N: std::str::FromStr>(&mut self, what: &str) -> Result<N> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::CorruptHeader(format!("bad {what} field {tok:?}")))
    }

    /// Consumes the single whitespace byte that terminates the header.
    fn end_of_header(&mut self) -> Result<usize> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            Ok(self.pos + 1)
        } else {
            Err(Error::CorruptHeader("missing header terminator".into()))
        }
    }
}

pub fn decode_pgm<T: Real>(bytes: &[u8]) -> Result<Grid<T>> {
    let mut header = HeaderReader::new(bytes);
    let magic = header.token()?;
    if magic != "P5" {
        return Err(Error::UnsupportedImageFormat(format!("magic {magic:?}")));
    }
    let width: usize = header.number("width")?;
    let height: usize = header.number("height")?;
    let maxval: u32 = header.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::CorruptHeader(format!("PGM {width}x{height} maxval {maxval}")));
    }
    let start = header.end_of_header()?;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * sample_bytes;
    let body = &bytes[start..];
    if body.len() < needed {
        return Err(Error::CorruptHeader(format!(
            "PGM body has {} bytes, expected {needed}",
            body.len()
        )));
    }
    let scale = T::one() / T::from_u32(maxval).unwrap();
    let data = if sample_bytes == 1 {
        body[..needed].iter().map(|&b| T::from_u8(b).unwrap() * scale).collect()
    } else {
        body[..needed]
            .chunks_exact(2)
            .map(|c| T::from_u16(u16::from_be_bytes([c[0], c[1]])).unwrap() * scale)
            .collect()
    };
    Ok(Grid::from_vec(width, height, data))
}

/// Encodes an 8-bit P5 image; values are clamped to `[0, 1]` and rounded.
pub fn encode_pgm<T: Real>(image: &Grid<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|v| {
        let v = v.to_f64_lossy();
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * 255.0).round() as u8
    }));
    out
}

pub fn decode_pfm<T: Real>(bytes: &[u8]) -> Result<Grid<T>> {
    let mut header = HeaderReader::new(bytes);
    let magic = header.token()?;
    let channels = match magic {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::UnsupportedImageFormat(format!("magic {magic:?}"))),
    };
    let width: usize = header.number("width")?;
    let height: usize = header.number("height")?;
    let scale: f64 = header.number("scale")?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(Error::CorruptHeader(format!("PFM {width}x{height} scale {scale}")));
    }
    let little = scale < 0.0;
    let start = header.end_of_header()?;
    let needed = width * height * channels * 4;
    let body = &bytes[start..];
    if body.len() < needed {
        return Err(Error::CorruptHeader(format!(
            "PFM body has {} bytes, expected {needed}",
            body.len()
        )));
    }
    let floats: Vec<f32> = body[..needed]
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut data = vec![T::zero(); width * height];
    for file_row in 0..height {
        let y = height - 1 - file_row;
        for x in 0..width {
            let base = (file_row * width + x) * channels;
            let v = floats[base..base + channels].iter().map(|&f| f as f64).sum::<f64>() / channels as f64;
            data[y * width + x] = T::lit(v);
        }
    }
    Ok(Grid::from_vec(width, height, data))
}

/// Encodes a single-channel little-endian PFM.
pub fn encode_pfm<T: Real>(image: &Grid<T>) -> Vec<u8> {
    let (w, h) = (image.width(), image.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for v in image.row(y) {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

/// Reads a PGM or PFM file, selected by its magic number.
pub fn read_image<T: Real>(path: &Path) -> Result<Grid<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    match bytes.get(0..2) {
        Some(b"P5") => decode_pgm(&bytes),
        Some(b"Pf") | Some(b"PF") => decode_pfm(&bytes),
        _ => Err(Error::UnsupportedImageFormat(format!(
            "{}: unrecognised magic {:?}",
            path.display(),
            String::from_utf8_lossy(&bytes[..bytes.len().min(2)])
        ))),
    }
}

pub fn read_pgm<T: Real>(path: &Path) -> Result<Grid<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_pgm(&fs::read(path)?)
}

pub fn read_pfm<T: Real>(path: &Path) -> Result<Grid<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_pfm(&fs::read(path)?)
}

pub fn write_pgm<T: Real>(image: &Grid<T>, path: &Path) -> Result<()> {
    write_bytes(path, &encode_pgm(image))
}

pub fn write_pfm<T: Real>(image: &Grid<T>, path: &Path) -> Result<()> {
    write_bytes(path, &encode_pfm(image))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// Reads a text file line by line, skipping blanks and `#` comments.
pub(crate) fn content_lines<R: Read>(reader: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((i + 1, t.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pgm_round_trip_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = Grid::from_fn(37, 23, |_, _| rng.random::<f64>());
        let back: Grid<f64> = decode_pgm(&encode_pgm(&img)).unwrap();
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 510.0 + 1e-12, "{max_err}");
    }

    #[test]
    fn pgm_8bit_divides_by_255() {
        let mut bytes = b"P5\n# comment\n3 1\n255\n".to_vec();
        bytes.extend([0u8, 51, 255]);
        let img: Grid<f64> = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 0.2, 1.0]);
    }

    #[test]
    fn pgm_16bit() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0xff, 0xff, 0x00, 0x00]);
        let img: Grid<f32> = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn pfm_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Grid::from_fn(11, 5, |_, _| rng.random_range(-1e3f32..1e3));
        let back: Grid<f32> = decode_pfm(&encode_pfm(&img)).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pfm_rows_bottom_to_top_and_big_endian() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend(1.0f32.to_be_bytes());
        bytes.extend(2.0f32.to_be_bytes());
        let img: Grid<f32> = decode_pfm(&bytes).unwrap();
        // First stored row is the bottom row.
        assert_eq!(img.at(0, 1), 1.0);
        assert_eq!(img.at(0, 0), 2.0);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        std::fs::write(&p, b"P9\n1 1\n255\n\0").unwrap();
        assert!(matches!(read_image::<f32>(&p), Err(Error::UnsupportedImageFormat(_))));
        assert!(matches!(decode_pgm::<f32>(b"P9 1 1 255 x"), Err(Error::UnsupportedImageFormat(_))));
        assert!(matches!(decode_pgm::<f32>(b"P5 4 4 255\n\0\0"), Err(Error::CorruptHeader(_))));
        assert!(matches!(decode_pgm::<f32>(b"P5 4 x 255\n"), Err(Error::CorruptHeader(_))));
        assert!(matches!(read_image::<f32>(&dir.path().join("nope.pgm")), Err(Error::MissingFile(_))));
    }
}
