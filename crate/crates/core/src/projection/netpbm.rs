//! Binary PGM (P5) and PPM (P6) at 8 bits, row-major.

use std::fs;
use std::path::Path;

use super::{DepthMap, EnhancedImage};
use crate::error::{Error, Result};

/// Quantizes `[0,1]` to a byte, rounding half up.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn encode(magic: &str, width: usize, height: usize, samples: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend(samples.map(to_byte));
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn export_depth(img: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode("P5", img.width, img.height, img.pixels.iter().copied()))
}

pub fn export_enhanced(img: &EnhancedImage, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode("P6", img.width, img.height, img.pixels.iter().copied()))
}

/// Returns `(width, height, bytes)`.
fn decode(bytes: &[u8], magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |msg: &str| Error::Parse { line: 1, message: msg.to_string() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != magic {
        return Err(bad(&format!("expected magic {magic}, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h * channels {
        return Err(bad("pixel data length does not match header"));
    }
    Ok((w, h, data.to_vec()))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, "P5", 1)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, "P6", 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{camera_views, compose_enhanced, detect_background};

    #[test]
    fn half_rounds_up() {
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(1.0 / 255.0), 1);
    }

    #[test]
    fn white_depth_is_all_255() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthMap::white(16, 20, camera_views(1).unwrap()[0]);
        let p = dir.path().join("w.pgm");
        export_depth(&d, &p).unwrap();
        let (w, h, px) = read_pgm(&p).unwrap();
        assert_eq!((w, h), (20, 16));
        assert!(px.iter().all(|&b| b == 255));
    }

    #[test]
    fn red_fill_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthMap::white(16, 16, camera_views(1).unwrap()[0]);
        let img = compose_enhanced(&d, &detect_background(&d), [1.0, 0.0, 0.0]).unwrap();
        let p = dir.path().join("r.ppm");
        export_enhanced(&img, &p).unwrap();
        let (_, _, px) = read_ppm(&p).unwrap();
        assert!(px.chunks(3).all(|c| c == [255, 0, 0]));
    }

    #[test]
    fn quantized_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = DepthMap::white(16, 16, camera_views(1).unwrap()[0]);
        for (i, p) in d.pixels.iter_mut().enumerate() {
            *p = (i as f64 * 0.37).fract();
        }
        let p = dir.path().join("q.pgm");
        export_depth(&d, &p).unwrap();
        let (_, _, px) = read_pgm(&p).unwrap();
        let expect: Vec<u8> = d.pixels.iter().map(|&v| to_byte(v)).collect();
        assert_eq!(px, expect);
    }

    #[test]
    fn missing_directory_reports_path() {
        let d = DepthMap::white(16, 16, camera_views(1).unwrap()[0]);
        match export_depth(&d, "/nonexistent/dir/x.pgm") {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("x.pgm")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
