//! RGB images and binary PPM (P6) I/O for classification maps.

use std::fs;
use std::path::Path;

use crate::error::{io_context, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Row-major RGB triples.
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&color);
        }
        RgbImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        debug_assert!(x < self.width && y < self.height);
        let base = (y * self.width + x) * 3;
        self.pixels[base..base + 3].copy_from_slice(&color);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let base = (y * self.width + x) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        fs::write(path, out).map_err(|e| io_context(path, e))?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| io_context(path, e))?;
        let header_err = || Error::Format(format!("{}: truncated PPM header", path.display()));
        let (magic, rest) = token(&raw).ok_or_else(header_err)?;
        if magic != b"P6" {
            return Err(Error::Format(format!(
                "{}: not a binary PPM (magic {:?})",
                path.display(),
                String::from_utf8_lossy(magic)
            )));
        }
        let (width, rest) = number(rest).ok_or_else(header_err)?;
        let (height, rest) = number(rest).ok_or_else(header_err)?;
        let (maxval, rest) = number(rest).ok_or_else(header_err)?;
        if maxval != 255 {
            return Err(Error::Format(format!(
                "{}: unsupported PPM maxval {maxval}",
                path.display()
            )));
        }
        let pixels = rest.get(1..).ok_or_else(header_err)?;
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(Error::Format(format!(
                "{}: pixel payload is {} bytes, header demands {expected}",
                path.display(),
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels: pixels.to_vec(),
        })
    }
}

fn token(mut data: &[u8]) -> Option<(&[u8], &[u8])> {
    loop {
        match data.first()? {
            b' ' | b'\t' | b'\r' | b'\n' => data = &data[1..],
            b'#' => {
                let end = data.iter().position(|&b| b == b'\n')?;
                data = &data[end + 1..];
            }
            _ => break,
        }
    }
    let end = data
        .iter()
        .position(|b| b.is_ascii_whitespace())
        .unwrap_or(data.len());
    Some((&data[..end], &data[end..]))
}

fn number(data: &[u8]) -> Option<(usize, &[u8])> {
    let (tok, rest) = token(data)?;
    let value = std::str::from_utf8(tok).ok()?.parse().ok()?;
    Some((value, rest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = RgbImage::filled(3, 2, [0, 0, 0]);
        img.set(1, 0, [255, 10, 20]);
        img.set(2, 1, [1, 2, 3]);
        let dir = std::env::temp_dir().join("hsicnn_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ppm");
        img.save_ppm(&path).unwrap();
        assert_eq!(RgbImage::load_ppm(&path).unwrap(), img);
        std::fs::remove_file(&path).unwrap();
    }
}
