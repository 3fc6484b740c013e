//! Ground-truth label rasters, stored as binary 8-bit PGM (P5).
//!
//! Gray level 0 marks unlabeled background; levels 1..=255 are raw class
//! identifiers.

use std::fs;
use std::path::Path;

use crate::error::{io_context, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabelRaster {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelRaster {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "label raster dimensions {width}x{height} must be positive"
            )));
        }
        if labels.len() != width * height {
            return Err(Error::Data(format!(
                "label raster {width}x{height} needs {} entries, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(LabelRaster {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn label(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.labels);
        fs::write(path, out).map_err(|e| io_context(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| io_context(path, e))?;
        let (magic, rest) = netpbm_token(&raw).ok_or_else(|| truncated(path))?;
        if magic != b"P5" {
            return Err(Error::Format(format!(
                "{}: not a binary PGM (magic {:?})",
                path.display(),
                String::from_utf8_lossy(magic)
            )));
        }
        let (width, rest) = netpbm_usize(rest).ok_or_else(|| truncated(path))?;
        let (height, rest) = netpbm_usize(rest).ok_or_else(|| truncated(path))?;
        let (maxval, rest) = netpbm_usize(rest).ok_or_else(|| truncated(path))?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!(
                "{}: PGM maxval {maxval} outside 1..=255",
                path.display()
            )));
        }
        // Exactly one whitespace byte separates the header from the pixels.
        let pixels = rest.get(1..).ok_or_else(|| truncated(path))?;
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::Format(format!("{}: raster size overflows", path.display())))?;
        if pixels.len() != expected {
            return Err(Error::Format(format!(
                "{}: pixel payload is {} bytes, header demands {expected}",
                path.display(),
                pixels.len()
            )));
        }
        LabelRaster::new(width, height, pixels.to_vec())
    }
}

fn truncated(path: &Path) -> Error {
    Error::Format(format!("{}: truncated PGM header", path.display()))
}

/// Next whitespace-delimited token, skipping `#` comments.
fn netpbm_token(mut data: &[u8]) -> Option<(&[u8], &[u8])> {
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

fn netpbm_usize(data: &[u8]) -> Option<(usize, &[u8])> {
    let (token, rest) = netpbm_token(data)?;
    let value = std::str::from_utf8(token).ok()?.parse().ok()?;
    Some((value, rest))
}
