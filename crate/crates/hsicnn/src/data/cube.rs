//! Hyperspectral cube container and its on-disk format.
//!
//! File layout (all integers little-endian):
//!   magic   4 bytes  "HSIC"
//!   version u32      currently 1
//!   width   u32
//!   height  u32
//!   bands   u32
//!   dtype   u32      0 = 32-bit float
//!   payload band-sequential f32 planes, each row-major
//!
//! In memory the cube is band-interleaved by pixel so a pixel's spectrum is
//! contiguous; the loader reorders.

use std::fs;
use std::path::Path;

use crate::error::{io_context, Error, Result};

const MAGIC: &[u8; 4] = b"HSIC";
const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;
const HEADER_LEN: usize = 4 + 4 * 5;

/// 3-D radiance volume indexed by (x, y, band).
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    width: usize,
    height: usize,
    bands: usize,
    /// Pixel-interleaved: `values[(y * width + x) * bands + b]`.
    values: Vec<f32>,
}

impl HsiCube {
    pub fn new(width: usize, height: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Data(format!(
                "cube dimensions {width}x{height}x{bands} must all be positive"
            )));
        }
        let expected = width * height * bands;
        if values.len() != expected {
            return Err(Error::Data(format!(
                "cube {width}x{height}x{bands} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "cube contains a non-finite value at flat index {pos}"
            )));
        }
        Ok(HsiCube {
            width,
            height,
            bands,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn value(&self, x: usize, y: usize, band: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height && band < self.bands);
        self.values[(y * self.width + x) * self.bands + band]
    }

    /// Full spectrum of one pixel.
    pub fn spectrum(&self, x: usize, y: usize) -> &[f32] {
        let base = (y * self.width + x) * self.bands;
        &self.values[base..base + self.bands]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.width as u32,
            self.height as u32,
            self.bands as u32,
            DTYPE_F32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        // Reorder to band-sequential planes.
        for b in 0..self.bands {
            for py in 0..self.height {
                for px in 0..self.width {
                    let v = self.values[(py * self.width + px) * self.bands + b];
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        fs::write(path, out).map_err(|e| io_context(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| io_context(path, e))?;
        if raw.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "{}: file too short for a cube header ({} bytes)",
                path.display(),
                raw.len()
            )));
        }
        if &raw[..4] != MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected \"HSIC\"",
                path.display(),
                &raw[..4]
            )));
        }
        let word = |i: usize| {
            u32::from_le_bytes(raw[4 + 4 * i..8 + 4 * i].try_into().expect("header word"))
        };
        let version = word(0);
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported cube version {version}",
                path.display()
            )));
        }
        let (width, height, bands) = (word(1) as usize, word(2) as usize, word(3) as usize);
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Format(format!(
                "{}: header declares degenerate dimensions {width}x{height}x{bands}",
                path.display()
            )));
        }
        let dtype = word(4);
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!(
                "{}: unsupported dtype code {dtype}",
                path.display()
            )));
        }
        let expected = width * height * bands * 4;
        let payload = &raw[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "{}: payload is {} bytes, header demands {expected}",
                path.display(),
                payload.len()
            )));
        }
        let plane = width * height;
        let mut values = vec![0.0f32; plane * bands];
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("f32 word"));
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "{}: non-finite value at payload scalar {i}",
                    path.display()
                )));
            }
            let (b, pix) = (i / plane, i % plane);
            values[pix * bands + b] = v;
        }
        HsiCube::new(width, height, bands, values)
    }
}

/// Per-band statistics used by the normalizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

const STD_EPSILON: f64 = 1e-12;

/// Rescales every band to zero mean and unit variance over the whole scene
/// (population statistics, accumulated in f64). Bands with a standard
/// deviation under 1e-12 come out all zero. Returns the statistics used.
pub fn normalize_cube(cube: &HsiCube) -> (HsiCube, Vec<BandStats>) {
    let bands = cube.bands();
    let pixels = (cube.width() * cube.height()) as f64;
    let mut sums = vec![0.0f64; bands];
    for spectrum in cube.values().chunks_exact(bands) {
        for (s, &v) in sums.iter_mut().zip(spectrum) {
            *s += v as f64;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / pixels).collect();

    let mut sq = vec![0.0f64; bands];
    for spectrum in cube.values().chunks_exact(bands) {
        for ((s, &v), &m) in sq.iter_mut().zip(spectrum).zip(&means) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    let stats: Vec<BandStats> = means
        .iter()
        .zip(&sq)
        .map(|(&mean, &s)| BandStats {
            mean,
            std: (s / pixels).sqrt(),
        })
        .collect();

    let mut values = Vec::with_capacity(cube.values().len());
    for spectrum in cube.values().chunks_exact(bands) {
        for (&v, stat) in spectrum.iter().zip(&stats) {
            if stat.std < STD_EPSILON {
                values.push(0.0);
            } else {
                values.push(((v as f64 - stat.mean) / stat.std) as f32);
            }
        }
    }
    let normalized = HsiCube::new(cube.width(), cube.height(), cube.bands(), values)
        .expect("normalized cube keeps its dimensions");
    (normalized, stats)
}
