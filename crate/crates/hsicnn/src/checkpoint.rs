//! Model checkpoints.
//!
//! File layout (integers and scalars little-endian):
//!   magic      4 bytes  "HSNN"
//!   version    u32      currently 1
//!   config_len u32
//!   config     UTF-8 key=value lines: the architecture plus the training
//!              iteration counter and the seed the weights came from
//!   blobs      raw f32 parameters in fixed order:
//!              conv1 weights, conv1 biases, conv2 weights, conv2 biases,
//!              fc1 weights, fc1 biases, fc2 weights, fc2 biases,
//!              output weights, output biases
//!
//! The config block is validated before any parameter is read, and the
//! payload length must match it exactly, so a load either reproduces the
//! saved model bit for bit or fails with a structured error.

use std::fs;
use std::path::Path;

use crate::error::{io_context, Error, Result};
use crate::model::{ArchConfig, Model};

const MAGIC: &[u8; 4] = b"HSNN";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let config = render_config(model);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    for (_, layer) in model.layers() {
        for &v in layer.weights.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in layer.biases.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| io_context(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let raw = fs::read(path).map_err(|e| io_context(path, e))?;
    if raw.len() < 12 {
        return Err(Error::Format(format!(
            "{}: file too short for a checkpoint header",
            path.display()
        )));
    }
    if &raw[..4] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"HSNN\"",
            path.display(),
            &raw[..4]
        )));
    }
    let version = u32::from_le_bytes(raw[4..8].try_into().expect("version word"));
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version} (this build reads {VERSION})",
            path.display()
        )));
    }
    let config_len = u32::from_le_bytes(raw[8..12].try_into().expect("length word")) as usize;
    let config_end = 12 + config_len;
    if raw.len() < config_end {
        return Err(Error::Format(format!(
            "{}: config block runs past the end of the file",
            path.display()
        )));
    }
    let config_text = std::str::from_utf8(&raw[12..config_end]).map_err(|_| {
        Error::Format(format!("{}: config block is not UTF-8", path.display()))
    })?;
    let (config, iteration, seed) = parse_config(path, config_text)?;

    // Validates the architecture before any blob is touched.
    let mut model = Model::<f32>::zeroed(config)?;
    model.iteration = iteration;
    model.seed = seed;

    let expected_scalars: usize = model.param_count();
    let payload = &raw[config_end..];
    if payload.len() != expected_scalars * 4 {
        return Err(Error::Format(format!(
            "{}: parameter payload is {} bytes, config demands {}",
            path.display(),
            payload.len(),
            expected_scalars * 4
        )));
    }
    let mut scalars = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("f32 word")));
    for (_, layer) in model.layers_mut() {
        for v in layer.weights.data_mut() {
            *v = scalars.next().expect("length checked");
        }
        for v in layer.biases.data_mut() {
            *v = scalars.next().expect("length checked");
        }
    }
    Ok(model)
}

fn render_config(model: &Model<f32>) -> String {
    let c = model.config();
    let mut out = String::new();
    for (key, value) in [
        ("bands", c.bands),
        ("classes", c.classes),
        ("conv1_kernel_depth", c.conv1_kernel_depth),
        ("conv1_stride", c.conv1_stride),
        ("conv1_kernels", c.conv1_kernels),
        ("conv2_kernels", c.conv2_kernels),
        ("conv2_stride", c.conv2_stride),
        ("pool_window", c.pool_window),
        ("pool_stride", c.pool_stride),
        ("fc1_nodes", c.fc1_nodes),
        ("fc2_nodes", c.fc2_nodes),
    ] {
        out.push_str(&format!("{key}={value}\n"));
    }
    out.push_str(&format!("iteration={}\n", model.iteration));
    out.push_str(&format!("seed={}\n", model.seed));
    out
}

fn parse_config(path: &Path, text: &str) -> Result<(ArchConfig, u64, u64)> {
    let mut fields = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!(
                "{}: config line {} is not key=value",
                path.display(),
                lineno + 1
            ))
        })?;
        let value: u64 = value.parse().map_err(|_| {
            Error::Format(format!(
                "{}: config value {key}={value} is not an integer",
                path.display()
            ))
        })?;
        if fields.insert(key.to_string(), value).is_some() {
            return Err(Error::Format(format!(
                "{}: duplicate config key '{key}'",
                path.display()
            )));
        }
    }
    let mut take = |key: &str| -> Result<u64> {
        fields.remove(key).ok_or_else(|| {
            Error::Format(format!("{}: config is missing '{key}'", path.display()))
        })
    };
    let config = ArchConfig {
        bands: take("bands")? as usize,
        classes: take("classes")? as usize,
        conv1_kernel_depth: take("conv1_kernel_depth")? as usize,
        conv1_stride: take("conv1_stride")? as usize,
        conv1_kernels: take("conv1_kernels")? as usize,
        conv2_kernels: take("conv2_kernels")? as usize,
        conv2_stride: take("conv2_stride")? as usize,
        pool_window: take("pool_window")? as usize,
        pool_stride: take("pool_stride")? as usize,
        fc1_nodes: take("fc1_nodes")? as usize,
        fc2_nodes: take("fc2_nodes")? as usize,
    };
    let iteration = take("iteration")?;
    let seed = take("seed")?;
    if let Some(extra) = fields.keys().next() {
        return Err(Error::Format(format!(
            "{}: unknown config key '{extra}'",
            path.display()
        )));
    }
    Ok((config, iteration, seed))
}
