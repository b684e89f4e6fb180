//! Reader for IDX files (the MNIST container format): two zero bytes, a
//! type code, a dimension count, then big-endian `u32` dimensions and the
//! payload.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Validation(format!("IDX: {}", msg.into()))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("missing magic prefix"));
    }
    let (type_code, ndims) = (bytes[2], bytes[3] as usize);
    let width = match type_code {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        other => return Err(bad(format!("unknown type code {other:#04x}"))),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != count * width {
        return Err(bad(format!(
            "payload holds {} bytes, header promises {}",
            payload.len(),
            count * width
        )));
    }
    let values = payload
        .chunks_exact(width)
        .map(|c| match type_code {
            0x08 => c[0] as f64,
            0x09 => c[0] as i8 as f64,
            0x0B => i16::from_be_bytes([c[0], c[1]]) as f64,
            0x0C => i32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            0x0D => f32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            _ => f64::from_be_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    Ok(IdxArray { dims, values })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_idx(&bytes)
}

/// Loads an image file (`[n × …]`) and a label file (`[n]`) into a dataset.
/// Unsigned-byte images are scaled into `[0, 1]`.
pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.is_empty() || lab.dims.len() != 1 {
        return Err(bad("expected an image tensor and a 1-D label vector"));
    }
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(bad(format!("{} images but {} labels", n, lab.dims[0])));
    }
    let width: usize = img.dims[1..].iter().product();
    let max = img.values.iter().copied().fold(0.0f64, f64::max);
    let scale = if max > 1.0 { 1.0 / 255.0 } else { 1.0 };
    let data = img.values.iter().map(|v| v * scale).collect();
    let labels: Vec<usize> = lab
        .values
        .iter()
        .map(|&v| {
            if v < 0.0 || v.fract() != 0.0 {
                Err(bad(format!("label {v} is not a class index")))
            } else {
                Ok(v as usize)
            }
        })
        .collect::<Result<_>>()?;
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    Dataset::new(Tensor::new(vec![n, width], data)?, labels, classes)
}
