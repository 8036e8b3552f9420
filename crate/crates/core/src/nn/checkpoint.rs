//! Binary checkpoint: `b"ACPM"`, a little-endian u32 format version, the
//! architecture descriptor, then every parameter as little-endian f32 in
//! layer order (weight before bias).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::arch::ArchitectureSpec;
use crate::nn::model::{LayerParams, ModelParams};
use crate::nn::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ACPM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_params(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    params.check_shapes()?;
    let desc = params.arch.encode();
    let mut out = Vec::with_capacity(8 + desc.len() + params.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&desc);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams<f32>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic (not an ACPM checkpoint)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let (arch, used) = ArchitectureSpec::decode(&bytes[8..])?;
    let payload = &bytes[8 + used..];
    let expected = arch.param_count() * 4;
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, architecture needs {expected}",
            payload.len()
        )));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, floats.by_ref().take(n).collect())
    };
    let layers = arch
        .param_shapes()
        .iter()
        .map(|s| {
            Ok(LayerParams {
                weight: take(&s.weight)?,
                bias: take(&s.bias)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelParams { arch, layers })
}

/// Size of the header (magic, version, descriptor) for `arch`.
pub fn header_len(arch: &ArchitectureSpec) -> usize {
    8 + arch.encode().len()
}

pub fn save_params(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let bytes = encode_params(params)?;
    let ctx = || format!("writing checkpoint {}", path.display());
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(&bytes).map_err(|e| Error::io(ctx(), e))?;
    f.sync_all().map_err(|e| Error::io(ctx(), e))
}

pub fn load_params(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    decode_params(&bytes)
}
