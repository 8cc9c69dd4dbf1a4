//! Model checkpoints.
//!
//! ```text
//! 8 bytes    magic "HTLCKPT1"
//! u64 LE     header length in bytes
//! header     TOML: architecture, value count, free-form fingerprint
//! f64 LE     parameter values in `ModelParams::flatten` order
//! ```

use std::fs;
use std::path::Path;

use htlab_core::model::{Activation, MlpSpec, ModelParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HTLCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub layer_widths: Vec<usize>,
    pub activation: String,
    pub use_batchnorm: bool,
    pub use_in_adapter: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub in_eps: f64,
    pub num_values: usize,
    /// Identifies what produced the values, e.g. the configuration a cached
    /// source model was trained under.
    pub fingerprint: String,
}

impl Header {
    pub fn spec(&self) -> Result<MlpSpec, String> {
        let mut spec = MlpSpec::new(
            self.layer_widths.clone(),
            Activation::parse(&self.activation).map_err(|e| e.to_string())?,
        )
        .with_batchnorm(self.use_batchnorm)
        .with_in_adapter(self.use_in_adapter);
        spec.bn_eps = self.bn_eps;
        spec.bn_momentum = self.bn_momentum;
        spec.in_eps = self.in_eps;
        Ok(spec)
    }
}

pub fn encode(params: &ModelParams, fingerprint: &str) -> Vec<u8> {
    let spec = params.spec();
    let values = params.flatten();
    let header = Header {
        layer_widths: spec.layer_widths.clone(),
        activation: spec.activation.as_str().to_string(),
        use_batchnorm: spec.use_batchnorm,
        use_in_adapter: spec.use_in_adapter,
        bn_eps: spec.bn_eps,
        bn_momentum: spec.bn_momentum,
        in_eps: spec.in_eps,
        num_values: values.len(),
        fingerprint: fingerprint.to_string(),
    };
    let text = toml::to_string(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + text.len() + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(ModelParams, Header), String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err("not an HTLCKPT1 checkpoint".into());
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let text = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or("truncated header")?;
    let text = std::str::from_utf8(text).map_err(|_| "header is not UTF-8")?;
    let header: Header = toml::from_str(text).map_err(|e| e.to_string())?;
    let body = &bytes[16 + len..];
    if body.len() != 8 * header.num_values {
        return Err(format!("expected {} values, found {} bytes", header.num_values, body.len()));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ModelParams::from_flat(&header.spec()?, &values).map_err(|e| e.to_string())?;
    Ok((params, header))
}

pub fn save(path: &Path, params: &ModelParams, fingerprint: &str) -> Result<()> {
    // Write then rename so a reader never sees a half-written file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(params, fingerprint)).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<(ModelParams, Header)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}
