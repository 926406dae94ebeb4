use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::model::{Activation, EncoderModel, Layer};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reals as base64 of their little-endian bytes.
fn encode(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Schema(format!("checkpoint array: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Schema(format!(
            "checkpoint array holds {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub out_dim: usize,
    pub in_dim: usize,
    pub activation: Activation,
    pub weight: String,
    pub bias: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub seed: u64,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn new(model: &EncoderModel, config: &TrainConfig, epoch: usize) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| LayerRecord {
                out_dim: l.out_dim(),
                in_dim: l.in_dim(),
                activation: l.activation,
                weight: encode(l.weight.data()),
                bias: encode(l.bias.data()),
            })
            .collect();
        Self {
            config: config.clone(),
            epoch,
            seed: config.seed,
            layers,
        }
    }

    pub fn model(&self) -> Result<EncoderModel> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for r in &self.layers {
            let w = decode(&r.weight, r.out_dim * r.in_dim)?;
            let b = decode(&r.bias, r.out_dim)?;
            layers.push(Layer::new(
                Tensor::matrix(r.out_dim, r.in_dim, w)?,
                Tensor::vector(b),
                r.activation,
            )?);
        }
        EncoderModel::new(layers).map_err(|e| Error::Schema(format!("checkpoint layers: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
