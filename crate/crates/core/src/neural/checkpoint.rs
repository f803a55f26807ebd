//! JSON checkpoints with bit-exact floats.
//!
//! Every `f64` is written as the hex string of its IEEE-754 bits (`"0x3ff0000000000000"`),
//! so a save/load round-trip reproduces the network exactly.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::mlp::{Layer, Mlp};
use crate::error::{Error, Result};

pub const MLP_FORMAT: &str = "hypersolve-mlp";
pub const FORMAT_VERSION: u32 = 1;

pub fn f64_to_hex(x: f64) -> String {
    format!("0x{:016x}", x.to_bits())
}

pub fn hex_to_f64(s: &str) -> Result<f64> {
    let digits = s
        .strip_prefix("0x")
        .ok_or_else(|| Error::Parse(format!("expected 0x-prefixed float bits, got {s:?}")))?;
    u64::from_str_radix(digits, 16)
        .map(f64::from_bits)
        .map_err(|e| Error::Parse(format!("bad float bits {s:?}: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<String>,
}

impl MatrixRecord {
    pub fn from_array(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().map(|&x| f64_to_hex(x)).collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        let data = self
            .data
            .iter()
            .map(|s| hex_to_f64(s))
            .collect::<Result<Vec<_>>>()?;
        Array2::from_shape_vec((self.rows, self.cols), data)
            .map_err(|e| Error::Parse(format!("matrix {}x{}: {e}", self.rows, self.cols)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ActivationRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<String>,
}

impl ActivationRecord {
    pub fn from_activation(a: &Activation) -> Self {
        let freq = match *a {
            Activation::Sine { w0 } => Some(f64_to_hex(w0)),
            Activation::Snake { a } => Some(f64_to_hex(a)),
            _ => None,
        };
        Self {
            kind: a.name().to_string(),
            freq,
        }
    }

    pub fn to_activation(&self) -> Result<Activation> {
        let freq = self
            .freq
            .as_deref()
            .map(hex_to_f64)
            .transpose()?
            .unwrap_or(1.0);
        Activation::from_name(&self.kind, freq)
            .ok_or_else(|| Error::Parse(format!("unknown activation {:?}", self.kind)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub weight: MatrixRecord,
    pub bias: MatrixRecord,
}

/// Serialized form of an [`Mlp`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MlpRecord {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<ActivationRecord>,
    pub layers: Vec<LayerRecord>,
}

impl MlpRecord {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self {
            format: MLP_FORMAT.into(),
            version: FORMAT_VERSION,
            layer_dims: net.layer_dims().to_vec(),
            activations: net
                .activations()
                .iter()
                .map(ActivationRecord::from_activation)
                .collect(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    weight: MatrixRecord::from_array(&l.weight),
                    bias: MatrixRecord::from_array(&l.bias),
                })
                .collect(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.format != MLP_FORMAT {
            return Err(Error::Parse(format!("unexpected format {:?}", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let activations = self
            .activations
            .iter()
            .map(ActivationRecord::to_activation)
            .collect::<Result<Vec<_>>>()?;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weight: l.weight.to_array()?,
                    bias: l.bias.to_array()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Mlp::from_layers(activations, layers)?;
        if net.layer_dims() != self.layer_dims.as_slice() {
            return Err(Error::Parse(format!(
                "layer_dims {:?} disagree with stored weights {:?}",
                self.layer_dims,
                net.layer_dims()
            )));
        }
        Ok(net)
    }
}

pub fn mlp_to_json(net: &Mlp) -> String {
    serde_json::to_string_pretty(&MlpRecord::from_mlp(net)).expect("record serializes")
}

pub fn mlp_from_json(s: &str) -> Result<Mlp> {
    let rec: MlpRecord = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
    rec.to_mlp()
}

pub fn save_mlp(net: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, mlp_to_json(net))?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    mlp_from_json(&std::fs::read_to_string(path)?)
}
