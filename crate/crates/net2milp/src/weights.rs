//! JSON weight files.
//!
//! ```json
//! {"input_shape": [1], "class_count": 1,
//!  "layers": [{"kind": "dense", "weights": [[1.0]], "bias": [0.0], "activation": "relu"}]}
//! ```
//!
//! Reals are written in shortest round-trip form and parsed with correct
//! rounding, so save followed by load reproduces every bit.

use net2milp_core::network::{Activation, LayerSpec, NetworkError, NetworkSpec};
use net2milp_core::tensor::{ConvParams, PoolParams, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("weight file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("layer {layer} ({kind}): {message}")]
    Layer {
        layer: usize,
        kind: &'static str,
        message: String,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    input_shape: Vec<usize>,
    class_count: usize,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerDoc {
    Dense {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        activation: Activation,
    },
    Conv {
        kernels: Vec<Vec<Vec<f64>>>,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
    },
    Maxpool {
        pool_size: usize,
        stride: usize,
    },
    Flatten,
}

fn layer_err(layer: usize, kind: &'static str, message: impl Into<String>) -> WeightsError {
    WeightsError::Layer {
        layer,
        kind,
        message: message.into(),
    }
}

fn tensor_err(layer: usize, kind: &'static str) -> impl Fn(TensorError) -> WeightsError {
    move |e| layer_err(layer, kind, e.to_string())
}

fn to_spec(index: usize, doc: LayerDoc) -> Result<LayerSpec, WeightsError> {
    match doc {
        LayerDoc::Dense {
            weights,
            bias,
            activation,
        } => {
            let kind = "dense";
            let cols = weights.first().map_or(0, Vec::len);
            if let Some((r, row)) = weights.iter().enumerate().find(|(_, r)| r.len() != cols) {
                return Err(layer_err(index, kind, format!("row {r} has {} entries, expected {cols}", row.len())));
            }
            if bias.len() != weights.len() {
                return Err(layer_err(
                    index,
                    kind,
                    format!("bias has {} entries, expected {} (one per weight row)", bias.len(), weights.len()),
                ));
            }
            Ok(LayerSpec::Dense {
                weights: Tensor::matrix(&weights).map_err(tensor_err(index, kind))?,
                bias: Tensor::vector(bias).map_err(tensor_err(index, kind))?,
                activation,
            })
        }
        LayerDoc::Conv {
            kernels,
            bias,
            stride,
            padding,
        } => {
            let kind = "conv";
            let f = kernels.first().map_or(0, Vec::len);
            if f == 0 {
                return Err(layer_err(index, kind, "no kernels"));
            }
            for (g, k) in kernels.iter().enumerate() {
                if k.len() != f || k.iter().any(|row| row.len() != f) {
                    return Err(layer_err(index, kind, format!("kernel {g} is not {f}x{f}")));
                }
            }
            if bias.len() != kernels.len() {
                return Err(layer_err(
                    index,
                    kind,
                    format!("bias has {} entries, expected {} (one per kernel)", bias.len(), kernels.len()),
                ));
            }
            let params = ConvParams::new(f, stride, padding).map_err(tensor_err(index, kind))?;
            let kernels = kernels
                .iter()
                .map(|k| Tensor::matrix(k).map_err(tensor_err(index, kind)))
                .collect::<Result<_, _>>()?;
            Ok(LayerSpec::Conv { kernels, bias, params })
        }
        LayerDoc::Maxpool { pool_size, stride } => Ok(LayerSpec::MaxPool(
            PoolParams::new(pool_size, stride).map_err(tensor_err(index, "maxpool"))?,
        )),
        LayerDoc::Flatten => Ok(LayerSpec::Flatten),
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn to_doc(layer: &LayerSpec) -> LayerDoc {
    match layer {
        LayerSpec::Dense {
            weights,
            bias,
            activation,
        } => LayerDoc::Dense {
            weights: rows(weights),
            bias: bias.data().to_vec(),
            activation: *activation,
        },
        LayerSpec::Conv { kernels, bias, params } => LayerDoc::Conv {
            kernels: kernels.iter().map(rows).collect(),
            bias: bias.clone(),
            stride: params.stride,
            padding: params.padding,
        },
        LayerSpec::MaxPool(p) => LayerDoc::Maxpool {
            pool_size: p.pool_size,
            stride: p.stride,
        },
        LayerSpec::Flatten => LayerDoc::Flatten,
    }
}

/// Parses and validates a weight file.
pub fn load_network(text: &str) -> Result<NetworkSpec, WeightsError> {
    let doc: NetworkDoc = serde_json::from_str(text)?;
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| to_spec(i, l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NetworkSpec::new(doc.input_shape, layers, doc.class_count)?)
}

/// Pretty-printed weight file with a trailing newline.
pub fn save_network(net: &NetworkSpec) -> String {
    let doc = NetworkDoc {
        input_shape: net.input_shape().to_vec(),
        class_count: net.class_count(),
        layers: net.layers().iter().map(to_doc).collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("weight documents always serialize");
    s.push('\n');
    s
}
