//! Sequential layer graphs and the forward evaluator that serves as the
//! ground truth for every MILP solution.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::{self, ConvParams, PoolParams, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// `weights` is `[n_out, n_in]`, one row per output unit.
    Dense {
        weights: Tensor,
        bias: Tensor,
        activation: Activation,
    },
    /// Each kernel sweeps every input map separately; kernel `g` applied to
    /// map `b` produces output map `g * maps_in + b`. Always followed by ReLU.
    Conv {
        kernels: Vec<Tensor>,
        bias: Vec<f64>,
        params: ConvParams,
    },
    MaxPool(PoolParams),
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool(_) => "maxpool",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// True when the layer applies a ReLU after an affine map.
    pub fn has_relu(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. }
                | LayerSpec::Dense {
                    activation: Activation::Relu,
                    ..
                }
        )
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("network has no layers")]
    Empty,
    #[error("input shape {0:?} must be [n], [h, w] or [maps, h, w] with positive extents")]
    InputShape(Vec<usize>),
    #[error("layer {layer} ({kind}): {source}")]
    Tensor {
        layer: usize,
        kind: &'static str,
        source: TensorError,
    },
    #[error("layer {layer} ({kind}): {what}: expected {expected:?}, got {actual:?}")]
    Shape {
        layer: usize,
        kind: &'static str,
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("final layer yields {actual} outputs but class_count is {class_count}")]
    ClassCount { class_count: usize, actual: usize },
    #[error("input extents: {0}")]
    Input(TensorError),
}

/// A validated sequential network. Construct through [`NetworkSpec::new`],
/// which checks that every layer's shape chains into the next.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    class_count: usize,
    output_shapes: Vec<Vec<usize>>,
}

fn as_maps(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [h, w] => Some((1, h, w)),
        [m, h, w] => Some((m, h, w)),
        _ => None,
    }
}

fn infer_output(index: usize, layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>, NetworkError> {
    let kind = layer.kind();
    let tensor_err = |source| NetworkError::Tensor {
        layer: index,
        kind,
        source,
    };
    let shape_err = |what, expected: Vec<usize>| NetworkError::Shape {
        layer: index,
        kind,
        what,
        expected,
        actual: input.to_vec(),
    };
    match layer {
        LayerSpec::Dense {
            weights,
            bias,
            ..
        } => {
            let (n_out, n_in) = match *weights.shape() {
                [o, i] => (o, i),
                _ => {
                    return Err(NetworkError::Shape {
                        layer: index,
                        kind,
                        what: "weights must be a matrix",
                        expected: vec![0, 0],
                        actual: weights.shape().to_vec(),
                    })
                }
            };
            if bias.shape() != [n_out] {
                return Err(NetworkError::Shape {
                    layer: index,
                    kind,
                    what: "bias length must equal weight rows",
                    expected: vec![n_out],
                    actual: bias.shape().to_vec(),
                });
            }
            if input != [n_in] {
                return Err(shape_err("input must be a vector of weight-column length", vec![n_in]));
            }
            Ok(vec![n_out])
        }
        LayerSpec::Conv {
            kernels,
            bias,
            params,
        } => {
            let (maps, h, w) = as_maps(input).ok_or_else(|| shape_err("conv input must be maps", vec![0, 0, 0]))?;
            if kernels.is_empty() {
                return Err(tensor_err(TensorError::ZeroParameter("kernel count")));
            }
            let f = params.kernel_size;
            if let Some(k) = kernels.iter().find(|k| k.shape() != [f, f]) {
                return Err(NetworkError::Shape {
                    layer: index,
                    kind,
                    what: "every kernel must be f x f",
                    expected: vec![f, f],
                    actual: k.shape().to_vec(),
                });
            }
            if bias.len() != kernels.len() {
                return Err(NetworkError::Shape {
                    layer: index,
                    kind,
                    what: "one bias per kernel",
                    expected: vec![kernels.len()],
                    actual: vec![bias.len()],
                });
            }
            let (oh, ow) = params.output_dims(h, w).map_err(tensor_err)?;
            Ok(vec![kernels.len() * maps, oh, ow])
        }
        LayerSpec::MaxPool(p) => {
            let (maps, h, w) = as_maps(input).ok_or_else(|| shape_err("pool input must be maps", vec![0, 0, 0]))?;
            let (oh, ow) = p.output_dims(h, w).map_err(tensor_err)?;
            Ok(if input.len() == 2 {
                vec![oh, ow]
            } else {
                vec![maps, oh, ow]
            })
        }
        LayerSpec::Flatten => Ok(vec![input.iter().product()]),
    }
}

impl NetworkSpec {
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        class_count: usize,
    ) -> Result<Self, NetworkError> {
        if input_shape.is_empty() || input_shape.len() > 3 || input_shape.contains(&0) {
            return Err(NetworkError::InputShape(input_shape));
        }
        if layers.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut output_shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            current = infer_output(i, layer, &current)?;
            output_shapes.push(current.clone());
        }
        let actual: usize = current.iter().product();
        if actual != class_count || current.len() != 1 {
            return Err(NetworkError::ClassCount {
                class_count,
                actual,
            });
        }
        Ok(Self {
            input_shape,
            layers,
            class_count,
            output_shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Output shape of layer `k`.
    pub fn output_shape(&self, k: usize) -> &[usize] {
        &self.output_shapes[k]
    }

    /// Input shape of layer `k` (the network input for `k = 0`).
    pub fn layer_input_shape(&self, k: usize) -> &[usize] {
        if k == 0 {
            &self.input_shape
        } else {
            &self.output_shapes[k - 1]
        }
    }

    /// Copy with every layer replaced through `f`, re-validated.
    pub fn map_layers(
        &self,
        mut f: impl FnMut(usize, &LayerSpec) -> LayerSpec,
    ) -> Result<Self, NetworkError> {
        let layers = self.layers.iter().enumerate().map(|(i, l)| f(i, l)).collect();
        Self::new(self.input_shape.clone(), layers, self.class_count)
    }

    /// Same network with all dense and conv biases set to zero.
    pub fn without_biases(&self) -> Self {
        self.map_layers(|_, l| match l {
            LayerSpec::Dense {
                weights,
                bias,
                activation,
            } => LayerSpec::Dense {
                weights: weights.clone(),
                bias: Tensor::zeros(bias.shape()),
                activation: *activation,
            },
            LayerSpec::Conv {
                kernels, params, bias,
            } => LayerSpec::Conv {
                kernels: kernels.clone(),
                bias: vec![0.0; bias.len()],
                params: *params,
            },
            other => other.clone(),
        })
        .expect("bias removal preserves shapes")
    }

    pub fn has_nonzero_bias(&self) -> bool {
        self.layers.iter().any(|l| match l {
            LayerSpec::Dense { bias, .. } => bias.data().iter().any(|&b| b != 0.0),
            LayerSpec::Conv { bias, .. } => bias.iter().any(|&b| b != 0.0),
            _ => false,
        })
    }

    pub fn is_dense_only(&self) -> bool {
        self.layers
            .iter()
            .all(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Flatten))
    }
}

/// Every intermediate of one forward pass. `post[k]` is the output of layer
/// `k`; `pre[k]` is the affine value before the activation for dense and conv
/// layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub input: Tensor,
    pub pre: Vec<Option<Tensor>>,
    pub post: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn output(&self) -> &Tensor {
        self.post.last().expect("validated networks have layers")
    }
}

/// Applies a conv layer to `[maps, h, w]` or `[h, w]` input. Returns the
/// pre-activation stack.
pub fn conv_layer(
    input: &Tensor,
    kernels: &[Tensor],
    bias: &[f64],
    params: ConvParams,
) -> Result<Tensor, TensorError> {
    let stacked;
    let input = if input.shape().len() == 2 {
        stacked = input.reshape(&[1, input.shape()[0], input.shape()[1]])?;
        &stacked
    } else {
        input
    };
    let maps = input.shape()[0];
    let mut out = Vec::with_capacity(kernels.len() * maps);
    for (kernel, &b) in kernels.iter().zip(bias) {
        for m in 0..maps {
            out.push(tensor::conv2d(&input.map_slice(m), kernel, params)?.map(|v| v + b));
        }
    }
    Tensor::stack(&out)
}

pub fn pool_layer(input: &Tensor, params: PoolParams) -> Result<Tensor, TensorError> {
    if input.shape().len() == 2 {
        return tensor::maxpool2d(input, params);
    }
    let maps: Vec<Tensor> = (0..input.shape()[0])
        .map(|m| tensor::maxpool2d(&input.map_slice(m), params))
        .collect::<Result<_, _>>()?;
    Tensor::stack(&maps)
}

pub fn forward(net: &NetworkSpec, input: &Tensor) -> Result<ActivationTrace, NetworkError> {
    input
        .expect_shape(net.input_shape())
        .map_err(NetworkError::Input)?;
    let mut pre = Vec::with_capacity(net.layers().len());
    let mut post = Vec::with_capacity(net.layers().len());
    let mut current = input.clone();
    for (k, layer) in net.layers().iter().enumerate() {
        let err = |source| NetworkError::Tensor {
            layer: k,
            kind: layer.kind(),
            source,
        };
        let (p, out) = match layer {
            LayerSpec::Dense {
                weights,
                bias,
                activation,
            } => {
                let z = tensor::affine(weights, &current, bias).map_err(err)?;
                let act = *activation;
                let out = z.map(|v| act.apply(v));
                (Some(z), out)
            }
            LayerSpec::Conv {
                kernels,
                bias,
                params,
            } => {
                let z = conv_layer(&current, kernels, bias, *params).map_err(err)?;
                let out = tensor::relu(&z);
                (Some(z), out)
            }
            LayerSpec::MaxPool(p) => (None, pool_layer(&current, *p).map_err(err)?),
            LayerSpec::Flatten => (None, current.flatten()),
        };
        pre.push(p);
        post.push(out.clone());
        current = out;
    }
    Ok(ActivationTrace {
        input: input.clone(),
        pre,
        post,
    })
}

/// Label is the argmax of the final-layer scores, lowest index on ties.
pub fn classify(net: &NetworkSpec, input: &Tensor) -> Result<(usize, Tensor), NetworkError> {
    let trace = forward(net, input)?;
    let scores = trace.output().clone();
    Ok((scores.argmax(), scores))
}

/// One output unit of an affine layer as a sparse row over the flattened
/// layer input. Zero weights and padding cells are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub terms: Vec<(usize, f64)>,
    pub bias: f64,
}

impl AffineRow {
    pub fn eval(&self, input: &[f64]) -> f64 {
        self.bias + self.terms.iter().map(|&(i, w)| w * input[i]).sum::<f64>()
    }
}

/// Rows of layer `k` in flattened output order, or `None` for layers
/// without an affine part.
pub fn affine_rows(net: &NetworkSpec, k: usize) -> Option<Vec<AffineRow>> {
    match &net.layers()[k] {
        LayerSpec::Dense { weights, bias, .. } => {
            let n_in = weights.shape()[1];
            Some(
                (0..weights.shape()[0])
                    .map(|o| AffineRow {
                        terms: weights.data()[o * n_in..(o + 1) * n_in]
                            .iter()
                            .enumerate()
                            .filter(|(_, &w)| w != 0.0)
                            .map(|(i, &w)| (i, w))
                            .collect(),
                        bias: bias.data()[o],
                    })
                    .collect(),
            )
        }
        LayerSpec::Conv {
            kernels,
            bias,
            params,
        } => {
            let (maps, h, w) = as_maps(net.layer_input_shape(k)).expect("validated conv input");
            let out = net.output_shape(k);
            let (oh, ow) = (out[1], out[2]);
            let (f, s, p) = (params.kernel_size, params.stride, params.padding);
            let mut rows = Vec::with_capacity(out.iter().product());
            for (kernel, &b) in kernels.iter().zip(bias) {
                for m in 0..maps {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut terms = Vec::with_capacity(f * f);
                            for i in 0..f {
                                for j in 0..f {
                                    let wt = kernel.data()[i * f + j];
                                    let (y, x) = (r * s + i, c * s + j);
                                    if wt == 0.0 || y < p || x < p || y - p >= h || x - p >= w {
                                        continue;
                                    }
                                    terms.push((m * h * w + (y - p) * w + (x - p), wt));
                                }
                            }
                            rows.push(AffineRow { terms, bias: b });
                        }
                    }
                }
            }
            Some(rows)
        }
        _ => None,
    }
}

/// For a max-pool layer `k`, the flattened input indices of every window in
/// flattened output order, each window in row-major order.
pub fn pool_windows(net: &NetworkSpec, k: usize) -> Option<Vec<Vec<usize>>> {
    let LayerSpec::MaxPool(p) = &net.layers()[k] else {
        return None;
    };
    let (maps, h, w) = as_maps(net.layer_input_shape(k)).expect("validated pool input");
    let (oh, ow) = p.output_dims(h, w).expect("validated pool dims");
    let mut out = Vec::with_capacity(maps * oh * ow);
    for m in 0..maps {
        for r in 0..oh {
            for c in 0..ow {
                let mut win = Vec::with_capacity(p.pool_size * p.pool_size);
                for i in 0..p.pool_size {
                    for j in 0..p.pool_size {
                        win.push(m * h * w + (r * p.stride + i) * w + c * p.stride + j);
                    }
                }
                out.push(win);
            }
        }
    }
    Some(out)
}
