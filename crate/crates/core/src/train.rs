//! Full-batch gradient descent on the mean squared error.
//!
//! ReLU'(0) is 0 and max-pool gradients go to the window argmax (lowest index
//! on ties), matching [`crate::tensor::pool_argmax`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::math;
use crate::network::{self, Activation, LayerSpec, NetworkError, NetworkSpec};
use crate::rng;
use crate::tensor::{self, ConvParams, PoolParams, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitScheme {
    HeGaussian,
    UniformKernel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 500,
            seed: 0,
            init: InitScheme::HeGaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("learning rate must be a positive finite number, got {0}")]
    LearningRate(f64),
    #[error("{what} must be at least 1")]
    ZeroParameter { what: &'static str },
    #[error("dataset has {inputs} inputs but {targets} targets")]
    DatasetLength { inputs: usize, targets: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("target {index} is not one-hot")]
    NotOneHot { index: usize },
    #[error("target {index} has length {len}, network has {class_count} classes")]
    TargetLength { index: usize, len: usize, class_count: usize },
    #[error("gradient does not match the network layout at layer {0}")]
    GradientLayout(usize),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Tensor>,
    targets: Vec<Tensor>,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, targets: Vec<Tensor>) -> Result<Self, TrainError> {
        if inputs.len() != targets.len() {
            return Err(TrainError::DatasetLength {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        for (index, t) in targets.iter().enumerate() {
            let ones = t.data().iter().filter(|&&v| v == 1.0).count();
            let zeros = t.data().iter().filter(|&&v| v == 0.0).count();
            if t.shape().len() != 1 || ones != 1 || ones + zeros != t.len() {
                return Err(TrainError::NotOneHot { index });
            }
        }
        Ok(Self { inputs, targets })
    }

    /// Builds one-hot targets from integer labels.
    pub fn from_labels(inputs: Vec<Tensor>, labels: &[usize], class_count: usize) -> Result<Self, TrainError> {
        let targets = labels
            .iter()
            .map(|&l| {
                let mut t = vec![0.0; class_count];
                if let Some(slot) = t.get_mut(l) {
                    *slot = 1.0;
                }
                Tensor::new(vec![class_count], t)
            })
            .collect::<Result<_, _>>()?;
        Self::new(inputs, targets)
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Tensor] {
        &self.targets
    }

    pub fn labels(&self) -> Vec<usize> {
        self.targets.iter().map(Tensor::argmax).collect()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self, net: &NetworkSpec) -> Result<(), TrainError> {
        if self.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        for (index, t) in self.targets.iter().enumerate() {
            if t.len() != net.class_count() {
                return Err(TrainError::TargetLength {
                    index,
                    len: t.len(),
                    class_count: net.class_count(),
                });
            }
        }
        Ok(())
    }
}

/// Zero-mean Gaussian samples with standard deviation `sqrt(2 / fan_in)`.
pub fn he_init(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor, TrainError> {
    he_sample(shape, fan_in, &mut rng::named(seed, "he"))
}

fn he_sample(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<Tensor, TrainError> {
    if fan_in == 0 {
        return Err(TrainError::ZeroParameter { what: "fan_in" });
    }
    let normal = Normal::new(0.0, math::sqrt(2.0 / fan_in as f64)).expect("positive sigma");
    let n = shape.iter().product();
    Ok(Tensor::new(shape.to_vec(), normal.sample_iter(rng).take(n).collect())?)
}

/// Half-width of the uniform kernel distribution.
pub fn uniform_kernel_bound(f: usize, alpha_in: usize, m: usize) -> f64 {
    let (f, a, m) = (f as f64, alpha_in as f64, m as f64);
    math::sqrt(f / ((a + f) * m * m))
}

/// An `f × f` kernel with entries uniform on `±sqrt(f / ((alpha_in + f) m²))`.
pub fn uniform_kernel_init(f: usize, alpha_in: usize, m: usize, seed: u64) -> Result<Tensor, TrainError> {
    uniform_kernel_sample(f, alpha_in, m, &mut rng::named(seed, "uniform-kernel"))
}

fn uniform_kernel_sample(f: usize, alpha_in: usize, m: usize, rng: &mut impl Rng) -> Result<Tensor, TrainError> {
    for (what, v) in [("f", f), ("alpha_in", alpha_in), ("m", m)] {
        if v == 0 {
            return Err(TrainError::ZeroParameter { what });
        }
    }
    let b = uniform_kernel_bound(f, alpha_in, m);
    let dist = Uniform::new_inclusive(-b, b).expect("finite bound");
    Ok(Tensor::new(vec![f, f], dist.sample_iter(rng).take(f * f).collect())?)
}

/// Re-samples every weight of `template` and zeroes every bias. Dense layers
/// always use He initialization; conv kernels follow `scheme`.
pub fn init_network(template: &NetworkSpec, scheme: InitScheme, seed: u64) -> Result<NetworkSpec, TrainError> {
    let mut rng = rng::named(seed, "init");
    let mut failure = None;
    let net = template.map_layers(|k, layer| {
        let fresh = match layer {
            LayerSpec::Dense {
                weights,
                bias,
                activation,
            } => he_sample(weights.shape(), weights.shape()[1], &mut rng).map(|w| LayerSpec::Dense {
                weights: w,
                bias: Tensor::zeros(bias.shape()),
                activation: *activation,
            }),
            LayerSpec::Conv {
                kernels, params, ..
            } => {
                let f = params.kernel_size;
                let shape = template.layer_input_shape(k);
                let alpha_in = if shape.len() == 3 { shape[0] } else { 1 };
                kernels
                    .iter()
                    .map(|_| match scheme {
                        InitScheme::HeGaussian => he_sample(&[f, f], f * f, &mut rng),
                        InitScheme::UniformKernel => uniform_kernel_sample(f, alpha_in, kernels.len(), &mut rng),
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(|ks| LayerSpec::Conv {
                        bias: vec![0.0; ks.len()],
                        kernels: ks,
                        params: *params,
                    })
            }
            other => Ok(other.clone()),
        };
        fresh.unwrap_or_else(|e| {
            failure.get_or_insert(e);
            layer.clone()
        })
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(net),
    }
}

/// `(1 / 2M) Σ_m Σ_i (target_i − output_i)²`.
pub fn mse_loss(net: &NetworkSpec, data: &Dataset) -> Result<f64, TrainError> {
    data.check(net)?;
    let mut total = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let out = network::forward(net, x)?;
        total += squared_error(out.output(), t);
    }
    Ok(total / (2.0 * data.len() as f64))
}

fn squared_error(out: &Tensor, target: &Tensor) -> f64 {
    out.data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| (t - o) * (t - o))
        .sum()
}

/// Gradient of one layer's parameters. Layers without parameters carry
/// [`LayerGrad::None`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Dense { weights: Tensor, bias: Tensor },
    Conv { kernels: Vec<Tensor>, bias: Vec<f64> },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    fn zeros_like(net: &NetworkSpec) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                LayerSpec::Dense { weights, bias, .. } => LayerGrad::Dense {
                    weights: Tensor::zeros(weights.shape()),
                    bias: Tensor::zeros(bias.shape()),
                },
                LayerSpec::Conv { kernels, bias, .. } => LayerGrad::Conv {
                    kernels: kernels.iter().map(|k| Tensor::zeros(k.shape())).collect(),
                    bias: vec![0.0; bias.len()],
                },
                _ => LayerGrad::None,
            })
            .collect();
        Self { layers }
    }

    /// All gradient entries in layer order, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Dense { weights, bias } => {
                    out.extend_from_slice(weights.data());
                    out.extend_from_slice(bias.data());
                }
                LayerGrad::Conv { kernels, bias } => {
                    for k in kernels {
                        out.extend_from_slice(k.data());
                    }
                    out.extend_from_slice(bias);
                }
                LayerGrad::None => {}
            }
        }
        out
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Exact gradient of [`mse_loss`] together with the loss itself.
pub fn loss_and_gradients(net: &NetworkSpec, data: &Dataset) -> Result<(f64, Gradients), TrainError> {
    data.check(net)?;
    let scale = 1.0 / data.len() as f64;
    let mut grads = Gradients::zeros_like(net);
    let mut total = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let trace = network::forward(net, x)?;
        total += squared_error(trace.output(), t);
        let mut g: Vec<f64> = trace
            .output()
            .data()
            .iter()
            .zip(t.data())
            .map(|(o, t)| (o - t) * scale)
            .collect();
        for (k, layer) in net.layers().iter().enumerate().rev() {
            let input = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            g = backward_layer(layer, input, trace.pre[k].as_ref(), &g, &mut grads.layers[k])?;
        }
    }
    Ok((total * scale / 2.0, grads))
}

pub fn backprop(net: &NetworkSpec, data: &Dataset) -> Result<Gradients, TrainError> {
    loss_and_gradients(net, data).map(|(_, g)| g)
}

fn relu_mask(pre: Option<&Tensor>, g: &[f64], act: Activation) -> Vec<f64> {
    match (act, pre) {
        (Activation::Relu, Some(z)) => z
            .data()
            .iter()
            .zip(g)
            .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
            .collect(),
        _ => g.to_vec(),
    }
}

/// Accumulates this layer's parameter gradient and returns the gradient with
/// respect to its input.
fn backward_layer(
    layer: &LayerSpec,
    input: &Tensor,
    pre: Option<&Tensor>,
    g: &[f64],
    acc: &mut LayerGrad,
) -> Result<Vec<f64>, TrainError> {
    match (layer, acc) {
        (
            LayerSpec::Dense {
                weights,
                activation,
                ..
            },
            LayerGrad::Dense { weights: gw, bias: gb },
        ) => {
            let gz = relu_mask(pre, g, *activation);
            let n_in = weights.shape()[1];
            let x = input.data();
            let w = weights.data();
            let gw = gw.data_mut();
            let mut g_in = vec![0.0; n_in];
            for (o, &d) in gz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = o * n_in;
                for i in 0..n_in {
                    gw[row + i] += d * x[i];
                    g_in[i] += d * w[row + i];
                }
            }
            add_into(gb.data_mut(), &gz);
            Ok(g_in)
        }
        (
            LayerSpec::Conv {
                kernels, params, ..
            },
            LayerGrad::Conv { kernels: gk, bias: gb },
        ) => {
            let gz = relu_mask(pre, g, Activation::Relu);
            conv_backward(input, kernels, *params, &gz, gk, gb)
        }
        (LayerSpec::MaxPool(p), LayerGrad::None) => Ok(pool_backward(input, *p, g)),
        (LayerSpec::Flatten, LayerGrad::None) => Ok(g.to_vec()),
        _ => Err(TrainError::GradientLayout(0)),
    }
}

fn conv_backward(
    input: &Tensor,
    kernels: &[Tensor],
    params: ConvParams,
    gz: &[f64],
    gk: &mut [Tensor],
    gb: &mut [f64],
) -> Result<Vec<f64>, TrainError> {
    let (maps, h, w) = match *input.shape() {
        [h, w] => (1, h, w),
        [m, h, w] => (m, h, w),
        _ => return Err(TrainError::GradientLayout(0)),
    };
    let (oh, ow) = params.output_dims(h, w)?;
    let (f, s, p) = (params.kernel_size, params.stride, params.padding);
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut g_in = vec![0.0; maps * h * w];
    for (gi, kernel) in kernels.iter().enumerate() {
        let kd = kernel.data();
        let gkd = gk[gi].data_mut();
        for m in 0..maps {
            let map = if input.shape().len() == 2 { input.clone() } else { input.map_slice(m) };
            let padded = tensor::zero_pad(&map, p)?;
            let src = padded.data();
            let mut g_pad = vec![0.0; ph * pw];
            let base = (gi * maps + m) * oh * ow;
            for r in 0..oh {
                for c in 0..ow {
                    let d = gz[base + r * ow + c];
                    if d == 0.0 {
                        continue;
                    }
                    gb[gi] += d;
                    for i in 0..f {
                        for j in 0..f {
                            let at = (r * s + i) * pw + c * s + j;
                            gkd[i * f + j] += d * src[at];
                            g_pad[at] += d * kd[i * f + j];
                        }
                    }
                }
            }
            for i in 0..h {
                let dst = m * h * w + i * w;
                let from = (i + p) * pw + p;
                add_into(&mut g_in[dst..dst + w], &g_pad[from..from + w]);
            }
        }
    }
    Ok(g_in)
}

fn pool_backward(input: &Tensor, params: PoolParams, g: &[f64]) -> Vec<f64> {
    let maps: Vec<Tensor> = if input.shape().len() == 2 {
        vec![input.clone()]
    } else {
        (0..input.shape()[0]).map(|m| input.map_slice(m)).collect()
    };
    let mut g_in = vec![0.0; input.len()];
    let mut offset_out = 0;
    for (m, map) in maps.iter().enumerate() {
        let (h, w) = (map.shape()[0], map.shape()[1]);
        let (oh, ow) = params.output_dims(h, w).expect("validated by forward");
        for r in 0..oh {
            for c in 0..ow {
                let (i, j) = tensor::pool_argmax(map, params, r, c);
                g_in[m * h * w + i * w + j] += g[offset_out + r * ow + c];
            }
        }
        offset_out += oh * ow;
    }
    g_in
}

/// `w := w − α ∂E/∂w` for every weight and bias.
pub fn gd_step(net: &NetworkSpec, grads: &Gradients, alpha: f64) -> Result<NetworkSpec, TrainError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TrainError::LearningRate(alpha));
    }
    if grads.layers.len() != net.layers().len() {
        return Err(TrainError::GradientLayout(grads.layers.len()));
    }
    let mut bad = None;
    let step = |p: &Tensor, g: &Tensor| p.zip_map(g, |p, g| p - alpha * g);
    let out = net.map_layers(|k, layer| match (layer, &grads.layers[k]) {
        (
            LayerSpec::Dense {
                weights,
                bias,
                activation,
            },
            LayerGrad::Dense { weights: gw, bias: gb },
        ) => match (step(weights, gw), step(bias, gb)) {
            (Ok(weights), Ok(bias)) => LayerSpec::Dense {
                weights,
                bias,
                activation: *activation,
            },
            _ => {
                bad.get_or_insert(k);
                layer.clone()
            }
        },
        (
            LayerSpec::Conv {
                kernels,
                bias,
                params,
            },
            LayerGrad::Conv { kernels: gk, bias: gb },
        ) if gk.len() == kernels.len() && gb.len() == bias.len() => {
            let ks: Result<Vec<_>, _> = kernels.iter().zip(gk).map(|(k, g)| step(k, g)).collect();
            match ks {
                Ok(kernels) => LayerSpec::Conv {
                    kernels,
                    bias: bias.iter().zip(gb).map(|(b, g)| b - alpha * g).collect(),
                    params: *params,
                },
                Err(_) => {
                    bad.get_or_insert(k);
                    layer.clone()
                }
            }
        }
        (LayerSpec::MaxPool(_) | LayerSpec::Flatten, LayerGrad::None) => layer.clone(),
        _ => {
            bad.get_or_insert(k);
            layer.clone()
        }
    })?;
    match bad {
        Some(k) => Err(TrainError::GradientLayout(k)),
        None => Ok(out),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: NetworkSpec,
    /// Loss before training followed by the loss after each epoch.
    pub history: Vec<f64>,
}

pub fn train(net: &NetworkSpec, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(TrainError::LearningRate(config.learning_rate));
    }
    let mut net = net.clone();
    let mut history = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let (loss, grads) = loss_and_gradients(&net, data)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(loss);
        net = gd_step(&net, &grads, config.learning_rate)?;
    }
    let last = mse_loss(&net, data)?;
    if !last.is_finite() {
        return Err(TrainError::Diverged { epoch: config.epochs });
    }
    history.push(last);
    Ok(TrainOutcome { net, history })
}

/// Fraction of instances whose predicted label equals the target label.
pub fn accuracy(net: &NetworkSpec, data: &Dataset) -> Result<f64, TrainError> {
    data.check(net)?;
    let mut hits = 0usize;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        if network::classify(net, x)?.0 == t.argmax() {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
