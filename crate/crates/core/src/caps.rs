//! Capsule network forward reference: squash, prediction vectors, dynamic
//! routing, margin loss, primary-capsule restacking and a parameter audit.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math::sqrt;
use crate::tensor::Tensor;

pub const M_PLUS: f64 = 0.9;
pub const M_MINUS: f64 = 0.1;
pub const LAMBDA: f64 = 0.5;
pub const DEFAULT_ITERATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CapsError {
    #[error("weight matrix is {rows}x{cols}, capsule has {dim} components")]
    Extent { rows: usize, cols: usize, dim: usize },
    #[error("routing needs at least one iteration")]
    NoIterations,
    #[error("prediction vectors are ragged")]
    Ragged,
    #[error("{maps} maps do not split into capsules of width {width}")]
    DeckWidth { maps: usize, width: usize },
    #[error("maps have unequal extents")]
    MapExtents,
}

pub fn norm(v: &[f64]) -> f64 {
    sqrt(dot(v, v))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(|s|^2 / (1 + |s|^2)) * s / |s|`, and 0 at `s = 0`.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let sq = dot(s, s);
    if sq == 0.0 {
        return vec![0.0; s.len()];
    }
    let scale = sq / (1.0 + sq) / sqrt(sq);
    s.iter().map(|x| x * scale).collect()
}

/// Prediction vector `W u`, with `W` of shape `[out, in]`.
pub fn predict(u: &[f64], w: &Tensor) -> Result<Vec<f64>, CapsError> {
    let (rows, cols) = match *w.shape() {
        [r, c] => (r, c),
        _ => (w.len(), 1),
    };
    if w.shape().len() != 2 || cols != u.len() {
        return Err(CapsError::Extent { rows, cols, dim: u.len() });
    }
    Ok(w.data().chunks(cols).map(|row| dot(row, u)).collect())
}

/// Softmax with the maximum subtracted first.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&b| crate::math::exp(b - max)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Logits and couplings, indexed `[lower i][upper j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    pub logits: Vec<Vec<f64>>,
    pub couplings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    /// Output capsule per upper index.
    pub v: Vec<Vec<f64>>,
    /// State of every iteration: the couplings it used and the logits it
    /// left behind.
    pub history: Vec<RoutingState>,
}

impl Routing {
    pub fn last(&self) -> &RoutingState {
        self.history.last().expect("at least one iteration")
    }
}

/// Routing by agreement. `u_hat[i][j]` is the prediction of lower capsule
/// `i` for upper capsule `j`.
pub fn route(u_hat: &[Vec<Vec<f64>>], iterations: usize) -> Result<Routing, CapsError> {
    if iterations == 0 {
        return Err(CapsError::NoIterations);
    }
    let uppers = u_hat.first().map_or(0, Vec::len);
    let dim = u_hat.first().and_then(|r| r.first()).map_or(0, Vec::len);
    if u_hat.iter().any(|r| r.len() != uppers || r.iter().any(|p| p.len() != dim)) {
        return Err(CapsError::Ragged);
    }
    let mut b = vec![vec![0.0; uppers]; u_hat.len()];
    let mut v = vec![vec![0.0; dim]; uppers];
    let mut history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let c: Vec<Vec<f64>> = b.iter().map(|row| softmax(row)).collect();
        for (j, vj) in v.iter_mut().enumerate() {
            let mut s = vec![0.0; dim];
            for (i, preds) in u_hat.iter().enumerate() {
                for (acc, &x) in s.iter_mut().zip(&preds[j]) {
                    *acc += c[i][j] * x;
                }
            }
            *vj = squash(&s);
        }
        for (i, preds) in u_hat.iter().enumerate() {
            for j in 0..uppers {
                b[i][j] += dot(&preds[j], &v[j]);
            }
        }
        history.push(RoutingState {
            logits: b.clone(),
            couplings: c,
        });
    }
    Ok(Routing { v, history })
}

/// Margin loss over class capsules; `present[k]` marks the true classes.
pub fn margin_loss(v: &[Vec<f64>], present: &[bool]) -> f64 {
    v.iter()
        .zip(present)
        .map(|(vk, &t)| {
            let n = norm(vk);
            let hinge = |x: f64| x.max(0.0) * x.max(0.0);
            if t {
                hinge(M_PLUS - n)
            } else {
                LAMBDA * hinge(n - M_MINUS)
            }
        })
        .sum()
}

/// Regroups `width * decks` maps of `h x w` into capsules: component `t` of
/// the capsule in deck `d` at `(r, c)` is map `t + width * d` at `(r, c)`.
/// Result shape `[decks, h, w, width]`.
pub fn restack(maps: &[Tensor], width: usize) -> Result<Tensor, CapsError> {
    if width == 0 || !maps.len().is_multiple_of(width) {
        return Err(CapsError::DeckWidth { maps: maps.len(), width });
    }
    let shape = maps.first().map_or(&[0usize, 0][..], |m| m.shape()).to_vec();
    let [h, w] = shape[..] else {
        return Err(CapsError::MapExtents);
    };
    if maps.iter().any(|m| m.shape() != [h, w]) {
        return Err(CapsError::MapExtents);
    }
    let decks = maps.len() / width;
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for d in 0..decks {
        for r in 0..h {
            for c in 0..w {
                for t in 0..width {
                    data.push(maps[t + width * d].data()[r * w + c]);
                }
            }
        }
    }
    Ok(Tensor::new(vec![decks, h, w, width], data).expect("extents match"))
}

/// Inverse of [`restack`].
pub fn unstack(caps: &Tensor) -> Vec<Tensor> {
    let [decks, h, w, width] = caps.shape()[..] else {
        panic!("capsule tensor must have rank 4");
    };
    (0..decks * width)
        .map(|m| {
            let (d, t) = (m / width, m % width);
            let data = (0..h * w).map(|p| caps.data()[((d * h * w) + p) * width + t]).collect();
            Tensor::new(vec![h, w], data).expect("extents match")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapsArchitecture {
    pub input_side: usize,
    pub conv_kernels: usize,
    pub conv_size: usize,
    pub conv_stride: usize,
    pub primary_size: usize,
    pub primary_stride: usize,
    pub decks: usize,
    pub primary_dim: usize,
    pub digit_dim: usize,
    pub classes: usize,
    pub decoder: Vec<usize>,
}

impl Default for CapsArchitecture {
    fn default() -> Self {
        Self {
            input_side: 28,
            conv_kernels: 256,
            conv_size: 9,
            conv_stride: 1,
            primary_size: 9,
            primary_stride: 2,
            decks: 32,
            primary_dim: 8,
            digit_dim: 16,
            classes: 10,
            decoder: vec![512, 1024, 784],
        }
    }
}

impl CapsArchitecture {
    /// Side of the conv output and whether the stride divides evenly.
    pub fn conv_side(&self) -> (usize, bool) {
        window(self.input_side, self.conv_size, self.conv_stride)
    }

    /// Side of the primary-capsule grid, rounded down, and whether the
    /// stride divides evenly.
    pub fn primary_side(&self) -> (usize, bool) {
        window(self.conv_side().0, self.primary_size, self.primary_stride)
    }

    pub fn primary_capsules(&self) -> usize {
        let g = self.primary_side().0;
        self.decks * g * g
    }
}

fn window(n: usize, f: usize, s: usize) -> (usize, bool) {
    match n.checked_sub(f) {
        Some(span) if s > 0 => (span / s + 1, span % s == 0),
        _ => (0, false),
    }
}

/// Trainable-parameter audit. The routing term counts one logit and one
/// coupling per primary capsule and class, although both are per-pass
/// state rather than trained weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub conv: u64,
    pub primary: u64,
    pub digit: u64,
    pub decoder: u64,
}

impl ParamCounts {
    pub fn without_decoder(&self) -> u64 {
        self.conv + self.primary + self.digit
    }

    pub fn with_decoder(&self) -> u64 {
        self.without_decoder() + self.decoder
    }
}

pub fn param_count(arch: &CapsArchitecture) -> ParamCounts {
    let u = |x: usize| x as u64;
    let per_kernel = u(arch.conv_size * arch.conv_size + 1);
    let conv = per_kernel * u(arch.conv_kernels);
    let primary_kernel = u(arch.primary_size * arch.primary_size + 1) * u(arch.conv_kernels);
    let primary = u(arch.decks * arch.primary_dim) * primary_kernel;
    let caps = u(arch.primary_capsules());
    let digit = (caps * u(arch.digit_dim * arch.primary_dim) + caps * 2) * u(arch.classes);
    let decoder = arch.decoder.windows(2).map(|p| u(p[0] + 1) * u(p[1])).sum();
    ParamCounts {
        conv,
        primary,
        digit,
        decoder,
    }
}
