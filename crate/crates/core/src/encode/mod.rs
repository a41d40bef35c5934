//! Network to 0-1 MILP compilation.
//!
//! Every ReLU unit gets the split `pre = x - s` with `x, s >= 0` and a binary
//! `z`, linked by the indicators `z = 1 -> x <= 0` and `z = 0 -> s <= 0`.
//! Max-pool cells pick one window element through binaries that sum to one.

pub mod cnn;
pub mod dnn;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::bounds::BoundSet;
use crate::milp::{LinearConstraint, MilpError, MilpModel, Sense, VarId};
use crate::network::{self, LayerSpec, NetworkSpec};

pub use cnn::{block_dims, cnn_census, encode_cnn, flatten_index, BlockDims, CnnEncodeConfig};
pub use dnn::{dnn_census, encode_dnn, DnnEncodeConfig};

/// How input variables are bounded.
#[derive(Debug, Clone, PartialEq)]
pub enum InputMode {
    /// Every input pinned to a value.
    Fixed(Vec<f64>),
    /// Per-input box.
    Boxed { lb: Vec<f64>, ub: Vec<f64> },
}

impl InputMode {
    pub fn uniform_box(n: usize, lo: f64, hi: f64) -> Self {
        InputMode::Boxed {
            lb: alloc::vec![lo; n],
            ub: alloc::vec![hi; n],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            InputMode::Fixed(v) => v.len(),
            InputMode::Boxed { lb, .. } => lb.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self, j: usize) -> (f64, f64) {
        match self {
            InputMode::Fixed(v) => (v[j], v[j]),
            InputMode::Boxed { lb, ub } => (lb[j], ub[j]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("layer {layer} ({kind}) cannot be encoded here")]
    UnsupportedLayer { layer: usize, kind: &'static str },
    #[error("layer {layer}: {reason}")]
    NotBlockShaped { layer: usize, reason: &'static str },
    #[error("non-finite bound for layer {layer} unit {unit}")]
    NonFiniteBound { layer: usize, unit: usize },
    #[error("bound set does not match the network layout")]
    BoundsLayout,
    #[error("input has {actual} values, network expects {expected}")]
    InputLength { expected: usize, actual: usize },
    #[error("input {index} = {value} lies outside the declared box [{lb}, {ub}]")]
    InputOutsideBox { index: usize, value: f64, lb: f64, ub: f64 },
    #[error("invalid cost: {0}")]
    BadCost(&'static str),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

/// Variables created for one layer, indexed by output unit in flattened
/// layer order.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerVars {
    Relu {
        /// Explicit affine value, present for conv layers of a CNN encoding.
        pre: Option<Vec<VarId>>,
        out: Vec<VarId>,
        neg: Vec<VarId>,
        active: Vec<VarId>,
    },
    Linear {
        out: Vec<VarId>,
    },
    Pool {
        out: Vec<VarId>,
        /// Selection binaries per output cell, in window order.
        select: Vec<Vec<VarId>>,
    },
    /// Either fresh copies or the previous layer's variables.
    Flatten {
        out: Vec<VarId>,
    },
}

impl LayerVars {
    pub fn out(&self) -> &[VarId] {
        match self {
            LayerVars::Relu { out, .. }
            | LayerVars::Linear { out }
            | LayerVars::Pool { out, .. }
            | LayerVars::Flatten { out } => out,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarMap {
    pub input: Vec<VarId>,
    pub layers: Vec<LayerVars>,
}

impl VarMap {
    pub fn layer_output(&self, k: usize) -> &[VarId] {
        self.layers[k].out()
    }

    /// Variables of the last encoded layer.
    pub fn output(&self) -> &[VarId] {
        self.layers.last().map_or(&self.input, |l| l.out())
    }
}

/// Objective coefficients for the variables of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCosts {
    pub out: f64,
    pub pre: f64,
    pub active: f64,
    pub select: f64,
}

impl LayerCosts {
    pub const ZERO: Self = Self {
        out: 0.0,
        pre: 0.0,
        active: 0.0,
        select: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Style {
    /// `name_u` with the flat unit index.
    Flat,
    /// `name_d_i_j` with map, row and column.
    Maps,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerNames {
    pub pre: Option<String>,
    pub out: String,
    pub neg: String,
    pub active: String,
    pub select: String,
    pub style: Style,
    /// Flatten creates copies instead of reusing its input.
    pub fresh: bool,
}

impl LayerNames {
    fn flat(out: String, neg: String, active: String) -> Self {
        Self {
            pre: None,
            out,
            neg,
            active,
            select: String::new(),
            style: Style::Flat,
            fresh: false,
        }
    }
}

/// Naming and costs for a whole network.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plan {
    pub input: String,
    pub input_style: Style,
    pub layers: Vec<LayerNames>,
    pub costs: Vec<LayerCosts>,
    pub input_cost: f64,
    pub include_biases: bool,
}

impl Plan {
    /// Default naming for `net`: DNN names for dense-only nets, CNN names for
    /// block-shaped nets, positional names otherwise. All costs zero.
    pub(crate) fn for_network(net: &NetworkSpec) -> Result<Self, EncodeError> {
        if net.is_dense_only() {
            return Ok(dnn::plan(net));
        }
        if let Ok(dims) = cnn::block_dims(net) {
            return Ok(cnn::plan(net, dims.len()));
        }
        let layers = (0..net.layers().len())
            .map(|k| LayerNames {
                pre: None,
                out: format!("L{k}_x"),
                neg: format!("L{k}_s"),
                active: format!("L{k}_z"),
                select: format!("L{k}_sel"),
                style: Style::Flat,
                fresh: false,
            })
            .collect();
        Ok(Plan {
            input: String::from("in"),
            input_style: Style::Flat,
            layers,
            costs: alloc::vec![LayerCosts::ZERO; net.layers().len()],
            input_cost: 0.0,
            include_biases: true,
        })
    }

    pub(crate) fn with_costs(&self, costs: Vec<LayerCosts>, input_cost: f64) -> Self {
        Self {
            costs,
            input_cost,
            ..self.clone()
        }
    }
}

fn unit_name(prefix: &str, style: Style, shape: &[usize], u: usize) -> String {
    match (style, shape) {
        (Style::Maps, [_, w]) => format!("{prefix}_0_{}_{}", u / w, u % w),
        (Style::Maps, [_, h, w]) => format!("{prefix}_{}_{}_{}", u / (h * w), (u / w) % h, u % w),
        _ => format!("{prefix}_{u}"),
    }
}

fn finite(lo: f64, hi: f64, layer: usize, unit: usize) -> Result<(f64, f64), EncodeError> {
    if lo.is_finite() && hi.is_finite() {
        Ok((lo, hi))
    } else {
        Err(EncodeError::NonFiniteBound { layer, unit })
    }
}

/// Adds `out - neg = pre_expr` and the two complementarity indicators.
fn relu_split(
    m: &mut MilpModel,
    name: &str,
    mut expr: Vec<(VarId, f64)>,
    rhs: f64,
    out: VarId,
    neg: VarId,
    active: VarId,
) -> Result<(), EncodeError> {
    expr.push((out, -1.0));
    expr.push((neg, 1.0));
    m.add_constraint(LinearConstraint::new(format!("split_{name}"), expr, Sense::Eq, rhs))?;
    m.add_indicator(
        format!("off_{name}"),
        active,
        true,
        LinearConstraint::new("", alloc::vec![(out, 1.0)], Sense::Le, 0.0),
    )?;
    m.add_indicator(
        format!("on_{name}"),
        active,
        false,
        LinearConstraint::new("", alloc::vec![(neg, 1.0)], Sense::Le, 0.0),
    )?;
    Ok(())
}

/// Encodes the first `upto` layers of `net` into a fresh model.
pub(crate) fn build(
    net: &NetworkSpec,
    bounds: &BoundSet,
    input: &InputMode,
    plan: &Plan,
    upto: usize,
) -> Result<(MilpModel, VarMap), EncodeError> {
    if !bounds.matches(net) {
        return Err(EncodeError::BoundsLayout);
    }
    if input.len() != net.input_len() {
        return Err(EncodeError::InputLength {
            expected: net.input_len(),
            actual: input.len(),
        });
    }
    let mut m = MilpModel::new();
    let mut input_vars = Vec::with_capacity(net.input_len());
    for j in 0..net.input_len() {
        let (lo, hi) = input.range(j);
        let declared = bounds.input[j];
        if let InputMode::Fixed(v) = input {
            if !declared.contains(v[j], 0.0) {
                return Err(EncodeError::InputOutsideBox {
                    index: j,
                    value: v[j],
                    lb: declared.lo,
                    ub: declared.hi,
                });
            }
        }
        let name = unit_name(&plan.input, plan.input_style, net.input_shape(), j);
        let (lo, hi) = finite(lo, hi, 0, j)?;
        input_vars.push(m.add_continuous(name, lo, hi, plan.input_cost)?);
    }

    let mut layers: Vec<LayerVars> = Vec::with_capacity(upto);
    for k in 0..upto {
        let prev: &[VarId] = if k == 0 { &input_vars } else { layers[k - 1].out() };
        let names = &plan.layers[k];
        let costs = plan.costs[k];
        let shape = net.output_shape(k);
        let lb = &bounds.layers[k];
        let name = |prefix: &str, u: usize| unit_name(prefix, names.style, shape, u);
        let layer = &net.layers()[k];
        let vars = match layer {
            LayerSpec::Dense { .. } | LayerSpec::Conv { .. } => {
                let rows = network::affine_rows(net, k).expect("affine layer");
                let pre_bounds = lb.pre.as_ref().ok_or(EncodeError::BoundsLayout)?;
                let relu = layer.has_relu();
                let (mut pre_v, mut out, mut neg, mut active) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for (u, row) in rows.iter().enumerate() {
                    let iv = pre_bounds[u];
                    let (lo, hi) = finite(iv.lo, iv.hi, k, u)?;
                    let mut expr: Vec<(VarId, f64)> = row.terms.iter().map(|&(i, w)| (prev[i], w)).collect();
                    let bias = if plan.include_biases { row.bias } else { 0.0 };
                    let uname = name(&names.out, u);
                    if !relu {
                        let x = m.add_continuous(uname.clone(), lo, hi, costs.out)?;
                        expr.push((x, -1.0));
                        m.add_constraint(LinearConstraint::new(format!("def_{uname}"), expr, Sense::Eq, -bias))?;
                        out.push(x);
                        continue;
                    }
                    if let Some(p) = &names.pre {
                        let pname = name(p, u);
                        let b = m.add_continuous(pname.clone(), lo, hi, costs.pre)?;
                        expr.push((b, -1.0));
                        m.add_constraint(LinearConstraint::new(format!("def_{pname}"), expr, Sense::Eq, -bias))?;
                        pre_v.push(b);
                        expr = alloc::vec![(b, 1.0)];
                    }
                    let x = m.add_continuous(uname.clone(), 0.0, hi.max(0.0), costs.out)?;
                    let s = m.add_continuous(name(&names.neg, u), 0.0, (-lo).max(0.0), 0.0)?;
                    let z = m.add_binary(name(&names.active, u), costs.active)?;
                    let rhs = if names.pre.is_some() { 0.0 } else { -bias };
                    relu_split(&mut m, &uname, expr, rhs, x, s, z)?;
                    out.push(x);
                    neg.push(s);
                    active.push(z);
                }
                if relu {
                    LayerVars::Relu {
                        pre: names.pre.as_ref().map(|_| pre_v),
                        out,
                        neg,
                        active,
                    }
                } else {
                    LayerVars::Linear { out }
                }
            }
            LayerSpec::MaxPool(p) => {
                let windows = network::pool_windows(net, k).expect("pool layer");
                let mut out = Vec::with_capacity(windows.len());
                let mut select = Vec::with_capacity(windows.len());
                for (u, window) in windows.iter().enumerate() {
                    let iv = lb.post[u];
                    let (lo, hi) = finite(iv.lo, iv.hi, k, u)?;
                    let uname = name(&names.out, u);
                    let a = m.add_continuous(uname.clone(), lo, hi, costs.out)?;
                    let sel_prefix = name(&names.select, u);
                    let mut picks = Vec::with_capacity(window.len());
                    for (e, &i) in window.iter().enumerate() {
                        let zname = format!("{sel_prefix}_{}_{}", e / p.pool_size, e % p.pool_size);
                        let zeta = m.add_binary(zname.clone(), costs.select)?;
                        m.add_constraint(LinearConstraint::new(
                            format!("ge_{zname}"),
                            alloc::vec![(a, 1.0), (prev[i], -1.0)],
                            Sense::Ge,
                            0.0,
                        ))?;
                        m.add_indicator(
                            format!("le_{zname}"),
                            zeta,
                            true,
                            LinearConstraint::new("", alloc::vec![(a, 1.0), (prev[i], -1.0)], Sense::Le, 0.0),
                        )?;
                        picks.push(zeta);
                    }
                    m.add_constraint(LinearConstraint::new(
                        format!("pick_{uname}"),
                        picks.iter().map(|&z| (z, 1.0)).collect(),
                        Sense::Eq,
                        1.0,
                    ))?;
                    out.push(a);
                    select.push(picks);
                }
                LayerVars::Pool { out, select }
            }
            LayerSpec::Flatten if names.fresh => {
                let mut out = Vec::with_capacity(prev.len());
                for (u, &src) in prev.iter().enumerate() {
                    let iv = lb.post[u];
                    let (lo, hi) = finite(iv.lo, iv.hi, k, u)?;
                    let uname = name(&names.out, u);
                    let v = m.add_continuous(uname.clone(), lo, hi, costs.out)?;
                    m.add_constraint(LinearConstraint::new(
                        format!("def_{uname}"),
                        alloc::vec![(v, 1.0), (src, -1.0)],
                        Sense::Eq,
                        0.0,
                    ))?;
                    out.push(v);
                }
                LayerVars::Flatten { out }
            }
            LayerSpec::Flatten => LayerVars::Flatten { out: prev.to_vec() },
        };
        layers.push(vars);
    }
    Ok((m, VarMap { input: input_vars, layers }))
}

/// Copy of `model` with every input variable pinned to `image`. Values
/// outside the model's input box are rejected.
pub fn fix_input(model: &MilpModel, vars: &VarMap, image: &[f64]) -> Result<MilpModel, EncodeError> {
    if image.len() != vars.input.len() {
        return Err(EncodeError::InputLength {
            expected: vars.input.len(),
            actual: image.len(),
        });
    }
    let mut m = model.clone();
    for (index, (&v, &value)) in vars.input.iter().zip(image).enumerate() {
        let var = model.var(v);
        if !(value >= var.lb && value <= var.ub) {
            return Err(EncodeError::InputOutsideBox {
                index,
                value,
                lb: var.lb,
                ub: var.ub,
            });
        }
        m.set_bounds(v, value, value)?;
    }
    Ok(m)
}

/// Builds an assignment for the model from a forward pass, choosing `z = 0`
/// on zero pre-activations and the first maximal window element for pools.
pub fn assignment_from_trace(
    model: &MilpModel,
    vars: &VarMap,
    trace: &network::ActivationTrace,
    net: &NetworkSpec,
) -> Vec<f64> {
    let mut values = alloc::vec![0.0; model.num_vars()];
    for (&v, &x) in vars.input.iter().zip(trace.input.data()) {
        values[v.0] = x;
    }
    for (k, lv) in vars.layers.iter().enumerate() {
        let prev: Vec<f64> = if k == 0 {
            trace.input.data().to_vec()
        } else {
            trace.post[k - 1].data().to_vec()
        };
        let post = trace.post[k].data();
        for (&v, &x) in lv.out().iter().zip(post) {
            values[v.0] = x;
        }
        match lv {
            LayerVars::Relu { pre, neg, active, .. } => {
                let p = trace.pre[k].as_ref().expect("relu layer has pre values").data();
                if let Some(pre) = pre {
                    for (&v, &x) in pre.iter().zip(p) {
                        values[v.0] = x;
                    }
                }
                for ((&s, &z), &x) in neg.iter().zip(active).zip(p) {
                    values[s.0] = (-x).max(0.0);
                    values[z.0] = if x < 0.0 { 1.0 } else { 0.0 };
                }
            }
            LayerVars::Pool { select, .. } => {
                let windows = network::pool_windows(net, k).expect("pool layer");
                for (u, (picks, window)) in select.iter().zip(&windows).enumerate() {
                    let e = window.iter().position(|&i| prev[i] == post[u]).unwrap_or(0);
                    values[picks[e].0] = 1.0;
                }
            }
            LayerVars::Linear { .. } | LayerVars::Flatten { .. } => {}
        }
    }
    values
}
