//! Per-unit bounds: interval propagation and per-unit LP/MILP tightening.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::encode::{self, EncodeError, InputMode, LayerCosts, Plan};
use crate::milp::{LinearConstraint, MilpModel, Sense, VarId};
use crate::network::{self, LayerSpec, NetworkSpec};
use crate::solver::bnb::{branch_and_bound_with_clock, relaxation, BnbConfig, Clock, Relaxation, SolveStatus};
use crate::solver::simplex::{simplex_solve, LpStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn relu(self) -> Self {
        Self::new(self.lo.max(0.0), self.hi.max(0.0))
    }

    pub fn contains(self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn is_finite(self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Intersection, or `self` unchanged when the two do not overlap.
    fn tighten(self, other: Self) -> Self {
        let t = Self::new(self.lo.max(other.lo), self.hi.min(other.hi));
        if t.lo <= t.hi {
            t
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerBounds {
    /// Affine value before the activation, for dense and conv layers.
    pub pre: Option<Vec<Interval>>,
    /// Layer output.
    pub post: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundWarning {
    pub layer: usize,
    pub unit: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundSet {
    /// Declared input box in flattened input order.
    pub input: Vec<Interval>,
    pub layers: Vec<LayerBounds>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub warnings: Vec<BoundWarning>,
}

impl BoundSet {
    /// Bounds of the ReLU output `x`: `[0, max(hi, 0)]`. For layers without
    /// a ReLU this is the plain output interval.
    pub fn x_bounds(&self, net: &NetworkSpec, k: usize, j: usize) -> Interval {
        let l = &self.layers[k];
        match (&l.pre, net.layers()[k].has_relu()) {
            (Some(pre), true) => Interval::new(0.0, pre[j].hi.max(0.0)),
            _ => l.post[j],
        }
    }

    /// Bounds of the negative part `s` of a ReLU unit: `[0, max(-lo, 0)]`.
    pub fn s_bounds(&self, net: &NetworkSpec, k: usize, j: usize) -> Option<Interval> {
        match (&self.layers[k].pre, net.layers()[k].has_relu()) {
            (Some(pre), true) => Some(Interval::new(0.0, (-pre[j].lo).max(0.0))),
            _ => None,
        }
    }

    /// Checks that the set has one entry per unit of `net`.
    pub fn matches(&self, net: &NetworkSpec) -> bool {
        self.input.len() == net.input_len()
            && self.layers.len() == net.layers().len()
            && self.layers.iter().enumerate().all(|(k, l)| {
                let n: usize = net.output_shape(k).iter().product();
                l.post.len() == n
                    && l.pre.as_ref().is_none_or(|p| p.len() == n)
                    && l.pre.is_some() == net.layers()[k].is_affine()
            })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("input box has {actual} entries, network input has {expected}")]
    InputLength { expected: usize, actual: usize },
    #[error("input box entry {index} is not a finite interval with lo <= hi")]
    InputBox { index: usize },
    #[error("bound set does not match the network layout")]
    Layout,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

fn affine_interval(row: &network::AffineRow, input: &[Interval]) -> Interval {
    let mut lo = row.bias;
    let mut hi = row.bias;
    for &(i, w) in &row.terms {
        let x = input[i];
        if w > 0.0 {
            lo += w * x.lo;
            hi += w * x.hi;
        } else {
            lo += w * x.hi;
            hi += w * x.lo;
        }
    }
    Interval::new(lo, hi)
}

/// Interval bounds of layer `k` computed from `input`, the bounds of its
/// input.
fn layer_intervals(net: &NetworkSpec, k: usize, input: &[Interval]) -> LayerBounds {
    let layer = &net.layers()[k];
    match layer {
        LayerSpec::Dense { .. } | LayerSpec::Conv { .. } => {
            let pre: Vec<Interval> = network::affine_rows(net, k)
                .expect("affine layer")
                .iter()
                .map(|r| affine_interval(r, input))
                .collect();
            let post = if layer.has_relu() {
                pre.iter().map(|i| i.relu()).collect()
            } else {
                pre.clone()
            };
            LayerBounds { pre: Some(pre), post }
        }
        LayerSpec::MaxPool(_) => {
            let post = network::pool_windows(net, k)
                .expect("pool layer")
                .iter()
                .map(|w| {
                    w.iter().fold(Interval::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |acc, &i| {
                        Interval::new(acc.lo.max(input[i].lo), acc.hi.max(input[i].hi))
                    })
                })
                .collect();
            LayerBounds { pre: None, post }
        }
        LayerSpec::Flatten => LayerBounds {
            pre: None,
            post: input.to_vec(),
        },
    }
}

fn check_box(net: &NetworkSpec, input: &[Interval]) -> Result<(), BoundsError> {
    if input.len() != net.input_len() {
        return Err(BoundsError::InputLength {
            expected: net.input_len(),
            actual: input.len(),
        });
    }
    if let Some(index) = input.iter().position(|i| !(i.is_finite() && i.lo <= i.hi)) {
        return Err(BoundsError::InputBox { index });
    }
    Ok(())
}

/// Sign-split interval arithmetic through every layer.
pub fn interval_propagate(net: &NetworkSpec, input: &[Interval]) -> Result<BoundSet, BoundsError> {
    check_box(net, input)?;
    let mut layers: Vec<LayerBounds> = Vec::with_capacity(net.layers().len());
    for k in 0..net.layers().len() {
        let prev = if k == 0 { input } else { &layers[k - 1].post };
        let lb = layer_intervals(net, k, prev);
        layers.push(lb);
    }
    Ok(BoundSet {
        input: input.to_vec(),
        layers,
        warnings: Vec::new(),
    })
}

/// Re-propagates layers `from..` from the current bounds of layer
/// `from - 1`, keeping whichever bound is tighter.
fn repropagate(net: &NetworkSpec, set: &mut BoundSet, from: usize) {
    for k in from..net.layers().len() {
        let fresh = {
            let prev = if k == 0 { &set.input } else { &set.layers[k - 1].post };
            layer_intervals(net, k, prev)
        };
        let old = &mut set.layers[k];
        if let (Some(p), Some(fp)) = (old.pre.as_mut(), fresh.pre.as_ref()) {
            for (a, &b) in p.iter_mut().zip(fp) {
                *a = a.tighten(b);
            }
        }
        for (a, &b) in old.post.iter_mut().zip(&fresh.post) {
            *a = a.tighten(b);
        }
        if let Some(pre) = &old.pre {
            if net.layers()[k].has_relu() {
                for (post, p) in old.post.iter_mut().zip(pre) {
                    *post = post.tighten(p.relu());
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TightenMode {
    #[default]
    LpRelaxation,
    ExactMilp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightenConfig {
    pub mode: TightenMode,
    /// Seconds per unit subproblem in exact mode.
    pub unit_budget: Option<f64>,
    /// Node limit per unit subproblem in exact mode.
    pub unit_node_limit: usize,
}

impl Default for TightenConfig {
    fn default() -> Self {
        Self {
            mode: TightenMode::LpRelaxation,
            unit_budget: None,
            unit_node_limit: 100_000,
        }
    }
}

/// Runs the independent unit subproblems of one layer. `run(i)` solves the
/// `i`-th unit; results must come back in index order.
pub trait Executor {
    fn map(&self, count: usize, run: &(dyn Fn(usize) -> UnitOutcome + Sync)) -> Vec<UnitOutcome>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map(&self, count: usize, run: &(dyn Fn(usize) -> UnitOutcome + Sync)) -> Vec<UnitOutcome> {
        (0..count).map(run).collect()
    }
}

/// Tightened pre-activation interval of one unit, or why it was kept.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitOutcome {
    Tightened(Interval),
    Kept(String),
}

/// Extreme value of `expr` over the prefix model, `maximize` selecting the
/// direction. Returns a valid bound, not necessarily attained.
fn extreme(
    model: &MilpModel,
    t: VarId,
    maximize: bool,
    config: &TightenConfig,
    clock: &(dyn Clock + Sync),
) -> Result<f64, String> {
    let mut m = model.clone();
    let sign = if maximize { -1.0 } else { 1.0 };
    m.set_cost(t, sign).map_err(|e| format!("{e}"))?;
    match config.mode {
        TightenMode::LpRelaxation => {
            let fixed = vec![None; m.num_vars()];
            let Relaxation::Lp(lp) = relaxation(&m, &fixed) else {
                return Err(String::from("relaxation infeasible"));
            };
            let s = simplex_solve(&lp);
            match s.status {
                LpStatus::Optimal => Ok(sign * s.objective),
                other => Err(format!("LP status {other:?}")),
            }
        }
        TightenMode::ExactMilp => {
            let cfg = BnbConfig {
                time_budget: config.unit_budget,
                node_limit: config.unit_node_limit,
                ..BnbConfig::default()
            };
            let r = branch_and_bound_with_clock(&m, &cfg, clock);
            match r.status {
                SolveStatus::Optimal => Ok(sign * r.objective),
                SolveStatus::NodeLimit | SolveStatus::TimeLimit if r.best_bound.is_finite() => {
                    Ok(sign * r.best_bound)
                }
                other => Err(format!("MILP status {}", other.as_str())),
            }
        }
    }
}

/// Tightens the pre-activation bounds of every affine unit in layer order.
/// Each unit's subproblem encodes the layers below it with the bounds found
/// so far, then maximizes and minimizes the unit's affine expression. Bounds
/// never get looser; failures keep the previous bound and add a warning.
pub fn lp_tighten(
    net: &NetworkSpec,
    seed: &BoundSet,
    config: &TightenConfig,
    clock: &(dyn Clock + Sync),
    exec: &dyn Executor,
) -> Result<BoundSet, BoundsError> {
    if !seed.matches(net) {
        return Err(BoundsError::Layout);
    }
    let plan = Plan::for_network(net)?;
    let mut set = seed.clone();
    let input = InputMode::Boxed {
        lb: set.input.iter().map(|i| i.lo).collect(),
        ub: set.input.iter().map(|i| i.hi).collect(),
    };
    for k in 0..net.layers().len() {
        repropagate(net, &mut set, k);
        let Some(rows) = network::affine_rows(net, k) else {
            continue;
        };
        if k == 0 {
            // the first affine layer is exact under interval arithmetic
            continue;
        }
        let costs = vec![LayerCosts::ZERO; net.layers().len()];
        let (prefix, vars) = encode::build(net, &set, &input, &plan.with_costs(costs, 0.0), k)?;
        let prev: Vec<VarId> = vars.layer_output(k - 1).to_vec();
        let run = |j: usize| {
            let row = &rows[j];
            let mut m = prefix.clone();
            let t = match m.add_continuous("t", f64::NEG_INFINITY, f64::INFINITY, 0.0) {
                Ok(t) => t,
                Err(e) => return UnitOutcome::Kept(format!("{e}")),
            };
            let mut terms: Vec<(VarId, f64)> = row.terms.iter().map(|&(i, w)| (prev[i], w)).collect();
            terms.push((t, -1.0));
            if let Err(e) = m.add_constraint(LinearConstraint::new("t_def", terms, Sense::Eq, -row.bias)) {
                return UnitOutcome::Kept(format!("{e}"));
            }
            match (extreme(&m, t, true, config, clock), extreme(&m, t, false, config, clock)) {
                (Ok(hi), Ok(lo)) if lo <= hi => UnitOutcome::Tightened(Interval::new(lo, hi)),
                (Ok(_), Ok(_)) => UnitOutcome::Kept(String::from("subproblem bounds crossed")),
                (Err(e), _) | (_, Err(e)) => UnitOutcome::Kept(e),
            }
        };
        let outcomes = exec.map(rows.len(), &run);
        let layer = &mut set.layers[k];
        let pre = layer.pre.as_mut().expect("affine layer has pre bounds");
        for (j, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                UnitOutcome::Tightened(iv) => pre[j] = pre[j].tighten(iv),
                UnitOutcome::Kept(message) => set.warnings.push(BoundWarning { layer: k, unit: j, message }),
            }
        }
        let has_relu = net.layers()[k].has_relu();
        let pre = layer.pre.as_ref().expect("affine layer has pre bounds");
        for (post, p) in layer.post.iter_mut().zip(pre) {
            *post = post.tighten(if has_relu { p.relu() } else { *p });
        }
    }
    Ok(set)
}
