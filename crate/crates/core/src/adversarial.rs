//! Adversarial search on an encoded network: perturbation variables, target
//! margin rows and a distance objective, plus an independent verdict.

use alloc::format;
use alloc::vec::Vec;

use thiserror::Error;

use crate::encode::{LayerVars, VarMap};
use crate::milp::{LinearConstraint, MilpError, MilpModel, Sense, VarId};
use crate::network::{forward, NetworkSpec};
use crate::solver::bnb::{SolveResult, SolveStatus};
use crate::tensor::Tensor;

/// Absolute tolerance of every verdict check.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TargetRule {
    /// `(d + 5) mod 10`.
    PlusFiveModTen,
    Explicit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialConfig {
    /// Target score must be at least this multiple of every other score.
    pub margin: f64,
    /// Largest change allowed on any pixel.
    pub eps_max: f64,
    pub target: TargetRule,
    /// Cost of the target output; negative.
    pub target_cost: f64,
    /// Cost of the other outputs; non-negative.
    pub other_cost: f64,
    /// Cost kept on the activation binaries.
    pub activation_penalty: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            margin: 1.2,
            eps_max: 0.2,
            target: TargetRule::PlusFiveModTen,
            target_cost: -1.0,
            other_cost: 0.0,
            activation_penalty: 0.0,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<(), AdversarialError> {
        let bad = |what| Err(AdversarialError::Config(what));
        if !(self.margin > 1.0 && self.margin.is_finite()) {
            return bad("margin must be finite and greater than 1");
        }
        if !(0.0..=1.0).contains(&self.eps_max) {
            return bad("eps_max must lie in [0, 1]");
        }
        if !(self.target_cost < 0.0 && self.target_cost.is_finite()) {
            return bad("target cost must be negative");
        }
        if !(self.other_cost >= 0.0 && self.other_cost.is_finite()) {
            return bad("other cost must be non-negative");
        }
        if !(self.activation_penalty >= 0.0 && self.activation_penalty.is_finite()) {
            return bad("activation penalty must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdversarialError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("target {target} is not a class of a {classes}-class network")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("target equals the original label {0}")]
    TargetIsOriginal(usize),
    #[error("the plus-five rule needs a label below 10, got {0}")]
    LabelOutOfRange(usize),
    #[error("image has {actual} pixels, model has {expected} inputs")]
    ImageLength { expected: usize, actual: usize },
    #[error("pixel {index} = {value} lies outside the input box")]
    OutsideBox { index: usize, value: f64 },
    #[error("every input is fixed, so a positive eps_max cannot be used; encode with a boxed input")]
    FixedInput,
    #[error(transparent)]
    Milp(#[from] MilpError),
}

pub fn target_label(d: usize, rule: TargetRule, classes: usize) -> Result<usize, AdversarialError> {
    let t = match rule {
        TargetRule::PlusFiveModTen => {
            if d >= 10 {
                return Err(AdversarialError::LabelOutOfRange(d));
            }
            (d + 5) % 10
        }
        TargetRule::Explicit(t) => t,
    };
    if t == d {
        return Err(AdversarialError::TargetIsOriginal(d));
    }
    if t >= classes {
        return Err(AdversarialError::TargetOutOfRange { target: t, classes });
    }
    Ok(t)
}

/// An encoded model with the adversarial overlay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialModel {
    pub model: MilpModel,
    pub vars: VarMap,
    /// Per-pixel change bound `eps_j`.
    pub eps: Vec<VarId>,
    pub original: Vec<f64>,
    pub original_label: usize,
    pub target: usize,
}

/// Overlays the adversarial constraints on a model encoded with a boxed
/// input. Replaces the objective by target/other output costs, the
/// activation penalty on every ReLU binary and `sum eps`.
pub fn build_adversarial(
    model: &MilpModel,
    vars: &VarMap,
    original: &[f64],
    original_label: usize,
    config: &AdversarialConfig,
) -> Result<AdversarialModel, AdversarialError> {
    config.validate()?;
    let outputs = vars.output();
    let target = target_label(original_label, config.target, outputs.len())?;
    if original.len() != vars.input.len() {
        return Err(AdversarialError::ImageLength {
            expected: vars.input.len(),
            actual: original.len(),
        });
    }
    // a zero budget pins the image anyway, so only a positive one needs room
    if config.eps_max > 0.0 && vars.input.iter().all(|&v| model.var(v).lb == model.var(v).ub) {
        return Err(AdversarialError::FixedInput);
    }
    for (index, (&v, &value)) in vars.input.iter().zip(original).enumerate() {
        let var = model.var(v);
        if !(value >= var.lb && value <= var.ub) {
            return Err(AdversarialError::OutsideBox { index, value });
        }
    }

    let mut m = model.clone();
    m.clear_costs();
    for layer in &vars.layers {
        if let LayerVars::Relu { active, .. } = layer {
            for &z in active {
                m.set_cost(z, config.activation_penalty)?;
            }
        }
    }
    for (j, &o) in outputs.iter().enumerate() {
        m.set_cost(o, if j == target { config.target_cost } else { config.other_cost })?;
    }
    let mut eps = Vec::with_capacity(original.len());
    for (j, (&x, &x0)) in vars.input.iter().zip(original).enumerate() {
        let e = m.add_continuous(format!("eps_{j}"), 0.0, config.eps_max, 1.0)?;
        m.add_constraint(LinearConstraint::new(format!("dlo_{j}"), alloc::vec![(x, 1.0), (e, -1.0)], Sense::Le, x0))?;
        m.add_constraint(LinearConstraint::new(format!("dhi_{j}"), alloc::vec![(x, 1.0), (e, 1.0)], Sense::Ge, x0))?;
        eps.push(e);
    }
    for (j, &o) in outputs.iter().enumerate() {
        if j != target {
            m.add_constraint(LinearConstraint::new(
                format!("margin_{j}"),
                alloc::vec![(outputs[target], 1.0), (o, -config.margin)],
                Sense::Ge,
                0.0,
            ))?;
        }
    }
    Ok(AdversarialModel {
        model: m,
        vars: vars.clone(),
        eps,
        original: original.to_vec(),
        original_label,
        target,
    })
}

/// What the solver claims about an adversarial.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialResult {
    pub status: SolveStatus,
    pub original: Vec<f64>,
    pub original_label: usize,
    pub target: usize,
    pub image: Vec<f64>,
    /// `eps` values as solved.
    pub eps: Vec<f64>,
    /// Output scores according to the solver.
    pub scores: Vec<f64>,
    /// Label according to the solver's scores.
    pub label: usize,
    /// Smallest ratio of target score to any other positive score.
    pub margin: f64,
    /// Solver values of every layer output, in layer order.
    pub claimed: Vec<Vec<f64>>,
    pub objective: f64,
    pub nodes: usize,
}

impl AdversarialResult {
    pub fn total_change(&self) -> f64 {
        self.eps.iter().sum()
    }

    pub fn max_change(&self) -> f64 {
        self.image.iter().zip(&self.original).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |b, (i, &s)| if s > v[b] { i } else { b })
}

/// Target score over the largest positive competitor; infinite when no
/// competitor is positive.
pub fn margin_ratio(scores: &[f64], target: usize) -> f64 {
    let rival = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if rival > 0.0 {
        scores[target] / rival
    } else {
        f64::INFINITY
    }
}

/// Reads the adversarial out of a solve of `adv.model`.
pub fn extract(adv: &AdversarialModel, solved: &SolveResult) -> AdversarialResult {
    let has = solved.has_incumbent();
    let value = |v: VarId| if has { solved.value(v) } else { f64::NAN };
    let image: Vec<f64> = adv.vars.input.iter().map(|&v| value(v)).collect();
    let scores: Vec<f64> = adv.vars.output().iter().map(|&v| value(v)).collect();
    AdversarialResult {
        status: solved.status,
        original: adv.original.clone(),
        original_label: adv.original_label,
        target: adv.target,
        eps: adv.eps.iter().map(|&v| value(v)).collect(),
        label: argmax(&scores),
        margin: margin_ratio(&scores, adv.target),
        claimed: adv.vars.layers.iter().map(|l| l.out().iter().map(|&v| value(v)).collect()).collect(),
        scores,
        image,
        objective: solved.objective,
        nodes: solved.nodes,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Status(SolveStatus),
    Shape,
    Label { got: usize, want: usize },
    NonPositiveTarget(f64),
    Margin { rival: usize, target_score: f64, rival_score: f64 },
    Cap { pixel: usize, change: f64 },
    OutsideUnitBox { pixel: usize, value: f64 },
    Activation { layer: usize, unit: usize, claimed: f64, actual: f64 },
}

impl core::fmt::Display for Failure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Failure::Status(s) => write!(f, "solver status is {}", s.as_str()),
            Failure::Shape => write!(f, "result vectors do not match the network"),
            Failure::Label { got, want } => write!(f, "oracle label {got}, target {want}"),
            Failure::NonPositiveTarget(s) => write!(f, "target score {s} is not positive"),
            Failure::Margin {
                rival,
                target_score,
                rival_score,
            } => write!(f, "margin: target score {target_score} against class {rival} score {rival_score}"),
            Failure::Cap { pixel, change } => write!(f, "cap: pixel {pixel} changed by {change}"),
            Failure::OutsideUnitBox { pixel, value } => write!(f, "pixel {pixel} = {value} outside [0, 1]"),
            Failure::Activation {
                layer,
                unit,
                claimed,
                actual,
            } => write!(f, "layer {layer} unit {unit}: claimed {claimed}, oracle {actual}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub failures: Vec<Failure>,
    /// Forward-pass scores of the adversarial image.
    pub scores: Vec<f64>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Independent check of a claimed adversarial with a forward pass.
pub fn verify_adversarial(net: &NetworkSpec, result: &AdversarialResult, config: &AdversarialConfig) -> Verdict {
    let mut failures = Vec::new();
    if result.status != SolveStatus::Optimal {
        failures.push(Failure::Status(result.status));
    }
    let fail = |mut failures: Vec<Failure>, f| {
        failures.push(f);
        Verdict {
            failures,
            scores: Vec::new(),
        }
    };
    if result.image.len() != net.input_len() || result.original.len() != net.input_len() {
        return fail(failures, Failure::Shape);
    }
    let Ok(input) = Tensor::new(net.input_shape().to_vec(), result.image.clone()) else {
        return fail(failures, Failure::Shape);
    };
    let Ok(trace) = forward(net, &input) else {
        return fail(failures, Failure::Shape);
    };
    let scores = trace.output().data().to_vec();
    let t = result.target;
    if t >= scores.len() {
        return fail(failures, Failure::Shape);
    }
    let got = argmax(&scores);
    if got != t {
        failures.push(Failure::Label { got, want: t });
    }
    if scores[t] <= 0.0 {
        failures.push(Failure::NonPositiveTarget(scores[t]));
    }
    for (j, &s) in scores.iter().enumerate() {
        if j != t && scores[t] < config.margin * s - VERIFY_TOL {
            failures.push(Failure::Margin {
                rival: j,
                target_score: scores[t],
                rival_score: s,
            });
        }
    }
    for (pixel, (&a, &b)) in result.image.iter().zip(&result.original).enumerate() {
        let change = (a - b).abs();
        if change.is_nan() || change > config.eps_max + 1e-9 {
            failures.push(Failure::Cap { pixel, change });
        }
        if !(-VERIFY_TOL..=1.0 + VERIFY_TOL).contains(&a) {
            failures.push(Failure::OutsideUnitBox { pixel, value: a });
        }
    }
    for (layer, claimed) in result.claimed.iter().enumerate() {
        let actual = trace.post.get(layer).map(|t| t.data()).unwrap_or(&[]);
        if actual.len() != claimed.len() {
            failures.push(Failure::Shape);
            continue;
        }
        for (unit, (&c, &a)) in claimed.iter().zip(actual).enumerate() {
            if (c - a).is_nan() || (c - a).abs() > VERIFY_TOL {
                failures.push(Failure::Activation {
                    layer,
                    unit,
                    claimed: c,
                    actual: a,
                });
            }
        }
    }
    Verdict { failures, scores }
}
