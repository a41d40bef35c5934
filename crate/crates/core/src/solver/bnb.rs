//! Best-first branch-and-bound over the binary variables of a [`MilpModel`].
//! Until an incumbent exists, branching nodes also run a short diving
//! heuristic so the search has a cutoff to prune against.
//!
//! Each node first propagates bounds through the rows and indicators. An
//! indicator whose guard is still unfixed enters the node relaxation as a
//! big-M row computed from the propagated bounds. Once the guard is fixed the implied
//! constraint is added exactly (as a bound change when it has one term) or
//! dropped.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::propagate::propagate;
use super::simplex::{simplex_solve, LpProblem, LpStatus};
use crate::milp::{big_m_row, MilpModel, VarId, VarKind, FEAS_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branching {
    #[default]
    MostFractional,
    FirstFractional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbConfig {
    pub branching: Branching,
    pub node_limit: usize,
    /// Absolute optimality gap.
    pub gap: f64,
    /// Wall-time budget in seconds, measured by the supplied [`Clock`].
    pub time_budget: Option<f64>,
    /// Search is single-threaded, so this is always honoured.
    pub deterministic: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            branching: Branching::MostFractional,
            node_limit: 1_000_000,
            gap: 1e-6,
            time_budget: None,
            deterministic: true,
        }
    }
}

/// Source of elapsed time. `core` has no clock, so callers with `std`
/// provide one.
pub trait Clock {
    fn elapsed_seconds(&self) -> f64;
}

/// A clock that never advances; time budgets never trigger.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NodeLimit,
    TimeLimit,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NodeLimit => "node_limit",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Incumbent objective, `+inf` without an incumbent.
    pub objective: f64,
    /// Incumbent values indexed by variable id, empty without an incumbent.
    pub assignment: Vec<f64>,
    pub nodes: usize,
    pub best_bound: f64,
    /// Global lower bound after each processed node.
    pub bound_trace: Vec<f64>,
}

impl SolveResult {
    pub fn has_incumbent(&self) -> bool {
        !self.assignment.is_empty()
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.assignment[v.0]
    }
}

/// Outcome of building a node relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum Relaxation {
    Lp(LpProblem),
    /// Fixings made some variable's bounds cross.
    Infeasible,
}

/// LP relaxation of `model` with binaries in `fixed` pinned. `fixed` is
/// indexed by variable id; entries for continuous variables are ignored.
pub fn relaxation(model: &MilpModel, fixed: &[Option<bool>]) -> Relaxation {
    let n = model.num_vars();
    let mut lb: Vec<f64> = model.vars().iter().map(|v| v.lb).collect();
    let mut ub: Vec<f64> = model.vars().iter().map(|v| v.ub).collect();
    for v in model.vars() {
        if v.kind == VarKind::Binary {
            if let Some(b) = fixed.get(v.id.0).copied().flatten() {
                let val = if b { 1.0 } else { 0.0 };
                lb[v.id.0] = val;
                ub[v.id.0] = val;
            }
        }
    }
    if !propagate(model, &mut lb, &mut ub) {
        return Relaxation::Infeasible;
    }
    // fixings include guards settled by propagation
    let guard_state = |ind: &crate::milp::IndicatorConstraint, lb: &[f64], ub: &[f64]| {
        let g = ind.guard.0;
        (lb[g] == ub[g]).then_some(lb[g] == 1.0)
    };

    let mut lp = LpProblem::default();
    for v in model.vars() {
        lp.add_var(0.0, 0.0, v.cost);
    }
    let mut exact_rows = Vec::new();
    for ind in model.indicators() {
        match guard_state(ind, &lb, &ub) {
            Some(b) if b == ind.active_when => match ind.implied.terms.as_slice() {
                [(v, a)] if *a != 0.0 => {
                    let lim = ind.implied.rhs / a;
                    if *a > 0.0 {
                        ub[v.0] = ub[v.0].min(lim);
                    } else {
                        lb[v.0] = lb[v.0].max(lim);
                    }
                }
                _ => exact_rows.push(&ind.implied),
            },
            _ => {}
        }
    }
    for j in 0..n {
        if lb[j] > ub[j] {
            if lb[j] - ub[j] > FEAS_TOL * 1e-2 {
                return Relaxation::Infeasible;
            }
            let mid = 0.5 * (lb[j] + ub[j]);
            lb[j] = mid;
            ub[j] = mid;
        }
    }
    let fixed_guards: Vec<Option<bool>> = model.indicators().iter().map(|ind| guard_state(ind, &lb, &ub)).collect();
    lp.lb = lb;
    lp.ub = ub;
    for c in model.constraints() {
        lp.add_row(c.terms.iter().map(|&(v, a)| (v.0, a)).collect(), c.sense, c.rhs);
    }
    for c in exact_rows {
        lp.add_row(c.terms.iter().map(|&(v, a)| (v.0, a)).collect(), c.sense, c.rhs);
    }
    for (ind, state) in model.indicators().iter().zip(&fixed_guards) {
        if state.is_some() {
            continue;
        }
        let bound = |v: VarId| (lp.lb[v.0], lp.ub[v.0]);
        // A vacuous or unbounded implied row is left out: the relaxation stays
        // valid and the guard is resolved once it is fixed.
        if let Ok(Some(row)) = big_m_row(model, ind, bound) {
            lp.add_row(row.terms.iter().map(|&(v, a)| (v.0, a)).collect(), row.sense, row.rhs);
        }
    }
    Relaxation::Lp(lp)
}

#[derive(Debug, Clone)]
struct Node {
    bound: f64,
    depth: usize,
    id: usize,
    fixed: Vec<Option<bool>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: the best node compares greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

fn is_integral(v: f64) -> bool {
    (v - libm::round(v)).abs() <= FEAS_TOL
}

struct Search<'a> {
    model: &'a MilpModel,
    config: BnbConfig,
    binaries: Vec<VarId>,
    incumbent: Option<(f64, Vec<f64>)>,
    next_id: usize,
    dives: usize,
}

/// Dives attempted before the search relies on branching alone.
const MAX_DIVES: usize = 8;

enum NodeOutcome {
    Done,
    Branch(f64, VarId),
    Unbounded,
    Numerical,
}

impl Search<'_> {
    fn offer(&mut self, x: Vec<f64>) {
        let obj = self.model.objective(&x);
        if self.incumbent.as_ref().is_none_or(|(best, _)| obj < *best) {
            self.incumbent = Some((obj, x));
        }
    }

    fn cutoff(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |(o, _)| o - self.config.gap)
    }

    fn pick_fractional(&self, node: &Node, x: &[f64]) -> Option<VarId> {
        let mut best: Option<(VarId, f64)> = None;
        for &b in &self.binaries {
            if node.fixed[b.0].is_some() || is_integral(x[b.0]) {
                continue;
            }
            let frac = x[b.0] - libm::floor(x[b.0]);
            let score = frac.min(1.0 - frac);
            match self.config.branching {
                Branching::FirstFractional => return Some(b),
                Branching::MostFractional => {
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some((b, score));
                    }
                }
            }
        }
        best.map(|(b, _)| b)
    }

    /// Diving heuristic: repeatedly round the least fractional free binary
    /// and re-solve, flipping a rounding once if it turns infeasible. Used only
    /// while there is no incumbent; it never adds nodes to the tree.
    fn dive(&mut self, from: &[Option<bool>]) {
        let mut fixed = from.to_vec();
        let mut flipped = false;
        let mut last: Option<VarId> = None;
        for _ in 0..=2 * self.binaries.len() {
            let sol = match relaxation(self.model, &fixed) {
                Relaxation::Lp(lp) => simplex_solve(&lp),
                Relaxation::Infeasible => {
                    match last {
                        Some(v) if !flipped => {
                            fixed[v.0] = fixed[v.0].map(|b| !b);
                            flipped = true;
                            continue;
                        }
                        _ => return,
                    }
                }
            };
            match sol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => match last {
                    Some(v) if !flipped => {
                        fixed[v.0] = fixed[v.0].map(|b| !b);
                        flipped = true;
                        continue;
                    }
                    _ => return,
                },
                _ => return,
            }
            if sol.objective >= self.cutoff() {
                return;
            }
            let mut pick: Option<(VarId, f64)> = None;
            for &b in &self.binaries {
                if fixed[b.0].is_some() || is_integral(sol.x[b.0]) {
                    continue;
                }
                let frac = sol.x[b.0] - libm::floor(sol.x[b.0]);
                let score = frac.min(1.0 - frac);
                if pick.is_none_or(|(_, s)| score < s) {
                    pick = Some((b, score));
                }
            }
            let Some((b, _)) = pick else {
                // integral relaxation: pin the rest and take the exact LP
                for &b in &self.binaries {
                    fixed[b.0].get_or_insert(libm::round(sol.x[b.0]) >= 0.5);
                }
                if let Relaxation::Lp(lp) = relaxation(self.model, &fixed) {
                    let exact = simplex_solve(&lp);
                    if exact.status == LpStatus::Optimal {
                        self.offer(exact.x);
                    }
                }
                return;
            };
            fixed[b.0] = Some(libm::round(sol.x[b.0]) >= 0.5);
            last = Some(b);
            flipped = false;
        }
    }

    fn process(&mut self, node: &Node) -> NodeOutcome {
        let lp = match relaxation(self.model, &node.fixed) {
            Relaxation::Lp(lp) => lp,
            Relaxation::Infeasible => return NodeOutcome::Done,
        };
        let sol = simplex_solve(&lp);
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return NodeOutcome::Done,
            LpStatus::Unbounded => return NodeOutcome::Unbounded,
            LpStatus::NumericalFailure => return NodeOutcome::Numerical,
        }
        let lp_obj = sol.objective.max(node.bound);
        if lp_obj >= self.cutoff() {
            return NodeOutcome::Done;
        }
        if let Some(b) = self.pick_fractional(node, &sol.x) {
            if self.incumbent.is_none() && self.dives < MAX_DIVES {
                self.dives += 1;
                self.dive(&node.fixed);
            }
            return NodeOutcome::Branch(lp_obj, b);
        }
        let first_free = self.binaries.iter().copied().find(|b| node.fixed[b.0].is_none());
        let Some(free) = first_free else {
            self.offer(sol.x);
            return NodeOutcome::Done;
        };
        // Integral relaxation: pin every binary and solve the exact LP.
        let mut all = node.fixed.clone();
        for &b in &self.binaries {
            all[b.0].get_or_insert(libm::round(sol.x[b.0]) >= 0.5);
        }
        let exact = match relaxation(self.model, &all) {
            Relaxation::Lp(lp) => simplex_solve(&lp),
            Relaxation::Infeasible => return NodeOutcome::Branch(lp_obj, free),
        };
        match exact.status {
            LpStatus::Optimal => {
                let obj = exact.objective;
                self.offer(exact.x);
                if obj <= lp_obj + self.config.gap {
                    NodeOutcome::Done
                } else {
                    NodeOutcome::Branch(lp_obj, free)
                }
            }
            LpStatus::Infeasible => NodeOutcome::Branch(lp_obj, free),
            LpStatus::Unbounded => NodeOutcome::Unbounded,
            LpStatus::NumericalFailure => NodeOutcome::Numerical,
        }
    }
}

pub fn branch_and_bound(model: &MilpModel, config: &BnbConfig) -> SolveResult {
    branch_and_bound_with_clock(model, config, &NoClock)
}

pub fn branch_and_bound_with_clock(model: &MilpModel, config: &BnbConfig, clock: &dyn Clock) -> SolveResult {
    let config = BnbConfig {
        node_limit: config.node_limit.max(1),
        ..*config
    };
    let mut search = Search {
        model,
        config,
        binaries: model.binaries().collect(),
        incumbent: None,
        next_id: 1,
        dives: 0,
    };
    let mut open = BinaryHeap::new();
    open.push(Node {
        bound: f64::NEG_INFINITY,
        depth: 0,
        id: 0,
        fixed: vec![None; model.num_vars()],
    });
    let mut nodes = 0usize;
    let mut trace = Vec::new();
    let mut global = f64::NEG_INFINITY;
    let start = clock.elapsed_seconds();

    let status = loop {
        let Some(node) = open.pop() else {
            break if search.incumbent.is_some() { SolveStatus::Optimal } else { SolveStatus::Infeasible };
        };
        if node.bound >= search.cutoff() {
            // best-first: nothing left can improve by more than the gap
            open.push(node);
            break SolveStatus::Optimal;
        }
        if nodes >= config.node_limit {
            open.push(node);
            break SolveStatus::NodeLimit;
        }
        if config.time_budget.is_some_and(|t| clock.elapsed_seconds() - start > t) {
            open.push(node);
            break SolveStatus::TimeLimit;
        }
        nodes += 1;
        global = global.max(node.bound);
        trace.push(global);
        match search.process(&node) {
            NodeOutcome::Done => {}
            NodeOutcome::Branch(bound, var) => {
                for value in [false, true] {
                    let mut fixed = node.fixed.clone();
                    fixed[var.0] = Some(value);
                    open.push(Node {
                        bound,
                        depth: node.depth + 1,
                        id: search.next_id,
                        fixed,
                    });
                    search.next_id += 1;
                }
            }
            NodeOutcome::Unbounded => break SolveStatus::Unbounded,
            NodeOutcome::Numerical => break SolveStatus::NumericalFailure,
        }
    };

    let (objective, assignment) = match search.incumbent.take() {
        Some((o, x)) => (o, x),
        None => (f64::INFINITY, Vec::new()),
    };
    let open_min = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let best_bound = match status {
        SolveStatus::Optimal if open_min.is_infinite() => objective,
        SolveStatus::Optimal | SolveStatus::NodeLimit | SolveStatus::TimeLimit => {
            open_min.min(objective).max(global)
        }
        SolveStatus::Infeasible => f64::INFINITY,
        SolveStatus::Unbounded => f64::NEG_INFINITY,
        SolveStatus::NumericalFailure => global,
    };
    SolveResult {
        status,
        objective,
        assignment,
        nodes,
        best_bound,
        bound_trace: trace,
    }
}
