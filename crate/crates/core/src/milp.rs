//! Solver- and encoder-facing MILP representation.
//!
//! Indicator constraints are kept in logical form (`z = v -> a·x <= r`) and
//! are only lowered to big-M rows by [`to_big_m`] or by the solver when it
//! builds an LP relaxation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// Absolute tolerance for bounds, rows, indicators and integrality.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub id: VarId,
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64, tol: f64) -> bool {
        match self {
            Sense::Le => lhs <= rhs + tol,
            Sense::Ge => lhs >= rhs - tol,
            Sense::Eq => (lhs - rhs).abs() <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(name: impl Into<String>, terms: Vec<(VarId, f64)>, sense: Sense, rhs: f64) -> Self {
        Self {
            name: name.into(),
            terms,
            sense,
            rhs,
        }
    }

    pub fn lhs(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * values[v.0]).sum()
    }

    pub fn is_satisfied(&self, values: &[f64], tol: f64) -> bool {
        self.sense.holds(self.lhs(values), self.rhs, tol)
    }
}

/// `guard = active_when -> implied`, with `implied` always of sense `<=`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorConstraint {
    pub name: String,
    pub guard: VarId,
    pub active_when: bool,
    pub implied: LinearConstraint,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MilpError {
    #[error("variable {0} does not exist")]
    UnknownVar(VarId),
    #[error("duplicate variable name {0:?}")]
    DuplicateName(String),
    #[error("variable {name:?}: bounds [{lb}, {ub}] invalid")]
    BadBounds { name: String, lb: f64, ub: f64 },
    #[error("variable {name:?}: cost must be finite")]
    BadCost { name: String },
    #[error("constraint {name:?} mentions {var} twice")]
    DuplicateTerm { name: String, var: VarId },
    #[error("constraint {name:?}: non-finite coefficient or rhs")]
    NonFinite { name: String },
    #[error("indicator {name:?}: guard {guard} is not binary")]
    GuardNotBinary { name: String, guard: VarId },
    #[error("indicator {name:?}: implied constraint must have sense <=")]
    ImpliedSense { name: String },
    #[error("indicator {name:?}: variable {var:?} lacks a finite bound for big-M")]
    UnboundedImplied { name: String, var: String },
    #[error("assignment has {got} values, model has {want} variables")]
    AssignmentLength { want: usize, got: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpModel {
    vars: Vec<Variable>,
    constraints: Vec<LinearConstraint>,
    indicators: Vec<IndicatorConstraint>,
    names: BTreeMap<String, VarId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelStats {
    pub variables: usize,
    pub binaries: usize,
    pub equalities: usize,
    pub inequalities: usize,
    pub indicators: usize,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lb: f64,
        ub: f64,
        cost: f64,
    ) -> Result<VarId, MilpError> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(MilpError::DuplicateName(name));
        }
        check_bounds(&name, kind, lb, ub)?;
        if !cost.is_finite() {
            return Err(MilpError::BadCost { name });
        }
        let id = VarId(self.vars.len());
        self.names.insert(name.clone(), id);
        self.vars.push(Variable {
            id,
            name,
            kind,
            lb,
            ub,
            cost,
        });
        Ok(id)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lb: f64, ub: f64, cost: f64) -> Result<VarId, MilpError> {
        self.add_var(name, VarKind::Continuous, lb, ub, cost)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, cost: f64) -> Result<VarId, MilpError> {
        self.add_var(name, VarKind::Binary, 0.0, 1.0, cost)
    }

    fn check_constraint(&self, c: &LinearConstraint) -> Result<(), MilpError> {
        if !c.rhs.is_finite() || c.terms.iter().any(|(_, a)| !a.is_finite()) {
            return Err(MilpError::NonFinite { name: c.name.clone() });
        }
        let mut seen = BTreeMap::new();
        for &(v, _) in &c.terms {
            if v.0 >= self.vars.len() {
                return Err(MilpError::UnknownVar(v));
            }
            if seen.insert(v, ()).is_some() {
                return Err(MilpError::DuplicateTerm {
                    name: c.name.clone(),
                    var: v,
                });
            }
        }
        Ok(())
    }

    pub fn add_constraint(&mut self, c: LinearConstraint) -> Result<usize, MilpError> {
        self.check_constraint(&c)?;
        self.constraints.push(c);
        Ok(self.constraints.len() - 1)
    }

    pub fn add_indicator(
        &mut self,
        name: impl Into<String>,
        guard: VarId,
        active_when: bool,
        implied: LinearConstraint,
    ) -> Result<usize, MilpError> {
        let name = name.into();
        let g = self.vars.get(guard.0).ok_or(MilpError::UnknownVar(guard))?;
        if g.kind != VarKind::Binary {
            return Err(MilpError::GuardNotBinary { name, guard });
        }
        if implied.sense != Sense::Le {
            return Err(MilpError::ImpliedSense { name });
        }
        self.check_constraint(&implied)?;
        self.indicators.push(IndicatorConstraint {
            name,
            guard,
            active_when,
            implied,
        });
        Ok(self.indicators.len() - 1)
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn indicators(&self) -> &[IndicatorConstraint] {
        &self.indicators
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn set_bounds(&mut self, id: VarId, lb: f64, ub: f64) -> Result<(), MilpError> {
        let v = self.vars.get_mut(id.0).ok_or(MilpError::UnknownVar(id))?;
        check_bounds(&v.name, v.kind, lb, ub)?;
        v.lb = lb;
        v.ub = ub;
        Ok(())
    }

    pub fn set_cost(&mut self, id: VarId, cost: f64) -> Result<(), MilpError> {
        let v = self.vars.get_mut(id.0).ok_or(MilpError::UnknownVar(id))?;
        if !cost.is_finite() {
            return Err(MilpError::BadCost { name: v.name.clone() });
        }
        v.cost = cost;
        Ok(())
    }

    pub fn clear_costs(&mut self) {
        for v in &mut self.vars {
            v.cost = 0.0;
        }
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .map(|v| v.id)
    }

    pub fn objective(&self, values: &[f64]) -> f64 {
        self.vars.iter().map(|v| v.cost * values[v.id.0]).sum()
    }

    pub fn stats(&self) -> ModelStats {
        ModelStats {
            variables: self.vars.len(),
            binaries: self.binaries().count(),
            equalities: self.constraints.iter().filter(|c| c.sense == Sense::Eq).count(),
            inequalities: self.constraints.iter().filter(|c| c.sense != Sense::Eq).count(),
            indicators: self.indicators.len(),
        }
    }
}

fn check_bounds(name: &str, kind: VarKind, lb: f64, ub: f64) -> Result<(), MilpError> {
    let ok = !lb.is_nan()
        && !ub.is_nan()
        && lb <= ub
        && lb != f64::INFINITY
        && ub != f64::NEG_INFINITY
        && (kind == VarKind::Continuous || (lb == 0.0 && ub == 1.0));
    if ok {
        Ok(())
    } else {
        Err(MilpError::BadBounds {
            name: name.to_string(),
            lb,
            ub,
        })
    }
}

/// Largest value of `terms` over the variable box, or the name of the first
/// variable whose relevant bound is infinite.
pub fn max_activity(model: &MilpModel, terms: &[(VarId, f64)], bound: impl Fn(VarId) -> (f64, f64)) -> Result<f64, String> {
    let mut acc = 0.0;
    for &(v, a) in terms {
        let (lb, ub) = bound(v);
        let b = if a > 0.0 { ub } else if a < 0.0 { lb } else { continue };
        if !b.is_finite() {
            return Err(model.var(v).name.clone());
        }
        acc += a * b;
    }
    Ok(acc)
}

/// The big-M row for an indicator, or `None` when the implied constraint
/// already holds over the whole variable box.
pub fn big_m_row(
    model: &MilpModel,
    ind: &IndicatorConstraint,
    bound: impl Fn(VarId) -> (f64, f64),
) -> Result<Option<LinearConstraint>, MilpError> {
    let max = max_activity(model, &ind.implied.terms, bound).map_err(|var| MilpError::UnboundedImplied {
        name: ind.name.clone(),
        var,
    })?;
    let m = max - ind.implied.rhs;
    if m <= 0.0 {
        return Ok(None);
    }
    let mut terms = ind.implied.terms.clone();
    let rhs = if ind.active_when {
        // a·x <= r + M(1 - z)
        terms.push((ind.guard, m));
        ind.implied.rhs + m
    } else {
        // a·x <= r + M z
        terms.push((ind.guard, -m));
        ind.implied.rhs
    };
    Ok(Some(LinearConstraint::new(
        alloc::format!("{}_bigm", ind.name),
        terms,
        Sense::Le,
        rhs,
    )))
}

/// Replaces every indicator with its big-M row computed from the variable
/// bounds. Vacuous indicators are dropped.
pub fn to_big_m(model: &MilpModel) -> Result<MilpModel, MilpError> {
    let mut out = MilpModel {
        vars: model.vars.clone(),
        constraints: model.constraints.clone(),
        indicators: Vec::new(),
        names: model.names.clone(),
    };
    for ind in &model.indicators {
        let bound = |v: VarId| (model.var(v).lb, model.var(v).ub);
        if let Some(row) = big_m_row(model, ind, bound)? {
            out.constraints.push(row);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Bound { var: VarId, value: f64, lb: f64, ub: f64 },
    Integrality { var: VarId, value: f64 },
    Constraint { index: usize, name: String, lhs: f64, rhs: f64, sense: Sense },
    Indicator { index: usize, name: String, lhs: f64, rhs: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Bound { var, value, lb, ub } => write!(f, "{var} = {value} outside [{lb}, {ub}]"),
            Violation::Integrality { var, value } => write!(f, "binary {var} = {value}"),
            Violation::Constraint { name, lhs, rhs, sense, .. } => {
                write!(f, "{name}: {lhs} {} {rhs} fails", sense.symbol())
            }
            Violation::Indicator { name, lhs, rhs, .. } => write!(f, "{name}: active but {lhs} > {rhs}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub feasible: bool,
    pub objective: f64,
    pub violation: Option<Violation>,
}

/// Checks `values` (indexed by variable id) against bounds, integrality, rows
/// and indicators at [`FEAS_TOL`].
pub fn evaluate(model: &MilpModel, values: &[f64]) -> Result<Evaluation, MilpError> {
    if values.len() != model.num_vars() {
        return Err(MilpError::AssignmentLength {
            want: model.num_vars(),
            got: values.len(),
        });
    }
    let objective = model.objective(values);
    let violation = first_violation(model, values);
    Ok(Evaluation {
        feasible: violation.is_none(),
        objective,
        violation,
    })
}

fn first_violation(model: &MilpModel, values: &[f64]) -> Option<Violation> {
    for v in model.vars() {
        let x = values[v.id.0];
        if !(x >= v.lb - FEAS_TOL && x <= v.ub + FEAS_TOL) {
            return Some(Violation::Bound { var: v.id, value: x, lb: v.lb, ub: v.ub });
        }
        if v.kind == VarKind::Binary && x.min(1.0 - x).abs() > FEAS_TOL {
            return Some(Violation::Integrality { var: v.id, value: x });
        }
    }
    for (index, c) in model.constraints().iter().enumerate() {
        let lhs = c.lhs(values);
        if !c.sense.holds(lhs, c.rhs, FEAS_TOL) {
            return Some(Violation::Constraint {
                index,
                name: c.name.clone(),
                lhs,
                rhs: c.rhs,
                sense: c.sense,
            });
        }
    }
    for (index, ind) in model.indicators().iter().enumerate() {
        let target = if ind.active_when { 1.0 } else { 0.0 };
        if (values[ind.guard.0] - target).abs() <= FEAS_TOL {
            let lhs = ind.implied.lhs(values);
            if lhs > ind.implied.rhs + FEAS_TOL {
                return Some(Violation::Indicator {
                    index,
                    name: ind.name.clone(),
                    lhs,
                    rhs: ind.implied.rhs,
                });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn big_m_of_relu_off_branch() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 7.5, 0.0).unwrap();
        let z = m.add_binary("z", 0.0).unwrap();
        m.add_indicator("off", z, true, LinearConstraint::new("", vec![(x, 1.0)], Sense::Le, 0.0)).unwrap();
        let lowered = to_big_m(&m).unwrap();
        assert!(lowered.indicators().is_empty());
        let row = &lowered.constraints()[0];
        // x + 7.5 z <= 7.5, i.e. x <= 7.5 (1 - z)
        assert_eq!(row.terms, vec![(x, 1.0), (z, 7.5)]);
        assert_eq!(row.rhs, 7.5);
    }

    #[test]
    fn vacuous_indicator_dropped_and_unbounded_rejected() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", -3.0, -1.0, 0.0).unwrap();
        let y = m.add_continuous("y", 0.0, f64::INFINITY, 0.0).unwrap();
        let z = m.add_binary("z", 0.0).unwrap();
        m.add_indicator("vac", z, false, LinearConstraint::new("", vec![(x, 1.0)], Sense::Le, 0.0)).unwrap();
        assert!(to_big_m(&m).unwrap().constraints().is_empty());
        m.add_indicator("unb", z, true, LinearConstraint::new("", vec![(y, 1.0)], Sense::Le, 0.0)).unwrap();
        match to_big_m(&m) {
            Err(MilpError::UnboundedImplied { var, .. }) => assert_eq!(var, "y"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn builder_rejects_invalid_input() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 1.0, 0.0).unwrap();
        assert!(matches!(m.add_continuous("x", 0.0, 1.0, 0.0), Err(MilpError::DuplicateName(_))));
        assert!(m.add_continuous("bad", 2.0, 1.0, 0.0).is_err());
        assert!(m.add_var("bin", VarKind::Binary, 0.0, 2.0, 0.0).is_err());
        assert!(matches!(
            m.add_constraint(LinearConstraint::new("d", vec![(x, 1.0), (x, 2.0)], Sense::Le, 0.0)),
            Err(MilpError::DuplicateTerm { .. })
        ));
        assert!(matches!(
            m.add_constraint(LinearConstraint::new("u", vec![(VarId(9), 1.0)], Sense::Le, 0.0)),
            Err(MilpError::UnknownVar(_))
        ));
        assert!(matches!(
            m.add_indicator("g", x, true, LinearConstraint::new("", vec![], Sense::Le, 0.0)),
            Err(MilpError::GuardNotBinary { .. })
        ));
    }

    #[test]
    fn evaluate_reports_first_violation() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, f64::INFINITY, 1.0).unwrap();
        let r = m.add_constraint(LinearConstraint::new("cap", vec![(x, 1.0)], Sense::Le, 4.0)).unwrap();
        let ok = evaluate(&m, &[0.0]).unwrap();
        assert!(ok.feasible);
        assert_eq!(ok.objective, 0.0);
        let bad = evaluate(&m, &[5.0]).unwrap();
        assert!(!bad.feasible);
        match bad.violation.unwrap() {
            Violation::Constraint { index, .. } => assert_eq!(index, r),
            v => panic!("{v}"),
        }
        assert!(matches!(evaluate(&m, &[]), Err(MilpError::AssignmentLength { .. })));
    }

    #[test]
    fn evaluate_checks_indicator_only_when_active() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 5.0, 0.0).unwrap();
        let z = m.add_binary("z", 0.0).unwrap();
        m.add_indicator("i", z, true, LinearConstraint::new("", vec![(x, 1.0)], Sense::Le, 1.0)).unwrap();
        assert!(evaluate(&m, &[3.0, 0.0]).unwrap().feasible);
        assert!(!evaluate(&m, &[3.0, 1.0]).unwrap().feasible);
        assert!(!evaluate(&m, &[0.0, 0.5]).unwrap().feasible);
    }

    fn random_model(rng: &mut ChaCha8Rng) -> MilpModel {
        let mut m = MilpModel::new();
        let n = rng.random_range(1..5);
        let xs: Vec<VarId> = (0..n)
            .map(|i| {
                let lb = rng.random_range(-3.0..1.0);
                m.add_continuous(format!("x{i}"), lb, lb + rng.random_range(0.0..4.0), 1.0).unwrap()
            })
            .collect();
        let b = rng.random_range(1..4);
        let zs: Vec<VarId> = (0..b).map(|i| m.add_binary(format!("z{i}"), 0.0).unwrap()).collect();
        for k in 0..rng.random_range(1..5) {
            let mut terms = Vec::new();
            for &v in &xs {
                if rng.random_bool(0.6) {
                    terms.push((v, rng.random_range(-2.0..2.0)));
                }
            }
            let guard = zs[rng.random_range(0..b)];
            m.add_indicator(format!("i{k}"), guard, rng.random_bool(0.5), LinearConstraint::new("", terms, Sense::Le, rng.random_range(-1.0..1.0)))
                .unwrap();
        }
        m
    }

    #[test]
    fn big_m_matches_indicator_feasibility_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let m = random_model(&mut rng);
            let lowered = to_big_m(&m).unwrap();
            let zs: Vec<VarId> = m.binaries().collect();
            for pattern in 0..(1u32 << zs.len()) {
                for _ in 0..200 {
                    let mut vals: Vec<f64> = m
                        .vars()
                        .iter()
                        .map(|v| if v.kind == VarKind::Binary { 0.0 } else { rng.random_range(v.lb..=v.ub) })
                        .collect();
                    for (bit, z) in zs.iter().enumerate() {
                        vals[z.0] = ((pattern >> bit) & 1) as f64;
                    }
                    assert_eq!(
                        evaluate(&m, &vals).unwrap().feasible,
                        evaluate(&lowered, &vals).unwrap().feasible
                    );
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn objective_is_linear(costs in proptest::collection::vec(-5.0f64..5.0, 1..6),
                                   seed in any::<u64>(), a in -3.0f64..3.0) {
                let mut m = MilpModel::new();
                for (i, &c) in costs.iter().enumerate() {
                    m.add_continuous(format!("v{i}"), f64::NEG_INFINITY, f64::INFINITY, c).unwrap();
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x: Vec<f64> = costs.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
                let y: Vec<f64> = costs.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
                let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
                let lhs = m.objective(&combo);
                let rhs = a * m.objective(&x) + m.objective(&y);
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }
}
