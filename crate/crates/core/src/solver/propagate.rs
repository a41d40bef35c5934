//! Activity-based bound propagation over linear rows and indicators.
//!
//! Every derived bound is loosened by a small relative slack so that
//! round-off never cuts off a feasible point.

use alloc::vec::Vec;

use crate::milp::{IndicatorConstraint, LinearConstraint, MilpModel, Sense, VarId, VarKind};

const ROUNDS: usize = 30;
const INFEASIBLE_TOL: f64 = 1e-7;

fn slack(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

/// Minimum of `terms` over the box, with the number of infinite
/// contributions kept apart.
fn min_activity(terms: &[(VarId, f64)], lb: &[f64], ub: &[f64]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut inf = 0;
    for &(v, a) in terms {
        let t = if a > 0.0 { a * lb[v.0] } else { a * ub[v.0] };
        if t.is_finite() {
            sum += t;
        } else if a != 0.0 {
            inf += 1;
        }
    }
    (sum, inf)
}

struct State<'a> {
    lb: &'a mut [f64],
    ub: &'a mut [f64],
    binary: &'a [bool],
    changed: bool,
}

impl State<'_> {
    fn set_ub(&mut self, v: usize, mut value: f64) {
        if self.binary[v] {
            value = if value < 1.0 - 1e-6 { 0.0 } else { 1.0 };
        }
        if value < self.ub[v] - 1e-7 * (1.0 + self.ub[v].abs()) || (self.binary[v] && value < self.ub[v]) {
            self.ub[v] = value;
            self.changed = true;
        }
    }

    fn set_lb(&mut self, v: usize, mut value: f64) {
        if self.binary[v] {
            value = if value > 1e-6 { 1.0 } else { 0.0 };
        }
        if value > self.lb[v] + 1e-7 * (1.0 + self.lb[v].abs()) || (self.binary[v] && value > self.lb[v]) {
            self.lb[v] = value;
            self.changed = true;
        }
    }

    /// Tightens against `sign * terms <= sign * rhs`. Returns false when the
    /// row cannot hold.
    fn row_le(&mut self, terms: &[(VarId, f64)], rhs: f64, sign: f64) -> bool {
        let scaled = |a: f64| a * sign;
        let rhs = rhs * sign;
        let mut sum = 0.0;
        let mut inf = 0;
        for &(v, a) in terms {
            let a = scaled(a);
            let t = if a > 0.0 { a * self.lb[v.0] } else { a * self.ub[v.0] };
            if t.is_finite() {
                sum += t;
            } else if a != 0.0 {
                inf += 1;
            }
        }
        if inf == 0 && sum > rhs + INFEASIBLE_TOL * (1.0 + rhs.abs()) {
            return false;
        }
        for &(v, a) in terms {
            let a = scaled(a);
            if a == 0.0 {
                continue;
            }
            let own = if a > 0.0 { a * self.lb[v.0] } else { a * self.ub[v.0] };
            let (rest, rest_inf) = if own.is_finite() { (sum - own, inf) } else { (sum, inf - 1) };
            if rest_inf > 0 {
                continue;
            }
            let lim = (rhs - rest) / a;
            if a > 0.0 {
                self.set_ub(v.0, lim + slack(lim));
            } else {
                self.set_lb(v.0, lim - slack(lim));
            }
        }
        true
    }

    fn row(&mut self, c: &LinearConstraint) -> bool {
        match c.sense {
            Sense::Le => self.row_le(&c.terms, c.rhs, 1.0),
            Sense::Ge => self.row_le(&c.terms, c.rhs, -1.0),
            Sense::Eq => self.row_le(&c.terms, c.rhs, 1.0) && self.row_le(&c.terms, c.rhs, -1.0),
        }
    }

    fn indicator(&mut self, ind: &IndicatorConstraint) -> bool {
        let g = ind.guard.0;
        let active = if ind.active_when { 1.0 } else { 0.0 };
        if self.lb[g] == self.ub[g] {
            return self.lb[g] != active || self.row(&ind.implied);
        }
        let (min, inf) = min_activity(&ind.implied.terms, self.lb, self.ub);
        if inf == 0 && min > ind.implied.rhs + INFEASIBLE_TOL * (1.0 + ind.implied.rhs.abs()) {
            self.lb[g] = 1.0 - active;
            self.ub[g] = 1.0 - active;
            self.changed = true;
        }
        true
    }
}

/// Upper and lower bounds on `v` implied by `row` under the current box.
fn implied_bounds(row: &LinearConstraint, v: VarId, lb: &[f64], ub: &[f64]) -> (Option<f64>, Option<f64>) {
    let signs: &[f64] = match row.sense {
        Sense::Le => &[1.0],
        Sense::Ge => &[-1.0],
        Sense::Eq => &[1.0, -1.0],
    };
    let Some(coef) = row.terms.iter().find(|t| t.0 == v).map(|t| t.1) else {
        return (None, None);
    };
    let (mut upper, mut lower) = (None, None);
    for &sign in signs {
        let a = coef * sign;
        if a == 0.0 {
            continue;
        }
        let rest: Vec<(VarId, f64)> = row.terms.iter().filter(|t| t.0 != v).map(|&(w, c)| (w, c * sign)).collect();
        let (min, inf) = min_activity(&rest, lb, ub);
        if inf > 0 {
            continue;
        }
        let lim = (row.rhs * sign - min) / a;
        if a > 0.0 {
            upper = Some(lim);
        } else {
            lower = Some(lim);
        }
    }
    (upper, lower)
}

/// Rows `sum z = 1` over binaries: exactly one member holds, so a bound
/// implied by every live member's indicators holds in its loosest form.
fn partitions(model: &MilpModel, binary: &[bool]) -> Vec<(Vec<VarId>, Vec<Vec<usize>>)> {
    let mut guarded: Vec<Vec<usize>> = alloc::vec![Vec::new(); binary.len()];
    for (k, ind) in model.indicators().iter().enumerate() {
        if ind.active_when {
            guarded[ind.guard.0].push(k);
        }
    }
    model
        .constraints()
        .iter()
        .filter(|c| c.sense == Sense::Eq && c.rhs == 1.0 && c.terms.len() > 1)
        .filter(|c| c.terms.iter().all(|&(v, a)| a == 1.0 && binary[v.0] && !guarded[v.0].is_empty()))
        .map(|c| {
            let members: Vec<VarId> = c.terms.iter().map(|t| t.0).collect();
            let inds = members.iter().map(|m| guarded[m.0].clone()).collect();
            (members, inds)
        })
        .collect()
}

impl State<'_> {
    fn disjunction(&mut self, model: &MilpModel, members: &[VarId], inds: &[Vec<usize>]) {
        let live: Vec<usize> = (0..members.len()).filter(|&i| self.ub[members[i].0] == 1.0).collect();
        let Some(&first) = live.first() else { return };
        let all = model.indicators();
        let mut candidates: Vec<VarId> = inds[first].iter().flat_map(|&k| all[k].implied.terms.iter().map(|t| t.0)).collect();
        candidates.sort_by_key(|v| v.0);
        candidates.dedup();
        for v in candidates {
            if self.binary[v.0] {
                continue;
            }
            // loosest bound over the live members, per direction
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            let (mut hi_ok, mut lo_ok) = (true, true);
            for &i in &live {
                let (mut h, mut l) = (f64::INFINITY, f64::NEG_INFINITY);
                for &k in &inds[i] {
                    let (up, down) = implied_bounds(&all[k].implied, v, self.lb, self.ub);
                    h = up.map_or(h, |u| h.min(u));
                    l = down.map_or(l, |d| l.max(d));
                }
                hi_ok &= h.is_finite();
                lo_ok &= l.is_finite();
                hi = hi.max(h);
                lo = lo.min(l);
            }
            if hi_ok {
                self.set_ub(v.0, hi + slack(hi));
            }
            if lo_ok {
                self.set_lb(v.0, lo - slack(lo));
            }
        }
    }
}

/// Tightens `lb` / `ub` in place. Returns false when the box is provably
/// empty.
pub(crate) fn propagate(model: &MilpModel, lb: &mut [f64], ub: &mut [f64]) -> bool {
    let binary: Vec<bool> = model.vars().iter().map(|v| v.kind == VarKind::Binary).collect();
    let mut st = State {
        lb,
        ub,
        binary: &binary,
        changed: true,
    };
    let parts = partitions(model, &binary);
    for _ in 0..ROUNDS {
        if !st.changed {
            break;
        }
        st.changed = false;
        for c in model.constraints() {
            if !st.row(c) {
                return false;
            }
        }
        for ind in model.indicators() {
            if !st.indicator(ind) {
                return false;
            }
        }
        for (members, inds) in &parts {
            st.disjunction(model, members, inds);
        }
        for j in 0..st.lb.len() {
            if st.lb[j] > st.ub[j] {
                if st.lb[j] - st.ub[j] > INFEASIBLE_TOL * (1.0 + st.ub[j].abs()) {
                    return false;
                }
                let mid = 0.5 * (st.lb[j] + st.ub[j]);
                st.lb[j] = mid;
                st.ub[j] = mid;
            }
        }
    }
    true
}
