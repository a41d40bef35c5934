//! Two-phase bounded primal simplex on a dense tableau.
//!
//! Every structural variable is shifted, reflected or split so that each
//! column lives in `[0, u]` with `u` possibly infinite. Non-basic columns sit
//! at either bound and may flip without a pivot.

use alloc::vec;
use alloc::vec::Vec;

use crate::milp::Sense;

pub const PIVOT_TOL: f64 = 1e-9;
pub const LP_FEAS_TOL: f64 = 1e-7;
const COST_TOL: f64 = 1e-9;
/// Residual allowed on the original rows before a solution is rejected.
const CHECK_TOL: f64 = 1e-6;
const REFRESH_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min c·x` subject to rows and `lb <= x <= ub`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub costs: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LpProblem {
    pub fn add_var(&mut self, lb: f64, ub: f64, cost: f64) -> usize {
        self.costs.push(cost);
        self.lb.push(lb);
        self.ub.push(ub);
        self.costs.len() - 1
    }

    pub fn add_row(&mut self, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(LpRow { terms, sense, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.costs.len()
    }

    fn is_valid(&self) -> bool {
        let n = self.costs.len();
        self.lb.len() == n
            && self.ub.len() == n
            && self.costs.iter().all(|c| c.is_finite())
            && self
                .lb
                .iter()
                .zip(&self.ub)
                .all(|(&l, &u)| l <= u && l < f64::INFINITY && u > f64::NEG_INFINITY)
            && self.rows.iter().all(|r| {
                r.rhs.is_finite() && r.terms.iter().all(|&(j, a)| j < n && a.is_finite())
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal point when `status` is optimal, empty otherwise.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    fn without_point(status: LpStatus, iterations: usize) -> Self {
        let objective = match status {
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        };
        Self {
            status,
            x: Vec::new(),
            objective,
            iterations,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ColMap {
    /// x = lb + y
    Shift { col: usize, lb: f64 },
    /// x = ub - y
    Reflect { col: usize, ub: f64 },
    /// x = y⁺ - y⁻
    Split { pos: usize, neg: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
}

enum Phase {
    Optimal,
    Unbounded,
    Stalled,
}

struct Tableau {
    m: usize,
    n: usize,
    /// `B⁻¹ A`, row-major `m × n`.
    t: Vec<f64>,
    /// Normalized original `A`, kept to refresh basic values.
    a0: Vec<f64>,
    b0: Vec<f64>,
    beta: Vec<f64>,
    d: Vec<f64>,
    ub: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    /// Column that formed the identity in row `i` at the start; its current
    /// column in `t` is column `i` of `B⁻¹`.
    unit: Vec<usize>,
    iterations: usize,
    cap: usize,
    bland_after: usize,
}

impl Tableau {
    fn value(&self, j: usize) -> f64 {
        match self.state[j] {
            State::AtLower => 0.0,
            State::AtUpper => self.ub[j],
            State::Basic => {
                let r = self.basis.iter().position(|&b| b == j).expect("basic column in basis");
                self.beta[r]
            }
        }
    }

    fn set_costs(&mut self, c: &[f64]) {
        self.d.copy_from_slice(c);
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.n..(i + 1) * self.n];
                for (dj, &tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
    }

    /// Recomputes basic values from the original data and the current `B⁻¹`.
    fn refresh_beta(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut rhs = self.b0.clone();
        for j in 0..n {
            if self.state[j] == State::AtUpper {
                for (k, r) in rhs.iter_mut().enumerate() {
                    *r -= self.a0[k * n + j] * self.ub[j];
                }
            }
        }
        for i in 0..m {
            self.beta[i] = (0..m).map(|k| self.t[i * n + self.unit[k]] * rhs[k]).sum();
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.n;
        let p = self.t[r * n + j];
        for v in &mut self.t[r * n..(r + 1) * n] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * n);
        let (prow, after) = rest.split_at_mut(n);
        for row in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let f = row[j];
            if f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (v, &pv) in self.d.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            self.d[j] = 0.0;
        }
    }

    fn entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n {
            if self.ub[j] == 0.0 {
                continue;
            }
            let dj = self.d[j];
            let dir = match self.state[j] {
                State::AtLower if dj < -COST_TOL => 1.0,
                State::AtUpper if dj > COST_TOL => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(_, _, s)| dj.abs() > s) {
                best = Some((j, dir, dj.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn run(&mut self) -> Phase {
        loop {
            if self.iterations >= self.cap {
                return Phase::Stalled;
            }
            let bland = self.iterations >= self.bland_after;
            let Some((j, dir)) = self.entering(bland) else {
                return Phase::Optimal;
            };
            self.iterations += 1;
            if self.iterations.is_multiple_of(REFRESH_EVERY) {
                self.refresh_beta();
            }

            let n = self.n;
            let mut step = self.ub[j];
            let mut leave: Option<(usize, bool, f64)> = None;
            for i in 0..self.m {
                let a = self.t[i * n + j];
                let delta = -dir * a;
                let bi = self.basis[i];
                let (lim, to_upper) = if delta < -PIVOT_TOL {
                    (self.beta[i].max(0.0) / -delta, false)
                } else if delta > PIVOT_TOL && self.ub[bi].is_finite() {
                    ((self.ub[bi] - self.beta[i]).max(0.0) / delta, true)
                } else {
                    continue;
                };
                let better = if lim < step - 1e-12 {
                    true
                } else if lim <= step + 1e-12 {
                    match leave {
                        Some((r, _, _)) if bland => bi < self.basis[r],
                        Some((_, _, ar)) => a.abs() > ar,
                        None => false,
                    }
                } else {
                    false
                };
                if better {
                    step = step.min(lim);
                    leave = Some((i, to_upper, a.abs()));
                }
            }
            if !step.is_finite() {
                return Phase::Unbounded;
            }
            for i in 0..self.m {
                self.beta[i] += -dir * self.t[i * n + j] * step;
            }
            let start = if self.state[j] == State::AtUpper { self.ub[j] } else { 0.0 };
            match leave {
                None => {
                    self.state[j] = if dir > 0.0 { State::AtUpper } else { State::AtLower };
                }
                Some((r, to_upper, _)) => {
                    let out = self.basis[r];
                    self.pivot(r, j);
                    self.state[out] = if to_upper { State::AtUpper } else { State::AtLower };
                    self.state[j] = State::Basic;
                    self.basis[r] = j;
                    self.beta[r] = start + dir * step;
                }
            }
        }
    }
}

pub fn simplex_solve(lp: &LpProblem) -> LpSolution {
    if !lp.is_valid() {
        return LpSolution::without_point(LpStatus::NumericalFailure, 0);
    }
    let n_orig = lp.num_vars();

    let mut maps = Vec::with_capacity(n_orig);
    let mut col_ub = Vec::new();
    for j in 0..n_orig {
        let (l, u) = (lp.lb[j], lp.ub[j]);
        let col = col_ub.len();
        if l.is_finite() {
            maps.push(ColMap::Shift { col, lb: l });
            col_ub.push(u - l);
        } else if u.is_finite() {
            maps.push(ColMap::Reflect { col, ub: u });
            col_ub.push(f64::INFINITY);
        } else {
            maps.push(ColMap::Split { pos: col, neg: col + 1 });
            col_ub.push(f64::INFINITY);
            col_ub.push(f64::INFINITY);
        }
    }
    let n_struct = col_ub.len();

    let m = lp.rows.len();
    let mut dense_rows = vec![vec![0.0; n_struct]; m];
    let mut rhs = vec![0.0; m];
    for (i, row) in lp.rows.iter().enumerate() {
        rhs[i] = row.rhs;
        for &(j, a) in &row.terms {
            match maps[j] {
                ColMap::Shift { col, lb } => {
                    dense_rows[i][col] += a;
                    rhs[i] -= a * lb;
                }
                ColMap::Reflect { col, ub } => {
                    dense_rows[i][col] -= a;
                    rhs[i] -= a * ub;
                }
                ColMap::Split { pos, neg } => {
                    dense_rows[i][pos] += a;
                    dense_rows[i][neg] -= a;
                }
            }
        }
    }
    let mut costs = vec![0.0; n_struct];
    for (j, &c) in lp.costs.iter().enumerate() {
        match maps[j] {
            ColMap::Shift { col, .. } => costs[col] += c,
            ColMap::Reflect { col, .. } => costs[col] -= c,
            ColMap::Split { pos, neg } => {
                costs[pos] += c;
                costs[neg] -= c;
            }
        }
    }

    let n_slack = lp.rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let mut slack_coef = vec![0.0; m];
    let mut slack_col = vec![usize::MAX; m];
    let mut next = n_struct;
    for (i, row) in lp.rows.iter().enumerate() {
        let sign = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            rhs[i] = -rhs[i];
            for v in &mut dense_rows[i] {
                *v = -*v;
            }
        }
        match row.sense {
            Sense::Le => slack_coef[i] = sign,
            Sense::Ge => slack_coef[i] = -sign,
            Sense::Eq => continue,
        }
        slack_col[i] = next;
        next += 1;
    }
    let needs_art: Vec<usize> = (0..m).filter(|&i| slack_coef[i] != 1.0).collect();
    let n = n_struct + n_slack + needs_art.len();

    let mut a0 = vec![0.0; m * n];
    let mut unit = vec![0; m];
    for i in 0..m {
        a0[i * n..i * n + n_struct].copy_from_slice(&dense_rows[i]);
        if slack_col[i] != usize::MAX {
            a0[i * n + slack_col[i]] = slack_coef[i];
            unit[i] = slack_col[i];
        }
    }
    for (k, &i) in needs_art.iter().enumerate() {
        let col = n_struct + n_slack + k;
        a0[i * n + col] = 1.0;
        unit[i] = col;
    }
    let mut ub = col_ub;
    ub.resize(n, f64::INFINITY);
    let mut state = vec![State::AtLower; n];
    for &u in &unit {
        state[u] = State::Basic;
    }

    let mut tab = Tableau {
        m,
        n,
        t: a0.clone(),
        a0,
        b0: rhs.clone(),
        beta: rhs,
        d: vec![0.0; n],
        ub,
        state,
        basis: unit.clone(),
        unit,
        iterations: 0,
        cap: 10_000 + 50 * (m + n),
        bland_after: 5 * (m + n),
    };

    let art_start = n_struct + n_slack;
    if art_start < n {
        let mut c1 = vec![0.0; n];
        for c in &mut c1[art_start..] {
            *c = 1.0;
        }
        tab.set_costs(&c1);
        match tab.run() {
            Phase::Optimal => {}
            Phase::Stalled | Phase::Unbounded => {
                return LpSolution::without_point(LpStatus::NumericalFailure, tab.iterations)
            }
        }
        tab.refresh_beta();
        let scale = tab.b0.iter().fold(1.0f64, |acc, b| acc.max(b.abs()));
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= art_start)
            .map(|i| tab.beta[i])
            .sum();
        if infeas > LP_FEAS_TOL * scale {
            return LpSolution::without_point(LpStatus::Infeasible, tab.iterations);
        }
        for u in &mut tab.ub[art_start..] {
            *u = 0.0;
        }
        // drive zero-level artificials out where a pivot exists
        for r in 0..m {
            if tab.basis[r] < art_start {
                continue;
            }
            let row = &tab.t[r * n..r * n + art_start];
            let pick = (0..art_start)
                .filter(|&j| tab.state[j] != State::Basic && row[j].abs() > PIVOT_TOL)
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(b.cmp(&a)));
            if let Some(j) = pick {
                let out = tab.basis[r];
                let v = tab.value(j);
                tab.pivot(r, j);
                tab.state[out] = State::AtLower;
                tab.state[j] = State::Basic;
                tab.basis[r] = j;
                tab.beta[r] = v;
            }
        }
        tab.refresh_beta();
    }

    let mut c2 = vec![0.0; n];
    c2[..n_struct].copy_from_slice(&costs);
    tab.set_costs(&c2);
    match tab.run() {
        Phase::Optimal => {}
        Phase::Unbounded => return LpSolution::without_point(LpStatus::Unbounded, tab.iterations),
        Phase::Stalled => return LpSolution::without_point(LpStatus::NumericalFailure, tab.iterations),
    }
    tab.refresh_beta();

    let cols: Vec<f64> = (0..n_struct)
        .map(|j| tab.value(j).clamp(0.0, tab.ub[j]))
        .collect();
    let x: Vec<f64> = maps
        .iter()
        .map(|&mp| match mp {
            ColMap::Shift { col, lb } => lb + cols[col],
            ColMap::Reflect { col, ub } => ub - cols[col],
            ColMap::Split { pos, neg } => cols[pos] - cols[neg],
        })
        .collect();
    let x: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(j, &v)| v.clamp(lp.lb[j], lp.ub[j]))
        .collect();
    let ok = lp.rows.iter().all(|r| {
        let lhs: f64 = r.terms.iter().map(|&(j, a)| a * x[j]).sum();
        r.sense.holds(lhs, r.rhs, CHECK_TOL)
    });
    if !ok {
        return LpSolution::without_point(LpStatus::NumericalFailure, tab.iterations);
    }
    let objective = lp.costs.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        iterations: tab.iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lp(n: usize, lb: f64, ub: f64) -> LpProblem {
        let mut p = LpProblem::default();
        for _ in 0..n {
            p.add_var(lb, ub, 0.0);
        }
        p
    }

    #[test]
    fn maximize_single_variable() {
        let mut p = lp(1, 0.0, f64::INFINITY);
        p.costs[0] = -1.0;
        p.add_row(vec![(0, 1.0)], Sense::Le, 5.0);
        let s = simplex_solve(&p);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 5.0).abs() < 1e-12);
        assert!((s.objective + 5.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = lp(1, f64::NEG_INFINITY, f64::INFINITY);
        p.add_row(vec![(0, 1.0)], Sense::Ge, 1.0);
        p.add_row(vec![(0, 1.0)], Sense::Le, 0.0);
        assert_eq!(simplex_solve(&p).status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray_detected() {
        let mut p = lp(2, f64::NEG_INFINITY, f64::INFINITY);
        p.costs = vec![1.0, -1.0];
        p.add_row(vec![(0, 1.0), (1, -1.0)], Sense::Ge, -3.0);
        let mut q = p.clone();
        assert_eq!(simplex_solve(&p).status, LpStatus::Optimal);
        q.costs = vec![1.0, 0.0];
        assert_eq!(simplex_solve(&q).status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_reflected_bounds() {
        // min x0 + 2 x1, x0 + x1 = 3, x0 <= 1 (lb -inf), x1 in [0, 10]
        let mut p = LpProblem::default();
        p.add_var(f64::NEG_INFINITY, 1.0, 1.0);
        p.add_var(0.0, 10.0, 2.0);
        p.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Eq, 3.0);
        let s = simplex_solve(&p);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-9 && (s.x[1] - 2.0).abs() < 1e-9);
        assert!((s.objective - 5.0).abs() < 1e-9);
    }

    #[test]
    fn empty_and_fixed_problems() {
        let s = simplex_solve(&LpProblem::default());
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.objective, 0.0);
        let mut p = lp(1, 2.0, 2.0);
        p.costs[0] = 3.0;
        assert_eq!(simplex_solve(&p).objective, 6.0);
        let mut bad = lp(1, 0.0, 1.0);
        bad.add_row(vec![], Sense::Ge, 1.0);
        assert_eq!(simplex_solve(&bad).status, LpStatus::Infeasible);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's classic cycling instance for textbook pivot rules
        let mut p = lp(4, 0.0, f64::INFINITY);
        p.costs = vec![-0.75, 150.0, -0.02, 6.0];
        p.add_row(vec![(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)], Sense::Le, 0.0);
        p.add_row(vec![(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)], Sense::Le, 0.0);
        p.add_row(vec![(2, 1.0)], Sense::Le, 1.0);
        let s = simplex_solve(&p);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 0.05).abs() < 1e-9);
    }

    /// Solves the square system `A x = b` by Gaussian elimination with
    /// partial pivoting.
    fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
            if a[p][c].abs() < 1e-10 {
                return None;
            }
            a.swap(c, p);
            b.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    /// Best objective over all vertices: every choice of `n` tight
    /// hyperplanes among the rows and bounds.
    fn vertex_oracle(p: &LpProblem) -> Option<f64> {
        let n = p.num_vars();
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for r in &p.rows {
            let mut a = vec![0.0; n];
            for &(j, v) in &r.terms {
                a[j] += v;
            }
            planes.push((a, r.rhs));
        }
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            planes.push((e.clone(), p.lb[j]));
            planes.push((e, p.ub[j]));
        }
        let mut best: Option<f64> = None;
        let mut pick = Vec::with_capacity(n);
        fn rec(
            start: usize,
            pick: &mut Vec<usize>,
            planes: &[(Vec<f64>, f64)],
            p: &LpProblem,
            best: &mut Option<f64>,
        ) {
            let n = p.num_vars();
            if pick.len() == n {
                let a = pick.iter().map(|&i| planes[i].0.clone()).collect();
                let b = pick.iter().map(|&i| planes[i].1).collect();
                if let Some(x) = solve_square(a, b) {
                    let inside = (0..n).all(|j| x[j] >= p.lb[j] - 1e-7 && x[j] <= p.ub[j] + 1e-7)
                        && p.rows.iter().all(|r| {
                            let lhs: f64 = r.terms.iter().map(|&(j, a)| a * x[j]).sum();
                            r.sense.holds(lhs, r.rhs, 1e-7)
                        });
                    if inside {
                        let obj: f64 = p.costs.iter().zip(&x).map(|(c, v)| c * v).sum();
                        if best.is_none_or(|b| obj < b) {
                            *best = Some(obj);
                        }
                    }
                }
                return;
            }
            for i in start..planes.len() {
                pick.push(i);
                rec(i + 1, pick, planes, p, best);
                pick.pop();
            }
        }
        rec(0, &mut pick, &planes, p, &mut best);
        best
    }

    fn random_feasible_lp(rng: &mut ChaCha8Rng) -> LpProblem {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let mut p = LpProblem::default();
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        for &x in &x0 {
            let lo = x - rng.random_range(0.0..3.0);
            let hi = x + rng.random_range(0.0..3.0);
            p.add_var(lo, hi, rng.random_range(-5.0..5.0));
        }
        for _ in 0..m {
            let mut terms = Vec::new();
            for j in 0..n {
                if rng.random_bool(0.7) {
                    terms.push((j, rng.random_range(-3.0..3.0)));
                }
            }
            let at: f64 = terms.iter().map(|&(j, a)| a * x0[j]).sum();
            let (sense, rhs) = match rng.random_range(0..5) {
                0 => (Sense::Eq, at),
                1 | 2 => (Sense::Le, at + rng.random_range(0.0..2.0)),
                _ => (Sense::Ge, at - rng.random_range(0.0..2.0)),
            };
            p.add_row(terms, sense, rhs);
        }
        p
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..50 {
            let p = random_feasible_lp(&mut rng);
            let s = simplex_solve(&p);
            assert_eq!(s.status, LpStatus::Optimal, "case {case}");
            let oracle = vertex_oracle(&p).expect("feasible by construction");
            assert!((s.objective - oracle).abs() < 1e-6, "case {case}: {} vs {oracle}", s.objective);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]
            #[test]
            fn optimal_points_are_feasible(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = random_feasible_lp(&mut rng);
                let s = simplex_solve(&p);
                prop_assert_eq!(s.status, LpStatus::Optimal);
                for (j, &v) in s.x.iter().enumerate() {
                    prop_assert!(v >= p.lb[j] && v <= p.ub[j]);
                }
                for r in &p.rows {
                    let lhs: f64 = r.terms.iter().map(|&(j, a)| a * s.x[j]).sum();
                    prop_assert!(r.sense.holds(lhs, r.rhs, 1e-6));
                }
            }
        }
    }
}
