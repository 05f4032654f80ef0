//! Dense two-phase simplex for the small linear programs behind the free-space
//! norms and the metric extension step.
//!
//! Pivoting follows Bland's rule throughout (lowest-index entering column,
//! lowest-index leaving basic variable on ratio ties), so a given program
//! always yields the same basis and the same assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Variable interval; `None` means unbounded on that side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarBound {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Default for VarBound {
    fn default() -> Self {
        Self {
            lower: Some(0.0),
            upper: None,
        }
    }
}

impl VarBound {
    pub const FREE: VarBound = VarBound {
        lower: None,
        upper: None,
    };

    pub fn between(lower: f64, upper: f64) -> Self {
        Self {
            lower: Some(lower),
            upper: Some(upper),
        }
    }

    pub fn at_least(lower: f64) -> Self {
        Self {
            lower: Some(lower),
            upper: None,
        }
    }
}

/// Linear program over `objective.len()` variables. Variables default to
/// `x >= 0`. Serializes to a debug JSON form for failure triage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<VarBound>,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            sense,
            objective,
            constraints: Vec::new(),
            bounds: vec![VarBound::default(); n],
        }
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Maximize, objective)
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::new(Sense::Minimize, objective)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    /// Adds `sum coeff * x[var] (rel) rhs` from sparse terms.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, c) in terms {
            coeffs[j] += c;
        }
        self.add_constraint(coeffs, relation, rhs);
    }

    pub fn constraint(mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        self.add_constraint(coeffs, relation, rhs);
        self
    }

    pub fn set_bound(&mut self, var: usize, bound: VarBound) {
        self.bounds[var] = bound;
    }

    pub fn bound(mut self, var: usize, bound: VarBound) -> Self {
        self.set_bound(var, bound);
        self
    }

    fn check(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(Error::Lp(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Lp("non-finite objective coefficient".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::Lp(format!(
                    "constraint {i} has {} coefficients for {n} variables",
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Lp(format!("constraint {i} has a non-finite entry")));
            }
        }
        for (j, b) in self.bounds.iter().enumerate() {
            if b.lower.is_some_and(|v| !v.is_finite()) || b.upper.is_some_and(|v| !v.is_finite()) {
                return Err(Error::Lp(format!("variable {j} has a non-finite bound")));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (b, &v) in self.bounds.iter().zip(x) {
            if let Some(l) = b.lower {
                worst = worst.max(l - v);
            }
            if let Some(u) = b.upper {
                worst = worst.max(v - u);
            }
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value of `assignment` (meaningful when optimal).
    pub value: f64,
    pub assignment: Vec<f64>,
    pub max_violation: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Feasibility and optimality tolerance.
    pub tol: f64,
    /// Smallest magnitude accepted as a pivot.
    pub pivot_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            pivot_tol: 1e-11,
            max_iterations: 200_000,
        }
    }
}

/// How an original variable is expressed through nonnegative columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// `x = lower + y`
    Shift { col: usize, lower: f64 },
    /// `x = upper - y`
    Mirror { col: usize, upper: f64 },
    /// `x = y_pos - y_neg`
    Split { pos: usize, neg: usize },
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    solve_with(lp, &SolverOptions::default())
}

pub fn solve_with(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution> {
    lp.check()?;
    let n = lp.num_vars();

    // Map variables onto nonnegative columns.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut extra_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for b in &lp.bounds {
        match (b.lower, b.upper) {
            (Some(l), u) => {
                maps.push(VarMap::Shift { col: ncols, lower: l });
                if let Some(u) = u {
                    extra_rows.push((vec![(ncols, 1.0)], u - l));
                }
                ncols += 1;
            }
            (None, Some(u)) => {
                maps.push(VarMap::Mirror { col: ncols, upper: u });
                ncols += 1;
            }
            (None, None) => {
                maps.push(VarMap::Split {
                    pos: ncols,
                    neg: ncols + 1,
                });
                ncols += 2;
            }
        }
    }

    // Rows in terms of the structural columns.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(lp.constraints.len() + extra_rows.len());
    for c in &lp.constraints {
        let mut a = vec![0.0; ncols];
        let mut rhs = c.rhs;
        for (j, &coef) in c.coeffs.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, lower } => {
                    a[col] += coef;
                    rhs -= coef * lower;
                }
                VarMap::Mirror { col, upper } => {
                    a[col] -= coef;
                    rhs -= coef * upper;
                }
                VarMap::Split { pos, neg } => {
                    a[pos] += coef;
                    a[neg] -= coef;
                }
            }
        }
        rows.push((a, c.relation, rhs));
    }
    for (terms, rhs) in extra_rows {
        let mut a = vec![0.0; ncols];
        for (j, c) in terms {
            a[j] = c;
        }
        rows.push((a, Relation::Le, rhs));
    }

    // Objective over columns, always maximized internally.
    let sign = match lp.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let mut cost = vec![0.0; ncols];
    for (j, &c) in lp.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Shift { col, .. } => cost[col] += sign * c,
            VarMap::Mirror { col, .. } => cost[col] -= sign * c,
            VarMap::Split { pos, neg } => {
                cost[pos] += sign * c;
                cost[neg] -= sign * c;
            }
        }
    }

    let mut tableau = Tableau::build(rows, ncols, opts);
    let outcome = tableau.optimize(&cost, opts)?;

    let y = tableau.column_values();
    let assignment: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift { col, lower } => lower + y[col],
            VarMap::Mirror { col, upper } => upper - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let value = lp.objective_value(&assignment);
    let max_violation = lp.max_violation(&assignment);
    Ok(LpSolution {
        status: outcome,
        value,
        assignment,
        max_violation,
        iterations: tableau.iterations,
    })
}

struct Tableau {
    m: usize,
    /// structural + slack/surplus + artificial columns (rhs excluded)
    width: usize,
    ncols: usize,
    art_start: usize,
    /// `m x (width + 1)`, last column is the right-hand side
    a: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
    pivot_tol: f64,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn build(rows: Vec<(Vec<f64>, Relation, f64)>, ncols: usize, opts: &SolverOptions) -> Self {
        let m = rows.len();
        let mut normalized = Vec::with_capacity(m);
        let mut n_slack = 0;
        let mut n_art = 0;
        for (mut a, mut rel, mut rhs) in rows {
            if rhs < 0.0 {
                a.iter_mut().for_each(|v| *v = -*v);
                rhs = -rhs;
                rel = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            match rel {
                Relation::Le => n_slack += 1,
                Relation::Ge => {
                    n_slack += 1;
                    n_art += 1
                }
                Relation::Eq => n_art += 1,
            }
            normalized.push((a, rel, rhs));
        }
        let art_start = ncols + n_slack;
        let width = art_start + n_art;
        let stride = width + 1;
        let mut t = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let mut slack = ncols;
        let mut art = art_start;
        for (i, (a, rel, rhs)) in normalized.into_iter().enumerate() {
            let row = &mut t[i * stride..(i + 1) * stride];
            row[..ncols].copy_from_slice(&a);
            row[width] = rhs;
            match rel {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Self {
            m,
            width,
            ncols,
            art_start,
            a: t,
            basis,
            iterations: 0,
            pivot_tol: opts.pivot_tol,
        }
    }

    #[inline]
    fn stride(&self) -> usize {
        self.width + 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.stride() + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width)
    }

    fn optimize(&mut self, cost: &[f64], opts: &SolverOptions) -> Result<LpStatus> {
        if self.art_start < self.width {
            let mut phase1 = vec![0.0; self.width];
            for c in phase1.iter_mut().skip(self.art_start) {
                *c = -1.0;
            }
            self.run(&phase1, self.width, opts)?;
            let infeasibility: f64 = (0..self.m)
                .filter(|&i| self.basis[i] >= self.art_start)
                .map(|i| self.rhs(i))
                .sum();
            let scale = (0..self.m).map(|i| self.rhs(i).abs()).fold(1.0, f64::max);
            if infeasibility > opts.tol * scale {
                return Ok(LpStatus::Infeasible);
            }
            self.drive_out_artificials();
        }
        let mut full = vec![0.0; self.width];
        full[..self.ncols].copy_from_slice(cost);
        match self.run(&full, self.art_start, opts)? {
            Phase::Optimal => Ok(LpStatus::Optimal),
            Phase::Unbounded => Ok(LpStatus::Unbounded),
        }
    }

    /// Primal simplex on the current (feasible) basis; only columns below
    /// `allowed` may enter.
    fn run(&mut self, cost: &[f64], allowed: usize, opts: &SolverOptions) -> Result<Phase> {
        let stride = self.stride();
        // reduced costs r_j = c_j - c_B B^-1 A_j
        let mut reduced = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * stride..i * stride + self.width];
                for (r, &v) in reduced.iter_mut().zip(row) {
                    *r -= cb * v;
                }
            }
        }
        loop {
            if self.iterations >= opts.max_iterations {
                return Err(Error::Lp(format!(
                    "iteration limit {} reached",
                    opts.max_iterations
                )));
            }
            let Some(enter) = (0..allowed).find(|&j| reduced[j] > opts.tol) else {
                return Ok(Phase::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let aij = self.at(i, enter);
                if aij > self.pivot_tol {
                    let ratio = self.rhs(i) / aij;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let slack = 1e-12 * (1.0 + br.abs());
                            if ratio < br - slack
                                || (ratio <= br + slack && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Ok(Phase::Unbounded);
            };
            self.pivot(row, enter);
            let re = reduced[enter];
            let prow = &self.a[row * stride..row * stride + self.width];
            for (r, &v) in reduced.iter_mut().zip(prow) {
                *r -= re * v;
            }
            reduced[enter] = 0.0;
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        self.iterations += 1;
        let stride = self.stride();
        let p = self.a[row * stride + col];
        {
            let prow = &mut self.a[row * stride..(row + 1) * stride];
            for v in prow.iter_mut() {
                *v /= p;
            }
            prow[col] = 1.0;
        }
        let (before, rest) = self.a.split_at_mut(row * stride);
        let (prow, after) = rest.split_at_mut(stride);
        for other in before.chunks_mut(stride).chain(after.chunks_mut(stride)) {
            let f = other[col];
            if f != 0.0 {
                for (o, &pv) in other.iter_mut().zip(prow.iter()) {
                    *o -= f * pv;
                }
                other[col] = 0.0;
            }
        }
        // clamp roundoff in the right-hand side
        for i in 0..self.m {
            let r = &mut self.a[i * stride + self.width];
            if *r < 0.0 && *r > -1e-12 {
                *r = 0.0;
            }
        }
        self.basis[row] = col;
    }

    fn drive_out_artificials(&mut self) {
        let mut i = 0;
        while i < self.m {
            if self.basis[i] >= self.art_start {
                let col = (0..self.art_start).find(|&j| self.at(i, j).abs() > self.pivot_tol);
                match col {
                    Some(j) => {
                        self.pivot(i, j);
                        i += 1;
                    }
                    None => self.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
    }

    /// Drops a redundant row (all structural coefficients zero).
    fn remove_row(&mut self, i: usize) {
        let stride = self.stride();
        self.a.drain(i * stride..(i + 1) * stride);
        self.basis.remove(i);
        self.m -= 1;
    }

    fn column_values(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < self.ncols {
                y[b] = self.rhs(i).max(0.0);
            }
        }
        y
    }
}
