//! Lipschitz constants, free-space norms, McShane extension and norms of
//! weight operators.
//!
//! The free norm of `μ` is computed in the dual: maximise `Σ μ(x) f(x)` over
//! 1-Lipschitz `f` with `f(base) = 0`. Only `supp μ ∪ {base}` enters the
//! program, since any 1-Lipschitz function on that set extends to the whole
//! space without increasing its constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpStatus, Relation, VarBound};
use crate::metric::{self, shortest_path_closure, sup_distance, DistMatrix, Subset};

/// Finitely supported `Σ w_x δ_x`. Terms are sorted by point, merged, and
/// never carry a zero weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeElement {
    len: usize,
    terms: Vec<(usize, f64)>,
}

impl FreeElement {
    pub fn zero(len: usize) -> Self {
        Self {
            len,
            terms: Vec::new(),
        }
    }

    pub fn from_terms(len: usize, terms: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut t: Vec<(usize, f64)> = terms.into_iter().collect();
        for &(x, w) in &t {
            if x >= len {
                return Err(Error::PointOutOfRange { index: x, len });
            }
            if !w.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite weight at point {x}")));
            }
        }
        t.sort_by_key(|&(x, _)| x);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(t.len());
        for (x, w) in t {
            match merged.last_mut() {
                Some((y, acc)) if *y == x => *acc += w,
                _ => merged.push((x, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        Ok(Self { len, terms: merged })
    }

    pub fn from_dense(weights: &[f64]) -> Result<Self> {
        Self::from_terms(weights.len(), weights.iter().copied().enumerate())
    }

    pub fn dirac(len: usize, x: usize) -> Result<Self> {
        Self::from_terms(len, [(x, 1.0)])
    }

    /// `δ_x − δ_y`.
    pub fn molecule(len: usize, x: usize, y: usize) -> Result<Self> {
        Self::from_terms(len, [(x, 1.0), (y, -1.0)])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.terms
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.terms
            .binary_search_by_key(&x, |&(y, _)| y)
            .map(|i| self.terms[i].1)
            .unwrap_or(0.0)
    }

    pub fn support(&self) -> Vec<usize> {
        self.terms.iter().map(|&(x, _)| x).collect()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_terms(self.len, self.terms.iter().map(|&(x, w)| (x, c * w)))
            .expect("scaling preserves the support range")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.len != other.len {
            return Err(Error::DimensionMismatch(format!(
                "free elements over {} and {} points",
                self.len, other.len
            )));
        }
        Self::from_terms(self.len, self.terms.iter().chain(&other.terms).copied())
    }

    /// Sets the base weight to `−Σ` of the others, so the element also
    /// annihilates constants.
    pub fn normalized(&self, base: usize) -> Result<Self> {
        let rest: f64 = self.terms.iter().filter(|&&(x, _)| x != base).map(|&(_, w)| w).sum();
        Self::from_terms(
            self.len,
            self.terms
                .iter()
                .filter(|&&(x, _)| x != base)
                .copied()
                .chain(std::iter::once((base, -rest))),
        )
    }

    /// `μ(f) = Σ w_x f(x)`.
    pub fn pair(&self, f: &[f64]) -> f64 {
        self.terms.iter().map(|&(x, w)| w * f[x]).sum()
    }
}

/// Real values indexed by the points of a space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipFunction {
    pub values: Vec<f64>,
}

impl LipFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lipschitz_constant(&self, d: &DistMatrix) -> Result<f64> {
        lipschitz_constant(&self.values, d)
    }
}

/// `f ↦ Σ_i f(a_i) w_i`, an operator from functions on `domain` to
/// functions on all `rows.len()` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightOperator {
    /// Points `a_i` of the ambient space, in column order.
    pub domain: Vec<usize>,
    /// Column of the base point.
    pub base: usize,
    /// `rows[x][i] = w_i(x)`.
    pub rows: Vec<Vec<f64>>,
    /// Rows are convex weights.
    pub partition: bool,
}

impl WeightOperator {
    pub fn new(domain: Vec<usize>, base: usize, rows: Vec<Vec<f64>>, partition: bool) -> Result<Self> {
        let op = Self {
            domain,
            base,
            rows,
            partition,
        };
        op.check()?;
        Ok(op)
    }

    /// The identity with `A = T`.
    pub fn identity(n: usize, base: usize) -> Result<Self> {
        let rows = (0..n)
            .map(|x| (0..n).map(|i| if i == x { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new((0..n).collect(), base, rows, true)
    }

    pub fn zero(domain: Vec<usize>, base: usize, n: usize) -> Result<Self> {
        let k = domain.len();
        Self::new(domain, base, vec![vec![0.0; k]; n], false)
    }

    fn check(&self) -> Result<()> {
        let k = self.domain.len();
        if k == 0 {
            return Err(Error::EmptySet);
        }
        if self.base >= k {
            return Err(Error::PointOutOfRange {
                index: self.base,
                len: k,
            });
        }
        let n = self.rows.len();
        for &a in &self.domain {
            if a >= n {
                return Err(Error::PointOutOfRange { index: a, len: n });
            }
        }
        for (x, row) in self.rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "row {x} has {} weights for a domain of {k} points",
                    row.len()
                )));
            }
            if row.iter().any(|w| !w.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite weight in row {x}")));
            }
        }
        if self.partition {
            for (x, row) in self.rows.iter().enumerate() {
                let s: f64 = row.iter().sum();
                if row.iter().any(|&w| w < 0.0) || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "row {x} is not a convex combination"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.rows.len()
    }

    pub fn domain_len(&self) -> usize {
        self.domain.len()
    }

    /// Ambient index of the base point.
    pub fn base_point(&self) -> usize {
        self.domain[self.base]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    /// `Σ_i (w_i(x) − w_i(y)) δ_{a_i}` over the domain.
    pub fn difference(&self, x: usize, y: usize) -> FreeElement {
        let k = self.domain.len();
        FreeElement::from_terms(
            k,
            self.rows[x]
                .iter()
                .zip(&self.rows[y])
                .enumerate()
                .map(|(i, (a, b))| (i, a - b)),
        )
        .expect("columns are in range")
    }

    /// The row at `x` as an element of the free space over the domain.
    pub fn row_element(&self, x: usize) -> FreeElement {
        FreeElement::from_terms(self.domain.len(), self.rows[x].iter().copied().enumerate())
            .expect("columns are in range")
    }

    /// Max over points and columns of `|w_i(a_j) − [i = j]|`.
    pub fn extension_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &a) in self.domain.iter().enumerate() {
            for (i, &w) in self.rows[a].iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((w - target).abs());
            }
        }
        worst
    }
}

/// Best Lipschitz constant of `f` with respect to `d`. Returns `+∞` when
/// some pair has `d(x, y) = 0` but `f(x) ≠ f(y)`.
pub fn lipschitz_constant(f: &[f64], d: &DistMatrix) -> Result<f64> {
    Ok(lipschitz_constant_with_witness(f, d)?.0)
}

pub fn lipschitz_constant_with_witness(f: &[f64], d: &DistMatrix) -> Result<(f64, Option<(usize, usize)>)> {
    if f.len() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "function on {} points, metric on {}",
            f.len(),
            d.len()
        )));
    }
    let mut best = 0.0;
    let mut witness = None;
    for x in 0..f.len() {
        for y in x + 1..f.len() {
            let df = (f[x] - f[y]).abs();
            if df == 0.0 {
                continue;
            }
            let dxy = d.get(x, y);
            let q = if dxy <= 0.0 { f64::INFINITY } else { df / dxy };
            if q > best {
                best = q;
                witness = Some((x, y));
            }
        }
    }
    Ok((best, witness))
}

/// Optimal value of the free-norm program and an optimal potential.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeNorm {
    pub value: f64,
    /// `(point, f(point))` on the support, base point excluded.
    pub potential: Vec<(usize, f64)>,
}

pub fn free_space_norm(mu: &FreeElement, d: &DistMatrix, base: usize) -> Result<f64> {
    Ok(free_space_norm_with_potential(mu, d, base)?.value)
}

pub fn free_space_norm_with_potential(mu: &FreeElement, d: &DistMatrix, base: usize) -> Result<FreeNorm> {
    if mu.len() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "element over {} points, metric on {}",
            mu.len(),
            d.len()
        )));
    }
    if base >= d.len() {
        return Err(Error::PointOutOfRange {
            index: base,
            len: d.len(),
        });
    }
    let support: Vec<(usize, f64)> = mu.terms().iter().copied().filter(|&(x, _)| x != base).collect();
    match support.as_slice() {
        [] => {
            return Ok(FreeNorm {
                value: 0.0,
                potential: Vec::new(),
            })
        }
        [(x, w)] => {
            let r = d.get(*x, base);
            return Ok(FreeNorm {
                value: w.abs() * r,
                potential: vec![(*x, w.signum() * r)],
            });
        }
        _ => {}
    }
    let k = support.len();
    let mut lp = LinearProgram::maximize(support.iter().map(|&(_, w)| w).collect());
    for (i, &(x, _)) in support.iter().enumerate() {
        let r = d.get(x, base);
        lp.set_bound(i, VarBound::between(-r, r));
    }
    for i in 0..k {
        for j in 0..k {
            if i != j {
                lp.add_sparse(
                    &[(i, 1.0), (j, -1.0)],
                    Relation::Le,
                    d.get(support[i].0, support[j].0),
                );
            }
        }
    }
    let sol = lp::solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(format!(
            "free-norm program ended {:?}; the input is not a pseudometric",
            sol.status
        )));
    }
    Ok(FreeNorm {
        value: sol.value,
        potential: support.iter().map(|&(x, _)| x).zip(sol.assignment).collect(),
    })
}

/// `x ↦ min_{a ∈ A} f(a) + L d(x, a)`, equal to `f` on `A`.
/// `f_on_a[k]` is the value at `a.members()[k]`.
pub fn mcshane_extend(f_on_a: &[f64], a: &Subset, lip: f64, d: &DistMatrix) -> Result<LipFunction> {
    mcshane_extend_with_tol(f_on_a, a, lip, d, metric::DEFAULT_TOL)
}

pub fn mcshane_extend_with_tol(
    f_on_a: &[f64],
    a: &Subset,
    lip: f64,
    d: &DistMatrix,
    tol: f64,
) -> Result<LipFunction> {
    if a.universe() != d.len() || f_on_a.len() != a.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a subset of {} points in a space of {}",
            f_on_a.len(),
            a.len(),
            d.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(lip >= 0.0) {
        return Err(Error::InvalidParameter(format!("Lipschitz bound {lip} must be nonnegative")));
    }
    let members = a.members();
    let sub = d.restrict(members);
    let actual = lipschitz_constant(f_on_a, &sub)?;
    if actual > lip + tol {
        return Err(Error::Precondition(format!(
            "function has Lipschitz constant {actual} on the subset, above the bound {lip}"
        )));
    }
    let mut values: Vec<f64> = (0..d.len())
        .map(|x| {
            members
                .iter()
                .zip(f_on_a)
                .map(|(&p, &v)| v + lip * d.get(x, p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    for (&p, &v) in members.iter().zip(f_on_a) {
        values[p] = v;
    }
    Ok(LipFunction::new(values))
}

/// Pointwise `Σ_i f(a_i) w_i(x)`; `f_on_domain[i]` is the value at `a_i`.
pub fn apply_weight_operator(w: &WeightOperator, f_on_domain: &[f64]) -> Result<LipFunction> {
    if f_on_domain.len() != w.domain_len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a domain of {} points",
            f_on_domain.len(),
            w.domain_len()
        )));
    }
    Ok(LipFunction::new(
        w.rows
            .iter()
            .map(|row| row.iter().zip(f_on_domain).map(|(a, b)| a * b).sum())
            .collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorNorm {
    #[serde(with = "crate::certificate::float_repr")]
    pub value: f64,
    /// Pair of ambient points attaining the maximum.
    pub witness: Option<(usize, usize)>,
}

/// `max_{x≠y} ‖Σ_i (w_i(x) − w_i(y)) δ_{a_i}‖_{F(A, d_a)} / d_t(x, y)`.
/// `d_a` is indexed by domain columns.
pub fn operator_norm(w: &WeightOperator, d_a: &DistMatrix, d_t: &DistMatrix) -> Result<OperatorNorm> {
    if d_a.len() != w.domain_len() || d_t.len() != w.num_points() {
        return Err(Error::DimensionMismatch(format!(
            "operator {}x{} against metrics on {} and {} points",
            w.num_points(),
            w.domain_len(),
            d_t.len(),
            d_a.len()
        )));
    }
    let n = w.num_points();
    let per_row: Vec<OperatorNorm> = (0..n)
        .into_par_iter()
        .map(|x| -> Result<OperatorNorm> {
            let mut best = OperatorNorm {
                value: 0.0,
                witness: None,
            };
            for y in x + 1..n {
                let mu = w.difference(x, y);
                if mu.terms().is_empty() {
                    continue;
                }
                let num = free_space_norm(&mu, d_a, w.base)?;
                if num == 0.0 {
                    continue;
                }
                let den = d_t.get(x, y);
                let q = if den <= 0.0 { f64::INFINITY } else { num / den };
                if q > best.value {
                    best = OperatorNorm {
                        value: q,
                        witness: Some((x, y)),
                    };
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(per_row.into_iter().fold(
        OperatorNorm {
            value: 0.0,
            witness: None,
        },
        |acc, r| if r.value > acc.value { r } else { acc },
    ))
}

/// [`operator_norm`] with the domain metric taken as `d_t` restricted to the
/// domain.
pub fn operator_norm_restricted(w: &WeightOperator, d_t: &DistMatrix) -> Result<OperatorNorm> {
    operator_norm(w, &d_t.restrict(&w.domain), d_t)
}

/// A metric on `T` extending a metric given on `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricExtension {
    pub metric: DistMatrix,
    /// `max |d₂ − d|` over all pairs.
    pub distortion: f64,
    /// `‖ρ − d↾S²‖∞`, the distortion the extension must not exceed.
    pub bound: f64,
}

fn check_extension_inputs(d: &DistMatrix, s: &Subset, rho: &DistMatrix) -> Result<()> {
    if s.universe() != d.len() || rho.len() != s.len() {
        return Err(Error::DimensionMismatch(format!(
            "subset metric on {} points for a subset of {} in a space of {}",
            rho.len(),
            s.len(),
            d.len()
        )));
    }
    let report = metric::validate_metric(rho);
    if !report.is_valid() {
        return Err(Error::InvalidMetric(format!("subset metric: {}", report.describe())));
    }
    Ok(())
}

fn embed_subset_metric(d: &DistMatrix, s: &Subset, rho: &DistMatrix) -> (Vec<Option<usize>>, f64) {
    let mut pos = vec![None; d.len()];
    for (k, &p) in s.members().iter().enumerate() {
        pos[p] = Some(k);
    }
    let bound = sup_distance(rho, &d.restrict(s.members())).expect("shapes agree");
    (pos, bound)
}

/// Extension by linear programming: minimise `t` subject to every triangle
/// inequality on `T`, `d₂ = ρ` on `S × S`, `|d₂ − d| ≤ t` elsewhere and a
/// positive floor off the diagonal. Entries on `S × S` are substituted as
/// constants, so they equal `ρ` exactly.
pub fn metric_extension_lp(d: &DistMatrix, s: &Subset, rho: &DistMatrix) -> Result<MetricExtension> {
    check_extension_inputs(d, s, rho)?;
    let n = d.len();
    let (pos, bound) = embed_subset_metric(d, s, rho);
    let floor = 1e-9 * d.min_positive().unwrap_or(1.0);

    // Variable index per unordered pair outside S×S; t is last.
    let mut var = vec![usize::MAX; n * n];
    let mut pairs = Vec::new();
    for x in 0..n {
        for y in x + 1..n {
            if pos[x].is_none() || pos[y].is_none() {
                var[x * n + y] = pairs.len();
                var[y * n + x] = pairs.len();
                pairs.push((x, y));
            }
        }
    }
    let nv = pairs.len() + 1;
    let t = pairs.len();
    let constant = |x: usize, y: usize| -> f64 {
        match (pos[x], pos[y]) {
            (Some(i), Some(j)) => rho.get(i, j),
            _ => unreachable!("only called on S×S pairs"),
        }
    };

    let mut objective = vec![0.0; nv];
    objective[t] = 1.0;
    let mut lp = LinearProgram::minimize(objective);
    for v in 0..pairs.len() {
        lp.set_bound(v, VarBound::at_least(floor));
    }
    // d₂(x,y) ≤ d₂(x,z) + d₂(z,y) for x < y and every z.
    for x in 0..n {
        for y in x + 1..n {
            for z in 0..n {
                if z == x || z == y {
                    continue;
                }
                let mut terms: Vec<(usize, f64)> = Vec::with_capacity(3);
                let mut rhs = 0.0;
                for (a, b, c) in [(x, y, 1.0), (x, z, -1.0), (z, y, -1.0)] {
                    let v = var[a * n + b];
                    if v == usize::MAX {
                        rhs -= c * constant(a, b);
                    } else {
                        terms.push((v, c));
                    }
                }
                if !terms.is_empty() {
                    lp.add_sparse(&terms, Relation::Le, rhs);
                }
            }
        }
    }
    for (v, &(x, y)) in pairs.iter().enumerate() {
        lp.add_sparse(&[(v, 1.0), (t, -1.0)], Relation::Le, d.get(x, y));
        lp.add_sparse(&[(v, 1.0), (t, 1.0)], Relation::Ge, d.get(x, y));
    }
    let sol = lp::solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(format!("metric extension program ended {:?}", sol.status)));
    }
    let mut out = DistMatrix::zeros(n);
    for x in 0..n {
        for y in x + 1..n {
            let v = var[x * n + y];
            let value = if v == usize::MAX {
                constant(x, y)
            } else {
                sol.assignment[v]
            };
            out.set(x, y, value);
        }
    }
    let distortion = sup_distance(&out, d)?;
    Ok(MetricExtension {
        metric: out,
        distortion,
        bound,
    })
}

/// Closed-form extension: shortest-path closure of the weights `ρ` on
/// `S × S` and `d + δ` elsewhere, with `δ = ‖ρ − d↾S²‖∞`. Equals `ρ` on
/// `S × S` and stays within `δ` of `d`.
pub fn metric_extension_paths(d: &DistMatrix, s: &Subset, rho: &DistMatrix) -> Result<MetricExtension> {
    check_extension_inputs(d, s, rho)?;
    let n = d.len();
    let (pos, bound) = embed_subset_metric(d, s, rho);
    let w = DistMatrix::from_upper(n, |x, y| match (pos[x], pos[y]) {
        (Some(i), Some(j)) => rho.get(i, j),
        _ => d.get(x, y) + bound,
    });
    let mut closed = shortest_path_closure(&w);
    // Paths never undercut ρ on S × S; restore the exact entries so that
    // rounding in the closure cannot perturb them.
    for (i, &x) in s.members().iter().enumerate() {
        for (j, &y) in s.members().iter().enumerate() {
            if i < j {
                closed.set(x, y, rho.get(i, j));
            }
        }
    }
    let distortion = sup_distance(&closed, d)?;
    Ok(MetricExtension {
        metric: closed,
        distortion,
        bound,
    })
}
