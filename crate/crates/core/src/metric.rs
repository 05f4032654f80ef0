//! Finite metric spaces, metric validation and the metric transforms used by
//! the extension constructions (snowflake, truncation, hat metric, sums).
//!
//! Points are identified by their index `0..n`. A [`DistMatrix`] is any square
//! symmetric table of distances; whether it is a metric or only a
//! pseudometric is decided by [`validate_metric`] / [`validate_pseudometric`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default slack used when comparing measured quantities with bounds.
pub const DEFAULT_TOL: f64 = 1e-7;

/// Square, row-major distance table. Serializes as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct DistMatrix {
    n: usize,
    data: Vec<f64>,
}

/// Pseudometrics share the storage type; zero off-diagonal entries are allowed.
pub type PseudometricMatrix = DistMatrix;

impl DistMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Builds a symmetric matrix from values on the strict upper triangle.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (row, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(Error::NonSquare {
                    row,
                    len: r.len(),
                    expected: n,
                });
            }
            data.extend(r);
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    /// Sets only `(i, j)`; used to build deliberately asymmetric candidates.
    pub fn set_entry(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    /// Submatrix on `idx`, in the given order.
    pub fn restrict(&self, idx: &[usize]) -> DistMatrix {
        DistMatrix::from_fn(idx.len(), |a, b| self.get(idx[a], idx[b]))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> DistMatrix {
        DistMatrix {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> DistMatrix {
        self.map(|v| v * c)
    }

    /// Largest entry (the diameter, for a metric).
    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest strictly positive off-diagonal entry, if any.
    pub fn min_positive(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.get(i, j);
                if i != j && v > 0.0 && best.map_or(true, |b| v < b) {
                    best = Some(v);
                }
            }
        }
        best
    }

    fn check_same_shape(&self, other: &DistMatrix) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(format!(
                "matrices have {} and {} points",
                self.n, other.n
            )));
        }
        Ok(())
    }

    fn check_index(&self, x: usize) -> Result<()> {
        if x >= self.n {
            return Err(Error::PointOutOfRange {
                index: x,
                len: self.n,
            });
        }
        Ok(())
    }
}

impl From<DistMatrix> for Vec<Vec<f64>> {
    fn from(m: DistMatrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for DistMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        DistMatrix::from_rows(rows)
    }
}

/// Sorted set of point indices within a space of `universe` points.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subset {
    universe: usize,
    members: Vec<usize>,
}

impl Subset {
    pub fn new(universe: usize, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if let Some(&last) = members.last() {
            if last >= universe {
                return Err(Error::PointOutOfRange {
                    index: last,
                    len: universe,
                });
            }
        }
        Ok(Self { universe, members })
    }

    pub fn all(universe: usize) -> Self {
        Self {
            universe,
            members: (0..universe).collect(),
        }
    }

    pub fn empty(universe: usize) -> Self {
        Self {
            universe,
            members: Vec::new(),
        }
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            universe: mask.len(),
            members: mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect(),
        }
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.members.binary_search(&x).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.universe];
        for &x in &self.members {
            m[x] = true;
        }
        m
    }

    pub fn complement(&self) -> Subset {
        let mask = self.mask();
        Subset::from_mask(&mask.iter().map(|b| !b).collect::<Vec<_>>())
    }

    pub fn is_subset_of(&self, other: &Subset) -> bool {
        self.members.iter().all(|&x| other.contains(x))
    }

    pub fn union(&self, other: &Subset) -> Subset {
        let mut members = self.members.clone();
        members.extend_from_slice(&other.members);
        members.sort_unstable();
        members.dedup();
        Subset {
            universe: self.universe.max(other.universe),
            members,
        }
    }

    pub fn without(&self, x: usize) -> Subset {
        Subset {
            universe: self.universe,
            members: self.members.iter().copied().filter(|&m| m != x).collect(),
        }
    }
}

/// Ground norm for generated grid spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ground {
    #[default]
    Linf,
    L1,
    L2,
}

/// Lattice metadata carried by spaces built with [`make_grid_space`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    /// Points per axis.
    pub dims: Vec<usize>,
    pub spacing: f64,
    pub ground: Ground,
}

impl GridInfo {
    /// Nominal dimension of the sampled compactum.
    pub fn nominal_dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lattice coordinates of a point; axis 0 varies fastest.
    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.dims.len());
        for &n in &self.dims {
            c.push(idx % n);
            idx /= n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (c, &n) in coords.iter().zip(&self.dims) {
            idx += c * stride;
            stride *= n;
        }
        idx
    }

    fn ground_distance(&self, a: &[usize], b: &[usize]) -> f64 {
        let diffs = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).abs() * self.spacing);
        match self.ground {
            Ground::Linf => diffs.fold(0.0, f64::max),
            Ground::L1 => diffs.sum(),
            Ground::L2 => diffs.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// A finite metric space with a designated base point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMetricSpace {
    pub names: Vec<String>,
    pub metric: DistMatrix,
    pub base: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
}

impl FiniteMetricSpace {
    /// Validates the metric and the base point.
    pub fn new(names: Vec<String>, metric: DistMatrix, base: usize) -> Result<Self> {
        if names.len() != metric.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for a {}-point metric",
                names.len(),
                metric.len()
            )));
        }
        metric.check_index(base)?;
        let report = validate_metric(&metric);
        if !report.is_valid() {
            return Err(Error::InvalidMetric(report.describe()));
        }
        Ok(Self {
            names,
            metric,
            base,
            grid: None,
        })
    }

    pub fn from_metric(metric: DistMatrix, base: usize) -> Result<Self> {
        let names = (0..metric.len()).map(|i| format!("p{i}")).collect();
        Self::new(names, metric, base)
    }

    pub fn len(&self) -> usize {
        self.metric.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metric.is_empty()
    }

    pub fn nominal_dim(&self) -> Option<usize> {
        self.grid.as_ref().map(GridInfo::nominal_dim)
    }

    /// Same points, base and grid metadata under a different metric.
    pub fn with_metric(&self, metric: DistMatrix) -> Result<Self> {
        let mut s = Self::new(self.names.clone(), metric, self.base)?;
        s.grid = self.grid.clone();
        Ok(s)
    }
}

/// One violated metric axiom, with the points that witness it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonFinite { i: usize, j: usize },
    NonZeroDiagonal { i: usize, value: f64 },
    Negative { i: usize, j: usize, value: f64 },
    Asymmetric { i: usize, j: usize, forward: f64, backward: f64 },
    /// `d(i, j) = 0` for `i != j`; only a violation for metrics.
    ZeroDistance { i: usize, j: usize },
    /// `d(x, z) > d(x, y) + d(y, z)`.
    Triangle { x: usize, y: usize, z: usize, excess: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn describe(&self) -> String {
        match self.violations.len() {
            0 => "valid".to_owned(),
            k => format!("{k} violation(s), first: {:?}", self.violations[0]),
        }
    }
}

fn validate(m: &DistMatrix, allow_zero: bool, tol: f64) -> ValidationReport {
    let n = m.len();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j);
            if !v.is_finite() {
                violations.push(Violation::NonFinite { i, j });
                continue;
            }
            if i == j {
                if v != 0.0 {
                    violations.push(Violation::NonZeroDiagonal { i, value: v });
                }
                continue;
            }
            if v < 0.0 {
                violations.push(Violation::Negative { i, j, value: v });
            }
            if i < j {
                let w = m.get(j, i);
                if w.is_finite() && v != w {
                    violations.push(Violation::Asymmetric {
                        i,
                        j,
                        forward: v,
                        backward: w,
                    });
                }
                if !allow_zero && v == 0.0 {
                    violations.push(Violation::ZeroDistance { i, j });
                }
            }
        }
    }
    if violations
        .iter()
        .any(|v| matches!(v, Violation::NonFinite { .. }))
    {
        return ValidationReport { violations };
    }
    for x in 0..n {
        for z in 0..n {
            if x == z {
                continue;
            }
            let xz = m.get(x, z);
            for y in 0..n {
                if y == x || y == z {
                    continue;
                }
                let excess = xz - (m.get(x, y) + m.get(y, z));
                if excess > tol {
                    violations.push(Violation::Triangle { x, y, z, excess });
                }
            }
        }
    }
    ValidationReport { violations }
}

/// Checks every metric axiom; the report lists each violation with a witness.
pub fn validate_metric(m: &DistMatrix) -> ValidationReport {
    validate(m, false, DEFAULT_TOL)
}

pub fn validate_metric_with_tol(m: &DistMatrix, tol: f64) -> ValidationReport {
    validate(m, false, tol)
}

/// As [`validate_metric`] but zero distances between distinct points are allowed.
pub fn validate_pseudometric(m: &DistMatrix) -> ValidationReport {
    validate(m, true, DEFAULT_TOL)
}

pub fn validate_pseudometric_with_tol(m: &DistMatrix, tol: f64) -> ValidationReport {
    validate(m, true, tol)
}

/// Uniform distance `max |d - e|` over all pairs.
pub fn sup_distance(d: &DistMatrix, e: &DistMatrix) -> Result<f64> {
    Ok(sup_distance_with_witness(d, e)?.0)
}

/// Uniform distance together with a pair attaining it.
pub fn sup_distance_with_witness(d: &DistMatrix, e: &DistMatrix) -> Result<(f64, (usize, usize))> {
    d.check_same_shape(e)?;
    let mut best = (0.0, (0, 0));
    for i in 0..d.len() {
        for j in i..d.len() {
            let v = (d.get(i, j) - e.get(i, j)).abs();
            if v > best.0 {
                best = (v, (i, j));
            }
        }
    }
    Ok(best)
}

/// Entrywise power `d^alpha` for `0 < alpha <= 1`.
pub fn snowflake(d: &DistMatrix, alpha: f64) -> Result<DistMatrix> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "snowflake exponent must lie in (0, 1], got {alpha}"
        )));
    }
    if alpha == 1.0 {
        return Ok(d.clone());
    }
    Ok(d.map(|v| v.powf(alpha)))
}

/// Entrywise `min(d, eta)`.
pub fn truncate(d: &DistMatrix, eta: f64) -> Result<PseudometricMatrix> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation level must be positive, got {eta}"
        )));
    }
    Ok(d.map(|v| v.min(eta)))
}

/// `min(d(x, y), d(x, A) + d(A, y))`; vanishes on `A x A`.
pub fn hat_metric(d: &DistMatrix, a: &Subset) -> Result<PseudometricMatrix> {
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let to_a: Vec<f64> = (0..d.len()).map(|x| dist_to_members(d, x, a.members())).collect();
    Ok(DistMatrix::from_fn(d.len(), |x, y| {
        if x == y {
            0.0
        } else {
            d.get(x, y).min(to_a[x] + to_a[y])
        }
    }))
}

/// Entrywise sum of two pseudometrics.
pub fn add_pseudometrics(p: &DistMatrix, q: &DistMatrix) -> Result<PseudometricMatrix> {
    p.check_same_shape(q)?;
    Ok(DistMatrix {
        n: p.n,
        data: p.data.iter().zip(&q.data).map(|(a, b)| a + b).collect(),
    })
}

/// `min_{s in members} d(x, s)`; `+inf` for an empty slice.
pub(crate) fn dist_to_members(d: &DistMatrix, x: usize, members: &[usize]) -> f64 {
    let row = d.row(x);
    members.iter().map(|&s| row[s]).fold(f64::INFINITY, f64::min)
}

/// Distance from `x` to the points where `mask` is false; `+inf` if there are none.
pub(crate) fn dist_to_complement(d: &DistMatrix, x: usize, mask: &[bool]) -> f64 {
    let row = d.row(x);
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| !m)
        .map(|(s, _)| row[s])
        .fold(f64::INFINITY, f64::min)
}

pub fn dist_to_set(d: &DistMatrix, x: usize, s: &Subset) -> Result<f64> {
    d.check_index(x)?;
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(dist_to_members(d, x, s.members()))
}

/// `inf { d(a, b) : a in s, b in t }`.
pub fn set_distance(d: &DistMatrix, s: &Subset, t: &Subset) -> Result<f64> {
    if s.is_empty() || t.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(s.iter()
        .map(|x| dist_to_members(d, x, t.members()))
        .fold(f64::INFINITY, f64::min))
}

pub fn diameter(d: &DistMatrix, s: &Subset) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(diameter_of(d, s.members()))
}

pub(crate) fn diameter_of(d: &DistMatrix, members: &[usize]) -> f64 {
    let mut diam: f64 = 0.0;
    for (k, &a) in members.iter().enumerate() {
        for &b in &members[k + 1..] {
            diam = diam.max(d.get(a, b));
        }
    }
    diam
}

/// Open ball `{x : d(x, center) < r}`.
pub fn ball(d: &DistMatrix, center: usize, r: f64) -> Result<Subset> {
    d.check_index(center)?;
    let row = d.row(center);
    Ok(Subset {
        universe: d.len(),
        members: (0..d.len()).filter(|&x| row[x] < r).collect(),
    })
}

/// Open neighbourhood `{x : d(x, s) < r}`.
pub fn ball_around_set(d: &DistMatrix, s: &Subset, r: f64) -> Result<Subset> {
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(Subset {
        universe: d.len(),
        members: (0..d.len())
            .filter(|&x| dist_to_members(d, x, s.members()) < r)
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCheck {
    pub dense: bool,
    /// Point farthest from the set.
    pub worst_point: usize,
    pub worst_distance: f64,
}

/// Whether every point lies within `eps` of `a`.
pub fn is_eps_dense(d: &DistMatrix, a: &Subset, eps: f64) -> Result<DensityCheck> {
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut worst = (0usize, 0.0f64);
    for x in 0..d.len() {
        let v = dist_to_members(d, x, a.members());
        if v > worst.1 {
            worst = (x, v);
        }
    }
    Ok(DensityCheck {
        dense: worst.1 <= eps,
        worst_point: worst.0,
        worst_distance: worst.1,
    })
}

/// Lattice with `dims[k]` points along axis `k`, spacing `spacing`, under
/// the chosen ground norm. The base point is the origin corner.
pub fn make_grid_space(dims: &[usize], spacing: f64, ground: Ground) -> Result<FiniteMetricSpace> {
    if dims.is_empty() {
        return Err(Error::InvalidParameter("grid needs at least one axis".into()));
    }
    if dims.iter().any(|&n| n == 0) {
        return Err(Error::InvalidParameter("grid extents must be positive".into()));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    let info = GridInfo {
        dims: dims.to_vec(),
        spacing,
        ground,
    };
    let n = info.len();
    let coords: Vec<Vec<usize>> = (0..n).map(|i| info.coords(i)).collect();
    let metric = DistMatrix::from_upper(n, |i, j| info.ground_distance(&coords[i], &coords[j]));
    let names = coords
        .iter()
        .map(|c| {
            let parts: Vec<String> = c.iter().map(usize::to_string).collect();
            format!("({})", parts.join(","))
        })
        .collect();
    let mut space = FiniteMetricSpace::new(names, metric, 0)?;
    space.grid = Some(info);
    Ok(space)
}

/// All-pairs shortest paths over the complete graph weighted by `w`.
pub fn shortest_path_closure(w: &DistMatrix) -> DistMatrix {
    let n = w.len();
    let mut d = w.clone();
    for i in 0..n {
        d.data[i * n + i] = 0.0;
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d.data[i * n + k];
            if !dik.is_finite() {
                continue;
            }
            for j in 0..n {
                let via = dik + d.data[k * n + j];
                if via < d.data[i * n + j] {
                    d.data[i * n + j] = via;
                }
            }
        }
    }
    d
}

/// Random metric on `n` points: uniform edge weights in `[lo, hi)` on the
/// complete graph, completed to shortest-path distances.
pub fn random_metric(n: usize, seed: u64, lo: f64, hi: f64) -> Result<DistMatrix> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "random weight range must satisfy 0 < lo < hi, got [{lo}, {hi})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DistMatrix::from_upper(n, |_, _| rng.gen_range(lo..hi));
    Ok(shortest_path_closure(&w))
}

pub fn random_metric_space(n: usize, seed: u64) -> Result<FiniteMetricSpace> {
    if n == 0 {
        return Err(Error::InvalidParameter("space needs at least one point".into()));
    }
    FiniteMetricSpace::from_metric(random_metric(n, seed, 0.5, 1.5)?, 0)
}
