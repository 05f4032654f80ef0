//! Order of set families, order-bounded brick covers of grids, and the
//! separated net with a subordinate cover used by the extension operators.

use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, CertificateSet, Relation, Witness};
use crate::error::{Error, Result};
use crate::metric::{diameter_of, DistMatrix, FiniteMetricSpace, GridInfo, Subset};

/// An ordered family of subsets of `{0, …, universe − 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverFamily {
    pub universe: usize,
    pub sets: Vec<Subset>,
    /// Order the producer promises; `None` when nothing is promised.
    pub order_bound: Option<usize>,
}

impl CoverFamily {
    pub fn new(universe: usize, sets: Vec<Subset>, order_bound: Option<usize>) -> Result<Self> {
        for s in &sets {
            if s.universe() != universe {
                return Err(Error::DimensionMismatch(format!(
                    "set over {} points in a family over {universe}",
                    s.universe()
                )));
            }
        }
        Ok(Self {
            universe,
            sets,
            order_bound,
        })
    }

    pub fn from_indices(universe: usize, sets: Vec<Vec<usize>>, order_bound: Option<usize>) -> Result<Self> {
        let sets = sets
            .into_iter()
            .map(|s| Subset::new(universe, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(universe, sets, order_bound)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Number of sets containing each point.
    pub fn multiplicity(&self) -> Vec<usize> {
        let mut count = vec![0; self.universe];
        for s in &self.sets {
            for x in s.iter() {
                count[x] += 1;
            }
        }
        count
    }

    pub fn order(&self) -> isize {
        order(self)
    }

    /// First point lying in no set.
    pub fn first_uncovered(&self) -> Option<usize> {
        self.multiplicity().iter().position(|&c| c == 0)
    }

    pub fn is_cover(&self) -> bool {
        self.first_uncovered().is_none()
    }

    /// Sets mapped into a larger universe through `embed[local] = global`.
    pub fn embed(&self, embed: &[usize], universe: usize) -> Result<CoverFamily> {
        if embed.len() != self.universe {
            return Err(Error::DimensionMismatch(format!(
                "embedding of {} points for a family over {}",
                embed.len(),
                self.universe
            )));
        }
        let sets = self
            .sets
            .iter()
            .map(|s| Subset::new(universe, s.iter().map(|x| embed[x]).collect()))
            .collect::<Result<Vec<_>>>()?;
        CoverFamily::new(universe, sets, self.order_bound)
    }
}

/// Largest membership multiplicity minus one; `−1` when no point is covered.
pub fn order(family: &CoverFamily) -> isize {
    family.multiplicity().into_iter().max().unwrap_or(0) as isize - 1
}

/// Cover by singletons; order 0.
pub fn singleton_cover(n: usize) -> CoverFamily {
    CoverFamily {
        universe: n,
        sets: (0..n).map(|x| Subset::new(n, vec![x]).expect("in range")).collect(),
        order_bound: Some(0),
    }
}

/// Restricts every set to `members` (ambient indices stay).
pub fn restrict_family(family: &CoverFamily, members: &Subset) -> Result<CoverFamily> {
    if members.universe() != family.universe {
        return Err(Error::DimensionMismatch("subset and family live in different spaces".into()));
    }
    let mask = members.mask();
    let sets = family
        .sets
        .iter()
        .map(|s| Subset::new(family.universe, s.iter().filter(|&x| mask[x]).collect()))
        .collect::<Result<Vec<_>>>()?;
    CoverFamily::new(family.universe, sets, family.order_bound)
}

/// Bricks of diameter `< eps/6` covering the grid.
///
/// Axis 0 uses closed intervals sharing their end points. Axis 1 does the
/// same, with the axis-0 breakpoints of odd rows shifted by half a brick so
/// that a point on a row boundary meets an axis-0 boundary in at most one of
/// the two rows. Remaining axes are cut into disjoint intervals. The order is
/// at most `min(dim, 2)`.
pub fn brick_cover(space: &FiniteMetricSpace, eps: f64) -> Result<CoverFamily> {
    let grid = space
        .grid
        .as_ref()
        .ok_or_else(|| Error::Precondition("brick covers need a generated grid space".into()))?;
    brick_cover_on(grid, &space.metric, eps, true)
}

/// Bricks cut into disjoint pieces; order 0.
pub fn brick_cover_disjoint(space: &FiniteMetricSpace, eps: f64) -> Result<CoverFamily> {
    let grid = space
        .grid
        .as_ref()
        .ok_or_else(|| Error::Precondition("brick covers need a generated grid space".into()))?;
    brick_cover_on(grid, &space.metric, eps, false)
}

/// Brick cover of the lattice `grid` whose points carry the metric `d`.
pub fn brick_cover_on(grid: &GridInfo, d: &DistMatrix, eps: f64, overlapping: bool) -> Result<CoverFamily> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if grid.len() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "grid of {} points, metric on {}",
            grid.len(),
            d.len()
        )));
    }
    let dim = grid.nominal_dim();
    let longest = grid.dims.iter().copied().max().unwrap_or(1);
    // Largest step count whose brick stays below eps/6 in the given metric.
    let mut steps = 0;
    for s in 1..longest {
        if brick_diameter(grid, d, s) < eps / 6.0 {
            steps = s;
        } else {
            break;
        }
    }
    // No two-point brick fits: fall back to single points, which are disjoint.
    let overlapping = overlapping && steps > 0;

    let closed = |n: usize, offset: usize| -> Vec<(usize, usize)> {
        let mut cuts = vec![0];
        let mut c = if offset > 0 { offset } else { steps };
        while c < n - 1 {
            cuts.push(c);
            c += steps;
        }
        cuts.push(n - 1);
        cuts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
    };
    let disjoint = |n: usize| -> Vec<(usize, usize)> {
        (0..n)
            .step_by(steps + 1)
            .map(|a| (a, (a + steps).min(n - 1)))
            .collect()
    };
    let stagger = overlapping && dim >= 2 && steps >= 2;
    let axis0 = |row_block: usize| -> Vec<(usize, usize)> {
        let n = grid.dims[0];
        if !overlapping || n == 1 {
            return if n == 1 { vec![(0, 0)] } else { disjoint(n) };
        }
        let offset = if stagger && row_block % 2 == 1 { steps / 2 } else { 0 };
        closed(n, offset)
    };
    let mut axis_intervals: Vec<Vec<(usize, usize)>> = Vec::with_capacity(dim);
    for (k, &n) in grid.dims.iter().enumerate() {
        let iv = if n == 1 {
            vec![(0, 0)]
        } else if k == 1 && stagger {
            closed(n, 0)
        } else if k == 0 {
            Vec::new()
        } else {
            disjoint(n)
        };
        axis_intervals.push(iv);
    }

    let mut sets = Vec::new();
    let higher: Vec<&Vec<(usize, usize)>> = axis_intervals.iter().skip(1).collect();
    let mut counters = vec![0usize; higher.len()];
    loop {
        let row_block = if dim >= 2 { counters[0] } else { 0 };
        for &(lo0, hi0) in &axis0(row_block) {
            let mut ranges = vec![(lo0, hi0)];
            ranges.extend(counters.iter().zip(&higher).map(|(&c, iv)| iv[c]));
            sets.push(box_members(grid, &ranges));
        }
        // odometer over the higher axes
        let mut k = 0;
        loop {
            if k == counters.len() {
                let bound = if !overlapping {
                    0
                } else {
                    dim.min(if stagger { 2 } else { 1 })
                };
                let family = CoverFamily::from_indices(d.len(), sets, Some(bound))?;
                for (i, s) in family.sets.iter().enumerate() {
                    let diam = diameter_of(d, s.members());
                    if diam >= eps / 6.0 {
                        return Err(Error::InvalidParameter(format!(
                            "brick {i} has diameter {diam}, not below eps/6 = {}",
                            eps / 6.0
                        )));
                    }
                }
                return Ok(family);
            }
            counters[k] += 1;
            if counters[k] < higher[k].len() {
                break;
            }
            counters[k] = 0;
            k += 1;
        }
    }
}

fn box_members(grid: &GridInfo, ranges: &[(usize, usize)]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut c: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        out.push(grid.index(&c));
        let mut k = 0;
        loop {
            if k == c.len() {
                out.sort_unstable();
                return out;
            }
            c[k] += 1;
            if c[k] <= ranges[k].1 {
                break;
            }
            c[k] = ranges[k].0;
            k += 1;
        }
    }
}

fn brick_diameter(grid: &GridInfo, d: &DistMatrix, steps: usize) -> f64 {
    let ranges: Vec<(usize, usize)> = grid.dims.iter().map(|&n| (0, steps.min(n - 1))).collect();
    diameter_of(d, &box_members(grid, &ranges))
}

/// If `members` is an axis-aligned box of `grid`, the box as a lattice of
/// its own, listing its points in lattice order. Axes of extent one are
/// dropped.
pub fn subgrid(grid: &GridInfo, members: &Subset) -> Option<(GridInfo, Vec<usize>)> {
    let first = members.members().first()?;
    let mut lo = grid.coords(*first);
    let mut hi = lo.clone();
    for x in members.iter() {
        for (k, c) in grid.coords(x).into_iter().enumerate() {
            lo[k] = lo[k].min(c);
            hi[k] = hi[k].max(c);
        }
    }
    let extents: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| b - a + 1).collect();
    if extents.iter().product::<usize>() != members.len() {
        return None;
    }
    let dims: Vec<usize> = extents.iter().copied().filter(|&e| e > 1).collect();
    let dims = if dims.is_empty() { vec![1] } else { dims };
    // Sorted ambient indices already follow lattice order, axis 0 fastest.
    Some((
        GridInfo {
            dims,
            spacing: grid.spacing,
            ground: grid.ground,
        },
        members.members().to_vec(),
    ))
}

/// A separated net `A = {a_0, …, a_k}` (with `a_0` the base point) and a
/// cover `(U_i)` such that `a_i ∈ U_j` iff `i = j`, `U_i ⊆ B(a_i, eps/2)`,
/// `d(a_i, a_j) > eps/3` for `i ≠ j`, and the order is at most `order_bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetAndCover {
    pub points: usize,
    pub net: Vec<usize>,
    pub sets: Vec<Vec<usize>>,
    pub eps: f64,
    pub order_bound: usize,
}

impl NetAndCover {
    pub fn base(&self) -> usize {
        self.net[0]
    }

    pub fn net_subset(&self) -> Subset {
        Subset::new(self.points, self.net.clone()).expect("net points are in range")
    }

    pub fn family(&self) -> CoverFamily {
        CoverFamily::from_indices(self.points, self.sets.clone(), Some(self.order_bound))
            .expect("cover sets are in range")
    }

    /// Membership masks, one per cover set.
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.sets
            .iter()
            .map(|s| {
                let mut m = vec![false; self.points];
                for &x in s {
                    m[x] = true;
                }
                m
            })
            .collect()
    }

    pub fn order(&self) -> isize {
        self.family().order()
    }
}

/// Builds the net and cover from a refining family of diameter `< eps/6`.
///
/// Redundant sets are dropped in index order; the first set holding the
/// base point keeps it and every other set loses it; each set is
/// represented by its first private point; the net keeps representatives
/// greedily (base first) when they are `> eps/3` from all kept ones; every
/// set is merged into the kept representative nearest to its own.
pub fn build_net_cover(d: &DistMatrix, base: usize, eps: f64, refiner: &CoverFamily) -> Result<NetAndCover> {
    let n = d.len();
    if refiner.universe != n {
        return Err(Error::DimensionMismatch(format!(
            "refiner over {} points, metric on {n}",
            refiner.universe
        )));
    }
    if base >= n {
        return Err(Error::PointOutOfRange { index: base, len: n });
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if let Some(x) = refiner.first_uncovered() {
        return Err(Error::Uncovered(x));
    }
    for (i, s) in refiner.sets.iter().enumerate() {
        let diam = diameter_of(d, s.members());
        if diam >= eps / 6.0 {
            return Err(Error::Precondition(format!(
                "refiner set {i} has diameter {diam}, not below eps/6 = {}",
                eps / 6.0
            )));
        }
    }
    let order_bound = match refiner.order_bound {
        Some(r) => r,
        None => refiner.order().max(0) as usize,
    };

    let mut sets: Vec<Vec<usize>> = refiner
        .sets
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.members().to_vec())
        .collect();
    let mut count = vec![0usize; n];
    for s in &sets {
        for &x in s {
            count[x] += 1;
        }
    }
    let mut keep = vec![true; sets.len()];
    for (i, s) in sets.iter().enumerate() {
        if s.iter().all(|&x| count[x] >= 2) {
            keep[i] = false;
            for &x in s {
                count[x] -= 1;
            }
        }
    }
    let mut sets: Vec<Vec<usize>> = sets
        .drain(..)
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect();

    let v0 = sets
        .iter()
        .position(|s| s.binary_search(&base).is_ok())
        .expect("the family covers the base point");
    let first = sets.remove(v0);
    sets.insert(0, first);
    for s in sets.iter_mut().skip(1) {
        s.retain(|&x| x != base);
    }
    sets.retain(|s| !s.is_empty());

    let mut count = vec![0usize; n];
    for s in &sets {
        for &x in s {
            count[x] += 1;
        }
    }
    let reps: Vec<usize> = sets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if i == 0 {
                base
            } else {
                *s.iter()
                    .find(|&&x| count[x] == 1)
                    .expect("non-redundant sets have a private point")
            }
        })
        .collect();

    let mut kept: Vec<usize> = Vec::new();
    for (i, &a) in reps.iter().enumerate() {
        if kept.iter().all(|&k| d.get(reps[k], a) > eps / 3.0) {
            kept.push(i);
        }
    }
    let mut merged: Vec<Vec<usize>> = vec![Vec::new(); kept.len()];
    for (i, s) in sets.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (slot, &k) in kept.iter().enumerate() {
            let dist = d.get(reps[i], reps[k]);
            if dist < best_d {
                best = slot;
                best_d = dist;
            }
        }
        merged[best].extend_from_slice(s);
    }
    for m in &mut merged {
        m.sort_unstable();
        m.dedup();
    }
    Ok(NetAndCover {
        points: n,
        net: kept.iter().map(|&k| reps[k]).collect(),
        sets: merged,
        eps,
        order_bound,
    })
}

/// Checks coverage, the indicator property, containment in `eps/2`-balls,
/// `eps/3`-separation and the order bound.
pub fn verify_net_cover(nc: &NetAndCover, d: &DistMatrix) -> CertificateSet {
    let mut out = CertificateSet::new();
    let n = nc.points;
    let eps = nc.eps;
    let shape_ok = d.len() == n
        && nc.net.len() == nc.sets.len()
        && !nc.net.is_empty()
        && nc.net.iter().chain(nc.sets.iter().flatten()).all(|&x| x < n);
    out.push(Certificate::new(
        "net-cover.shape",
        "net and cover have matching sizes and indices in range",
        Relation::Eq,
        1.0,
        if shape_ok { 1.0 } else { 0.0 },
        0.0,
    ));
    if !shape_ok {
        return out;
    }
    let masks = nc.masks();

    let uncovered: Vec<usize> = (0..n).filter(|&x| !masks.iter().any(|m| m[x])).collect();
    out.push(
        Certificate::new(
            "net-cover.covers",
            "every point lies in some U_i",
            Relation::Eq,
            0.0,
            uncovered.len() as f64,
            0.0,
        )
        .with_witnesses(uncovered.iter().take(8).map(|&x| Witness::new("uncovered", vec![x], 0.0))),
    );

    let mut bad = Vec::new();
    for (i, &a) in nc.net.iter().enumerate() {
        for (j, m) in masks.iter().enumerate() {
            if m[a] != (i == j) {
                bad.push(Witness::new("a_i in U_j", vec![i, j], if m[a] { 1.0 } else { 0.0 }));
            }
        }
    }
    out.push(
        Certificate::new(
            "net-cover.indicator",
            "a_i in U_j iff i = j",
            Relation::Eq,
            0.0,
            bad.len() as f64,
            0.0,
        )
        .with_witnesses(bad.into_iter().take(8)),
    );

    let mut radius = 0.0;
    let mut radius_w = None;
    for (i, s) in nc.sets.iter().enumerate() {
        for &x in s {
            let r = d.get(x, nc.net[i]);
            if r >= radius {
                radius = r;
                radius_w = Some(Witness::new("x in U_i", vec![x, i], r));
            }
        }
    }
    out.push(
        Certificate::new(
            "net-cover.ball",
            "U_i lies in the open eps/2 ball around a_i",
            Relation::Lt,
            eps / 2.0,
            radius,
            0.0,
        )
        .with_witnesses(radius_w),
    );

    let mut sep = f64::INFINITY;
    let mut sep_w = None;
    for (i, &a) in nc.net.iter().enumerate() {
        for (j, &b) in nc.net.iter().enumerate().skip(i + 1) {
            if d.get(a, b) < sep {
                sep = d.get(a, b);
                sep_w = Some(Witness::new("net pair", vec![i, j], sep));
            }
        }
    }
    out.push(
        Certificate::new(
            "net-cover.separation",
            "d(a_i, a_j) > eps/3 for i != j",
            Relation::Gt,
            eps / 3.0,
            sep,
            0.0,
        )
        .with_witnesses(sep_w),
    );

    let family = nc.family();
    let mult = family.multiplicity();
    let worst = mult.iter().enumerate().max_by_key(|&(x, &c)| (c, std::cmp::Reverse(x)));
    out.push(
        Certificate::new(
            "net-cover.order",
            "order of (U_i) at most r",
            Relation::Le,
            nc.order_bound as f64,
            family.order() as f64,
            0.0,
        )
        .with_witnesses(worst.map(|(x, &c)| Witness::new("deepest point", vec![x], c as f64))),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{is_eps_dense, make_grid_space, Ground};

    #[test]
    fn order_examples() {
        let disjoint = CoverFamily::from_indices(4, vec![vec![0, 1], vec![2, 3]], None).unwrap();
        assert_eq!(order(&disjoint), 0);
        let chain = CoverFamily::from_indices(4, vec![vec![1, 2], vec![2, 3]], None).unwrap();
        assert_eq!(order(&chain), 1);
        let empty = CoverFamily::from_indices(3, vec![vec![], vec![]], None).unwrap();
        assert_eq!(order(&empty), -1);
    }

    #[test]
    fn one_dimensional_bricks() {
        let g = make_grid_space(&[17], 1.0 / 16.0, Ground::Linf).unwrap();
        let c = brick_cover(&g, 0.5).unwrap();
        assert!(c.is_cover());
        assert!(c.order() <= 1);
        assert_eq!(c.order(), 1);
        for s in &c.sets {
            assert!(diameter_of(&g.metric, s.members()) < 0.5 / 6.0);
        }
    }

    #[test]
    fn two_dimensional_bricks() {
        let g = make_grid_space(&[13, 11], 0.01, Ground::Linf).unwrap();
        for eps in [0.25, 0.2, 0.13, 0.07] {
            let c = brick_cover(&g, eps).unwrap();
            assert!(c.is_cover(), "eps {eps}");
            assert!(c.order() <= 2, "eps {eps}: order {}", c.order());
            let dj = brick_cover_disjoint(&g, eps).unwrap();
            assert!(dj.is_cover());
            assert_eq!(dj.order(), 0);
        }
        let g3 = make_grid_space(&[5, 5, 5], 0.01, Ground::Linf).unwrap();
        let c = brick_cover(&g3, 0.2).unwrap();
        assert!(c.is_cover() && c.order() <= 2);
    }

    #[test]
    fn eps_below_spacing_gives_points() {
        let g = make_grid_space(&[5, 5], 1.0, Ground::Linf).unwrap();
        let c = brick_cover(&g, 1.0).unwrap();
        assert_eq!(c.len(), 25);
        assert_eq!(c.order(), 0);
        assert!(matches!(brick_cover(&g, 0.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn single_point_space() {
        let d = DistMatrix::zeros(1);
        let nc = build_net_cover(&d, 0, 1.0, &singleton_cover(1)).unwrap();
        assert_eq!(nc.net, vec![0]);
        assert_eq!(nc.sets, vec![vec![0]]);
        assert!(verify_net_cover(&nc, &d).all_pass());
    }

    #[test]
    fn line_grid_round_trip() {
        let g = make_grid_space(&[17], 1.0 / 16.0, Ground::Linf).unwrap();
        let eps = 0.25;
        let refiner = brick_cover(&g, eps).unwrap();
        // bricks of one step on this grid
        let nc = build_net_cover(&g.metric, g.base, eps, &refiner).unwrap();
        let certs = verify_net_cover(&nc, &g.metric);
        assert!(certs.all_pass(), "{:?}", certs.first_failure());
        assert_eq!(nc.net[0], g.base);
        let holding_base = nc.sets.iter().filter(|s| s.contains(&g.base)).count();
        assert_eq!(holding_base, 1);
        assert!(nc.order() <= refiner.order());
        assert!(is_eps_dense(&g.metric, &nc.net_subset(), eps / 2.0).unwrap().dense);
    }

    #[test]
    fn broken_inputs_fail_verification() {
        let g = make_grid_space(&[17], 1.0 / 16.0, Ground::Linf).unwrap();
        let refiner = brick_cover(&g, 0.25).unwrap();
        let nc = build_net_cover(&g.metric, 0, 0.25, &refiner).unwrap();

        let mut close = nc.clone();
        close.net[1] = 1;
        let c = verify_net_cover(&close, &g.metric);
        assert!(!c.get("net-cover.separation").unwrap().pass);
        assert_eq!(c.get("net-cover.separation").unwrap().witnesses[0].points, vec![0, 1]);

        let mut dropped = nc.clone();
        dropped.sets.pop();
        dropped.net.pop();
        assert!(!verify_net_cover(&dropped, &g.metric).get("net-cover.covers").unwrap().pass);
    }

    #[test]
    fn refiner_must_cover() {
        let d = DistMatrix::from_upper(3, |_, _| 1.0);
        let partial = CoverFamily::from_indices(3, vec![vec![0], vec![1]], Some(0)).unwrap();
        assert!(matches!(build_net_cover(&d, 0, 10.0, &partial), Err(Error::Uncovered(2))));
        assert!(matches!(
            build_net_cover(&d, 0, 1.0, &CoverFamily::from_indices(3, vec![vec![0, 1, 2]], None).unwrap()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn subgrid_of_an_edge() {
        let g = make_grid_space(&[4, 3], 0.5, Ground::Linf).unwrap();
        let grid = g.grid.as_ref().unwrap();
        let row = Subset::new(12, vec![0, 1, 2, 3]).unwrap();
        let (sub, pts) = subgrid(grid, &row).unwrap();
        assert_eq!(sub.dims, vec![4]);
        assert_eq!(pts, vec![0, 1, 2, 3]);
        let col = Subset::new(12, vec![1, 5, 9]).unwrap();
        assert_eq!(subgrid(grid, &col).unwrap().0.dims, vec![3]);
        let l = Subset::new(12, vec![0, 1, 4]).unwrap();
        assert!(subgrid(grid, &l).is_none());
    }
}
