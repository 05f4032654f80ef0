//! Gluing an extension operator near a finite-dimensional piece `K` with the
//! identity far from it.
//!
//! Given an exhaustion `C_1 ⊆ C_2 ⊆ …` of `T ∖ K`, a scale `eps` and an
//! index `n`, [`build_section4`] produces a metric `bar_d` close to `d`.
//! For every metric `e` with `‖e − bar_d‖∞ < eps/(480(k+1))`,
//! [`certify_rnm`] builds
//! `H(f) = (1 − ρ) E(f↾A) + ρ f` on `Lip_0(C_m ∪ A, e)` and certifies its norm
//! and the identity `H(f) = f` on `C_n ∪ A`.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::{inputs_hash, Certificate, CertificateSet, Relation, Witness};
use crate::cover::{brick_cover_on, build_net_cover, order, singleton_cover, subgrid, verify_net_cover, CoverFamily, NetAndCover};
use crate::error::{Error, Result};
use crate::extension::{build_perturbed_G, build_prop33, g_bound, PerturbedBundle, Prop33Bundle};
use crate::free_norm::{
    apply_weight_operator, lipschitz_constant, mcshane_extend, metric_extension_lp, metric_extension_paths,
    operator_norm, LipFunction, WeightOperator,
};
use crate::metric::{
    add_pseudometrics, dist_to_members, sup_distance_with_witness, truncate, validate_metric_with_tol, DistMatrix,
    GridInfo, Subset,
};

/// Spaces up to this size get their metric extension from the LP.
pub const LP_EXTENSION_MAX_POINTS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GluingConfig {
    pub d: DistMatrix,
    /// The finite-dimensional piece.
    pub k: Subset,
    /// Base point, a member of `k`.
    pub base: usize,
    /// Strictly decreasing positive `t_1 > t_2 > …`; `C_n = {x : d(x, K) ≥ t_n}`.
    pub thresholds: Vec<f64>,
    pub dim_k: usize,
    /// Lattice structure of the ambient space, used to brick-cover `K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
}

impl GluingConfig {
    fn check(&self) -> Result<()> {
        let n = self.d.len();
        if self.k.universe() != n {
            return Err(Error::DimensionMismatch(format!(
                "K lives in a space of {} points, metric on {n}",
                self.k.universe()
            )));
        }
        if self.k.is_empty() {
            return Err(Error::EmptySet);
        }
        if !self.k.contains(self.base) {
            return Err(Error::Precondition(format!("base point {} is not in K", self.base)));
        }
        if self.thresholds.is_empty() {
            return Err(Error::InvalidParameter("at least one threshold is needed".into()));
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite()))
            || self.thresholds.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidParameter(
                "thresholds must be positive and strictly decreasing".into(),
            ));
        }
        Ok(())
    }

    pub fn dist_to_k(&self, x: usize) -> f64 {
        dist_to_members(&self.d, x, self.k.members())
    }
}

/// `Γ = 88(k+1)(2k+3)`.
pub fn gamma(dim_k: usize) -> f64 {
    g_bound(dim_k)
}

/// `(150k + 152)(Γ + 1)`.
pub fn rnm_bound(dim_k: usize) -> f64 {
    (150.0 * dim_k as f64 + 152.0) * (gamma(dim_k) + 1.0)
}

/// `C_n = {x : d(x, K) ≥ t_n}` for every threshold, in order. The last set
/// must be all of `T ∖ K`.
pub fn build_exhaustion(cfg: &GluingConfig) -> Result<Vec<Subset>> {
    cfg.check()?;
    let n = cfg.d.len();
    let dk: Vec<f64> = (0..n).map(|x| cfg.dist_to_k(x)).collect();
    let sets: Vec<Subset> = cfg
        .thresholds
        .iter()
        .map(|&t| Subset::new(n, (0..n).filter(|&x| dk[x] >= t).collect()).expect("in range"))
        .collect();
    let last = sets.last().expect("thresholds are nonempty");
    if let Some(x) = (0..n).find(|&x| !cfg.k.contains(x) && !last.contains(x)) {
        return Err(Error::Uncovered(x));
    }
    Ok(sets)
}

/// `({x : m(x, K) ≤ closed}, {x : m(x, K) < open})`.
pub fn sandwich_sets(m: &DistMatrix, k: &Subset, closed: f64, open: f64) -> (Subset, Subset) {
    let n = m.len();
    let dk: Vec<f64> = (0..n).map(|x| dist_to_members(m, x, k.members())).collect();
    (
        Subset::new(n, (0..n).filter(|&x| dk[x] <= closed).collect()).expect("in range"),
        Subset::new(n, (0..n).filter(|&x| dk[x] < open).collect()).expect("in range"),
    )
}

/// `V_1 = {bar_d(x,K) ≤ eps/(32(k+1))}`, `V_2 = {bar_d(x,K) < eps/(14(k+1))}`.
pub fn v_sets(bar_d: &DistMatrix, k: &Subset, eps: f64, dim_k: usize) -> (Subset, Subset) {
    let c = dim_k as f64 + 1.0;
    sandwich_sets(bar_d, k, eps / (32.0 * c), eps / (14.0 * c))
}

/// `W_1 = {e(x,K) ≤ eps/(30(k+1))}`, `W_2 = {e(x,K) < eps/(15(k+1))}`.
pub fn w_sets(e: &DistMatrix, k: &Subset, eps: f64, dim_k: usize) -> (Subset, Subset) {
    let c = dim_k as f64 + 1.0;
    sandwich_sets(e, k, eps / (30.0 * c), eps / (15.0 * c))
}

/// `ρ(x) = min(1, 30(k+1)/eps · e(x, W_1))`.
pub fn cutoff_rho(e: &DistMatrix, w1: &Subset, eps: f64, dim_k: usize) -> Result<Vec<f64>> {
    if w1.is_empty() {
        return Err(Error::EmptySet);
    }
    let c = 30.0 * (dim_k as f64 + 1.0) / eps;
    Ok((0..e.len())
        .map(|x| (c * dist_to_members(e, x, w1.members())).min(1.0))
        .collect())
}

/// The metric `bar_d` and every set the construction fixes before a
/// perturbation `e` is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section4Bundle {
    pub config: GluingConfig,
    pub eps: f64,
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    pub exhaustion: Vec<Subset>,
    /// Net `A ⊆ K`, base point first.
    pub net: Vec<usize>,
    /// Cover of `K` subordinate to the net.
    pub k_cover: Vec<Vec<usize>>,
    pub xi: f64,
    pub thickening: f64,
    /// `V_i` in ambient indices.
    pub v_i: Vec<Vec<usize>>,
    pub eta: f64,
    pub v: Subset,
    /// Net and cover on `V`, in the local indices of `v`.
    pub inner: Prop33Bundle,
    pub d2: DistMatrix,
    pub e1: DistMatrix,
    pub bar_d: DistMatrix,
    pub v1: Subset,
    pub v2: Subset,
    pub certificates: CertificateSet,
}

impl Section4Bundle {
    pub fn dim_k(&self) -> usize {
        self.config.dim_k
    }

    /// Strict radius for admissible `e`: `eps/(480(k+1))`.
    pub fn admission_radius(&self) -> f64 {
        self.eps / (480.0 * (self.dim_k() as f64 + 1.0))
    }

    pub fn c_n(&self) -> &Subset {
        &self.exhaustion[self.n - 1]
    }

    pub fn c_m(&self) -> &Subset {
        &self.exhaustion[self.m - 1]
    }

    /// `C_m ∪ A`, the domain of `H`.
    pub fn h_domain(&self) -> Subset {
        let net = Subset::new(self.c_m().universe(), self.net.clone()).expect("in range");
        self.c_m().union(&net)
    }

    pub fn rnm_bound(&self) -> f64 {
        rnm_bound(self.dim_k())
    }
}

fn count_cert(name: &str, claim: &str, bad: &[usize], label: &str) -> Certificate {
    Certificate::new(name, claim, Relation::Eq, 0.0, bad.len() as f64, 0.0)
        .with_witnesses(bad.iter().take(8).map(|&x| Witness::new(label, vec![x], 0.0)))
}

fn abort_on_failure(certs: &CertificateSet) -> Result<()> {
    match certs.first_failure() {
        Some(c) => Err(Error::CertificateFailed(Box::new(c.clone()))),
        None => Ok(()),
    }
}

fn k_refiner(cfg: &GluingConfig, d_k: &DistMatrix, eps: f64) -> Result<CoverFamily> {
    if let Some((sub, _)) = cfg.grid.as_ref().and_then(|g| subgrid(g, &cfg.k)) {
        let overlapping = brick_cover_on(&sub, d_k, eps, true)?;
        if overlapping.order_bound.is_some_and(|r| r <= cfg.dim_k) {
            return Ok(overlapping);
        }
        return brick_cover_on(&sub, d_k, eps, false);
    }
    Ok(singleton_cover(d_k.len()))
}

/// `ε = min(ν/5, d(K, C_n))`; `ν/5` alone when `C_n` is empty.
pub fn choose_eps(cfg: &GluingConfig, n: usize, nu: f64) -> Result<f64> {
    let ex = build_exhaustion(cfg)?;
    let c_n = ex
        .get(n.wrapping_sub(1))
        .ok_or_else(|| Error::InvalidParameter(format!("index {n} outside 1..={}", ex.len())))?;
    let gap = c_n.iter().map(|x| cfg.dist_to_k(x)).fold(f64::INFINITY, f64::min);
    Ok((nu / 5.0).min(gap))
}

pub fn build_section4(cfg: &GluingConfig, n: usize, eps: f64, tol: f64) -> Result<Section4Bundle> {
    let exhaustion = build_exhaustion(cfg)?;
    if n == 0 || n > exhaustion.len() {
        return Err(Error::InvalidParameter(format!(
            "index {n} outside 1..={}",
            exhaustion.len()
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let d = &cfg.d;
    let npts = d.len();
    let dim_k = cfg.dim_k;
    let kc = dim_k as f64 + 1.0;
    let k_members = cfg.k.members().to_vec();
    let dk: Vec<f64> = (0..npts).map(|x| cfg.dist_to_k(x)).collect();
    let mut certs = CertificateSet::new();

    let gap = exhaustion[n - 1].iter().map(|x| dk[x]).fold(f64::INFINITY, f64::min);
    certs.push(Certificate::new(
        "s4.eps-choice",
        "eps <= d(K, C_n)",
        Relation::Le,
        gap,
        eps,
        0.0,
    ));
    abort_on_failure(&certs)?;

    // Net and cover of K, built in K's own indices.
    let d_k = d.restrict(&k_members);
    let base_k = k_members.binary_search(&cfg.base).expect("base is in K");
    let refiner = k_refiner(cfg, &d_k, eps)?;
    let mut nc_k = build_net_cover(&d_k, base_k, eps, &refiner)?;
    nc_k.order_bound = nc_k.order_bound.min(dim_k).max(nc_k.order().max(0) as usize);
    let k_certs = verify_net_cover(&nc_k, &d_k);
    abort_on_failure(&k_certs)?;
    certs.extend(k_certs);
    let net: Vec<usize> = nc_k.net.iter().map(|&x| k_members[x]).collect();
    let k_cover: Vec<Vec<usize>> = nc_k
        .sets
        .iter()
        .map(|s| s.iter().map(|&x| k_members[x]).collect())
        .collect();
    let k_masks: Vec<Vec<bool>> = k_cover
        .iter()
        .map(|s| {
            let mut m = vec![false; npts];
            s.iter().for_each(|&x| m[x] = true);
            m
        })
        .collect();

    // Lebesgue number of the K-cover and the shrunken closed sets U_i'.
    let k_minus: Vec<Vec<usize>> = k_masks
        .iter()
        .map(|m| k_members.iter().copied().filter(|&x| !m[x]).collect())
        .collect();
    let xi = k_members
        .iter()
        .map(|&x| {
            k_minus
                .iter()
                .map(|rest| dist_to_members(d, x, rest))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    let u_prime: Vec<Vec<usize>> = k_cover
        .iter()
        .zip(&k_minus)
        .zip(&net)
        .map(|((u, rest), &a)| {
            let mut s: Vec<usize> = u
                .iter()
                .copied()
                .filter(|&x| x == a || dist_to_members(d, x, rest) >= xi)
                .collect();
            s.sort_unstable();
            s
        })
        .collect();
    let d_u: Vec<Vec<f64>> = u_prime
        .iter()
        .map(|u| (0..npts).map(|x| dist_to_members(d, x, u)).collect())
        .collect();

    // Largest thickening radius keeping the order at most dim K.
    let mut radii: Vec<f64> = d_u.iter().flatten().copied().filter(|&v| v > 0.0).collect();
    radii.push(f64::INFINITY);
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let thick_order = |s: f64| -> isize {
        let fam = CoverFamily::from_indices(
            npts,
            d_u.iter()
                .map(|du| (0..npts).filter(|&x| du[x] < s).collect())
                .collect(),
            None,
        )
        .expect("in range");
        order(&fam)
    };
    if thick_order(radii[0]) > dim_k as isize {
        return Err(Error::Precondition(format!(
            "the shrunken K-cover already has order {} above dim K = {dim_k}",
            thick_order(radii[0])
        )));
    }
    let (mut lo, mut hi) = (0usize, radii.len() - 1);
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if thick_order(radii[mid]) <= dim_k as isize {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let thickening = radii[lo];

    // V_i = {d(x, U_i') < min(s, η_i)} ∩ B(a_i, eps/2), η_i = min_{j≠i} d(a_j, U_i').
    let v_i: Vec<Vec<usize>> = (0..net.len())
        .map(|i| {
            let eta_i = net
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &a)| d_u[i][a])
                .fold(f64::INFINITY, f64::min);
            let reach = thickening.min(eta_i);
            (0..npts)
                .filter(|&x| d_u[i][x] < reach && d.get(x, net[i]) < eps / 2.0)
                .collect()
        })
        .collect();
    let v_fam = CoverFamily::from_indices(npts, v_i.clone(), Some(dim_k))?;
    certs.push(Certificate::new(
        "s4.thickening-order",
        "order of (V_i) at most dim K",
        Relation::Le,
        dim_k as f64,
        v_fam.order() as f64,
        0.0,
    ));
    let mut bad = Vec::new();
    for (i, &a) in net.iter().enumerate() {
        for (j, s) in v_i.iter().enumerate() {
            if s.binary_search(&a).is_ok() != (i == j) {
                bad.push(a);
            }
        }
    }
    certs.push(count_cert("s4.vi-indicator", "a_j in V_i iff i = j", &bad, "net point"));
    let ball = v_i
        .iter()
        .zip(&net)
        .flat_map(|(s, &a)| s.iter().map(move |&x| d.get(x, a)))
        .fold(0.0, f64::max);
    certs.push(Certificate::new(
        "s4.vi-ball",
        "V_i lies in the open eps/2 ball around a_i",
        Relation::Lt,
        eps / 2.0,
        ball,
        0.0,
    ));

    // η below eps/2 with {d(x,K) ≤ η} inside ∪ V_i.
    let covered = v_fam.multiplicity();
    let eta_star = (0..npts)
        .filter(|&x| covered[x] == 0)
        .map(|x| dk[x])
        .fold(f64::INFINITY, f64::min);
    let cap = eta_star.min(eps / 2.0);
    let eta = dk
        .iter()
        .copied()
        .filter(|&v| v > 0.0 && v < cap)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .unwrap_or(cap / 2.0);
    let v = Subset::new(npts, (0..npts).filter(|&x| dk[x] <= eta).collect())?;
    let outside: Vec<usize> = v.iter().filter(|&x| covered[x] == 0).collect();
    certs.push(count_cert("s4.v-covered", "V lies in the union of the V_i", &outside, "point"));
    certs.push(Certificate::new("s4.eta", "eta < eps/2", Relation::Lt, eps / 2.0, eta, 0.0));
    abort_on_failure(&certs)?;

    // Extension operator on V.
    let vm = v.members().to_vec();
    let d_v = d.restrict(&vm);
    let local = |x: usize| vm.binary_search(&x).expect("point of V");
    let inner_nc = NetAndCover {
        points: vm.len(),
        net: net.iter().map(|&a| local(a)).collect(),
        sets: v_i
            .iter()
            .map(|s| s.iter().filter(|&&x| v.contains(x)).map(|&x| local(x)).collect())
            .collect(),
        eps,
        order_bound: dim_k,
    };
    let inner = build_prop33(&d_v, eps, &inner_nc, tol)?;
    certs.extend(inner.certificates.clone());
    let d1 = &inner.bar_d;

    let ext = if npts <= LP_EXTENSION_MAX_POINTS {
        metric_extension_lp(d, &v, d1)?
    } else {
        metric_extension_paths(d, &v, d1)?
    };
    let d2 = ext.metric;
    let on_v = d2.restrict(&vm);
    let (dv, _) = sup_distance_with_witness(&on_v, d1)?;
    certs.push(Certificate::new(
        "s4.d2-extends-d1",
        "d2 = d1 on V x V",
        Relation::Eq,
        0.0,
        dv,
        0.0,
    ));
    certs.push(Certificate::new(
        "s4.d2-distortion",
        "||d2 - d|| <= ||d1 - d on V||",
        Relation::Le,
        ext.bound,
        ext.distortion,
        1e-9,
    ));

    let e1 = truncate(d, eta)?;
    let scale = eps / (14.0 * eta * kc);
    let bar_d = add_pseudometrics(&d2, &e1.scale(scale))?;
    let (b2, b2w) = sup_distance_with_witness(&bar_d, &d2)?;
    certs.push(
        Certificate::new(
            "s4.bar-d2",
            "||bar_d - d2|| <= eps/(14(k+1))",
            Relation::Le,
            eps / (14.0 * kc),
            b2,
            tol,
        )
        .with_witness(Witness::new("pair", vec![b2w.0, b2w.1], b2)),
    );
    let (bd, bdw) = sup_distance_with_witness(&bar_d, d)?;
    certs.push(
        Certificate::new("s4.bar-d", "||bar_d - d|| < 5 eps", Relation::Lt, 5.0 * eps, bd, tol)
            .with_witness(Witness::new("pair", vec![bdw.0, bdw.1], bd)),
    );
    let report = validate_metric_with_tol(&bar_d, tol);
    certs.push(Certificate::new(
        "s4.bar-is-metric",
        "bar_d satisfies the metric axioms",
        Relation::Eq,
        0.0,
        report.violations.len() as f64,
        0.0,
    ));

    let (v1, v2) = v_sets(&bar_d, &cfg.k, eps, dim_k);
    let escaped: Vec<usize> = v2.iter().filter(|&x| !v.contains(x)).collect();
    certs.push(count_cert("s4.v2-in-v", "V_2 lies in V", &escaped, "point"));
    let m = (n..=exhaustion.len())
        .find(|&m| (0..npts).all(|x| v1.contains(x) || exhaustion[m - 1].contains(x)))
        .ok_or_else(|| {
            Error::Precondition("no C_m with m >= n covers T outside V_1; add finer thresholds".into())
        })?;
    certs.push(Certificate::new(
        "s4.m-choice",
        "C_m and V_1 cover T",
        Relation::Eq,
        0.0,
        0.0,
        0.0,
    ));
    abort_on_failure(&certs)?;

    Ok(Section4Bundle {
        config: cfg.clone(),
        eps,
        n,
        m,
        gamma: gamma(dim_k),
        exhaustion,
        net,
        k_cover,
        xi,
        thickening,
        v_i,
        eta,
        v,
        inner,
        d2,
        e1,
        bar_d,
        v1,
        v2,
        certificates: certs,
    })
}

/// The glued operator for one admissible `e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GluedOperator {
    pub w1: Subset,
    pub w2: Subset,
    pub rho: Vec<f64>,
    /// `E` on `V` for the metric `e`, in the local indices of `V`.
    pub extension: PerturbedBundle,
    /// `H` as weights over `C_m ∪ A`.
    pub h: WeightOperator,
}

#[allow(non_snake_case)]
pub fn build_H_operator(bundle: &Section4Bundle, e: &DistMatrix, tol: f64) -> Result<GluedOperator> {
    let radius = bundle.admission_radius();
    let (gap, _) = sup_distance_with_witness(e, &bundle.bar_d)?;
    if gap >= radius {
        return Err(Error::Admission { measured: gap, radius });
    }
    let npts = e.len();
    let vm = bundle.v.members();
    let e_v = e.restrict(vm);
    let extension = build_perturbed_G(&bundle.inner, &e_v, tol)?;
    let (w1, w2) = w_sets(e, &bundle.config.k, bundle.eps, bundle.dim_k());
    let rho = cutoff_rho(e, &w1, bundle.eps, bundle.dim_k())?;

    let domain = bundle.h_domain();
    let dom = domain.members();
    let col = |x: usize| dom.binary_search(&x).ok();
    let a_cols: Vec<usize> = bundle.net.iter().map(|&a| col(a).expect("A lies in the domain")).collect();
    let rows = (0..npts)
        .map(|x| {
            let mut row = vec![0.0; dom.len()];
            let r = rho[x];
            if r < 1.0 {
                let lx = vm.binary_search(&x).map_err(|_| {
                    Error::Precondition(format!("rho({x}) = {r} < 1 outside V"))
                })?;
                for (i, &w) in extension.mu.rows[lx].iter().enumerate() {
                    row[a_cols[i]] += (1.0 - r) * w;
                }
            }
            if r > 0.0 {
                let c = col(x).ok_or_else(|| {
                    Error::Precondition(format!("rho({x}) = {r} > 0 outside C_m"))
                })?;
                row[c] += r;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let base = col(bundle.config.base).expect("base lies in A");
    let h = WeightOperator::new(dom.to_vec(), base, rows, false)?;
    Ok(GluedOperator {
        w1,
        w2,
        rho,
        extension,
        h,
    })
}

/// `H(f)` by the defining formula `(1 − ρ) g̃ + ρ f̃`, with `g = E(f↾A)`
/// and `f̃`, `g̃` McShane extensions. `f_on_domain` follows `C_m ∪ A`.
#[allow(non_snake_case)]
pub fn build_H(bundle: &Section4Bundle, glued: &GluedOperator, e: &DistMatrix, f_on_domain: &[f64]) -> Result<LipFunction> {
    let domain = bundle.h_domain();
    let (f_tilde, g_tilde) = glue_parts(bundle, glued, e, &domain, f_on_domain)?;
    Ok(LipFunction::new(
        (0..e.len())
            .map(|x| (1.0 - glued.rho[x]) * g_tilde[x] + glued.rho[x] * f_tilde[x])
            .collect(),
    ))
}

fn glue_parts(
    bundle: &Section4Bundle,
    glued: &GluedOperator,
    e: &DistMatrix,
    domain: &Subset,
    f_on_domain: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if f_on_domain.len() != domain.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a domain of {} points",
            f_on_domain.len(),
            domain.len()
        )));
    }
    let lip_f = lipschitz_constant(f_on_domain, &e.restrict(domain.members()))?;
    let f_tilde = mcshane_extend(f_on_domain, domain, lip_f, e)?.values;
    let f_on_a: Vec<f64> = bundle.net.iter().map(|&a| f_tilde[a]).collect();
    let g_v = apply_weight_operator(&glued.extension.mu, &f_on_a)?.values;
    let lip_g = lipschitz_constant(&g_v, &e.restrict(bundle.v.members()))?;
    let g_tilde = mcshane_extend(&g_v, &bundle.v, lip_g, e)?.values;
    Ok((f_tilde, g_tilde))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnmCertificate {
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub dim_k: usize,
    pub net: Vec<usize>,
    pub e: DistMatrix,
    /// `None` when `e` was not admissible.
    pub h: Option<WeightOperator>,
    #[serde(with = "crate::certificate::float_repr")]
    pub measured: f64,
    pub bound: f64,
    pub restriction_ok: bool,
    pub certificates: CertificateSet,
}

impl RnmCertificate {
    pub fn pass(&self) -> bool {
        self.certificates.all_pass()
    }
}

/// Certifies that `e` lies in `R_{n,m}` through the glued operator, and
/// probes it with McShane extensions of `samples` random ±1 seeds.
pub fn certify_rnm(bundle: &Section4Bundle, e: &DistMatrix, samples: usize, seed: u64, tol: f64) -> Result<RnmCertificate> {
    let dim_k = bundle.dim_k();
    let kc = dim_k as f64 + 1.0;
    let eps = bundle.eps;
    let bound = rnm_bound(dim_k);
    let hash = inputs_hash(&(&bundle.bar_d, e, bundle.n, bundle.m, seed));
    let mut certs = CertificateSet::new();
    let radius = bundle.admission_radius();
    let (gap, gw) = sup_distance_with_witness(e, &bundle.bar_d)?;
    certs.push(
        Certificate::new(
            "rnm.admission",
            "||e - bar_d|| < eps/(480(k+1))",
            Relation::Lt,
            radius,
            gap,
            0.0,
        )
        .with_witness(Witness::new("pair", vec![gw.0, gw.1], gap)),
    );
    let mut out = RnmCertificate {
        n: bundle.n,
        m: bundle.m,
        eps,
        dim_k,
        net: bundle.net.clone(),
        e: e.clone(),
        h: None,
        measured: f64::NAN,
        bound,
        restriction_ok: false,
        certificates: CertificateSet::new(),
    };
    if gap >= radius {
        certs.stamp(&hash);
        out.certificates = certs;
        return Ok(out);
    }

    let (ed2, _) = sup_distance_with_witness(e, &bundle.d2)?;
    certs.push(Certificate::new(
        "rnm.e-d2",
        "||e - d2|| < eps/(12(k+1))",
        Relation::Lt,
        eps / (12.0 * kc),
        ed2,
        0.0,
    ));
    let glued = build_H_operator(bundle, e, tol)?;
    certs.extend(glued.extension.certificates.clone());

    let chain = [
        (&bundle.v1, &glued.w1, "V1 in W1"),
        (&glued.w1, &glued.w2, "W1 in W2"),
        (&glued.w2, &bundle.v2, "W2 in V2"),
        (&bundle.v2, &bundle.v, "V2 in V"),
    ];
    let mut broken = Vec::new();
    for (small, big, label) in chain {
        for x in small.iter().filter(|&x| !big.contains(x)) {
            broken.push(Witness::new(label, vec![x], 0.0));
        }
    }
    certs.push(
        Certificate::new(
            "rnm.chain",
            "V1 in W1 in W2 in V2 in V",
            Relation::Eq,
            0.0,
            broken.len() as f64,
            0.0,
        )
        .with_witnesses(broken.into_iter().take(8)),
    );

    let rho = &glued.rho;
    let c_m = bundle.c_m();
    let c_n = bundle.c_n();
    let off_cm: Vec<usize> = (0..e.len()).filter(|&x| !c_m.contains(x) && rho[x] != 0.0).collect();
    certs.push(count_cert("rnm.rho-support", "rho = 0 off C_m", &off_cm, "point"));
    let on_cn: Vec<usize> = c_n.iter().filter(|&x| rho[x] != 1.0).collect();
    certs.push(count_cert("rnm.rho-one-on-Cn", "rho = 1 on C_n", &on_cn, "point"));
    let off_v: Vec<usize> = (0..e.len()).filter(|&x| !bundle.v.contains(x) && rho[x] != 1.0).collect();
    certs.push(count_cert("rnm.rho-one-off-V", "rho = 1 off V", &off_v, "point"));
    let rho_lip = lipschitz_constant(rho, e)?;
    certs.push(Certificate::new(
        "rnm.rho-lip",
        "Lip_e(rho) <= 30(k+1)/eps",
        Relation::Le,
        30.0 * kc / eps,
        rho_lip,
        tol,
    ));

    // Rows on C_n ∪ A must be exact indicators.
    let h = &glued.h;
    let mut restriction_err: f64 = 0.0;
    for x in c_n.iter().chain(bundle.net.iter().copied()) {
        let c = h.domain.binary_search(&x).expect("C_n and A lie in the domain");
        for (j, &w) in h.rows[x].iter().enumerate() {
            restriction_err = restriction_err.max((w - if j == c { 1.0 } else { 0.0 }).abs());
        }
    }
    certs.push(Certificate::new(
        "rnm.restriction",
        "H(f) = f on C_n and A",
        Relation::Eq,
        0.0,
        restriction_err,
        0.0,
    ));

    let d_dom = e.restrict(&h.domain);
    let norm = operator_norm(h, &d_dom, e)?;
    certs.push(
        Certificate::new(
            "rnm.H-norm",
            "||H|| <= (150 k + 152)(Gamma + 1)",
            Relation::Le,
            bound,
            norm.value,
            tol,
        )
        .with_witnesses(norm.witness.map(|(x, y)| Witness::new("pair", vec![x, y], norm.value))),
    );

    // Random probes: McShane extensions of ±1 seeds on C_m ∪ A.
    let domain = bundle.h_domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_formula: f64 = 0.0;
    let mut worst_lip: f64 = 0.0;
    let mut worst_product: f64 = 0.0;
    for _ in 0..samples {
        let f = random_unit_function(&domain, bundle.config.base, &d_dom, &mut rng)?;
        let via_op = apply_weight_operator(h, &f)?.values;
        let (f_tilde, g_tilde) = glue_parts(bundle, &glued, e, &domain, &f)?;
        let u: Vec<f64> = f_tilde.iter().zip(&g_tilde).map(|(a, b)| a - b).collect();
        let urho: Vec<f64> = u.iter().zip(rho).map(|(a, b)| a * b).collect();
        for x in 0..e.len() {
            let formula = (1.0 - rho[x]) * g_tilde[x] + rho[x] * f_tilde[x];
            worst_formula = worst_formula.max((formula - via_op[x]).abs());
        }
        worst_lip = worst_lip.max(lipschitz_constant(&via_op, e)?);
        let lu = lipschitz_constant(&u, e)?;
        if lu > 0.0 {
            worst_product = worst_product.max(lipschitz_constant(&urho, e)? / lu);
        }
    }
    certs.push(Certificate::new(
        "rnm.formula",
        "operator rows reproduce (1 - rho) E(f|A) + rho f",
        Relation::Le,
        0.0,
        worst_formula,
        1e-9,
    ));
    certs.push(Certificate::new(
        "rnm.sampled-norm",
        "Lip_e(H f) on sampled unit f stays below the measured norm",
        Relation::Le,
        norm.value,
        worst_lip,
        tol,
    ));
    certs.push(Certificate::new(
        "rnm.product",
        "Lip_e(u rho) <= (150 k + 151) Lip_e(u)",
        Relation::Le,
        150.0 * dim_k as f64 + 151.0,
        worst_product,
        tol,
    ));
    // Pointwise continuity of H on the unit ball holds on any finite space.
    certs.push(Certificate::new(
        "rnm.dual-operator",
        "H is weak* continuous",
        Relation::Eq,
        0.0,
        0.0,
        0.0,
    ));

    certs.stamp(&hash);
    out.restriction_ok = restriction_err == 0.0;
    out.measured = norm.value;
    out.h = Some(glued.h);
    out.certificates = certs;
    Ok(out)
}

/// McShane extension to `domain` of random ±1 values on a few seed points
/// (the base point is pinned to 0), scaled to Lipschitz constant 1.
fn random_unit_function(domain: &Subset, base: usize, d_dom: &DistMatrix, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let members = domain.members();
    let base_col = members.binary_search(&base).expect("base lies in the domain");
    let k = members.len();
    let take = rng.gen_range(1..=k.min(8));
    let mut cols: Vec<usize> = (0..k).filter(|&c| c != base_col).collect();
    cols.shuffle(rng);
    cols.truncate(take);
    cols.push(base_col);
    cols.sort_unstable();
    let values: Vec<f64> = cols
        .iter()
        .map(|&c| if c == base_col { 0.0 } else if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let seeds = Subset::new(k, cols)?;
    let lip = lipschitz_constant(&values, &d_dom.restrict(seeds.members()))?;
    if lip == 0.0 {
        return Ok(vec![0.0; k]);
    }
    let f = mcshane_extend(&values, &seeds, lip, d_dom)?;
    Ok(f.values.iter().map(|v| v / lip).collect())
}
