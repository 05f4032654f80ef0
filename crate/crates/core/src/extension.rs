//! Partition-of-unity extension operators over a net and cover, the metrics
//! `tilde_d`, `hat_d`, `bar_d` they induce, and the perturbed operator `G`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, CertificateSet, Relation, Witness};
use crate::cover::{verify_net_cover, NetAndCover};
use crate::error::{Error, Result};
use crate::free_norm::{
    free_space_norm, lipschitz_constant_with_witness, operator_norm, OperatorNorm, WeightOperator,
};
use crate::metric::{
    add_pseudometrics, dist_to_complement, hat_metric, shortest_path_closure, sup_distance_with_witness,
    validate_metric_with_tol, DistMatrix,
};

/// `λ_i(x) = d(x, U_iᶜ) / Σ_j d(x, U_jᶜ)`. A set equal to the whole space
/// has `d(x, ∅) = ∞`; all such sets share the weight equally.
pub fn partition_of_unity(d: &DistMatrix, nc: &NetAndCover) -> Result<WeightOperator> {
    if d.len() != nc.points {
        return Err(Error::DimensionMismatch(format!(
            "cover over {} points, metric on {}",
            nc.points,
            d.len()
        )));
    }
    let masks = nc.masks();
    let rows = (0..d.len())
        .map(|x| {
            let dist: Vec<f64> = masks.iter().map(|m| dist_to_complement(d, x, m)).collect();
            let full = dist.iter().filter(|v| v.is_infinite()).count();
            if full > 0 {
                let w = 1.0 / full as f64;
                return Ok(dist.iter().map(|v| if v.is_infinite() { w } else { 0.0 }).collect());
            }
            let total: f64 = dist.iter().sum();
            if total <= 0.0 {
                return Err(Error::Uncovered(x));
            }
            Ok(dist.iter().map(|v| v / total).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    WeightOperator::new(nc.net.clone(), 0, rows, true)
}

/// `tilde(x, y) = ‖Σ_i (w_i(x) − w_i(y)) δ_{a_i}‖` in the free space over the
/// domain with metric `d_a`. A difference of the form `c(δ_i − δ_j)` is
/// evaluated as `|c| d_a(i, j)` directly.
pub fn tilde_metric(op: &WeightOperator, d_a: &DistMatrix) -> Result<DistMatrix> {
    if d_a.len() != op.domain_len() {
        return Err(Error::DimensionMismatch(format!(
            "domain of {} points, metric on {}",
            op.domain_len(),
            d_a.len()
        )));
    }
    let n = op.num_points();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|x| {
            (x + 1..n)
                .map(|y| {
                    let mu = op.difference(x, y);
                    match mu.terms() {
                        [] => Ok(0.0),
                        &[(i, a), (j, b)] if a == -b => Ok(a.abs() * d_a.get(i, j)),
                        _ => free_space_norm(&mu, d_a, op.base),
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = DistMatrix::zeros(n);
    for (x, row) in upper.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            out.set(x, x + 1 + k, v);
        }
    }
    Ok(out)
}

/// `min_x Σ_i m(x, U_iᶜ)` with its minimiser.
pub fn min_sum_dist_to_complements(m: &DistMatrix, nc: &NetAndCover) -> (f64, usize) {
    let masks = nc.masks();
    (0..m.len())
        .map(|x| (masks.iter().map(|mask| dist_to_complement(m, x, mask)).sum::<f64>(), x))
        .fold((f64::INFINITY, 0), |acc, v| if v.0 < acc.0 { v } else { acc })
}

/// Largest `Lip_m(w_i)` over the columns of `op`, with column and pair.
pub fn max_column_lipschitz(op: &WeightOperator, m: &DistMatrix) -> Result<(f64, usize, Option<(usize, usize)>)> {
    let mut best = (0.0, 0, None);
    for i in 0..op.domain_len() {
        let col: Vec<f64> = op.rows.iter().map(|r| r[i]).collect();
        let (l, w) = lipschitz_constant_with_witness(&col, m)?;
        if l > best.0 {
            best = (l, i, w);
        }
    }
    Ok(best)
}

/// Everything built from a metric `d`, a scale `eps` and a verified net and
/// cover: the partition `λ`, the metrics, and the extension operator `E`
/// (the weights of `λ` read over `bar_d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop33Bundle {
    pub eps: f64,
    pub r: usize,
    pub d: DistMatrix,
    pub net_cover: NetAndCover,
    pub lambda: WeightOperator,
    pub tilde_d: DistMatrix,
    pub hat_d: DistMatrix,
    pub bar_d: DistMatrix,
    pub e_norm: OperatorNorm,
    pub certificates: CertificateSet,
}

impl Prop33Bundle {
    /// The extension operator `E`.
    pub fn e_operator(&self) -> &WeightOperator {
        &self.lambda
    }

    /// Radius of admissible perturbations `e` of `bar_d`.
    pub fn admission_radius(&self) -> f64 {
        self.eps / (12.0 * (self.r as f64 + 1.0))
    }

    /// `88(r+1)(2r+3)`.
    pub fn g_bound(&self) -> f64 {
        g_bound(self.r)
    }
}

pub fn g_bound(r: usize) -> f64 {
    let r = r as f64;
    88.0 * (r + 1.0) * (2.0 * r + 3.0)
}

fn max_abs_diff_on(a: &DistMatrix, b: &DistMatrix, pts: &[usize]) -> (f64, Option<(usize, usize)>) {
    let mut best = (0.0, None);
    for (k, &x) in pts.iter().enumerate() {
        for &y in &pts[k + 1..] {
            let v = (a.get(x, y) - b.get(x, y)).abs();
            if v > best.0 {
                best = (v, Some((x, y)));
            }
        }
    }
    best
}

fn pair_witness(label: &str, w: Option<(usize, usize)>, value: f64) -> Option<Witness> {
    w.map(|(x, y)| Witness::new(label, vec![x, y], value))
}

fn abort_on_failure(certs: &CertificateSet) -> Result<()> {
    match certs.first_failure() {
        Some(c) => Err(Error::CertificateFailed(Box::new(c.clone()))),
        None => Ok(()),
    }
}

pub fn build_prop33(d: &DistMatrix, eps: f64, nc: &NetAndCover, tol: f64) -> Result<Prop33Bundle> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if (nc.eps - eps).abs() > 0.0 {
        return Err(Error::InvalidParameter(format!(
            "net and cover were built for eps {}, not {eps}",
            nc.eps
        )));
    }
    let mut certs = verify_net_cover(nc, d);
    abort_on_failure(&certs)?;
    let r = nc.order_bound;

    let lambda = partition_of_unity(d, nc)?;
    let d_a = d.restrict(&nc.net);
    let tilde_d = tilde_metric(&lambda, &d_a)?;
    let hat_d = hat_metric(d, &nc.net_subset())?;
    let bar_d = add_pseudometrics(&tilde_d, &hat_d)?;

    let (on_a, on_a_w) = max_abs_diff_on(&bar_d, d, &nc.net);
    certs.push(
        Certificate::new(
            "prop33.bar-extends-d-on-A",
            "bar_d = d on A x A",
            Relation::Eq,
            0.0,
            on_a,
            0.0,
        )
        .with_witnesses(pair_witness("pair in A", on_a_w, on_a)),
    );
    let report = validate_metric_with_tol(&bar_d, tol);
    certs.push(Certificate::new(
        "prop33.bar-is-metric",
        "bar_d satisfies the metric axioms",
        Relation::Eq,
        0.0,
        report.violations.len() as f64,
        0.0,
    ));
    let (t, tw) = sup_distance_with_witness(&tilde_d, d)?;
    certs.push(
        Certificate::new("prop33.tilde-close", "||tilde_d - d|| < 3 eps", Relation::Lt, 3.0 * eps, t, tol)
            .with_witness(Witness::new("pair", vec![tw.0, tw.1], t)),
    );
    let (h, hw) = sup_distance_with_witness(&hat_d, &DistMatrix::zeros(d.len()))?;
    certs.push(
        Certificate::new("prop33.hat-small", "||hat_d|| <= eps", Relation::Le, eps, h, tol)
            .with_witness(Witness::new("pair", vec![hw.0, hw.1], h)),
    );
    let (b, bw) = sup_distance_with_witness(&bar_d, d)?;
    certs.push(
        Certificate::new("prop33.bar-close", "||d - bar_d|| < 4 eps", Relation::Lt, 4.0 * eps, b, tol)
            .with_witness(Witness::new("pair", vec![bw.0, bw.1], b)),
    );
    certs.push(Certificate::new(
        "prop33.E-extension",
        "E(f) = f on A",
        Relation::Eq,
        0.0,
        lambda.extension_defect(),
        0.0,
    ));

    let e_norm = operator_norm(&lambda, &bar_d.restrict(&nc.net), &bar_d)?;
    // Lip_0 of a single base point is {0}, so E is then the zero map.
    let expected = if nc.net.len() > 1 { 1.0 } else { 0.0 };
    certs.push(
        Certificate::new("prop33.E-norm", "||E|| = 1", Relation::Eq, expected, e_norm.value, 1e-6)
            .with_witnesses(pair_witness("pair", e_norm.witness, e_norm.value)),
    );

    let (lip, col, lw) = max_column_lipschitz(&lambda, &bar_d)?;
    certs.push(
        Certificate::new(
            "prop33.lambda-lip",
            "Lip_bar_d(lambda_i) <= 3/eps",
            Relation::Le,
            3.0 / eps,
            lip,
            tol,
        )
        .with_witnesses(lw.map(|(x, y)| Witness::new(format!("lambda_{col}"), vec![x, y], lip))),
    );

    let mut bundle = Prop33Bundle {
        eps,
        r,
        d: d.clone(),
        net_cover: nc.clone(),
        lambda,
        tilde_d,
        hat_d,
        bar_d,
        e_norm,
        certificates: CertificateSet::new(),
    };
    certs.push(verify_sum_dist_bound(&bundle, tol));
    abort_on_failure(&certs)?;
    bundle.certificates = certs;
    Ok(bundle)
}

/// `Σ_i bar_d(x, U_iᶜ) ≥ eps/3` at every point.
pub fn verify_sum_dist_bound(bundle: &Prop33Bundle, tol: f64) -> Certificate {
    let (v, x) = min_sum_dist_to_complements(&bundle.bar_d, &bundle.net_cover);
    Certificate::new(
        "prop33.sum-dist",
        "sum_i bar_d(x, U_i^c) >= eps/3",
        Relation::Ge,
        bundle.eps / 3.0,
        v,
        tol,
    )
    .with_witness(Witness::new("point", vec![x], v))
}

/// The partition `μ` built from an admissible perturbation `e` of `bar_d`,
/// and the extension operator `G` it defines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedBundle {
    pub e: DistMatrix,
    pub mu: WeightOperator,
    pub g_norm: OperatorNorm,
    pub bound: f64,
    pub certificates: CertificateSet,
}

impl PerturbedBundle {
    pub fn g_operator(&self) -> &WeightOperator {
        &self.mu
    }

    /// `bound / measured`.
    pub fn headroom(&self) -> f64 {
        self.bound / self.g_norm.value
    }
}

#[allow(non_snake_case)]
pub fn build_perturbed_G(bundle: &Prop33Bundle, e: &DistMatrix, tol: f64) -> Result<PerturbedBundle> {
    let radius = bundle.admission_radius();
    let (gap, gw) = sup_distance_with_witness(e, &bundle.bar_d)?;
    if gap > radius {
        return Err(Error::Admission { measured: gap, radius });
    }
    let report = validate_metric_with_tol(e, tol);
    if !report.is_valid() {
        return Err(Error::InvalidMetric(report.describe()));
    }
    let eps = bundle.eps;
    let r = bundle.r as f64;
    let nc = &bundle.net_cover;
    let mut certs = CertificateSet::new();
    certs.push(
        Certificate::new(
            "perturbed.admission",
            "||e - bar_d|| <= eps/(12(r+1))",
            Relation::Le,
            radius,
            gap,
            0.0,
        )
        .with_witness(Witness::new("pair", vec![gw.0, gw.1], gap)),
    );

    let mu = partition_of_unity(e, nc)?;
    let (s, sx) = min_sum_dist_to_complements(e, nc);
    certs.push(
        Certificate::new("perturbed.sum-dist", "sum_i e(x, U_i^c) >= eps/4", Relation::Ge, eps / 4.0, s, tol)
            .with_witness(Witness::new("point", vec![sx], s)),
    );
    let (lip, col, lw) = max_column_lipschitz(&mu, e)?;
    certs.push(
        Certificate::new(
            "perturbed.mu-lip",
            "Lip_e(mu_i) <= 4(2r+3)/eps",
            Relation::Le,
            4.0 * (2.0 * r + 3.0) / eps,
            lip,
            tol,
        )
        .with_witnesses(lw.map(|(x, y)| Witness::new(format!("mu_{col}"), vec![x, y], lip))),
    );

    // sup of Lip_bar_d(f) over the unit ball of Lip_0(A, e)
    let mut ratio: f64 = 0.0;
    let mut rw = None;
    for (k, &a) in nc.net.iter().enumerate() {
        for &b in &nc.net[k + 1..] {
            let q = e.get(a, b) / bundle.bar_d.get(a, b);
            if q > ratio {
                ratio = q;
                rw = Some((a, b));
            }
        }
    }
    certs.push(
        Certificate::new(
            "perturbed.interior",
            "Lip_bar_d(f) <= 1 + 1/(4(r+1)) on the unit ball of Lip_0(A, e)",
            Relation::Le,
            1.0 + 1.0 / (4.0 * (r + 1.0)),
            ratio,
            tol,
        )
        .with_witnesses(pair_witness("net pair", rw, ratio)),
    );
    certs.push(Certificate::new(
        "perturbed.G-extension",
        "G(f) = f on A",
        Relation::Eq,
        0.0,
        mu.extension_defect(),
        0.0,
    ));
    let g_norm = operator_norm(&mu, &e.restrict(&nc.net), e)?;
    let bound = g_bound(bundle.r);
    certs.push(
        Certificate::new("perturbed.G-norm", "||G|| <= 88(r+1)(2r+3)", Relation::Le, bound, g_norm.value, tol)
            .with_witnesses(pair_witness("pair", g_norm.witness, g_norm.value)),
    );
    Ok(PerturbedBundle {
        e: e.clone(),
        mu,
        g_norm,
        bound,
        certificates: certs,
    })
}

/// A seeded metric `e` with `‖e − base‖∞ < radius`.
///
/// Symmetric noise of amplitude `0.99 radius` is added and the result is
/// closed under shortest paths; if the closure moved too far the amplitude
/// is halved. As a last resort the noise is one-sided, which the closure
/// cannot push below `base`.
pub fn admissible_perturbation(base: &DistMatrix, radius: f64, seed: u64) -> Result<DistMatrix> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    let n = base.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..n * (n.saturating_sub(1)) / 2)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    let build = |f: &dyn Fn(f64) -> f64| {
        let mut k = 0;
        let w = DistMatrix::from_upper(n, |x, y| {
            let v = base.get(x, y) + f(noise[k]);
            k += 1;
            v
        });
        shortest_path_closure(&w)
    };
    let min_pos = base.min_positive().unwrap_or(radius);
    let mut amp = 0.99 * radius;
    for _ in 0..8 {
        // keep every weight above half its base value
        let a = amp.min(0.5 * min_pos);
        let e = build(&|u| a * u);
        if sup_distance_with_witness(&e, base)?.0 < radius && validate_metric_with_tol(&e, 0.0).is_valid() {
            return Ok(e);
        }
        amp /= 2.0;
    }
    let a = 0.99 * radius;
    Ok(build(&|u| a * 0.5 * (u + 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::{brick_cover, build_net_cover, singleton_cover};
    use crate::free_norm::apply_weight_operator;
    use crate::metric::{make_grid_space, sup_distance, Ground};

    fn line_bundle(points: usize, eps: f64) -> Prop33Bundle {
        let g = make_grid_space(&[points], 1.0 / (points - 1) as f64, Ground::Linf).unwrap();
        let refiner = brick_cover(&g, eps).unwrap();
        let nc = build_net_cover(&g.metric, g.base, eps, &refiner).unwrap();
        build_prop33(&g.metric, eps, &nc, 1e-7).unwrap()
    }

    #[test]
    fn single_set_partition_is_constant() {
        let d = DistMatrix::from_upper(3, |i, j| (i as f64 - j as f64).abs());
        let nc = NetAndCover {
            points: 3,
            net: vec![0],
            sets: vec![vec![0, 1, 2]],
            eps: 10.0,
            order_bound: 0,
        };
        let l = partition_of_unity(&d, &nc).unwrap();
        assert!(l.rows.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn partition_is_indicator_on_the_net() {
        let b = line_bundle(33, 0.25);
        assert_eq!(b.lambda.extension_defect(), 0.0);
        let f: Vec<f64> = (0..b.net_cover.net.len()).map(|i| (i as f64).sin()).collect();
        let ext = apply_weight_operator(&b.lambda, &f).unwrap();
        for (i, &a) in b.net_cover.net.iter().enumerate() {
            assert_eq!(ext.values[a], f[i]);
        }
    }

    #[test]
    fn two_point_space_is_unchanged() {
        let d = DistMatrix::from_upper(2, |_, _| 1.0);
        let nc = build_net_cover(&d, 0, 1.0, &singleton_cover(2)).unwrap();
        assert_eq!(nc.net, vec![0, 1]);
        let b = build_prop33(&d, 1.0, &nc, 1e-7).unwrap();
        assert_eq!(b.bar_d, d);
        assert_eq!(b.e_norm.value, 1.0);
        assert!(b.certificates.all_pass());
    }

    #[test]
    fn line_bundle_certificates() {
        for eps in [0.25, 0.125] {
            let b = line_bundle(65, eps);
            assert!(b.certificates.all_pass(), "{:?}", b.certificates.first_failure());
            assert!(sup_distance(&b.bar_d, &b.d).unwrap() < 4.0 * eps);
            assert!((b.e_norm.value - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tilde_equals_d_on_net_pairs() {
        let b = line_bundle(33, 0.25);
        for &a in &b.net_cover.net {
            for &c in &b.net_cover.net {
                assert_eq!(b.tilde_d.get(a, c), b.d.get(a, c));
            }
        }
    }

    #[test]
    fn unperturbed_g_is_e() {
        let b = line_bundle(33, 0.25);
        let p = build_perturbed_G(&b, &b.bar_d, 1e-7).unwrap();
        assert_eq!(p.mu, b.lambda);
        assert!((p.g_norm.value - 1.0).abs() < 1e-9);
        assert!(p.certificates.all_pass());
    }

    #[test]
    fn perturbations_are_admissible_and_seeded() {
        let b = line_bundle(33, 0.25);
        let radius = b.admission_radius();
        let e1 = admissible_perturbation(&b.bar_d, radius, 7).unwrap();
        let e2 = admissible_perturbation(&b.bar_d, radius, 7).unwrap();
        assert_eq!(e1, e2);
        assert!(sup_distance(&e1, &b.bar_d).unwrap() < radius);
        let p = build_perturbed_G(&b, &e1, 1e-7).unwrap();
        assert!(p.certificates.all_pass(), "{:?}", p.certificates.first_failure());
    }

    #[test]
    fn admission_radius_is_enforced() {
        let b = line_bundle(33, 0.25);
        let far = b.bar_d.map(|v| v * 1.5);
        assert!(matches!(build_perturbed_G(&b, &far, 1e-7), Err(Error::Admission { .. })));
    }
}
