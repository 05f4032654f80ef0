//! End-to-end pipelines behind the CLI. Every report carries the inputs it
//! needs to be re-verified from its JSON alone.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bap::{bap_certificate, BapReport, BapStep};
use crate::certificate::{inputs_hash, Certificate, CertificateSet, Relation};
use crate::config::{ExperimentConfig, Params, Pipeline};
use crate::cover::{brick_cover, brick_cover_disjoint, build_net_cover, singleton_cover, subgrid, verify_net_cover, CoverFamily, NetAndCover};
use crate::error::{Error, Result};
use crate::extension::{admissible_perturbation, build_perturbed_G, build_prop33, g_bound, Prop33Bundle};
use crate::gluing::{build_section4, certify_rnm, choose_eps, GluingConfig, RnmCertificate, Section4Bundle};
use crate::metric::{dist_to_members, sup_distance, validate_metric_with_tol, DistMatrix, FiniteMetricSpace, Subset};

/// Refiner for Lemma-type net constructions: bricks on grids, singletons
/// elsewhere. With `dim` set, bricks whose order could exceed it are cut
/// disjoint.
pub fn default_refiner(space: &FiniteMetricSpace, eps: f64, dim: Option<usize>) -> Result<CoverFamily> {
    if space.grid.is_none() {
        return Ok(singleton_cover(space.len()));
    }
    let bricks = brick_cover(space, eps)?;
    match (dim, bricks.order_bound) {
        (Some(r), Some(b)) if b > r => brick_cover_disjoint(space, eps),
        _ => Ok(bricks),
    }
}

pub fn net_cover_for(space: &FiniteMetricSpace, eps: f64, dim: Option<usize>) -> Result<NetAndCover> {
    let refiner = default_refiner(space, eps, dim)?;
    build_net_cover(&space.metric, space.base, eps, &refiner)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub eps: f64,
    pub metric: DistMatrix,
    pub net_cover: NetAndCover,
    pub certificates: CertificateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRun {
    pub seed: u64,
    pub radius: f64,
    pub gap: f64,
    #[serde(with = "crate::certificate::float_repr")]
    pub g_norm: f64,
    pub bound: f64,
    #[serde(with = "crate::certificate::float_repr")]
    pub headroom: f64,
    pub certificates: CertificateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop33Run {
    pub n: usize,
    pub eps: f64,
    pub bundle: Prop33Bundle,
    pub perturbations: Vec<PerturbationRun>,
    /// Bundle, perturbation and density certificates together.
    pub certificates: CertificateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section4Run {
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub admission_radius: f64,
    pub bundle: Section4Bundle,
    pub rnm: Vec<RnmCertificate>,
    pub certificates: CertificateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub seed: u64,
    pub radius: f64,
    pub gap: f64,
    pub base: DistMatrix,
    pub metric: DistMatrix,
    pub certificates: CertificateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "snake_case")]
pub enum Report {
    Cover(CoverReport),
    Prop33(Box<Prop33Run>),
    Section4(Box<Section4Run>),
    Bap(BapReport),
    Perturb(PerturbReport),
}

impl Report {
    pub fn certificates(&self) -> &CertificateSet {
        match self {
            Report::Cover(r) => &r.certificates,
            Report::Prop33(r) => &r.certificates,
            Report::Section4(r) => &r.certificates,
            Report::Bap(r) => &r.certificates,
            Report::Perturb(r) => &r.certificates,
        }
    }

    pub fn pass(&self) -> bool {
        self.certificates().all_pass()
    }

    /// Recomputes the headline claims from the data stored in the report.
    pub fn reverify(&self, tol: f64) -> Result<CertificateSet> {
        let mut out = CertificateSet::new();
        match self {
            Report::Cover(r) => out.extend(verify_net_cover(&r.net_cover, &r.metric)),
            Report::Prop33(r) => {
                let b = &r.bundle;
                let gap = sup_distance(&b.d, &b.bar_d)?;
                out.push(Certificate::new("reverify.bar-close", "||d - bar_d|| < 4 eps", Relation::Lt, 4.0 * b.eps, gap, 0.0));
                let net = &b.net_cover.net;
                let on_a = sup_distance(&b.d.restrict(net), &b.bar_d.restrict(net))?;
                out.push(Certificate::new("reverify.bar-on-A", "bar_d = d on A x A", Relation::Eq, 0.0, on_a, 0.0));
                out.push(Certificate::new(
                    "reverify.E-extension",
                    "E(f) = f on A",
                    Relation::Eq,
                    0.0,
                    b.lambda.extension_defect(),
                    0.0,
                ));
                let metric_errors = validate_metric_with_tol(&b.bar_d, tol).violations.len();
                out.push(Certificate::new("reverify.bar-is-metric", "bar_d is a metric", Relation::Eq, 0.0, metric_errors as f64, 0.0));
                for p in &r.perturbations {
                    out.push(Certificate::new(
                        format!("reverify.G-norm[{}]", p.seed),
                        "||G|| <= 88(r+1)(2r+3)",
                        Relation::Le,
                        p.bound,
                        p.g_norm,
                        tol,
                    ));
                }
            }
            Report::Section4(r) => {
                let b = &r.bundle;
                let gap = sup_distance(&b.bar_d, &b.config.d)?;
                out.push(Certificate::new("reverify.bar-d", "||bar_d - d|| < 5 eps", Relation::Lt, 5.0 * b.eps, gap, tol));
                for (i, c) in r.rnm.iter().enumerate() {
                    let admission = sup_distance(&c.e, &b.bar_d)?;
                    out.push(Certificate::new(
                        format!("reverify.admission[{i}]"),
                        "||e - bar_d|| < eps/(480(k+1))",
                        Relation::Lt,
                        b.admission_radius(),
                        admission,
                        0.0,
                    ));
                    if let Some(h) = &c.h {
                        let mut err: f64 = 0.0;
                        for x in b.c_n().iter().chain(b.net.iter().copied()) {
                            let col = h.domain.binary_search(&x).map_err(|_| {
                                Error::Precondition(format!("point {x} missing from the domain of H"))
                            })?;
                            for (j, &w) in h.rows[x].iter().enumerate() {
                                err = err.max((w - if j == col { 1.0 } else { 0.0 }).abs());
                            }
                        }
                        out.push(Certificate::new(
                            format!("reverify.restriction[{i}]"),
                            "H(f) = f on C_n and A",
                            Relation::Eq,
                            0.0,
                            err,
                            0.0,
                        ));
                        out.push(Certificate::new(
                            format!("reverify.H-norm[{i}]"),
                            "||H|| <= (150 k + 152)(Gamma + 1)",
                            Relation::Le,
                            c.bound,
                            c.measured,
                            tol,
                        ));
                    }
                }
            }
            Report::Bap(r) => {
                for row in &r.rows {
                    out.push(Certificate::new(
                        format!("reverify.defect[{}]", row.n),
                        "defect(n) <= C eps_n",
                        Relation::Le,
                        r.envelope * row.eps,
                        row.defect,
                        1e-9,
                    ));
                }
            }
            Report::Perturb(r) => {
                let gap = sup_distance(&r.metric, &r.base)?;
                out.push(Certificate::new("reverify.admission", "||e - d|| < radius", Relation::Lt, r.radius, gap, 0.0));
                let errors = validate_metric_with_tol(&r.metric, tol).violations.len();
                out.push(Certificate::new("reverify.is-metric", "e is a metric", Relation::Eq, 0.0, errors as f64, 0.0));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub pipeline: Pipeline,
    pub seed: u64,
    pub n: usize,
    pub report: Report,
}

impl PipelineRun {
    /// `{pipeline}-{seed}-{n}.json`.
    pub fn file_name(&self) -> String {
        format!("{}-{}-{}.json", self.pipeline.name(), self.seed, self.n)
    }

    pub fn write_json(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, serde_json::to_string(self)?)?;
        Ok(path)
    }

    pub fn pass(&self) -> bool {
        self.report.pass()
    }
}

/// Independent seeds for the `count` perturbations of one run.
pub fn derived_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<PipelineRun>> {
    cfg.validate()?;
    let space = cfg.space.build()?;
    let wrap = |n: usize, report: Report| PipelineRun {
        pipeline: cfg.pipeline,
        seed: cfg.seed,
        n,
        report,
    };
    match cfg.pipeline {
        Pipeline::BuildCover => cfg
            .scales()
            .into_iter()
            .map(|(n, eps)| Ok(wrap(n, Report::Cover(run_build_cover(&space, eps, cfg.params.dim)?))))
            .collect(),
        Pipeline::Prop33 => cfg
            .scales()
            .into_iter()
            .map(|(n, eps)| Ok(wrap(n, Report::Prop33(Box::new(run_prop33(&space, n, eps, &cfg.params, cfg.seed, cfg.tol)?)))))
            .collect(),
        Pipeline::Section4 => cfg
            .params
            .n_values
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let eps = cfg.params.eps_schedule.get(i).copied();
                Ok(wrap(n, Report::Section4(Box::new(run_section4(&space, n, eps, cfg)?))))
            })
            .collect(),
        Pipeline::Bap => {
            let report = run_bap(&space, cfg)?;
            let n = report.rows.iter().map(|r| r.n).max().unwrap_or(0);
            Ok(vec![wrap(n, Report::Bap(report))])
        }
        Pipeline::Perturb => {
            let radius = cfg
                .params
                .radius
                .ok_or_else(|| Error::InvalidParameter("the perturb pipeline needs params.radius".into()))?;
            Ok(vec![wrap(1, Report::Perturb(run_perturb(&space.metric, radius, cfg.seed, cfg.tol)?))])
        }
    }
}

pub fn run_build_cover(space: &FiniteMetricSpace, eps: f64, dim: Option<usize>) -> Result<CoverReport> {
    let nc = net_cover_for(space, eps, dim)?;
    let certificates = verify_net_cover(&nc, &space.metric);
    Ok(CoverReport {
        eps,
        metric: space.metric.clone(),
        net_cover: nc,
        certificates,
    })
}

/// Net and cover, the extension bundle, a sweep of admissible
/// perturbations and the density check on the net.
pub fn run_prop33(space: &FiniteMetricSpace, n: usize, eps: f64, params: &Params, seed: u64, tol: f64) -> Result<Prop33Run> {
    let nc = net_cover_for(space, eps, params.dim)?;
    let bundle = build_prop33(&space.metric, eps, &nc, tol)?;
    let mut certs = bundle.certificates.clone();
    let net = bundle.net_cover.net_subset();
    let worst = (0..space.len())
        .map(|x| dist_to_members(&space.metric, x, net.members()))
        .fold(0.0, f64::max);
    certs.push(Certificate::new(
        "bn.density",
        "the net is eps-dense in T",
        Relation::Le,
        eps,
        worst,
        0.0,
    ));
    let radius = params.radius_fraction * bundle.admission_radius();
    let mut perturbations = Vec::new();
    for s in derived_seeds(seed, params.perturbations) {
        let e = admissible_perturbation(&bundle.bar_d, radius, s)?;
        let gap = sup_distance(&e, &bundle.bar_d)?;
        let g = build_perturbed_G(&bundle, &e, tol)?;
        certs.extend(g.certificates.clone());
        perturbations.push(PerturbationRun {
            seed: s,
            radius,
            gap,
            g_norm: g.g_norm.value,
            bound: g.bound,
            headroom: g.headroom(),
            certificates: g.certificates,
        });
    }
    certs.stamp(&inputs_hash(&(&space.metric, eps, n, seed)));
    Ok(Prop33Run {
        n,
        eps,
        bundle,
        perturbations,
        certificates: certs,
    })
}

pub fn gluing_config(space: &FiniteMetricSpace, cfg: &ExperimentConfig) -> Result<GluingConfig> {
    let k = Subset::new(space.len(), cfg.params.k_indices.clone())?;
    let base = if k.contains(space.base) {
        space.base
    } else {
        *k.members().first().ok_or(Error::EmptySet)?
    };
    let dim_k = match cfg.params.dim {
        Some(r) => r,
        None => space
            .grid
            .as_ref()
            .and_then(|g| subgrid(g, &k))
            .map_or(0, |(g, _)| g.nominal_dim()),
    };
    Ok(GluingConfig {
        d: space.metric.clone(),
        k,
        base,
        thresholds: cfg.params.thresholds.clone(),
        dim_k,
        grid: space.grid.clone(),
    })
}

/// The gluing bundle at index `n`, certified for `bar_d` itself and for
/// seeded admissible perturbations of it.
pub fn run_section4(space: &FiniteMetricSpace, n: usize, eps: Option<f64>, cfg: &ExperimentConfig) -> Result<Section4Run> {
    let gc = gluing_config(space, cfg)?;
    let eps = match eps {
        Some(e) => e,
        None => choose_eps(&gc, n, cfg.params.nu)?,
    };
    let bundle = build_section4(&gc, n, eps, cfg.tol)?;
    let radius = cfg.params.radius_fraction * bundle.admission_radius();
    let seeds = derived_seeds(cfg.seed, cfg.params.perturbations);
    let mut certs = bundle.certificates.clone();
    let mut rnm = vec![certify_rnm(&bundle, &bundle.bar_d, cfg.params.samples, cfg.seed, cfg.tol)?];
    for s in seeds {
        let e = admissible_perturbation(&bundle.bar_d, radius, s)?;
        rnm.push(certify_rnm(&bundle, &e, cfg.params.samples, s, cfg.tol)?);
    }
    for c in &rnm {
        certs.extend(c.certificates.clone());
    }
    Ok(Section4Run {
        n,
        m: bundle.m,
        eps,
        admission_radius: bundle.admission_radius(),
        bundle,
        rnm,
        certificates: certs,
    })
}

/// Extension operators on shrinking nets, checked against the defect
/// envelope. The density claimed at step `n` is `1/n` when the scales come
/// from `n`, and `eps` itself for an explicit schedule.
pub fn run_bap(space: &FiniteMetricSpace, cfg: &ExperimentConfig) -> Result<BapReport> {
    let from_n = cfg.params.eps_schedule.is_empty();
    let mut steps = Vec::new();
    let mut r = 0;
    for (n, eps) in cfg.scales() {
        let nc = net_cover_for(space, eps, cfg.params.dim)?;
        let bundle = build_prop33(&space.metric, eps, &nc, cfg.tol)?;
        r = r.max(bundle.r);
        steps.push(BapStep {
            n,
            eps: if from_n { 1.0 / n as f64 } else { eps },
            op: bundle.lambda,
        });
    }
    let lambda = cfg.params.lambda.unwrap_or_else(|| g_bound(r));
    bap_certificate(&steps, &space.metric, lambda, cfg.params.envelope, cfg.tol)
}

pub fn run_perturb(d: &DistMatrix, radius: f64, seed: u64, tol: f64) -> Result<PerturbReport> {
    let e = admissible_perturbation(d, radius, seed)?;
    let gap = sup_distance(&e, d)?;
    let mut certs = CertificateSet::new();
    certs.push(Certificate::new("perturb.admission", "||e - d|| < radius", Relation::Lt, radius, gap, 0.0));
    let errors = validate_metric_with_tol(&e, tol).violations.len();
    certs.push(Certificate::new("perturb.is-metric", "e is a metric", Relation::Eq, 0.0, errors as f64, 0.0));
    certs.stamp(&inputs_hash(&(d, radius, seed)));
    Ok(PerturbReport {
        seed,
        radius,
        gap,
        base: d.clone(),
        metric: e,
        certificates: certs,
    })
}
