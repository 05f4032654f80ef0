//! Almost-extension defects of operator sequences.
//!
//! For `T: Lip_0(M_n) → Lip_0(M)` given by weight rows, the defect
//! `sup_{‖f‖ ≤ 1} ‖T(f)↾M_n − f‖∞` equals `max_{x ∈ M_n} ‖row(x) − δ_x‖` in
//! the free space of `M_n`, so no sampling is involved.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, CertificateSet, Relation, Witness};
use crate::error::{Error, Result};
use crate::free_norm::{free_space_norm, operator_norm, FreeElement, WeightOperator};
use crate::metric::{is_eps_dense, DistMatrix, Subset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    /// `M_n` in ambient indices.
    pub net: Vec<usize>,
    #[serde(with = "crate::certificate::float_repr")]
    pub norm: f64,
    pub defect: f64,
    /// Point of `M_n` attaining the defect.
    pub witness: Option<usize>,
}

fn check_operator(op: &WeightOperator, d: &DistMatrix) -> Result<()> {
    if op.num_points() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "operator has {} rows, metric has {} points",
            op.num_points(),
            d.len()
        )));
    }
    let mut seen = op.domain.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != op.domain.len() {
        return Err(Error::InvalidParameter("operator domain repeats a point".into()));
    }
    if op.base >= op.domain.len() {
        return Err(Error::Precondition("base point missing from the net".into()));
    }
    Ok(())
}

/// Free norm of `row(x) − δ_x` over `M_n`, for the domain column `col`.
pub fn defect_at(op: &WeightOperator, d_net: &DistMatrix, col: usize) -> Result<f64> {
    let x = op.domain[col];
    let mut row = op.row(x).to_vec();
    row[col] -= 1.0;
    free_space_norm(&FreeElement::from_dense(&row)?, d_net, op.base)
}

pub fn godefroy_defect(op: &WeightOperator, d: &DistMatrix) -> Result<DefectReport> {
    check_operator(op, d)?;
    let d_net = d.restrict(&op.domain);
    let per_point = (0..op.domain.len())
        .into_par_iter()
        .map(|c| defect_at(op, &d_net, c))
        .collect::<Result<Vec<_>>>()?;
    let (witness, defect) = per_point
        .iter()
        .enumerate()
        .fold((None, 0.0), |(w, best), (c, &v)| {
            if v > best {
                (Some(op.domain[c]), v)
            } else {
                (w, best)
            }
        });
    let norm = operator_norm(op, &d_net, d)?.value;
    Ok(DefectReport {
        net: op.domain.clone(),
        norm,
        defect,
        witness,
    })
}

/// One operator of a sequence, with the density `eps` its net claims.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BapStep {
    pub n: usize,
    pub eps: f64,
    pub op: WeightOperator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BapRow {
    pub n: usize,
    pub net_size: usize,
    pub eps: f64,
    #[serde(with = "crate::certificate::float_repr")]
    pub norm: f64,
    pub defect: f64,
    pub witness: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BapReport {
    pub lambda: f64,
    /// Envelope constant `C` in `defect(n) ≤ C·eps_n`.
    pub envelope: f64,
    pub rows: Vec<BapRow>,
    pub certificates: CertificateSet,
}

impl BapReport {
    pub fn pass(&self) -> bool {
        self.certificates.all_pass()
    }

    /// Columns `n, |M_n|, eps_n, norm, defect, witness`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "net_size", "eps", "norm", "defect", "witness"])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.net_size.to_string(),
                r.eps.to_string(),
                r.norm.to_string(),
                r.defect.to_string(),
                r.witness.map(|x| x.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks `‖T_n‖ ≤ λ` and `defect(n) ≤ C·eps_n` for every step, and that
/// defects do not increase along the sequence.
pub fn bap_certificate(steps: &[BapStep], d: &DistMatrix, lambda: f64, envelope: f64, tol: f64) -> Result<BapReport> {
    if steps.is_empty() {
        return Err(Error::EmptySet);
    }
    for s in steps {
        let net = Subset::new(d.len(), s.op.domain.clone())?;
        let dense = is_eps_dense(d, &net, s.eps)?;
        if !dense.dense {
            return Err(Error::Precondition(format!(
                "step {}: point {} is {} from the net, above eps = {}",
                s.n, dense.worst_point, dense.worst_distance, s.eps
            )));
        }
    }
    if steps.windows(2).any(|w| w[1].eps >= w[0].eps) {
        return Err(Error::Precondition("densities must strictly decrease".into()));
    }
    let mut rows = Vec::with_capacity(steps.len());
    let mut certs = CertificateSet::new();
    for s in steps {
        let rep = godefroy_defect(&s.op, d)?;
        certs.push(Certificate::new(
            format!("bap.norm[{}]", s.n),
            "||T_n|| <= lambda",
            Relation::Le,
            lambda,
            rep.norm,
            tol,
        ));
        certs.push(
            Certificate::new(
                format!("bap.defect[{}]", s.n),
                "defect(n) <= C eps_n",
                Relation::Le,
                envelope * s.eps,
                rep.defect,
                1e-9,
            )
            .with_witnesses(rep.witness.map(|x| Witness::new("point", vec![x], rep.defect))),
        );
        rows.push(BapRow {
            n: s.n,
            net_size: rep.net.len(),
            eps: s.eps,
            norm: rep.norm,
            defect: rep.defect,
            witness: rep.witness,
        });
    }
    let rise = rows
        .windows(2)
        .map(|w| w[1].defect - w[0].defect)
        .fold(0.0, f64::max);
    certs.push(Certificate::new(
        "bap.defect-monotone",
        "defects do not increase",
        Relation::Le,
        0.0,
        rise,
        1e-9,
    ));
    Ok(BapReport {
        lambda,
        envelope,
        rows,
        certificates: certs,
    })
}
