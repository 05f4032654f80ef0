//! Machine-checkable records of a claimed inequality and the value measured
//! against it.
//!
//! Every certificate is self-contained: [`Certificate::recheck`] recomputes the
//! verdict from the serialized fields alone, so a certificate file can be
//! re-verified without re-running the pipeline that produced it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// How `measured` must compare against `bound`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// `measured < bound`, no slack.
    Lt,
    /// `measured <= bound + tol`; values in `(bound, bound + tol]` pass with a warning.
    Le,
    /// `|measured - bound| <= tol`.
    Eq,
    /// `measured >= bound - tol`; values in `[bound - tol, bound)` pass with a warning.
    Ge,
    /// `measured > bound`, no slack.
    Gt,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Eq => "==",
            Relation::Ge => ">=",
            Relation::Gt => ">",
        }
    }

    /// Returns `(pass, warning)`.
    pub fn evaluate(self, measured: f64, bound: f64, tol: f64) -> (bool, bool) {
        if measured.is_nan() || bound.is_nan() {
            return (false, false);
        }
        match self {
            Relation::Lt => (measured < bound, false),
            Relation::Gt => (measured > bound, false),
            Relation::Le => {
                let pass = measured <= bound || measured - bound <= tol;
                (pass, pass && measured > bound)
            }
            Relation::Ge => {
                let pass = measured >= bound || bound - measured <= tol;
                (pass, pass && measured < bound)
            }
            Relation::Eq => {
                let pass = measured == bound || (measured - bound).abs() <= tol;
                (pass, pass && measured != bound)
            }
        }
    }
}

/// A point (or tuple of points) where a checked quantity was attained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub label: String,
    pub points: Vec<usize>,
    #[serde(with = "float_repr")]
    pub value: f64,
}

impl Witness {
    pub fn new(label: impl Into<String>, points: Vec<usize>, value: f64) -> Self {
        Self {
            label: label.into(),
            points,
            value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub claim: String,
    pub relation: Relation,
    #[serde(with = "float_repr")]
    pub bound: f64,
    #[serde(with = "float_repr")]
    pub measured: f64,
    pub tol: f64,
    pub pass: bool,
    pub warning: bool,
    #[serde(default)]
    pub witnesses: Vec<Witness>,
    #[serde(default)]
    pub inputs_hash: String,
}

impl Certificate {
    pub fn new(
        name: impl Into<String>,
        claim: impl Into<String>,
        relation: Relation,
        bound: f64,
        measured: f64,
        tol: f64,
    ) -> Self {
        let (pass, warning) = relation.evaluate(measured, bound, tol);
        Self {
            name: name.into(),
            claim: claim.into(),
            relation,
            bound,
            measured,
            tol,
            pass,
            warning,
            witnesses: Vec::new(),
            inputs_hash: String::new(),
        }
    }

    pub fn with_witness(mut self, witness: Witness) -> Self {
        self.witnesses.push(witness);
        self
    }

    pub fn with_witnesses(mut self, witnesses: impl IntoIterator<Item = Witness>) -> Self {
        self.witnesses.extend(witnesses);
        self
    }

    pub fn with_inputs_hash(mut self, hash: &str) -> Self {
        self.inputs_hash = hash.to_owned();
        self
    }

    /// Recomputes the verdict from `relation`, `bound`, `measured` and `tol`.
    /// Returns `true` only if the recomputed verdict passes and agrees with
    /// the stored `pass`/`warning` flags.
    pub fn recheck(&self) -> bool {
        let (pass, warning) = self.relation.evaluate(self.measured, self.bound, self.tol);
        pass && pass == self.pass && warning == self.warning
    }

    pub fn summary(&self) -> String {
        format!(
            "[{}] {}: measured {} {} {} (tol {}){}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.relation.symbol(),
            self.bound,
            self.tol,
            if self.warning { " [within tolerance]" } else { "" }
        )
    }
}

/// An ordered collection of certificates produced by one verification routine.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateSet {
    pub certificates: Vec<Certificate>,
}

impl CertificateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, cert: Certificate) {
        self.certificates.push(cert);
    }

    pub fn extend(&mut self, other: CertificateSet) {
        self.certificates.extend(other.certificates);
    }

    pub fn all_pass(&self) -> bool {
        self.certificates.iter().all(|c| c.pass)
    }

    pub fn recheck_all(&self) -> bool {
        self.certificates.iter().all(Certificate::recheck)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Certificate> {
        self.certificates.iter().filter(|c| !c.pass)
    }

    pub fn first_failure(&self) -> Option<&Certificate> {
        self.failures().next()
    }

    pub fn get(&self, name: &str) -> Option<&Certificate> {
        self.certificates.iter().find(|c| c.name == name)
    }

    pub fn stamp(&mut self, hash: &str) {
        for c in &mut self.certificates {
            c.inputs_hash = hash.to_owned();
        }
    }

    pub fn len(&self) -> usize {
        self.certificates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.certificates.is_empty()
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn inputs_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    hex::encode(Sha256::digest(&bytes))
}

/// JSON has no representation for infinities; they are written as strings.
pub(crate) mod float_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "unrecognised float `{other}`"
                ))),
            },
        }
    }
}
