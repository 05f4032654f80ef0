//! Experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{make_grid_space, random_metric_space, DistMatrix, FiniteMetricSpace, Ground, DEFAULT_TOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSpec {
    Inline {
        metric: DistMatrix,
        #[serde(default)]
        base: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        names: Option<Vec<String>>,
    },
    Grid {
        dims: Vec<usize>,
        spacing: f64,
        #[serde(default)]
        ground: Ground,
    },
    Random {
        points: usize,
        seed: u64,
    },
}

impl SpaceSpec {
    pub fn build(&self) -> Result<FiniteMetricSpace> {
        match self {
            SpaceSpec::Inline { metric, base, names } => match names {
                Some(names) => FiniteMetricSpace::new(names.clone(), metric.clone(), *base),
                None => FiniteMetricSpace::from_metric(metric.clone(), *base),
            },
            SpaceSpec::Grid { dims, spacing, ground } => make_grid_space(dims, *spacing, *ground),
            SpaceSpec::Random { points, seed } => random_metric_space(*points, *seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    BuildCover,
    Prop33,
    Section4,
    Bap,
    Perturb,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::BuildCover => "build-cover",
            Pipeline::Prop33 => "prop33",
            Pipeline::Section4 => "section4",
            Pipeline::Bap => "bap",
            Pipeline::Perturb => "perturb",
        }
    }
}

/// Knobs shared by the pipelines; each pipeline reads the ones it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    /// Explicit scales; when empty they come from `n_values` and `nu`.
    pub eps_schedule: Vec<f64>,
    pub n_values: Vec<usize>,
    pub nu: f64,
    /// Order bound of the refiner, or `dim K` for the gluing pipeline.
    pub dim: Option<usize>,
    pub k_indices: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub perturbations: usize,
    /// Perturbation radius as a fraction of the admission radius, in `(0, 1)`.
    pub radius_fraction: f64,
    /// Random test functions per `H` certificate.
    pub samples: usize,
    /// Envelope constant `C` in `defect(n) ≤ C eps_n`.
    pub envelope: f64,
    /// Norm bound for the defect table; the `G` bound when absent.
    pub lambda: Option<f64>,
    /// Absolute perturbation radius for the `perturb` pipeline.
    pub radius: Option<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            eps_schedule: Vec::new(),
            n_values: vec![1],
            nu: 1.0,
            dim: None,
            k_indices: Vec::new(),
            thresholds: Vec::new(),
            perturbations: 4,
            radius_fraction: 0.9,
            samples: 8,
            envelope: 4.0,
            lambda: None,
            radius: None,
        }
    }
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub space: SpaceSpec,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub params: Params,
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(space: SpaceSpec, pipeline: Pipeline, seed: u64) -> Self {
        Self {
            space,
            pipeline,
            params: Params::default(),
            seed,
            tol: DEFAULT_TOL,
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("tol must be finite and non-negative, got {}", self.tol)));
        }
        if p.eps_schedule.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter("eps values must be positive".into()));
        }
        if p.n_values.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter("n values start at 1".into()));
        }
        if !(p.nu > 0.0 && p.nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {}", p.nu)));
        }
        if !(p.radius_fraction > 0.0 && p.radius_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "radius_fraction must lie in (0, 1), got {}",
                p.radius_fraction
            )));
        }
        if self.pipeline == Pipeline::Section4 && (p.k_indices.is_empty() || p.thresholds.is_empty()) {
            return Err(Error::InvalidParameter("the gluing pipeline needs k_indices and thresholds".into()));
        }
        Ok(())
    }

    /// `(n, eps)` pairs: the explicit schedule numbered from 1, otherwise
    /// `eps = min(nu/4, 1/(10 n))` for each `n`.
    pub fn scales(&self) -> Vec<(usize, f64)> {
        let p = &self.params;
        if p.eps_schedule.is_empty() {
            p.n_values.iter().map(|&n| (n, prop31_eps(n, p.nu))).collect()
        } else {
            p.eps_schedule.iter().enumerate().map(|(i, &e)| (i + 1, e)).collect()
        }
    }
}

/// `min(nu/4, 1/(10 n))`.
pub fn prop31_eps(n: usize, nu: f64) -> f64 {
    (nu / 4.0).min(1.0 / (10.0 * n as f64))
}
