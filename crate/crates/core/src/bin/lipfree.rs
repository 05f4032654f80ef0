use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lipfree::config::{ExperimentConfig, Pipeline, SpaceSpec};
use lipfree::metric::Ground;
use lipfree::pipeline::{run, PipelineRun, Report};
use lipfree::{Certificate, CertificateSet, Error};

#[derive(Parser)]
#[command(name = "lipfree", version, about = "Certified Lipschitz extension operators on finite metric spaces")]
struct Cli {
    /// Slack allowed on non-strict certificate relations.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Net and order-bounded cover at each scale.
    BuildCover(RunArgs),
    /// Extension bundle, perturbation sweep and density check.
    Prop33(RunArgs),
    /// Glued operators near a subset K.
    Section4(RunArgs),
    /// Almost-extension defects along a sequence of nets.
    Bap(RunArgs),
    /// A seeded metric within a given radius of the input.
    Perturb(RunArgs),
    /// Recheck a report or certificate file.
    Verify { file: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Space description as JSON (`inline`, `grid` or `random`).
    #[arg(long, conflicts_with_all = ["grid", "random"])]
    space: Option<PathBuf>,
    /// Grid extents, e.g. `17x9`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 1.0 / 16.0)]
    spacing: f64,
    #[arg(long, value_enum, default_value_t = GroundArg::Linf)]
    ground: GroundArg,
    /// Random metric space with this many points.
    #[arg(long)]
    random: Option<usize>,
    /// Scales, one run each.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Indices `n`; scales become `min(nu/4, 1/(10 n))` unless `--eps` is set.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    nu: Option<f64>,
    /// Order bound of the refiner, or dim K.
    #[arg(long)]
    dim: Option<usize>,
    /// Points of K.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Use the grid face with last coordinate 0 as K.
    #[arg(long, conflicts_with = "k")]
    k_face: bool,
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    #[arg(long)]
    perturbations: Option<usize>,
    #[arg(long)]
    radius_fraction: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    envelope: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroundArg {
    Linf,
    L1,
    L2,
}

impl From<GroundArg> for Ground {
    fn from(g: GroundArg) -> Self {
        match g {
            GroundArg::Linf => Ground::Linf,
            GroundArg::L1 => Ground::L1,
            GroundArg::L2 => Ground::L2,
        }
    }
}

fn parse_dims(text: &str) -> lipfree::Result<Vec<usize>> {
    text.split('x')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad grid extent `{s}` in `{text}`")))
        })
        .collect()
}

fn build_config(cli: &Cli, pipeline: Pipeline, a: &RunArgs) -> lipfree::Result<ExperimentConfig> {
    let seed = cli.seed;
    let mut cfg = match &a.config {
        Some(path) => {
            let mut c = ExperimentConfig::load(path)?;
            c.pipeline = pipeline;
            if let Some(s) = seed {
                c.seed = s;
            }
            c
        }
        None => {
            let space = if let Some(path) = &a.space {
                serde_json::from_str::<SpaceSpec>(&std::fs::read_to_string(path)?)?
            } else if let Some(g) = &a.grid {
                SpaceSpec::Grid {
                    dims: parse_dims(g)?,
                    spacing: a.spacing,
                    ground: a.ground.into(),
                }
            } else if let Some(points) = a.random {
                SpaceSpec::Random {
                    points,
                    seed: seed.unwrap_or(0),
                }
            } else {
                return Err(Error::InvalidParameter(
                    "give a space with --config, --space, --grid or --random".into(),
                ));
            };
            ExperimentConfig::new(space, pipeline, seed.unwrap_or(0))
        }
    };
    if let Some(t) = cli.tol {
        cfg.tol = t;
    }
    let p = &mut cfg.params;
    if !a.eps.is_empty() {
        p.eps_schedule = a.eps.clone();
    }
    if !a.n.is_empty() {
        p.n_values = a.n.clone();
    }
    if !a.thresholds.is_empty() {
        p.thresholds = a.thresholds.clone();
    }
    if !a.k.is_empty() {
        p.k_indices = a.k.clone();
    }
    p.nu = a.nu.unwrap_or(p.nu);
    p.dim = a.dim.or(p.dim);
    p.perturbations = a.perturbations.unwrap_or(p.perturbations);
    p.radius_fraction = a.radius_fraction.unwrap_or(p.radius_fraction);
    p.samples = a.samples.unwrap_or(p.samples);
    p.envelope = a.envelope.unwrap_or(p.envelope);
    p.lambda = a.lambda.or(p.lambda);
    p.radius = a.radius.or(p.radius);
    if a.k_face {
        let space = cfg.space.build()?;
        let grid = space
            .grid
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("--k-face needs a grid space".into()))?;
        let last = grid.dims.len() - 1;
        cfg.params.k_indices = (0..grid.len()).filter(|&i| grid.coords(i)[last] == 0).collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    pipeline: &'a str,
    seed: u64,
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<&'a Certificate>,
}

fn write_certificate_csv(path: &Path, certs: &CertificateSet) -> lipfree::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "relation", "bound", "measured", "tol", "pass", "warning"])?;
    for c in &certs.certificates {
        w.write_record([
            c.name.clone(),
            c.relation.symbol().to_string(),
            c.bound.to_string(),
            c.measured.to_string(),
            c.tol.to_string(),
            c.pass.to_string(),
            c.warning.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn emit(run: &PipelineRun, dir: &Path, format: Format) -> lipfree::Result<PathBuf> {
    let path = run.write_json(dir)?;
    if format == Format::Csv {
        let csv_path = path.with_extension("csv");
        match &run.report {
            Report::Bap(rep) => rep.write_csv(std::fs::File::create(&csv_path)?)?,
            other => write_certificate_csv(&csv_path, other.certificates())?,
        }
        return Ok(csv_path);
    }
    Ok(path)
}

fn report_line(label: &str, certs: &CertificateSet) {
    let failures: Vec<&Certificate> = certs.failures().collect();
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("{verdict} {label} ({} certificates, {} failed)", certs.len(), failures.len());
    for c in failures {
        println!("  {}", c.summary());
    }
}

fn run_pipeline(cli: &Cli, pipeline: Pipeline, args: &RunArgs) -> ExitCode {
    let cfg = match build_config(cli, pipeline, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = cfg.out_dir.clone().unwrap_or_else(|| cli.out_dir.clone());
    match run(&cfg) {
        Ok(runs) => {
            let mut ok = true;
            for r in &runs {
                match emit(r, &dir, cli.format) {
                    Ok(path) => report_line(&path.display().to_string(), r.report.certificates()),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                }
                if let (Report::Section4(s), true) = (&r.report, r.pass()) {
                    println!("  m = {}, admission radius = {}", s.m, s.admission_radius);
                }
                ok &= r.pass();
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let certificate = match &e {
                Error::CertificateFailed(c) => Some(c.as_ref()),
                _ => None,
            };
            let diag = Diagnostic {
                pipeline: pipeline.name(),
                seed: cfg.seed,
                error: e.to_string(),
                certificate,
            };
            let path = dir.join(format!("{}-{}-error.json", pipeline.name(), cfg.seed));
            let written = std::fs::create_dir_all(&dir)
                .and_then(|_| std::fs::write(&path, serde_json::to_string_pretty(&diag).unwrap_or_default()));
            eprintln!("error: {e}");
            if written.is_ok() {
                eprintln!("diagnostics written to {}", path.display());
            }
            ExitCode::from(2)
        }
    }
}

fn verify(file: &Path, tol: f64) -> lipfree::Result<bool> {
    let text = std::fs::read_to_string(file)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("report").is_some() {
        let run: PipelineRun = serde_json::from_value(value)?;
        let stored = run.report.certificates();
        let mut rechecked = CertificateSet::new();
        for c in &stored.certificates {
            let mut c = c.clone();
            c.pass = c.recheck();
            rechecked.push(c);
        }
        report_line("stored certificates", &rechecked);
        let fresh = run.report.reverify(tol)?;
        report_line("recomputed claims", &fresh);
        return Ok(rechecked.all_pass() && fresh.all_pass());
    }
    let certs = if value.get("certificates").is_some() {
        serde_json::from_value::<CertificateSet>(value)?
    } else {
        let mut s = CertificateSet::new();
        s.push(serde_json::from_value::<Certificate>(value)?);
        s
    };
    let ok = certs.recheck_all();
    report_line(&file.display().to_string(), &certs);
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::BuildCover(a) => run_pipeline(&cli, Pipeline::BuildCover, a),
        Command::Prop33(a) => run_pipeline(&cli, Pipeline::Prop33, a),
        Command::Section4(a) => run_pipeline(&cli, Pipeline::Section4, a),
        Command::Bap(a) => run_pipeline(&cli, Pipeline::Bap, a),
        Command::Perturb(a) => run_pipeline(&cli, Pipeline::Perturb, a),
        Command::Verify { file } => match verify(file, cli.tol.unwrap_or(lipfree::metric::DEFAULT_TOL)) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
