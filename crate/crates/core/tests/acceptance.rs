//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p lipfree --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use lipfree::bap::{bap_certificate, godefroy_defect, BapStep};
use lipfree::cover::{brick_cover_on, build_net_cover, order, verify_net_cover};
use lipfree::extension::{admissible_perturbation, build_perturbed_G, build_prop33, g_bound, Prop33Bundle};
use lipfree::free_norm::{free_space_norm, metric_extension_lp, operator_norm, FreeElement, WeightOperator};
use lipfree::gluing::{build_section4, certify_rnm, gamma, rnm_bound, GluingConfig};
use lipfree::metric::{make_grid_space, random_metric, shortest_path_closure, sup_distance, FiniteMetricSpace, Ground};
use lipfree::pipeline::{derived_seeds, net_cover_for};
use lipfree::{DistMatrix, Subset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-7;
const SCALES: [f64; 3] = [0.25, 0.125, 0.0625];

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, || format!("{what} took {:.1} s, limit {} s", took.as_secs_f64(), limit.as_secs()))
}

struct GridRun {
    label: &'static str,
    space: FiniteMetricSpace,
    bundles: Vec<Prop33Bundle>,
    build_time: Duration,
}

fn grid_runs() -> Result<Vec<GridRun>, String> {
    let grids = [
        ("1D grid, 129 points", make_grid_space(&[129], 1.0 / 128.0, Ground::Linf)),
        ("2D grid, 17x17 points", make_grid_space(&[17, 17], 1.0 / 64.0, Ground::Linf)),
    ];
    grids
        .into_iter()
        .map(|(label, space)| {
            let space = space.map_err(|e| e.to_string())?;
            let start = Instant::now();
            let bundles = SCALES
                .iter()
                .map(|&eps| {
                    let nc = net_cover_for(&space, eps, None).map_err(|e| e.to_string())?;
                    build_prop33(&space.metric, eps, &nc, TOL).map_err(|e| format!("{label}, eps {eps}: {e}"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(GridRun {
                label,
                space,
                bundles,
                build_time: start.elapsed(),
            })
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for seed in 0..50u64 {
        let n = 3 + (seed as usize % 10);
        let d = random_metric(n, seed, 0.1, 3.0).map_err(|e| e.to_string())?;
        for x in 0..n {
            for y in 0..n {
                let mu = FreeElement::molecule(n, x, y).map_err(|e| e.to_string())?;
                let v = free_space_norm(&mu, &d, 0).map_err(|e| e.to_string())?;
                worst = worst.max((v - d.get(x, y)).abs());
                pairs += 1;
            }
        }
    }
    check(worst <= 1e-7, || format!("molecule error {worst:e} above 1e-7"))?;
    within(Duration::from_secs(30), start, "molecule sweep")?;
    Ok(format!("50 spaces, {pairs} pairs, max |norm - d| = {worst:.1e}"))
}

fn criterion_2(runs: &[GridRun]) -> Outcome {
    let mut notes = Vec::new();
    let mut times = Vec::new();
    for run in runs {
        for b in &run.bundles {
            let gap = sup_distance(&run.space.metric, &b.bar_d).map_err(|e| e.to_string())?;
            check(gap < 4.0 * b.eps, || format!("{}: ||d - bar_d|| = {gap} not below 4 eps = {}", run.label, 4.0 * b.eps))?;
            let net = &b.net_cover.net;
            let exact = net.iter().all(|&x| net.iter().all(|&y| b.bar_d.get(x, y) == run.space.metric.get(x, y)));
            check(exact, || format!("{}, eps {}: bar_d differs from d on A x A", run.label, b.eps))?;
            notes.push(format!("{:.3}/{}", gap / b.eps, b.eps));
        }
        let secs = run.build_time.as_secs_f64();
        check(secs < 120.0, || format!("{} took {secs:.1} s, limit 120 s", run.label))?;
        times.push(format!("{:.1} s", secs));
    }
    Ok(format!("gap/eps per scale: {}; build times {}", notes.join(", "), times.join(", ")))
}

fn criterion_3(runs: &[GridRun]) -> Outcome {
    let mut min_headroom = f64::INFINITY;
    let mut max_g: f64 = 0.0;
    let mut count = 0;
    for run in runs {
        for b in &run.bundles {
            let e_norm = b.e_norm.value;
            check((e_norm - 1.0).abs() <= 1e-6, || format!("{}, eps {}: ||E|| = {e_norm}", run.label, b.eps))?;
            for seed in derived_seeds(b.eps.to_bits(), 20) {
                let e = admissible_perturbation(&b.bar_d, b.admission_radius(), seed).map_err(|e| e.to_string())?;
                let g = build_perturbed_G(b, &e, TOL).map_err(|e| e.to_string())?;
                let bound = g_bound(b.r);
                check(g.g_norm.value <= bound, || {
                    format!("{}, eps {}: ||G|| = {} above {bound}", run.label, b.eps, g.g_norm.value)
                })?;
                max_g = max_g.max(g.g_norm.value);
                min_headroom = min_headroom.min(g.headroom());
                count += 1;
            }
        }
    }
    Ok(format!(
        "||E|| = 1 on all bundles; {count} perturbations, max ||G|| = {max_g:.3}, min headroom {min_headroom:.1}x"
    ))
}

fn criterion_4(runs: &[GridRun]) -> Outcome {
    let mut checked = 0;
    for run in runs {
        for b in &run.bundles {
            for name in ["prop33.lambda-lip", "prop33.sum-dist"] {
                let c = b.certificates.get(name).ok_or_else(|| format!("missing {name}"))?;
                check(c.pass, || format!("{}: {}", run.label, c.summary()))?;
                checked += 1;
            }
            for seed in derived_seeds(b.eps.to_bits() ^ 1, 5) {
                let e = admissible_perturbation(&b.bar_d, b.admission_radius(), seed).map_err(|e| e.to_string())?;
                let g = build_perturbed_G(b, &e, TOL).map_err(|e| e.to_string())?;
                let c = g.certificates.get("perturbed.mu-lip").ok_or("missing mu-lip")?;
                check(c.pass, || format!("{}: {}", run.label, c.summary()))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} partition certificates, 0 failures"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..100 {
        let dims = if rng.gen_bool(0.5) {
            vec![rng.gen_range(5..60)]
        } else {
            vec![rng.gen_range(3..14), rng.gen_range(3..14)]
        };
        let spacing = [1.0 / 64.0, 1.0 / 32.0, 0.05][rng.gen_range(0..3)];
        let ground = [Ground::Linf, Ground::L1, Ground::L2][rng.gen_range(0..3)];
        let space = make_grid_space(&dims, spacing, ground).map_err(|e| e.to_string())?;
        let eps = rng.gen_range(0.05..1.0) * space.metric.max_entry();
        let overlapping = rng.gen_bool(0.7);
        let grid = space.grid.as_ref().expect("generated grid");
        let refiner = brick_cover_on(grid, &space.metric, eps, overlapping).map_err(|e| e.to_string())?;
        let base = rng.gen_range(0..space.len());
        let nc = build_net_cover(&space.metric, base, eps, &refiner).map_err(|e| format!("instance {i}: {e}"))?;
        let certs = verify_net_cover(&nc, &space.metric);
        check(certs.all_pass(), || format!("instance {i}: {}", certs.first_failure().unwrap().summary()))?;
        check(nc.order() <= order(&refiner), || format!("instance {i}: merged order above refiner order"))?;
        let bound = refiner.order_bound.unwrap_or(usize::MAX) as isize;
        check(nc.order() <= bound, || format!("instance {i}: order {} above r = {bound}", nc.order()))?;
    }
    Ok("100 grid instances pass net, cover and order checks".into())
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let g = make_grid_space(&[17, 25], 1.0 / 64.0, Ground::Linf).map_err(|e| e.to_string())?;
    let cfg = GluingConfig {
        d: g.metric.clone(),
        k: Subset::new(g.len(), (0..17).collect()).map_err(|e| e.to_string())?,
        base: 0,
        thresholds: vec![0.25, 0.125, 0.0625, 0.03125, 0.015625],
        dim_k: 1,
        grid: g.grid.clone(),
    };
    check(gamma(1) == 880.0 && rnm_bound(1) == 266062.0, || "constants".into())?;
    let b = build_section4(&cfg, 1, 0.25, TOL).map_err(|e| e.to_string())?;
    let radius = b.admission_radius();
    check(radius == 0.25 / 960.0, || format!("admission radius {radius}"))?;
    let mut metrics = vec![b.bar_d.clone()];
    for s in derived_seeds(6, 5) {
        metrics.push(admissible_perturbation(&b.bar_d, radius, s).map_err(|e| e.to_string())?);
    }
    let mut worst: f64 = 0.0;
    for (i, e) in metrics.iter().enumerate() {
        let r = certify_rnm(&b, e, 6, i as u64, TOL).map_err(|e| e.to_string())?;
        check(r.pass(), || format!("metric {i}: {}", r.certificates.first_failure().unwrap().summary()))?;
        for name in ["rnm.restriction", "rnm.rho-support", "rnm.rho-one-on-Cn", "rnm.rho-one-off-V"] {
            let c = r.certificates.get(name).ok_or_else(|| format!("missing {name}"))?;
            check(c.measured == 0.0, || format!("metric {i}: {} not exact", c.name))?;
        }
        worst = worst.max(r.measured);
    }
    within(Duration::from_secs(300), start, "gluing certificates")?;
    Ok(format!(
        "m = {}, {} metrics, max ||H|| = {worst:.3} against {}, radius {radius:.3e}",
        b.m,
        metrics.len(),
        rnm_bound(1)
    ))
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    let spaces = [
        make_grid_space(&[257], 1.0 / 256.0, Ground::Linf),
        make_grid_space(&[17, 17], 1.0 / 32.0, Ground::Linf),
    ];
    for space in spaces {
        let space = space.map_err(|e| e.to_string())?;
        let mut steps = Vec::new();
        let mut g_steps = Vec::new();
        let mut r = 0;
        for n in [2usize, 4, 8] {
            let eps = lipfree::config::prop31_eps(n, 1.0);
            let nc = net_cover_for(&space, eps, None).map_err(|e| e.to_string())?;
            let b = build_prop33(&space.metric, eps, &nc, TOL).map_err(|e| e.to_string())?;
            r = r.max(b.r);
            let e = admissible_perturbation(&b.bar_d, b.admission_radius(), n as u64).map_err(|e| e.to_string())?;
            let g = build_perturbed_G(&b, &e, TOL).map_err(|e| e.to_string())?;
            let gd = godefroy_defect(&g.mu, &e).map_err(|e| e.to_string())?;
            check(gd.defect <= 1e-9, || format!("G defect {} at n = {n}", gd.defect))?;
            g_steps.push(gd.defect);
            steps.push(BapStep {
                n,
                eps: 1.0 / n as f64,
                op: b.lambda.clone(),
            });
        }
        let rep = bap_certificate(&steps, &space.metric, g_bound(r), 4.0, TOL).map_err(|e| e.to_string())?;
        check(rep.pass(), || rep.certificates.first_failure().unwrap().summary())?;
        check(rep.rows.iter().all(|row| row.defect <= 1e-9), || "nonzero defect for an extension sequence".into())?;
        notes.push(format!(
            "{} points: norms {:?}",
            space.len(),
            rep.rows.iter().map(|row| (row.norm * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ));
    }
    Ok(format!("defects 0 for n = 2, 4, 8; {}", notes.join("; ")))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst_slack = f64::INFINITY;
    for i in 0..50u64 {
        let n = rng.gen_range(4..=12);
        let d = random_metric(n, 500 + i, 0.5, 2.0).map_err(|e| e.to_string())?;
        let mut members: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if members.len() < 2 {
            members = vec![0, 1];
        }
        let s = Subset::new(n, members).map_err(|e| e.to_string())?;
        let d_s = d.restrict(s.members());
        let rho = if i % 2 == 0 {
            random_metric(s.len(), 900 + i, 0.5, 2.0).map_err(|e| e.to_string())?
        } else {
            let jitter = DistMatrix::from_upper(s.len(), |x, y| d_s.get(x, y) * rng.gen_range(0.8..1.2));
            shortest_path_closure(&jitter)
        };
        let target = sup_distance(&rho, &d_s).map_err(|e| e.to_string())?;
        let ext = metric_extension_lp(&d, &s, &rho).map_err(|e| format!("instance {i}: {e}"))?;
        check(ext.distortion <= target + 1e-9, || format!("instance {i}: distortion {} above {target}", ext.distortion))?;
        check(ext.metric.restrict(s.members()) == rho, || format!("instance {i}: d2 differs from rho on S"))?;
        worst_slack = worst_slack.min(target - ext.distortion);
    }
    Ok(format!("50 instances, min slack to the bound {worst_slack:.2e}"))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..60u64 {
        let n = rng.gen_range(3..=8);
        let d = random_metric(n, 700 + i, 0.5, 2.0).map_err(|e| e.to_string())?;
        let k = rng.gen_range(1..=4.min(n));
        let domain: Vec<usize> = (0..k).collect();
        let partition = i % 2 == 0;
        let rows = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(if partition { 0.0 } else { -1.0 }..1.0)).collect();
                let s: f64 = if partition { raw.iter().sum() } else { 1.0 };
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let op = WeightOperator::new(domain.clone(), 0, rows, partition).map_err(|e| e.to_string())?;
        let d_a = d.restrict(&domain);
        let lp = operator_norm(&op, &d_a, &d).map_err(|e| e.to_string())?.value;
        let brute = common::brute_operator_norm(&op, &d_a, &d);
        worst = worst.max((lp - brute).abs());
        count += 1;
    }
    // Extension operators from small pipelines.
    for points in [5usize, 7, 9] {
        let space = make_grid_space(&[points], 1.0 / (points - 1) as f64, Ground::Linf).map_err(|e| e.to_string())?;
        let nc = net_cover_for(&space, 0.5, None).map_err(|e| e.to_string())?;
        if nc.net.len() > 4 {
            continue;
        }
        let b = build_prop33(&space.metric, 0.5, &nc, TOL).map_err(|e| e.to_string())?;
        let d_a = b.bar_d.restrict(&nc.net);
        let brute = common::brute_operator_norm(&b.lambda, &d_a, &b.bar_d);
        worst = worst.max((b.e_norm.value - brute).abs());
        count += 1;
    }
    check(worst <= 1e-6, || format!("LP and brute force differ by {worst:e}"))?;
    Ok(format!("{count} operators, max |LP - brute force| = {worst:.1e}"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let runs = grid_runs();
    let shared = |f: fn(&[GridRun]) -> Outcome| -> Outcome {
        match &runs {
            Ok(r) => f(r),
            Err(e) => Err(format!("grid pipelines failed: {e}")),
        }
    };
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "molecule identity", Box::new(criterion_1)),
        (2, "metric bound on grids", Box::new(move || shared(criterion_2))),
        (3, "extension operator norms", Box::new(move || shared(criterion_3))),
        (4, "partition estimates", Box::new(move || shared(criterion_4))),
        (5, "net and cover round trip", Box::new(criterion_5)),
        (6, "gluing certificates", Box::new(criterion_6)),
        (7, "almost-extension harness", Box::new(criterion_7)),
        (8, "metric extension LP", Box::new(criterion_8)),
        (9, "oracle equivalence", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, name, f) in &criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {i} [{name}]: PASS ({secs:.1} s) {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {i} [{name}]: FAIL ({secs:.1} s) {why}");
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
