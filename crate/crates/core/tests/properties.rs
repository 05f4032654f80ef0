use lipfree::bap::godefroy_defect;
use lipfree::cover::{brick_cover_on, build_net_cover, order, verify_net_cover};
use lipfree::extension::{admissible_perturbation, build_perturbed_G, build_prop33};
use lipfree::free_norm::{
    apply_weight_operator, free_space_norm, lipschitz_constant, mcshane_extend, metric_extension_lp, FreeElement,
    WeightOperator,
};
use lipfree::gluing::{build_section4, certify_rnm, GluingConfig};
use lipfree::lp::{solve, LinearProgram, LpStatus, Relation, VarBound};
use lipfree::metric::{
    hat_metric, is_eps_dense, make_grid_space, random_metric, snowflake, sup_distance, truncate, validate_metric,
    validate_pseudometric, Ground,
};
use lipfree::{DistMatrix, Subset};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_metric(max: usize) -> impl Strategy<Value = DistMatrix> {
    (2..=max, any::<u64>()).prop_map(|(n, seed)| random_metric(n, seed, 0.5, 2.0).unwrap())
}

fn arb_subset(n: usize, seed: u64) -> Subset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
    if members.is_empty() {
        members.push(rng.gen_range(0..n));
    }
    Subset::new(n, members).unwrap()
}

fn arb_grid() -> impl Strategy<Value = (Vec<usize>, f64, Ground)> {
    (
        prop_oneof![
            (3usize..40).prop_map(|a| vec![a]),
            (3usize..12, 3usize..12).prop_map(|(a, b)| vec![a, b]),
        ],
        prop_oneof![Just(1.0 / 32.0), Just(1.0 / 16.0), Just(0.1)],
        prop_oneof![Just(Ground::Linf), Just(Ground::L1), Just(Ground::L2)],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn snowflake_is_a_metric(d in arb_metric(9), alpha in 0.01f64..=1.0) {
        prop_assert!(validate_metric(&snowflake(&d, alpha).unwrap()).is_valid());
    }

    #[test]
    fn hat_metric_is_dominated_and_vanishes_on_a(d in arb_metric(9), seed in any::<u64>()) {
        let a = arb_subset(d.len(), seed);
        let h = hat_metric(&d, &a).unwrap();
        prop_assert!(validate_pseudometric(&h).is_valid());
        for x in 0..d.len() {
            for y in 0..d.len() {
                prop_assert!(h.get(x, y) <= d.get(x, y));
                if a.contains(x) && a.contains(y) {
                    prop_assert_eq!(h.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn dense_sets_give_small_hat_metrics(d in arb_metric(9), seed in any::<u64>()) {
        let a = arb_subset(d.len(), seed);
        let eps = 2.0 * is_eps_dense(&d, &a, f64::INFINITY).unwrap().worst_distance;
        prop_assert!(is_eps_dense(&d, &a, eps / 2.0).unwrap().dense);
        prop_assert!(hat_metric(&d, &a).unwrap().max_entry() <= eps);
    }

    #[test]
    fn truncation_is_capped(d in arb_metric(9), eta in 0.1f64..3.0) {
        let t = truncate(&d, eta).unwrap();
        prop_assert!(validate_pseudometric(&t).is_valid());
        for x in 0..d.len() {
            for y in 0..d.len() {
                prop_assert!(t.get(x, y) <= d.get(x, y) && t.get(x, y) <= eta);
            }
        }
    }

    #[test]
    fn sup_distance_is_a_metric(n in 2usize..8, s in any::<[u64; 3]>()) {
        let [a, b, c] = s.map(|seed| random_metric(n, seed, 0.5, 2.0).unwrap());
        let ab = sup_distance(&a, &b).unwrap();
        prop_assert_eq!(ab, sup_distance(&b, &a).unwrap());
        prop_assert!(ab <= sup_distance(&a, &c).unwrap() + sup_distance(&c, &b).unwrap() + 1e-12);
        prop_assert_eq!(sup_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn lp_assignments_are_feasible_and_deterministic(
        n in 1usize..6,
        m in 0usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lp = LinearProgram::maximize((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        for _ in 0..m {
            let coeffs = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            lp = lp.constraint(coeffs, Relation::Le, rng.gen_range(0.0..2.0));
        }
        for v in 0..n {
            lp = lp.bound(v, VarBound::between(-1.0, 1.0));
        }
        let sol = solve(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        prop_assert!(lp.max_violation(&sol.assignment) <= 1e-9);
        prop_assert!((lp.objective_value(&sol.assignment) - sol.value).abs() <= 1e-9);
        prop_assert_eq!(solve(&lp).unwrap(), sol);
    }

    #[test]
    fn molecule_identity(d in arb_metric(8)) {
        for x in 0..d.len() {
            for y in 0..d.len() {
                let mu = FreeElement::molecule(d.len(), x, y).unwrap();
                prop_assert!((free_space_norm(&mu, &d, 0).unwrap() - d.get(x, y)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn free_norm_is_a_norm(d in arb_metric(7), seed in any::<u64>(), c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = d.len();
        let u = FreeElement::from_dense(&(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let v = FreeElement::from_dense(&(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let nu = free_space_norm(&u, &d, 0).unwrap();
        let nv = free_space_norm(&v, &d, 0).unwrap();
        let nuv = free_space_norm(&u.add(&v).unwrap(), &d, 0).unwrap();
        prop_assert!(nuv <= nu + nv + 1e-7);
        let ncu = free_space_norm(&u.scale(c), &d, 0).unwrap();
        prop_assert!((ncu - c.abs() * nu).abs() <= 1e-7 * (1.0 + nu));
    }

    #[test]
    fn mcshane_extension_properties(d in arb_metric(9), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = arb_subset(d.len(), seed);
        let f: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lip = lipschitz_constant(&f, &d.restrict(a.members())).unwrap() + rng.gen_range(0.0..0.5);
        let ext = mcshane_extend(&f, &a, lip, &d).unwrap();
        prop_assert!(lipschitz_constant(&ext.values, &d).unwrap() <= lip + 1e-9);
        for (k, x) in a.iter().enumerate() {
            prop_assert_eq!(ext.values[x], f[k]);
        }
    }

    #[test]
    fn metric_extension_is_exact_on_s(d in arb_metric(8), seed in any::<u64>()) {
        let s = arb_subset(d.len(), seed);
        let rho = random_metric(s.len(), seed ^ 0x55, 0.5, 2.0).unwrap();
        let ext = metric_extension_lp(&d, &s, &rho).unwrap();
        prop_assert!(validate_metric(&ext.metric).is_valid());
        prop_assert_eq!(ext.metric.restrict(s.members()), rho.clone());
        prop_assert!(ext.distortion <= sup_distance(&rho, &d.restrict(s.members())).unwrap() + 1e-9);
    }

    #[test]
    fn defect_scaling(d in arb_metric(7), c in -2.0f64..2.0) {
        let n = d.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|x| (0..n).map(|i| if i == x { c } else { 0.0 }).collect()).collect();
        let op = WeightOperator::new((0..n).collect(), 0, rows, false).unwrap();
        let rep = godefroy_defect(&op, &d).unwrap();
        let want = (0..n).map(|x| (1.0 - c).abs() * d.get(x, 0)).fold(0.0, f64::max);
        prop_assert!((rep.defect - want).abs() < 1e-7);
    }

    #[test]
    fn defect_ignores_points_outside_the_net(d in arb_metric(8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = d.len();
        let mut domain = vec![0];
        domain.extend((1..n).filter(|_| rng.gen_bool(0.5)));
        let k = domain.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let small = WeightOperator::new(domain.clone(), 0, rows.clone(), false).unwrap();
        // Same rows on the net, plus one extra ambient point.
        let bigger = DistMatrix::from_fn(n + 1, |i, j| {
            if i < n && j < n { d.get(i, j) } else if i == j { 0.0 } else { 5.0 }
        });
        let mut rows2 = rows;
        rows2.push((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let big = WeightOperator::new(domain, 0, rows2, false).unwrap();
        let a = godefroy_defect(&small, &d).unwrap().defect;
        let b = godefroy_defect(&big, &bigger).unwrap().defect;
        prop_assert!((a - b).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn net_cover_round_trip((dims, spacing, ground) in arb_grid(), eps_scale in 0.2f64..1.0) {
        let space = make_grid_space(&dims, spacing, ground).unwrap();
        let eps = eps_scale * space.metric.max_entry().max(spacing);
        for overlapping in [true, false] {
            let grid = space.grid.as_ref().unwrap();
            let refiner = brick_cover_on(grid, &space.metric, eps, overlapping).unwrap();
            let nc = build_net_cover(&space.metric, 0, eps, &refiner).unwrap();
            let certs = verify_net_cover(&nc, &space.metric);
            prop_assert!(certs.all_pass(), "{:?}", certs.first_failure());
            prop_assert!(nc.order() <= order(&refiner));
            prop_assert!(is_eps_dense(&space.metric, &nc.net_subset(), eps / 2.0).unwrap().dense);
        }
    }

    #[test]
    fn extension_operators_restrict_to_the_identity(points in 5usize..30, eps_scale in 0.15f64..0.6, seed in any::<u64>()) {
        let space = make_grid_space(&[points], 1.0 / (points - 1) as f64, Ground::Linf).unwrap();
        let eps = eps_scale;
        let grid = space.grid.as_ref().unwrap();
        let refiner = brick_cover_on(grid, &space.metric, eps, true).unwrap();
        let nc = build_net_cover(&space.metric, 0, eps, &refiner).unwrap();
        let b = build_prop33(&space.metric, eps, &nc, 1e-7).unwrap();
        prop_assert!(b.certificates.all_pass());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = nc.net.iter().map(|&a| if a == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
        let ext = apply_weight_operator(&b.lambda, &f).unwrap();
        for (k, &a) in nc.net.iter().enumerate() {
            prop_assert_eq!(ext.values[a], f[k]);
        }

        let e = admissible_perturbation(&b.bar_d, b.admission_radius(), seed).unwrap();
        let g = build_perturbed_G(&b, &e, 1e-7).unwrap();
        prop_assert!(g.certificates.all_pass(), "{:?}", g.certificates.first_failure());
        prop_assert_eq!(g.mu.extension_defect(), 0.0);
        // Interior estimate on functions normalised in e.
        let e_a = e.restrict(&nc.net);
        let lip_e = lipschitz_constant(&f, &e_a).unwrap();
        if lip_e > 0.0 {
            let unit: Vec<f64> = f.iter().map(|v| v / lip_e).collect();
            let lip_bar = lipschitz_constant(&unit, &b.bar_d.restrict(&nc.net)).unwrap();
            prop_assert!(lip_bar <= 1.0 + 1.0 / (4.0 * (b.r as f64 + 1.0)) + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn glued_operator_invariants(seed in any::<u64>(), frac in 0.1f64..0.99) {
        let g = make_grid_space(&[9, 13], 1.0 / 32.0, Ground::Linf).unwrap();
        let cfg = GluingConfig {
            d: g.metric.clone(),
            k: Subset::new(g.len(), (0..9).collect()).unwrap(),
            base: 0,
            thresholds: vec![0.25, 0.125, 0.0625, 0.03125],
            dim_k: 1,
            grid: g.grid.clone(),
        };
        let b = build_section4(&cfg, 1, 0.25, 1e-7).unwrap();
        let e = admissible_perturbation(&b.bar_d, frac * b.admission_radius(), seed).unwrap();
        let r = certify_rnm(&b, &e, 3, seed, 1e-7).unwrap();
        for name in ["rnm.chain", "rnm.rho-support", "rnm.rho-one-on-Cn", "rnm.restriction", "rnm.product"] {
            let c = r.certificates.get(name).unwrap();
            prop_assert!(c.pass, "{}", c.summary());
        }
        prop_assert!(r.pass());
    }
}
