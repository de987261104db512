use std::f64::consts::SQRT_2;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nll_core::energy::energy;
use nll_core::gamma::{j_inf, ratios, Competitor, RHO_CROSS};
use nll_core::geodesics::{transition_costs, GeodesicConfig, TransitionCosts};
use nll_core::grid::{build_grid, ScalarField};
use nll_core::ldg::MaterialParams;
use nll_core::solvers::{
    campaign_starts, classify, deflation_campaign, ic_bd, ic_random, ic_wors, newton_solve, residual_full,
    residual_max, CampaignOptions, Label, NewtonOptions, SolverConfig,
};
use nll_core::stability::{second_variation_v13, stability_report, CoeffFields, StabilityConfig, Subspace, Verdict};
use nll_core::state::System;
use nll_core::symmetry::full_group;

fn params() -> MaterialParams {
    MaterialParams::reference()
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wors_bd_difference_changes_sign_once(c in prop::array::uniform4(0.1f64..100.0)) {
        let costs = TransitionCosts::from_values(c[0], c[1], c[2], c[3]);
        let diff = |rho: f64| {
            j_inf(Competitor::Wors, rho, 0.0, &costs).unwrap() - j_inf(Competitor::Bd, rho, 0.0, &costs).unwrap()
        };
        let signs: Vec<i8> = (1..400).map(|i| sign(diff(i as f64 / 400.0))).collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert!(changes == 1);
        prop_assert!(diff(RHO_CROSS).abs() <= 1e-12 * j_inf(Competitor::Bd, RHO_CROSS, 0.0, &costs).unwrap());
        prop_assert!(diff(RHO_CROSS - 0.01) > 0.0 && diff(RHO_CROSS + 0.01) < 0.0);
    }

    #[test]
    fn esc_excluded_when_c2_above_c1_and_r2_above_r1(
        c1 in 1.0f64..50.0, dc in 0.01f64..30.0, c3 in 1.0f64..80.0, c4 in 1.0f64..120.0,
    ) {
        let c2 = c1 + dc;
        // metric costs obey the triangle inequalities among o, p1, p2, p3
        prop_assume!(c1 + c3 >= c2 && c4 <= 2.0 * c2 && c4 <= 2.0 * c3);
        let costs = TransitionCosts::from_values(c1, c2, c3, c4);
        let r = ratios(&costs);
        prop_assume!(r.r2 > r.r1);
        for i in 1..100 {
            let rho = i as f64 / 100.0;
            let pair = j_inf(Competitor::Wors, rho, 0.0, &costs).unwrap()
                .min(j_inf(Competitor::Bd, rho, 0.0, &costs).unwrap());
            for j in 0..100 {
                let eta = (1.0 - rho) * j as f64 / 99.0;
                let esc = j_inf(Competitor::Esc, rho, eta, &costs).unwrap();
                prop_assert!(esc >= pair * (1.0 - 1e-12), "rho={} eta={} esc={} pair={}", rho, eta, esc, pair);
            }
        }
    }

    #[test]
    fn group_action_preserves_energy_and_residual(seed in any::<u64>(), k in 0usize..16) {
        let p = params();
        let g = build_grid(17, 0.25, 4.0).unwrap();
        let s = ic_random(&g, &p, System::Full, seed);
        let op = &full_group()[k];
        let t = op.act(&s);
        let (e0, e1) = (energy(&s, &p).total, energy(&t, &p).total);
        prop_assert!((e0 - e1).abs() <= 1e-10 * e0.abs().max(1.0));
        let (r0, r1) = (residual_max(&s, &p), residual_max(&t, &p));
        prop_assert!((r0 - r1).abs() <= 1e-10 * r0.max(1.0));
    }
}

#[test]
fn esc_formula_matches_ring_bookkeeping() {
    // ESC at zero ring width differs from WORS only through the core layer
    let c = TransitionCosts::from_values(3.0, 5.0, 7.0, 11.0);
    let rho = 0.3;
    let esc = j_inf(Competitor::Esc, rho, 0.0, &c).unwrap();
    let wors = j_inf(Competitor::Wors, rho, 0.0, &c).unwrap();
    assert!((esc - wors - 4.0 * SQRT_2 * rho * (3.0 + 7.0 - 5.0)).abs() < 1e-12);
}

#[test]
fn reduced_energy_of_converged_states_is_nonnegative() {
    let p = params();
    let g = build_grid(33, 0.2, 4.0).unwrap();
    for init in [ic_wors(&g, &p), ic_bd(&g, &p, 1), ic_bd(&g, &p, -1)] {
        let s = newton_solve(&init, &p, &SolverConfig::default(), &NewtonOptions::default()).unwrap().state;
        let e = energy(&s, &p);
        assert!(e.total >= 0.0 && e.bulk >= -1e-9);
        assert!((e.total - e.elastic - e.bulk).abs() <= 1e-12 * e.total);
    }
}

#[test]
fn newton_tail_is_superlinear_and_embedding_consistent() {
    let p = params();
    let cfg = SolverConfig::default();
    let g = build_grid(33, 0.3, 4.0).unwrap();
    let r = newton_solve(&ic_bd(&g, &p, 1), &p, &cfg, &NewtonOptions::default()).unwrap();
    let t = &r.trace;
    assert!(t.len() >= 3);
    let n = t.len();
    // the last step may land at round-off, so check the two before it
    assert!(t[n - 2] <= 0.5 * t[n - 3], "{t:?}");
    let full = r.state.to_full();
    let worst = residual_full(&full, &p).unwrap().iter().map(|f| f.max_abs()).fold(0.0, f64::max);
    assert!(worst <= cfg.newton_tol(&p));
}

#[test]
fn deflated_records_are_pairwise_distinct() {
    let p = params();
    let cfg = SolverConfig::default();
    let g = build_grid(25, 0.2, 4.0).unwrap();
    let starts = campaign_starts(&g, &p, System::Reduced, 2, 3);
    let recs = deflation_campaign(&starts, &p, &cfg, &CampaignOptions::default()).unwrap();
    assert!(recs.len() >= 3);
    let radius = cfg.deflation_radius(&p, &g);
    for i in 0..recs.len() {
        assert!(recs[i].residual <= cfg.newton_tol(&p));
        for j in 0..i {
            assert!(recs[i].state.l2_distance(&recs[j].state) > radius);
        }
    }
}

#[test]
fn c2_is_nonpositive_on_converged_solutions() {
    let p = params();
    let g = build_grid(33, 0.2, 4.0).unwrap();
    let cfg = SolverConfig::default();
    for (init, sym) in [(ic_wors(&g, &p), true), (ic_bd(&g, &p, 1), false)] {
        let opts = if sym { NewtonOptions::symmetric(System::Reduced) } else { NewtonOptions::default() };
        let s = newton_solve(&init, &p, &cfg, &opts).unwrap().state;
        let c = CoeffFields::from_state(&s, &p).unwrap();
        assert!(
            c.c2.values().iter().all(|&v| v <= 1e-9),
            "max C2 {}",
            c.c2.values().iter().cloned().fold(f64::MIN, f64::max)
        );
    }
}

#[test]
fn stable_verdict_admits_no_negative_direction() {
    let p = params();
    let g = build_grid(33, 0.2, 4.0).unwrap();
    let s = newton_solve(&ic_wors(&g, &p), &p, &SolverConfig::default(), &NewtonOptions::symmetric(System::Reduced))
        .unwrap()
        .state;
    assert_eq!(classify(&s, &p).label, Label::Wors);
    let sc = StabilityConfig::default();
    let rep = stability_report(&s, &p, &sc).unwrap();
    assert_eq!(rep.verdict(Subspace::V13), Verdict::Stable);
    let c = CoeffFields::from_state(&s, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = sc.tol_stab(&p);
    for _ in 0..100 {
        let mut v1 = ScalarField::zeros(&g);
        let mut v3 = ScalarField::zeros(&g);
        for &idx in g.interior() {
            v1.values_mut()[idx] = rng.random_range(-1.0..1.0);
            v3.values_mut()[idx] = rng.random_range(-1.0..1.0);
        }
        assert!(second_variation_v13(&v1, &v3, &c, &p).unwrap() >= -tol);
    }
}

#[test]
fn costs_are_stable_under_path_refinement() {
    let p = params();
    let a = transition_costs(&p, &GeodesicConfig::with_nodes(401)).unwrap();
    let b = transition_costs(&p, &GeodesicConfig::with_nodes(801)).unwrap();
    for (x, y) in a.as_array().iter().zip(b.as_array()) {
        assert!((x - y).abs() / y < 2e-3, "{x} vs {y}");
    }
}

#[test]
fn finite_coupling_agrees_with_limit_far_from_the_crossing() {
    // at ρ = 0.0625 (well below ρ₀ − 0.1) both the limit and λ̄² = 200 prefer BD
    let p = params();
    let g = build_grid(65, 0.0625, 4.0).unwrap();
    let cfg = SolverConfig::default();
    let w = newton_solve(&ic_wors(&g, &p), &p, &cfg, &NewtonOptions::symmetric(System::Reduced)).unwrap().state;
    let b = newton_solve(&ic_bd(&g, &p, 1), &p, &cfg, &NewtonOptions::default()).unwrap().state;
    assert_eq!(classify(&b, &p).label, Label::Bd);
    let costs = TransitionCosts::from_values(22.3067, 34.7378, 41.6817, 60.2955);
    let rho = g.spec().rho_snapped;
    let limit = j_inf(Competitor::Bd, rho, 0.0, &costs).unwrap() - j_inf(Competitor::Wors, rho, 0.0, &costs).unwrap();
    let finite = energy(&b, &p).total - energy(&w, &p).total;
    assert!(limit < 0.0 && finite < 0.0, "limit {limit}, finite {finite}");
}
