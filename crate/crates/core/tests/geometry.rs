mod common;

use rand::Rng;

use common::rng;
use nclab::bias::{alpha_residual, separation_holds, solve_bias, BiasProblem};
use nclab::etf::{
    analytic_minimizer, bce_lower_bound, optimal_rho_bias, reduced_objective, simplex_etf, tight_bound_constants,
    EtfSpec,
};
use nclab::losses::{grad_objective, objective, LossKind};
use nclab::{Hyper, Labels, State};

/// Root of the bias residual located by a uniform scan for the sign change
/// followed by linear interpolation inside the bracketing cell.
fn scanned_root(prob: &BiasProblem<f64>) -> f64 {
    let span = prob.positive_score() + 20.0;
    let cells = 400_000;
    let step = 2.0 * span / cells as f64;
    let mut prev_b = -span;
    let mut prev = alpha_residual(prev_b, prob);
    for i in 1..=cells {
        let b = -span + i as f64 * step;
        let f = alpha_residual(b, prob);
        if prev <= 0.0 && f >= 0.0 {
            return prev_b - prev * (b - prev_b) / (f - prev);
        }
        prev_b = b;
        prev = f;
    }
    panic!("no sign change in scan");
}

fn grid() -> Vec<BiasProblem<f64>> {
    let mut out = Vec::new();
    for k in [2usize, 4, 10] {
        for rho in [0.0, 12.5, 400.0] {
            for lambda_b in [0.0, 5e-4, 0.5] {
                out.push(BiasProblem::new(k, 10.0, 5e-4, 5e-4, lambda_b, rho).unwrap());
            }
        }
    }
    out
}

#[test]
fn bias_root_matches_scan_on_grid() {
    for prob in grid() {
        let b = solve_bias(&prob).unwrap();
        assert!(alpha_residual(b, &prob).abs() < 1e-12, "{prob:?}");
        let scanned = scanned_root(&prob);
        assert!((b - scanned).abs() < 1e-6, "{prob:?}: {b} vs scan {scanned}");
        if separation_holds(&prob) {
            assert!(prob.negative_score() < b && b < prob.positive_score(), "{prob:?}: b = {b}");
        }
    }
}

#[test]
fn simplex_frame_geometry() {
    for (k, d) in [(2, 1), (3, 2), (5, 9), (10, 12)] {
        let rho = 7.0;
        let w = simplex_etf(&EtfSpec { k, d, rho, orientation_seed: 11 }).unwrap();
        let gram = w.matmul_t(&w);
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { rho / k as f64 } else { -rho / (k * (k - 1)) as f64 };
                assert!((gram[(i, j)] - expect).abs() < 1e-12, "K={k} d={d}");
            }
        }
        let col_sum: f64 = (0..d).map(|p| (0..k).map(|j| w[(j, p)]).sum::<f64>().abs()).sum();
        assert!(col_sum < 1e-12);
    }
    assert!(simplex_etf(&EtfSpec { k: 5, d: 3, rho: 1.0, orientation_seed: 0 }).is_err());
}

#[test]
fn reduced_optimum_beats_a_dense_scan() {
    let hp = Hyper::new(4, 8, 10, 5e-4, 5e-4, 5e-4).unwrap();
    for kind in [LossKind::Bce, LossKind::Ce] {
        let opt = optimal_rho_bias(kind, &hp).unwrap();
        for i in 0..=4000 {
            let rho = i as f64 * 0.1;
            for db in [-0.05, 0.0, 0.05] {
                let v = reduced_objective(kind, rho, opt.bias + db, &hp).unwrap();
                assert!(v >= opt.value - 1e-13, "{kind}: rho {rho} gives {v} < {}", opt.value);
            }
        }
    }
}

#[test]
fn analytic_minimizer_is_stationary_for_other_instances() {
    for (k, d, n, lw, lh, lb) in [(3, 2, 4, 1e-3, 2e-3, 1e-2), (6, 7, 3, 5e-4, 5e-4, 5e-4), (10, 12, 2, 1e-2, 1e-3, 1e-3)] {
        let hp = Hyper::new(k, d, n, lw, lh, lb).unwrap();
        for kind in [LossKind::Bce, LossKind::Ce] {
            let opt = optimal_rho_bias(kind, &hp).unwrap();
            let s = analytic_minimizer(&hp, opt.rho, opt.bias, 5).unwrap();
            let g = grad_objective(&s, &hp, kind).unwrap();
            assert!(g.inf_norm() < 1e-8, "{kind} K={k}: {:e}", g.inf_norm());
            let f = objective(&s, &hp, kind).unwrap();
            assert!((f - opt.value).abs() < 1e-12 * (1.0 + f.abs()));
        }
    }
}

#[test]
fn random_perturbations_increase_the_objective() {
    let hp = Hyper::new(4, 8, 10, 5e-4, 5e-4, 5e-4).unwrap();
    let opt = optimal_rho_bias(LossKind::Bce, &hp).unwrap();
    let s = analytic_minimizer(&hp, opt.rho, opt.bias, 0).unwrap();
    let f0 = objective(&s, &hp, LossKind::Bce).unwrap();
    let mut r = rng(9);
    for _ in 0..200 {
        let mut p: State = s.clone();
        let mut bump = |x: &mut f64| *x += 1e-3 * r.random_range(-1.0..1.0);
        p.w.as_mut_slice().iter_mut().for_each(&mut bump);
        p.h.as_mut_slice().iter_mut().for_each(&mut bump);
        p.b.iter_mut().for_each(&mut bump);
        assert!(objective(&p, &hp, LossKind::Bce).unwrap() > f0);
    }
}

#[test]
fn lower_bound_holds_and_is_tight() {
    let hp = Hyper::new(4, 8, 10, 5e-4, 5e-4, 5e-4).unwrap();
    // Any balanced collapsed state is a valid point for the bound; sweep (ρ, b, c₁, c₂).
    for rho in [1.0, 30.0, 109.0, 250.0] {
        for b in [-1.0, 0.0, 2.9, 5.0] {
            let s = analytic_minimizer(&hp, rho, b, 1).unwrap();
            let f = objective(&s, &hp, LossKind::Bce).unwrap();
            let (t1, t2) = tight_bound_constants(rho, b, &hp);
            for m1 in [0.1, 0.5, 1.0, 2.0, 10.0] {
                for m2 in [0.1, 0.5, 1.0, 2.0, 10.0] {
                    let lb = bce_lower_bound(rho, t1 * m1, t2 * m2, &hp).unwrap();
                    assert!(lb.value <= f + 1e-12, "rho {rho} b {b}: bound {} > {f}", lb.value);
                }
            }
        }
    }
    let opt = optimal_rho_bias(LossKind::Bce, &hp).unwrap();
    let s = analytic_minimizer(&hp, opt.rho, opt.bias, 1).unwrap();
    let (c1, c2) = tight_bound_constants(opt.rho, opt.bias, &hp);
    let lb = bce_lower_bound(opt.rho, c1, c2, &hp).unwrap();
    let f = objective(&s, &hp, LossKind::Bce).unwrap();
    assert!((lb.value - f).abs() < 1e-9, "{} vs {f}", lb.value);
}

#[test]
fn collapsed_scores_use_class_major_labels() {
    let hp = Hyper::new(3, 3, 2, 1e-2, 1e-2, 1e-2).unwrap();
    let s = analytic_minimizer(&hp, 4.0, 0.1, 2).unwrap();
    let labels = Labels::class_major(3, 2);
    let z = nclab::decision_scores(&s).unwrap();
    for i in 0..6 {
        let c = labels.get(i);
        let best = (0..3).max_by(|&a, &b| z[(a, i)].partial_cmp(&z[(b, i)]).unwrap()).unwrap();
        assert_eq!(best, c);
    }
}
