mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use nclab::metrics::{accuracy, feature_properties, nc_metrics, score_stats, uniform_accuracy};
use nclab::{Labels, Matrix, ScoreMatrix};

fn instance(seed: u64) -> MetricInstance {
    metric_instance(seed)
}

#[test]
fn nc_metrics_match_svd_oracle() {
    for seed in 0..50 {
        let inst = instance(seed);
        for centered in [true, false] {
            let got = nc_metrics(&inst.w, &inst.h, &inst.labels, centered).unwrap();
            let want = nc_oracle(&inst.w, &inst.h, &inst.labels, centered);
            assert!(close(got.nc1, want.nc1, 1e-8), "seed {seed}: nc1 {} vs {}", got.nc1, want.nc1);
            assert!(close(got.nc2, want.nc2, 1e-8), "seed {seed}: nc2 {} vs {}", got.nc2, want.nc2);
            assert!(close(got.nc3, want.nc3, 1e-8), "seed {seed}: nc3 {} vs {}", got.nc3, want.nc3);
        }
    }
}

#[test]
fn rank_deficient_between_class_scatter() {
    // d < K − 1 makes Σ_B singular; the cutoff must drop the null directions.
    let mut r = rng(5);
    let labels = random_labels(&mut r, 6, 30);
    let h = random_matrix(&mut r, 3, 30, 1.0);
    let w = random_matrix(&mut r, 6, 3, 1.0);
    let got = nc_metrics(&w, &h, &labels, true).unwrap();
    let want = nc_oracle(&w, &h, &labels, true);
    assert!(close(got.nc1, want.nc1, 1e-8));
}

#[test]
fn feature_properties_match_double_loop() {
    for seed in 0..50 {
        let inst = instance(100 + seed);
        let got = feature_properties(&inst.h, &inst.labels).unwrap();
        let (com, dis) = feature_oracle(&inst.h, &inst.labels);
        assert!(close(got.e_com, com, 1e-8), "seed {seed}");
        assert!(close(got.e_dis, dis, 1e-8), "seed {seed}");
        assert_eq!(got.skipped_pairs, 0);
    }
}

#[test]
fn score_stats_match_loops() {
    for seed in 0..50 {
        let inst = instance(200 + seed);
        let z = inst.w.matmul(&inst.h);
        let got = score_stats(&ScoreMatrix(z.clone()), &inst.labels).unwrap();
        let (pm, ps, nm, ns) = score_stats_oracle(&z, &inst.labels);
        assert!(close(got.pos_mean, pm, 1e-8));
        assert!(close(got.pos_std, ps, 1e-8));
        assert!(close(got.neg_mean, nm, 1e-8));
        assert!(close(got.neg_std, ns, 1e-8));
    }
}

#[test]
fn uniform_accuracy_matches_brute_force() {
    for seed in 0..50 {
        let inst = instance(300 + seed);
        let z = inst.w.matmul(&inst.h);
        for nt in [1, 2, 7, 200] {
            let got = uniform_accuracy(&ScoreMatrix(z.clone()), &inst.labels, nt).unwrap();
            assert_eq!(got, uniform_accuracy_oracle(&z, &inst.labels, nt), "seed {seed}, {nt} thresholds");
        }
        let acc = accuracy(&ScoreMatrix(z.clone()), &inst.labels).unwrap();
        assert_eq!(acc, accuracy_oracle(&z, &inst.labels));
    }
}

#[test]
fn hand_built_four_sample_file() {
    // Columns: (2, 1.5) and (1, −1) for class 1; (0.5, 3) and (0, 0) for class 2.
    let z = Matrix::from_rows(&[vec![2.0, 1.0, 0.5, 0.0], vec![1.5, -1.0, 3.0, 0.0]]);
    let labels = Labels::from_one_based(&[1, 1, 2, 2], 2).unwrap();
    let z = ScoreMatrix(z);
    // The tie in the last column goes to class 1, which is wrong.
    assert_eq!(accuracy(&z, &labels).unwrap(), 75.0);
    // Thresholds run from 0 to 1.5; the best one keeps the second and third samples.
    assert_eq!(uniform_accuracy(&z, &labels, 200).unwrap(), 50.0);
}

fn rotate_rows(h: &Matrix, q: &nalgebra::DMatrix<f64>) -> Matrix {
    from_na(&(q * to_na(h)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nc_metrics_are_rotation_invariant(seed in 0u64..100_000) {
        let inst = instance(seed);
        let mut r = rng(seed ^ 0xabc);
        let q = random_rotation(&mut r, inst.h.rows());
        let w_rot = from_na(&(to_na(&inst.w) * q.transpose()));
        let h_rot = rotate_rows(&inst.h, &q);
        let a = nc_metrics(&inst.w, &inst.h, &inst.labels, true).unwrap();
        let b = nc_metrics(&w_rot, &h_rot, &inst.labels, true).unwrap();
        prop_assert!((a.nc1 - b.nc1).abs() < 1e-8 * (1.0 + a.nc1));
        prop_assert!((a.nc2 - b.nc2).abs() < 1e-8);
        prop_assert!((a.nc3 - b.nc3).abs() < 1e-8);
    }

    #[test]
    fn uniform_never_exceeds_accuracy(seed in 0u64..100_000, nt in 1usize..300) {
        let inst = instance(seed);
        let mut r = rng(seed);
        let b: Vec<f64> = (0..inst.w.rows()).map(|_| r.random_range(-1.0..1.0)).collect();
        let z = Matrix::from_fn(inst.w.rows(), inst.h.cols(), |j, i| {
            (0..inst.w.cols()).map(|p| inst.w[(j, p)] * inst.h[(p, i)]).sum::<f64>() - b[j]
        });
        let z = ScoreMatrix(z);
        prop_assert!(uniform_accuracy(&z, &inst.labels, nt).unwrap() <= accuracy(&z, &inst.labels).unwrap());
    }

    #[test]
    fn distinctiveness_ignores_sample_scaling(seed in 0u64..100_000) {
        let inst = instance(seed);
        let mut r = rng(seed ^ 7);
        let scales: Vec<f64> = (0..inst.h.cols()).map(|_| r.random_range(0.01..100.0)).collect();
        let scaled = Matrix::from_fn(inst.h.rows(), inst.h.cols(), |p, i| inst.h[(p, i)] * scales[i]);
        let a = feature_properties(&inst.h, &inst.labels).unwrap();
        let b = feature_properties(&scaled, &inst.labels).unwrap();
        prop_assert!((a.e_dis - b.e_dis).abs() < 1e-9);
    }

    #[test]
    fn compactness_ignores_translation(seed in 0u64..100_000, shift in -20.0f64..20.0) {
        let inst = instance(seed);
        let moved = Matrix::from_fn(inst.h.rows(), inst.h.cols(), |p, i| inst.h[(p, i)] + shift * (p as f64 + 1.0));
        let a = feature_properties(&inst.h, &inst.labels).unwrap();
        let b = feature_properties(&moved, &inst.labels).unwrap();
        prop_assert!((a.e_com - b.e_com).abs() < 1e-9);
    }
}
