//! Accuracy and kappa against recomputation from raw (truth, prediction) pairs.

mod common;

use common::oracles::brute_force_scores;
use common::rng;
use rand::Rng;
use rdwt_core::train::{cohen_kappa, micro_accuracy, ConfusionMatrix};

#[test]
fn random_matrices_match_brute_force() {
    let mut r = rng(31);
    for _ in 0..1000 {
        let k = r.random_range(2..6);
        let rows: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| r.random_range(0..30)).collect()).collect();
        if rows.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        let cm = ConfusionMatrix::from_counts(&rows).unwrap();
        let (acc, kappa) = brute_force_scores(&rows);
        assert!((micro_accuracy(&cm).unwrap() - acc).abs() <= 1e-12);
        assert!((cohen_kappa(&cm).unwrap().value - kappa).abs() <= 1e-12);
    }
}

#[test]
fn hand_example() {
    let cm = ConfusionMatrix::from_counts(&[vec![25, 5], vec![10, 60]]).unwrap();
    assert!((micro_accuracy(&cm).unwrap() - 0.85).abs() < 1e-15);
    assert!((cohen_kappa(&cm).unwrap().value - 0.29 / 0.44).abs() < 1e-12);
}

#[test]
fn chance_predictions_have_near_zero_kappa() {
    let mut r = rng(32);
    let truth: Vec<usize> = (0..10_000).map(|_| r.random_range(0..3)).collect();
    let pred: Vec<usize> = (0..10_000).map(|_| r.random_range(0..3)).collect();
    let cm = ConfusionMatrix::from_pairs(&truth, &pred, 3).unwrap();
    assert!(cohen_kappa(&cm).unwrap().value.abs() <= 0.05);
}

#[test]
fn kappa_is_one_only_for_diagonal_matrices() {
    let mut r = rng(33);
    for _ in 0..200 {
        let k = r.random_range(2..5);
        let mut rows = vec![vec![0u64; k]; k];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = r.random_range(1..20);
        }
        let diag = ConfusionMatrix::from_counts(&rows).unwrap();
        assert_eq!(cohen_kappa(&diag).unwrap().value, 1.0);
        rows[0][1] += 1;
        let off = ConfusionMatrix::from_counts(&rows).unwrap();
        assert!(cohen_kappa(&off).unwrap().value < 1.0);
    }
}

#[test]
fn empty_matrix_is_an_error() {
    let cm = ConfusionMatrix::new(3);
    assert!(micro_accuracy(&cm).is_err());
    assert!(cohen_kappa(&cm).is_err());
}
