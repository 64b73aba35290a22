//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod oracles;
pub mod wavelet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdwt_core::backbone::Model;
use rdwt_core::config::RunConfig;
use rdwt_core::data::{generate, holdout, split, Protocol, SynthConfig, TrialSet};
use rdwt_core::ndarr::Tensor;
use rdwt_core::train::{evaluate, fit, FitOutcome};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// The default synthetic set: 2 classes, 4 subjects, 100 trials per class
/// and subject, C=3, T=1000 at 250 Hz.
pub fn default_set(snr_db: f64, seed: u64) -> TrialSet {
    let mut s = SynthConfig::new(2, 3, 1000, seed);
    s.snr_db = snr_db;
    generate(&s).unwrap()
}

/// Subject-dependent 80/20 split, then 20% of the training part held out
/// for early stopping.
pub fn protocol_splits(set: &TrialSet, seed: u64) -> (TrialSet, TrialSet, TrialSet) {
    let (train, test) = split(
        set,
        &Protocol::SubjectDependent {
            train_frac: 0.8,
            seed,
        },
    )
    .unwrap();
    let (train, val) = holdout(&train, 0.2, seed ^ 0x9e37).unwrap();
    (train, val, test)
}

pub struct RunResult {
    pub outcome: FitOutcome,
    pub test_acc: f64,
    pub seconds: f64,
}

/// Trains a fresh model on the three splits and scores it on the test part.
pub fn train_and_test(rc: &RunConfig, splits: &(TrialSet, TrialSet, TrialSet), seed: u64) -> RunResult {
    let start = std::time::Instant::now();
    let mut tc = rc.train.clone();
    tc.seed = seed;
    let mut model = Model::new(rc.model.clone(), seed).unwrap();
    let outcome = fit(&mut model, &splits.0, &splits.1, &tc, |_| {}).unwrap();
    let test_acc = evaluate(&model, &splits.2).unwrap().accuracy;
    RunResult {
        outcome,
        test_acc,
        seconds: start.elapsed().as_secs_f64(),
    }
}
