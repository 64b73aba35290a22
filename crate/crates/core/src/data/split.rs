use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrialSet;
use crate::error::{cfg_err, data_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Protocol {
    /// Within each subject, `train_frac` of every class goes to training.
    SubjectDependent { train_frac: f64, seed: u64 },
    /// One subject's trials form the test set.
    Loso { held_out: u32 },
}

/// Stratified shuffle of `idx` by class: returns (first, second) with
/// `round(frac * n_class)` of each class in `first`.
fn stratify(set: &TrialSet, idx: &[usize], frac: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for class in 0..set.classes as u32 {
        let mut members: Vec<usize> = idx.iter().copied().filter(|&i| set.trials[i].label == class).collect();
        members.shuffle(rng);
        let k = (frac * members.len() as f64).round() as usize;
        first.extend_from_slice(&members[..k]);
        second.extend_from_slice(&members[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

pub fn split(set: &TrialSet, protocol: &Protocol) -> Result<(TrialSet, TrialSet)> {
    let (train, test) = match *protocol {
        Protocol::SubjectDependent { train_frac, seed } => {
            if !(train_frac > 0.0 && train_frac < 1.0) {
                return Err(cfg_err!("train fraction must lie in (0, 1), got {train_frac}"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut train = Vec::new();
            let mut test = Vec::new();
            for s in set.subjects() {
                let idx: Vec<usize> = (0..set.len()).filter(|&i| set.trials[i].subject == s).collect();
                let (a, b) = stratify(set, &idx, train_frac, &mut rng);
                train.extend(a);
                test.extend(b);
            }
            (train, test)
        }
        Protocol::Loso { held_out } => {
            let subjects = set.subjects();
            if !subjects.contains(&held_out) {
                return Err(data_err!(
                    "subject {held_out} not in data; available subjects: {}",
                    subjects.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
                ));
            }
            (0..set.len()).partition(|&i| set.trials[i].subject != held_out)
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(data_err!("split leaves an empty side ({} train, {} test)", train.len(), test.len()));
    }
    Ok((set.subset(&train)?, set.subset(&test)?))
}

/// Seeded class-stratified holdout: `(rest, held)` with `frac` of each class held.
pub fn holdout(set: &TrialSet, frac: f64, seed: u64) -> Result<(TrialSet, TrialSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..set.len()).collect();
    let (held, rest) = stratify(set, &idx, frac, &mut rng);
    if held.is_empty() || rest.is_empty() {
        return Err(data_err!("holdout of {frac} leaves an empty side"));
    }
    Ok((set.subset(&rest)?, set.subset(&held)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trial;
    use std::collections::HashSet;

    fn set(subjects: u32, per_class: usize) -> TrialSet {
        let mut trials = Vec::new();
        for s in 0..subjects {
            for label in 0..2 {
                for k in 0..per_class {
                    trials.push(Trial {
                        subject: s,
                        label,
                        samples: vec![(s * 1000 + label * 100) as f64 + k as f64],
                    });
                }
            }
        }
        TrialSet::new(1, 1, 2, 250.0, trials).unwrap()
    }

    fn ids(s: &TrialSet) -> HashSet<u64> {
        s.trials.iter().map(|t| t.samples[0] as u64).collect()
    }

    #[test]
    fn subject_dependent_is_stratified_per_subject() {
        let data = set(3, 50);
        let (train, test) = split(&data, &Protocol::SubjectDependent { train_frac: 0.8, seed: 1 }).unwrap();
        for s in 0..3 {
            for label in 0..2 {
                let count = |d: &TrialSet| d.trials.iter().filter(|t| t.subject == s && t.label == label).count();
                assert_eq!((count(&train), count(&test)), (40, 10));
            }
        }
        let (a, b) = (ids(&train), ids(&test));
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), data.len());
    }

    #[test]
    fn loso_holds_out_one_subject() {
        let data = set(4, 5);
        let (train, test) = split(&data, &Protocol::Loso { held_out: 2 }).unwrap();
        assert_eq!(test.subjects(), vec![2]);
        assert_eq!(train.subjects(), vec![0, 1, 3]);
        let err = split(&data, &Protocol::Loso { held_out: 99 }).unwrap_err().to_string();
        assert!(err.contains("0, 1, 2, 3"), "{err}");
    }

    #[test]
    fn holdout_is_seeded_and_stratified() {
        let data = set(2, 10);
        let (rest, held) = holdout(&data, 0.2, 5).unwrap();
        assert_eq!(held.class_counts(), vec![4, 4]);
        assert_eq!(rest.len(), 32);
        assert_eq!(holdout(&data, 0.2, 5).unwrap().1, held);
        assert!(ids(&rest).is_disjoint(&ids(&held)));
    }
}
