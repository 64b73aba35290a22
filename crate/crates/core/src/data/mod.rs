//! Labeled multichannel trials: synthetic generation, the `EEGT` binary
//! format, CSV export and evaluation splits.

mod eegt;
mod split;
mod synth;

pub use eegt::{read_trials, trials_from_bytes, trials_to_bytes, write_csv, write_trials, EEGT_MAGIC, EEGT_VERSION};
pub use split::{holdout, split, Protocol};
pub use synth::{generate, ClassBand, SynthConfig};

use crate::error::{data_err, dim_err, Result};
use crate::ndarr::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub subject: u32,
    pub label: u32,
    /// `C * T` samples, channel-major.
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    pub channels: usize,
    pub samples: usize,
    pub classes: usize,
    pub sample_rate: f64,
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn new(channels: usize, samples: usize, classes: usize, sample_rate: f64, trials: Vec<Trial>) -> Result<Self> {
        let set = Self {
            channels,
            samples,
            classes,
            sample_rate,
            trials,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials.is_empty() {
            return Err(data_err!("trial set is empty"));
        }
        if self.channels == 0 || self.samples == 0 || self.classes == 0 {
            return Err(data_err!("channels, samples and classes must be positive"));
        }
        for (i, t) in self.trials.iter().enumerate() {
            if t.samples.len() != self.channels * self.samples {
                return Err(dim_err!(
                    "trial {i} has {} samples, expected {}",
                    t.samples.len(),
                    self.channels * self.samples
                ));
            }
            if t.label as usize >= self.classes {
                return Err(data_err!("trial {i} label {} outside {} classes", t.label, self.classes));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.trials.iter().map(|t| t.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.label as usize).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for t in &self.trials {
            c[t.label as usize] += 1;
        }
        c
    }

    /// `[B, C, T]` tensor and labels for the given trial indices.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per = self.channels * self.samples;
        let mut data = Vec::with_capacity(idx.len() * per);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let t = self
                .trials
                .get(i)
                .ok_or_else(|| data_err!("trial index {i} out of range"))?;
            data.extend_from_slice(&t.samples);
            labels.push(t.label as usize);
        }
        Ok((Tensor::new(vec![idx.len(), self.channels, self.samples], data)?, labels))
    }

    /// New set over the chosen trials; errors when the selection is empty.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            self.channels,
            self.samples,
            self.classes,
            self.sample_rate,
            idx.iter().map(|&i| self.trials[i].clone()).collect(),
        )
    }
}
