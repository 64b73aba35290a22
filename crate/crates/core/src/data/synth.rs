use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{Trial, TrialSet};
use crate::error::{cfg_err, Result};

/// One class: a sinusoidal burst on a channel subset.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBand {
    pub freq_hz: f64,
    pub channels: Vec<usize>,
    /// Burst window `[start, end)` in samples.
    pub window: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub trials_per_class: usize,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    pub bands: Vec<ClassBand>,
    /// Burst power over total noise power on active channels, in dB.
    pub snr_db: f64,
    /// Relative mix of white and 1/f noise; both zero gives clean tones.
    pub white_amp: f64,
    pub pink_amp: f64,
    /// Per-subject gain drawn from `1 +/- gain_jitter`.
    pub gain_jitter: f64,
    /// Per-subject frequency offset drawn from `+/- freq_jitter_hz`.
    pub freq_jitter_hz: f64,
    pub seed: u64,
}

const CLASS_FREQS: [f64; 6] = [10.0, 20.0, 15.0, 25.0, 12.5, 30.0];

impl SynthConfig {
    /// Four subjects, 100 trials per class, 4 s at 250 Hz on 3 channels.
    pub fn new(classes: usize, channels: usize, samples: usize, seed: u64) -> Self {
        let window = (samples / 8, samples - samples / 8);
        let bands = (0..classes)
            .map(|k| ClassBand {
                freq_hz: CLASS_FREQS.get(k).copied().unwrap_or(10.0 + 2.5 * k as f64),
                channels: vec![k % channels, (k + 1) % channels],
                window,
            })
            .map(|mut b| {
                b.channels.dedup();
                b
            })
            .collect();
        Self {
            subjects: 4,
            trials_per_class: 100,
            channels,
            samples,
            sample_rate: 250.0,
            bands,
            snr_db: 0.0,
            white_amp: 1.0,
            pink_amp: 1.0,
            gain_jitter: 0.2,
            freq_jitter_hz: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.trials_per_class == 0 || self.channels == 0 || self.samples == 0 {
            return Err(cfg_err!("subjects, trials per class, channels and samples must be positive"));
        }
        if self.bands.len() < 2 {
            return Err(cfg_err!("need at least two classes"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(cfg_err!("sample rate must be positive"));
        }
        for (i, b) in self.bands.iter().enumerate() {
            if b.window.0 >= b.window.1 || b.window.1 > self.samples {
                return Err(cfg_err!("class {i} burst window {:?} outside [0, {})", b.window, self.samples));
            }
            if b.channels.is_empty() || b.channels.iter().any(|&c| c >= self.channels) {
                return Err(cfg_err!("class {i} channel subset {:?} invalid", b.channels));
            }
            if !(b.freq_hz > 0.0 && b.freq_hz < self.sample_rate / 2.0) {
                return Err(cfg_err!("class {i} frequency {} Hz outside (0, Nyquist)", b.freq_hz));
            }
            for other in &self.bands[..i] {
                if other.freq_hz == b.freq_hz && other.channels == b.channels {
                    return Err(cfg_err!("class band specs must be distinct"));
                }
            }
        }
        if self.white_amp < 0.0 || self.pink_amp < 0.0 || !self.snr_db.is_finite() {
            return Err(cfg_err!("noise amplitudes must be non-negative and SNR finite"));
        }
        Ok(())
    }
}

fn unit_variance(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
}

/// White noise shaped to amplitude `~ f^(-1/2)` in the frequency domain.
fn pink(rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>, n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k);
        *c *= if f == 0 { 0.0 } else { 1.0 / (f as f64).sqrt() };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    unit_variance(&mut out);
    out
}

/// Balanced trials, subject-major then class then repetition; deterministic in `seed`.
pub fn generate(cfg: &SynthConfig) -> Result<TrialSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut planner = FftPlanner::new();
    let (c, t) = (cfg.channels, cfg.samples);
    let mix = (cfg.white_amp.powi(2) + cfg.pink_amp.powi(2)).sqrt();
    // unit-amplitude sinusoid has power 1/2
    let noise_sd = if mix > 0.0 { (0.5 / 10f64.powf(cfg.snr_db / 10.0)).sqrt() } else { 0.0 };

    let mut trials = Vec::with_capacity(cfg.subjects * cfg.bands.len() * cfg.trials_per_class);
    for subject in 0..cfg.subjects {
        let gain = 1.0 + rng.random_range(-1.0..=1.0) * cfg.gain_jitter;
        let df = rng.random_range(-1.0..=1.0) * cfg.freq_jitter_hz;
        for (label, band) in cfg.bands.iter().enumerate() {
            let f = band.freq_hz + df;
            for _ in 0..cfg.trials_per_class {
                let phase = rng.random_range(0.0..2.0 * PI);
                let mut x = vec![0.0; c * t];
                if mix > 0.0 {
                    for ch in 0..c {
                        let row = &mut x[ch * t..][..t];
                        let mut white: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
                        unit_variance(&mut white);
                        let pinkv = pink(&mut rng, &mut planner, t);
                        for ((v, w), p) in row.iter_mut().zip(&white).zip(&pinkv) {
                            *v = noise_sd * (cfg.white_amp * w + cfg.pink_amp * p) / mix;
                        }
                    }
                }
                for &ch in &band.channels {
                    let row = &mut x[ch * t..][..t];
                    for (s, v) in row.iter_mut().enumerate().take(band.window.1).skip(band.window.0) {
                        *v += gain * (2.0 * PI * f * s as f64 / cfg.sample_rate + phase).sin();
                    }
                }
                trials.push(Trial {
                    subject: subject as u32,
                    label: label as u32,
                    samples: x,
                });
            }
        }
    }
    TrialSet::new(c, t, cfg.bands.len(), cfg.sample_rate, trials)
}
