//! Class-separable synthetic EEG.
//!
//! Each channel is a sum of three sinusoids per frequency band (random
//! frequency inside the band, random phase), scaled so the band's RMS equals
//! `amplitude / sqrt(2)`, times a per-channel gain in `[0.85, 1.15]`, plus white
//! Gaussian noise. Randomness comes from [`SeededRng`] (PCG32 + Box–Muller).

use std::f64::consts::TAU;

use eegart_autodiff::SeededRng;
use thiserror::Error;

use super::epoch::EegEpoch;
use crate::features::DEFAULT_BANDS;
use crate::label::EmotionLabel;

/// Per-band sinusoid amplitude in µV: delta, theta, alpha, beta, gamma.
pub const BAND_AMPLITUDES_UV: [[f64; 5]; 4] = [
    [4.0, 4.0, 6.0, 14.0, 8.0],   // anger
    [6.0, 8.0, 16.0, 4.0, 2.0],   // sadness
    [10.0, 12.0, 4.0, 6.0, 10.0], // fear
    [4.0, 4.0, 6.0, 8.0, 16.0],   // happiness
];
pub const DEFAULT_NOISE_UV: f64 = 2.0;
const SINES_PER_BAND: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("epoch duration must be at least 1 s, got {0}")]
    BadDuration(f64),
    #[error("synthetic sampling rate must be at least 100 Hz, got {0}")]
    BadRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub channels: usize,
    pub noise_uv: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            channels: 8,
            noise_uv: DEFAULT_NOISE_UV,
        }
    }
}

/// Default 8-channel epoch with σ = 2 µV noise.
pub fn synth_epoch(label: EmotionLabel, seed: u64, rate_hz: f64, seconds: f64) -> Result<EegEpoch, SynthError> {
    synth_epoch_with(label, seed, rate_hz, seconds, SynthParams::default())
}

pub fn synth_epoch_with(
    label: EmotionLabel,
    seed: u64,
    rate_hz: f64,
    seconds: f64,
    params: SynthParams,
) -> Result<EegEpoch, SynthError> {
    if !(seconds >= 1.0 && seconds.is_finite()) {
        return Err(SynthError::BadDuration(seconds));
    }
    if !(rate_hz >= 100.0 && rate_hz.is_finite()) {
        return Err(SynthError::BadRate(rate_hz));
    }
    let samples = (rate_hz * seconds).round() as usize;
    let mut rng = SeededRng::derive(seed, label.code() as u64);
    let amplitudes = BAND_AMPLITUDES_UV[label.code()];
    let per_sine = 1.0 / (SINES_PER_BAND as f64).sqrt();
    let mut data = vec![0.0; params.channels * samples];
    for row in data.chunks_mut(samples) {
        let gain = rng.uniform_in(0.85, 1.15);
        for (band, &amp) in DEFAULT_BANDS.iter().zip(&amplitudes) {
            for _ in 0..SINES_PER_BAND {
                let freq = rng.uniform_in(band.lo_hz, band.hi_hz);
                let phase = rng.uniform_in(0.0, TAU);
                let a = gain * amp * per_sine;
                for (t, v) in row.iter_mut().enumerate() {
                    *v += a * (TAU * freq * t as f64 / rate_hz + phase).sin();
                }
            }
        }
        for v in row.iter_mut() {
            *v += params.noise_uv * rng.normal();
        }
    }
    let epoch = EegEpoch::new(rate_hz, params.channels, data).expect("synthetic epoch is valid");
    Ok(epoch.with_label(label))
}

/// `per_class` epochs of every label, labels interleaved, seeds derived from
/// `seed` and the epoch index.
pub fn synth_dataset(
    labels: &[EmotionLabel],
    per_class: usize,
    seed: u64,
    rate_hz: f64,
    seconds: f64,
    params: SynthParams,
) -> Result<Vec<EegEpoch>, SynthError> {
    let mut out = Vec::with_capacity(labels.len() * per_class);
    for i in 0..per_class {
        for &label in labels {
            let epoch_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            out.push(synth_epoch_with(label, epoch_seed, rate_hz, seconds, params)?);
        }
    }
    Ok(out)
}
