//! Spectral features per channel and the electrode montage graph.
//!
//! The periodogram uses a periodic Hann window and is scaled so that
//! `Σ psd·Δf = Σ (w·x)² / Σ w²`, i.e. the mean power of the windowed signal.
//! Band features come from frequency-domain masking: out-of-band DFT bins are
//! zeroed (both halves of the spectrum) and the inverse transform is scored
//! with the Gaussian differential entropy `0.5·ln(2πe·σ̂²)`.

use std::f64::consts::{E, PI, TAU};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::EegEpoch;

/// Name and `[lo, hi)` edges in Hz of the five default bands.
pub const DEFAULT_BANDS: [BandEdges; 5] = [
    BandEdges::new("delta", 1.0, 4.0),
    BandEdges::new("theta", 4.0, 8.0),
    BandEdges::new("alpha", 8.0, 14.0),
    BandEdges::new("beta", 14.0, 31.0),
    BandEdges::new("gamma", 31.0, 50.0),
];

/// Variance floor for [`diff_entropy`].
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const MIN_SIGNAL_LEN: usize = 16;
pub const DEFAULT_KERNEL_WIDTH: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("signal of length {0} is shorter than {MIN_SIGNAL_LEN} samples")]
    TooShort(usize),
    #[error("band {name} [{lo_hz}, {hi_hz}) is outside (0, {nyquist_hz}] Hz")]
    BandOutOfRange {
        name: String,
        lo_hz: f64,
        hi_hz: f64,
        nyquist_hz: f64,
    },
    #[error("adjacency is not symmetric at ({0}, {1})")]
    AsymmetricInput(usize, usize),
    #[error("adjacency has negative weight at ({0}, {1})")]
    NegativeWeight(usize, usize),
    #[error("adjacency diagonal must be zero, found {1} at node {0}")]
    NonzeroDiagonal(usize, f64),
    #[error("montage needs at least two nodes, got {0}")]
    TooFewNodes(usize),
}

/// Compile-time band table entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandEdges {
    pub name: &'static str,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl BandEdges {
    pub const fn new(name: &'static str, lo_hz: f64, hi_hz: f64) -> Self {
        Self { name, lo_hz, hi_hz }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandDef {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl BandDef {
    pub fn new(name: impl Into<String>, lo_hz: f64, hi_hz: f64) -> Self {
        Self {
            name: name.into(),
            lo_hz,
            hi_hz,
        }
    }

    pub fn defaults() -> Vec<BandDef> {
        DEFAULT_BANDS.iter().map(|b| BandDef::new(b.name, b.lo_hz, b.hi_hz)).collect()
    }

    pub fn contains(&self, f: f64) -> bool {
        self.lo_hz <= f && f < self.hi_hz
    }

    pub fn check(&self, rate_hz: f64) -> Result<(), FeatureError> {
        let nyquist_hz = rate_hz / 2.0;
        if !(self.lo_hz > 0.0 && self.lo_hz < self.hi_hz && self.hi_hz <= nyquist_hz) {
            return Err(FeatureError::BandOutOfRange {
                name: self.name.clone(),
                lo_hz: self.lo_hz,
                hi_hz: self.hi_hz,
                nyquist_hz,
            });
        }
        Ok(())
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.freqs.get(1).map_or(0.0, |f| f - self.freqs[0])
    }

    /// `Σ psd·Δf` over every bin.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.bin_width()
    }
}

fn fft(signal: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

pub fn periodogram(signal: &[f64], rate_hz: f64) -> Result<Spectrum, FeatureError> {
    let n = signal.len();
    if n < MIN_SIGNAL_LEN {
        return Err(FeatureError::TooShort(n));
    }
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos()).collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let windowed: Vec<f64> = signal.iter().zip(&window).map(|(x, w)| x * w).collect();
    let spectrum = fft(&windowed, &mut FftPlanner::new());
    let half = n / 2;
    let scale = 1.0 / (rate_hz * window_power);
    let mut freqs = Vec::with_capacity(half + 1);
    let mut psd = Vec::with_capacity(half + 1);
    for (k, x) in spectrum.iter().take(half + 1).enumerate() {
        let one_sided = if k == 0 || (n.is_multiple_of(2) && k == half) { 1.0 } else { 2.0 };
        freqs.push(k as f64 * rate_hz / n as f64);
        psd.push(one_sided * x.norm_sqr() * scale);
    }
    Ok(Spectrum { freqs, psd })
}

/// `Σ psd·Δf` over bins with `lo ≤ f < hi`.
pub fn band_power(spectrum: &Spectrum, band: &BandDef) -> Result<f64, FeatureError> {
    let nyquist = spectrum.freqs.last().copied().unwrap_or(0.0);
    band.check(2.0 * nyquist)?;
    let df = spectrum.bin_width();
    Ok(spectrum
        .freqs
        .iter()
        .zip(&spectrum.psd)
        .filter(|(&f, _)| band.contains(f))
        .map(|(_, p)| p * df)
        .sum())
}

/// Unbiased sample variance.
pub fn sample_variance(signal: &[f64]) -> f64 {
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    signal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Gaussian differential entropy in nats, `0.5·ln(2πe·max(σ̂², 1e−12))`.
pub fn diff_entropy(signal: &[f64]) -> Result<f64, FeatureError> {
    if signal.len() < MIN_SIGNAL_LEN {
        return Err(FeatureError::TooShort(signal.len()));
    }
    let var = sample_variance(signal).max(VARIANCE_FLOOR);
    Ok(0.5 * (2.0 * PI * E * var).ln())
}

/// Per-channel, per-band differential entropy, row-major `channels × bands`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    channels: usize,
    bands: usize,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(channels: usize, bands: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), channels * bands, "feature matrix shape");
        Self { channels, bands, values }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.bands)
    }

    pub fn get(&self, channel: usize, band: usize) -> f64 {
        self.values[channel * self.bands + band]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean over channels of one band column.
    pub fn band_mean(&self, band: usize) -> f64 {
        (0..self.channels).map(|c| self.get(c, band)).sum::<f64>() / self.channels as f64
    }
}

/// Band-passes every channel by DFT masking and scores each band with
/// [`diff_entropy`].
pub fn extract_features(epoch: &EegEpoch, bands: &[BandDef]) -> Result<FeatureVector, FeatureError> {
    for band in bands {
        band.check(epoch.rate_hz())?;
    }
    let n = epoch.samples();
    if n < MIN_SIGNAL_LEN {
        return Err(FeatureError::TooShort(n));
    }
    let mut planner = FftPlanner::new();
    let inverse = planner.plan_fft_inverse(n);
    let bin_hz = epoch.rate_hz() / n as f64;
    let masks: Vec<Vec<bool>> = bands
        .iter()
        .map(|b| (0..n).map(|k| b.contains(k.min(n - k) as f64 * bin_hz)).collect())
        .collect();

    let mut values = Vec::with_capacity(epoch.channels() * bands.len());
    let mut filtered = vec![Complex64::default(); n];
    let mut real = vec![0.0; n];
    for c in 0..epoch.channels() {
        let spectrum = fft(epoch.channel(c), &mut planner);
        for mask in &masks {
            for ((out, &x), &keep) in filtered.iter_mut().zip(&spectrum).zip(mask) {
                *out = if keep { x } else { Complex64::default() };
            }
            inverse.process(&mut filtered);
            for (r, z) in real.iter_mut().zip(&filtered) {
                *r = z.re / n as f64;
            }
            values.push(diff_entropy(&real)?);
        }
    }
    Ok(FeatureVector::new(epoch.channels(), bands.len(), values))
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "square matrix data");
        Self { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(n, vec![0.0; n * n])
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        Self::new(n, (0..n * n).map(|i| f(i / n, i % n)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

/// `D^{-1/2}(A + I)D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalized_adjacency(a: &SquareMatrix) -> Result<SquareMatrix, FeatureError> {
    let n = a.n();
    for i in 0..n {
        if a.get(i, i) != 0.0 {
            return Err(FeatureError::NonzeroDiagonal(i, a.get(i, i)));
        }
        for j in 0..n {
            if a.get(i, j) < 0.0 {
                return Err(FeatureError::NegativeWeight(i, j));
            }
            if a.get(i, j) != a.get(j, i) {
                return Err(FeatureError::AsymmetricInput(i, j));
            }
        }
    }
    let dinv: Vec<f64> = (0..n)
        .map(|i| 1.0 / (1.0 + (0..n).map(|j| a.get(i, j)).sum::<f64>()).sqrt())
        .collect();
    Ok(SquareMatrix::from_fn(n, |i, j| {
        let m = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
        m * dinv[i] * dinv[j]
    }))
}

/// Headband electrodes used for the default 8-node montage.
pub const HEADBAND_ELECTRODES: [&str; 8] = ["Fp1", "Fp2", "C3", "C4", "P7", "P8", "O1", "O2"];

/// Unit-sphere scalp positions of [`HEADBAND_ELECTRODES`]; x to the right ear,
/// y to the nasion, z to the vertex.
pub fn headband_positions() -> [[f64; 3]; 8] {
    let equator = |azimuth_deg: f64| {
        let a = azimuth_deg.to_radians();
        [a.cos(), a.sin(), 0.0]
    };
    // C3/C4 sit 46° from the vertex on the coronal plane.
    let (s, c) = 46f64.to_radians().sin_cos();
    [
        equator(108.0),
        equator(72.0),
        [-s, 0.0, c],
        [s, 0.0, c],
        equator(216.0),
        equator(324.0),
        equator(252.0),
        equator(288.0),
    ]
}

/// Electrode graph with Gaussian-kernel edge weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MontageGraph {
    pub positions: Vec<[f64; 3]>,
    pub adjacency: SquareMatrix,
}

impl MontageGraph {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// `w_ij = exp(−d_ij² / θ²)` on chord distances, zero diagonal.
    pub fn from_positions(positions: Vec<[f64; 3]>, theta: f64) -> Self {
        let n = positions.len();
        let adjacency = SquareMatrix::from_fn(n, |i, j| {
            if i == j {
                0.0
            } else {
                (-chord_distance_sq(&positions[i], &positions[j]) / (theta * theta)).exp()
            }
        });
        Self { positions, adjacency }
    }
}

pub fn chord_distance_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Deterministic points on the upper unit hemisphere (Fibonacci lattice).
fn hemisphere_positions(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// The headband montage for `n = 8`, otherwise a hemisphere lattice.
pub fn default_montage(n: usize, theta: f64) -> Result<MontageGraph, FeatureError> {
    if n < 2 {
        return Err(FeatureError::TooFewNodes(n));
    }
    let positions = if n == 8 {
        headband_positions().to_vec()
    } else {
        hemisphere_positions(n)
    };
    Ok(MontageGraph::from_positions(positions, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use eegart_autodiff::SeededRng;

    fn sine(freq: f64, rate: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|t| amp * (TAU * freq * t as f64 / rate).sin()).collect()
    }

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let s = periodogram(&[0.0; 64], 250.0).unwrap();
        assert!(s.psd.iter().all(|&p| p == 0.0));
        assert_eq!(band_power(&s, &BandDef::new("a", 8.0, 14.0)).unwrap(), 0.0);
    }

    #[test]
    fn sine_power_is_concentrated() {
        let s = periodogram(&sine(10.0, 250.0, 1024, 1.0), 250.0).unwrap();
        let total = s.total_power();
        assert!((total - 0.5).abs() < 0.025, "{total}");
        let near = band_power(&s, &BandDef::new("near", 9.0, 11.0 + 1e-9)).unwrap();
        assert!(near / total >= 0.95, "{}", near / total);
        let alpha = band_power(&s, &BandDef::new("alpha", 8.0, 14.0)).unwrap();
        assert!(alpha / total >= 0.95);
    }

    #[test]
    fn default_bands_partition_one_to_fifty() {
        let mut rng = SeededRng::new(4);
        let x: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let s = periodogram(&x, 250.0).unwrap();
        let parts: f64 = BandDef::defaults().iter().map(|b| band_power(&s, b).unwrap()).sum();
        let whole = band_power(&s, &BandDef::new("all", 1.0, 50.0)).unwrap();
        assert!((parts - whole).abs() <= 1e-12 * whole);
    }

    #[test]
    fn band_beyond_nyquist_rejected() {
        let s = periodogram(&[1.0; 32], 100.0).unwrap();
        assert!(matches!(
            band_power(&s, &BandDef::new("x", 40.0, 60.0)),
            Err(FeatureError::BandOutOfRange { .. })
        ));
        assert!(periodogram(&[1.0; 15], 100.0).is_err());
    }

    #[test]
    fn entropy_values() {
        // unit variance: 0.5·ln(2πe) = 1.4189385332046727
        let x: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let scale = (15.0f64 / 16.0).sqrt();
        let unit: Vec<f64> = x.iter().map(|v| v * scale).collect();
        assert!((diff_entropy(&unit).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-12);
        let doubled: Vec<f64> = unit.iter().map(|v| 2.0 * v).collect();
        let gap = diff_entropy(&doubled).unwrap() - diff_entropy(&unit).unwrap();
        assert!((gap - 2f64.ln()).abs() < 1e-12);
        let flat = diff_entropy(&[3.0; 32]).unwrap();
        assert!((flat - 0.5 * (2.0 * PI * E * VARIANCE_FLOOR).ln()).abs() < 1e-12);
        assert_eq!(diff_entropy(&[1.0; 8]), Err(FeatureError::TooShort(8)));
    }

    #[test]
    fn entropy_ignores_offsets() {
        let mut rng = SeededRng::new(8);
        let x: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let shifted: Vec<f64> = x.iter().map(|v| v + 42.0).collect();
        assert!((diff_entropy(&x).unwrap() - diff_entropy(&shifted).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn normalized_adjacency_cases() {
        let id = normalized_adjacency(&SquareMatrix::zeros(4)).unwrap();
        assert_eq!(id, SquareMatrix::from_fn(4, |i, j| if i == j { 1.0 } else { 0.0 }));
        let complete = SquareMatrix::from_fn(8, |i, j| if i == j { 0.0 } else { 1.0 });
        let n = normalized_adjacency(&complete).unwrap();
        assert!(n.data().iter().all(|&v| (v - 0.125).abs() < 1e-15));
        let mut bad = SquareMatrix::zeros(3).data().to_vec();
        bad[1] = 0.5;
        assert_eq!(
            normalized_adjacency(&SquareMatrix::new(3, bad.clone())),
            Err(FeatureError::AsymmetricInput(0, 1))
        );
        bad[1] = -0.5;
        bad[3] = -0.5;
        assert_eq!(
            normalized_adjacency(&SquareMatrix::new(3, bad)),
            Err(FeatureError::NegativeWeight(0, 1))
        );
    }

    #[test]
    fn headband_montage() {
        let m = default_montage(8, DEFAULT_KERNEL_WIDTH).unwrap();
        assert!(m.adjacency.is_symmetric(0.0));
        for i in 0..8 {
            assert!((m.positions[i].iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(m.adjacency.get(i, i), 0.0);
            for j in 0..8 {
                if i != j {
                    let w = m.adjacency.get(i, j);
                    assert!(w > 0.0 && w <= 1.0);
                }
            }
        }
        assert_eq!(m, default_montage(8, DEFAULT_KERNEL_WIDTH).unwrap());
        assert!(default_montage(1, 0.6).is_err());
        assert_eq!(default_montage(5, 0.6).unwrap().n(), 5);
    }
}
