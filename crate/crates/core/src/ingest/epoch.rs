use thiserror::Error;

use crate::label::EmotionLabel;

pub const DEFAULT_RATE_HZ: f64 = 250.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpochError {
    #[error("epoch needs at least one channel")]
    NoChannels,
    #[error("channel {channel} has {got} samples, expected {expected}")]
    RaggedChannels {
        channel: usize,
        got: usize,
        expected: usize,
    },
    #[error("epoch has {samples} samples, fewer than one second at {rate_hz} Hz")]
    TooShort { samples: usize, rate_hz: f64 },
    #[error("sampling rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("non-finite value at channel {channel}, sample {sample}")]
    NonFinite { channel: usize, sample: usize },
    #[error("dataset epoch {index} is unlabeled")]
    Unlabeled { index: usize },
    #[error("dataset epoch {index} has rate {got} Hz / {channels} channels, expected {rate_hz} Hz / {expected_channels}")]
    Heterogeneous {
        index: usize,
        got: f64,
        channels: usize,
        rate_hz: f64,
        expected_channels: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
}

/// A fixed-rate multichannel EEG window, channel-major, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegEpoch {
    rate_hz: f64,
    channels: usize,
    samples: usize,
    data: Vec<f64>,
    pub label: Option<EmotionLabel>,
    pub subject: Option<String>,
}

impl EegEpoch {
    /// Builds an epoch from channel-major data (`channels × samples`).
    pub fn new(rate_hz: f64, channels: usize, data: Vec<f64>) -> Result<Self, EpochError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(EpochError::BadRate(rate_hz));
        }
        if channels == 0 || data.is_empty() {
            return Err(EpochError::NoChannels);
        }
        let samples = data.len() / channels;
        if samples * channels != data.len() {
            return Err(EpochError::RaggedChannels {
                channel: channels - 1,
                got: data.len() - samples * (channels - 1),
                expected: samples,
            });
        }
        if (samples as f64) < rate_hz {
            return Err(EpochError::TooShort { samples, rate_hz });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(EpochError::NonFinite {
                channel: i / samples,
                sample: i % samples,
            });
        }
        Ok(Self {
            rate_hz,
            channels,
            samples,
            data,
            label: None,
            subject: None,
        })
    }

    pub fn from_channels(rate_hz: f64, rows: Vec<Vec<f64>>) -> Result<Self, EpochError> {
        let channels = rows.len();
        let expected = rows.first().map_or(0, Vec::len);
        if let Some((channel, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != expected) {
            return Err(EpochError::RaggedChannels {
                channel,
                got: row.len(),
                expected,
            });
        }
        Self::new(rate_hz, channels, rows.into_iter().flatten().collect())
    }

    pub fn with_label(mut self, label: EmotionLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    /// Channel-major samples.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples as f64 / self.rate_hz
    }
}

/// Labeled epochs sharing one rate and channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct EegDataset {
    epochs: Vec<EegEpoch>,
}

impl EegDataset {
    pub fn new(epochs: Vec<EegEpoch>) -> Result<Self, EpochError> {
        let first = epochs.first().ok_or(EpochError::EmptyDataset)?;
        let (rate_hz, expected_channels) = (first.rate_hz, first.channels);
        for (index, e) in epochs.iter().enumerate() {
            if e.label.is_none() {
                return Err(EpochError::Unlabeled { index });
            }
            if e.rate_hz != rate_hz || e.channels != expected_channels {
                return Err(EpochError::Heterogeneous {
                    index,
                    got: e.rate_hz,
                    channels: e.channels,
                    rate_hz,
                    expected_channels,
                });
            }
        }
        Ok(Self { epochs })
    }

    pub fn epochs(&self) -> &[EegEpoch] {
        &self.epochs
    }

    pub fn into_epochs(self) -> Vec<EegEpoch> {
        self.epochs
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn rate_hz(&self) -> f64 {
        self.epochs[0].rate_hz
    }

    pub fn channels(&self) -> usize {
        self.epochs[0].channels
    }

    /// Label of every epoch, in order.
    pub fn labels(&self) -> Vec<EmotionLabel> {
        self.epochs.iter().map(|e| e.label.expect("dataset epochs are labeled")).collect()
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for l in self.labels() {
            counts[l.code()] += 1;
        }
        counts
    }
}
