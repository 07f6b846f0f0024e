//! Turns a live Cyton byte stream into fixed-length epochs.

use thiserror::Error;

use crate::ingest::{
    microvolts_to_counts, CytonPacket, EegEpoch, EpochError, PacketError, StreamFramer, CHANNELS, FRAME_LEN,
};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("window must span at least one second, got {0} s")]
    BadWindow(f64),
    #[error("epoch has {0} channels; the Cyton stream carries {CHANNELS}")]
    ChannelCount(usize),
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Epoch(#[from] EpochError),
}

/// Framer plus a per-channel sample buffer. Windows do not overlap; a partial
/// window at end of stream is dropped.
#[derive(Debug)]
pub struct WindowAssembler {
    framer: StreamFramer,
    rate_hz: f64,
    gain: u32,
    window: usize,
    rows: Vec<Vec<f64>>,
    last_index: Option<u8>,
    /// Samples missing according to the packet sample counter.
    pub index_gaps: usize,
    pub windows: usize,
}

impl WindowAssembler {
    pub fn new(rate_hz: f64, window_seconds: f64, gain: u32) -> Result<Self, StreamError> {
        if !(window_seconds.is_finite() && window_seconds >= 1.0) {
            return Err(StreamError::BadWindow(window_seconds));
        }
        // validates the gain up front
        crate::ingest::counts_to_microvolts(0, gain)?;
        let window = (rate_hz * window_seconds).round() as usize;
        Ok(Self {
            framer: StreamFramer::new(),
            rate_hz,
            gain,
            window,
            rows: (0..CHANNELS).map(|_| Vec::with_capacity(window)).collect(),
            last_index: None,
            index_gaps: 0,
            windows: 0,
        })
    }

    pub fn window_samples(&self) -> usize {
        self.window
    }

    pub fn skipped_bytes(&self) -> usize {
        self.framer.total_skipped
    }

    pub fn packets(&self) -> usize {
        self.framer.total_packets
    }

    /// Feeds raw bytes; returns every window completed by them and the bytes
    /// discarded while resynchronizing.
    pub fn push_bytes(&mut self, chunk: &[u8]) -> Result<(Vec<EegEpoch>, usize), StreamError> {
        let (packets, skipped) = self.framer.push(chunk);
        Ok((self.push_packets(&packets)?, skipped))
    }

    pub fn push_packets(&mut self, packets: &[CytonPacket]) -> Result<Vec<EegEpoch>, StreamError> {
        let mut out = Vec::new();
        for p in packets {
            if let Some(last) = self.last_index {
                self.index_gaps += usize::from(p.sample_index.wrapping_sub(last).wrapping_sub(1));
            }
            self.last_index = Some(p.sample_index);
            let sample = p.to_sample(self.gain)?;
            for (row, &v) in self.rows.iter_mut().zip(&sample.channels_uv) {
                row.push(v);
            }
            if self.rows[0].len() == self.window {
                let rows = std::mem::replace(&mut self.rows, (0..CHANNELS).map(|_| Vec::with_capacity(self.window)).collect());
                out.push(EegEpoch::from_channels(self.rate_hz, rows)?);
                self.windows += 1;
            }
        }
        Ok(out)
    }

    /// Ends the stream. Returns the bytes of a trailing partial frame, which
    /// count as skipped.
    pub fn finish(&mut self) -> usize {
        self.framer.finish()
    }
}

/// Quantizes an 8-channel epoch into Cyton packets with a wrapping sample
/// counter starting at 0.
pub fn epoch_to_packets(epoch: &EegEpoch, gain: u32) -> Result<Vec<CytonPacket>, StreamError> {
    if epoch.channels() != CHANNELS {
        return Err(StreamError::ChannelCount(epoch.channels()));
    }
    (0..epoch.samples())
        .map(|t| {
            let mut channel_counts = [0; CHANNELS];
            for (c, count) in channel_counts.iter_mut().enumerate() {
                *count = microvolts_to_counts(epoch.channel(c)[t], gain)?;
            }
            Ok(CytonPacket {
                sample_index: t as u8,
                channel_counts,
                aux: [0; 6],
            })
        })
        .collect()
}

pub fn packets_to_bytes(packets: &[CytonPacket]) -> Result<Vec<u8>, StreamError> {
    let mut out = Vec::with_capacity(packets.len() * FRAME_LEN);
    for p in packets {
        out.extend_from_slice(&p.to_bytes()?);
    }
    Ok(out)
}
