//! Cyton 8-channel binary framing.
//!
//! A frame is 33 bytes: header `0xA0`, one sample-index byte, eight 24-bit
//! big-endian two's-complement channel counts, six auxiliary bytes, and a
//! footer in `0xC0..=0xCF`.

use thiserror::Error;

pub const FRAME_LEN: usize = 33;
pub const HEADER: u8 = 0xA0;
pub const DEFAULT_FOOTER: u8 = 0xC0;
pub const CHANNELS: usize = 8;
pub const DEFAULT_GAIN: u32 = 24;
pub const SUPPORTED_GAINS: [u32; 7] = [1, 2, 4, 6, 8, 12, 24];

const COUNT_MIN: i32 = -(1 << 23);
const COUNT_MAX: i32 = (1 << 23) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("frame must be {FRAME_LEN} bytes, got {0}")]
    WrongLength(usize),
    #[error("invalid header byte {0:#04x}")]
    InvalidHeader(u8),
    #[error("invalid footer byte {0:#04x}")]
    InvalidFooter(u8),
    #[error("unsupported gain {0}")]
    UnsupportedGain(u32),
    #[error("channel count {0} outside the signed 24-bit range")]
    CountOutOfRange(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CytonPacket {
    pub sample_index: u8,
    pub channel_counts: [i32; CHANNELS],
    /// Accelerometer/aux payload, carried but not interpreted.
    pub aux: [u8; 6],
}

/// A packet converted to microvolts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub sample_index: u8,
    pub channels_uv: [f64; CHANNELS],
}

pub fn is_footer(byte: u8) -> bool {
    byte & 0xF0 == 0xC0
}

fn read_i24(bytes: &[u8]) -> i32 {
    let raw = (u32::from(bytes[0]) << 16) | (u32::from(bytes[1]) << 8) | u32::from(bytes[2]);
    // shift the sign bit into bit 31, then arithmetic-shift back
    ((raw << 8) as i32) >> 8
}

pub fn parse_packet(bytes: &[u8]) -> Result<CytonPacket, PacketError> {
    if bytes.len() != FRAME_LEN {
        return Err(PacketError::WrongLength(bytes.len()));
    }
    if bytes[0] != HEADER {
        return Err(PacketError::InvalidHeader(bytes[0]));
    }
    if !is_footer(bytes[32]) {
        return Err(PacketError::InvalidFooter(bytes[32]));
    }
    let mut channel_counts = [0i32; CHANNELS];
    for (ch, count) in channel_counts.iter_mut().enumerate() {
        *count = read_i24(&bytes[2 + 3 * ch..5 + 3 * ch]);
    }
    let mut aux = [0u8; 6];
    aux.copy_from_slice(&bytes[26..32]);
    Ok(CytonPacket {
        sample_index: bytes[1],
        channel_counts,
        aux,
    })
}

impl CytonPacket {
    /// Encodes the packet with the given footer byte.
    pub fn to_bytes_with_footer(&self, footer: u8) -> Result<[u8; FRAME_LEN], PacketError> {
        if !is_footer(footer) {
            return Err(PacketError::InvalidFooter(footer));
        }
        let mut out = [0u8; FRAME_LEN];
        out[0] = HEADER;
        out[1] = self.sample_index;
        for (ch, &count) in self.channel_counts.iter().enumerate() {
            if !(COUNT_MIN..=COUNT_MAX).contains(&count) {
                return Err(PacketError::CountOutOfRange(count));
            }
            let b = (count as u32).to_be_bytes();
            out[2 + 3 * ch..5 + 3 * ch].copy_from_slice(&b[1..]);
        }
        out[26..32].copy_from_slice(&self.aux);
        out[32] = footer;
        Ok(out)
    }

    /// Encodes the packet with the standard `0xC0` footer.
    pub fn to_bytes(&self) -> Result<[u8; FRAME_LEN], PacketError> {
        self.to_bytes_with_footer(DEFAULT_FOOTER)
    }

    pub fn to_sample(&self, gain: u32) -> Result<Sample, PacketError> {
        let mut channels_uv = [0.0; CHANNELS];
        for (uv, &count) in channels_uv.iter_mut().zip(&self.channel_counts) {
            *uv = counts_to_microvolts(count, gain)?;
        }
        Ok(Sample {
            sample_index: self.sample_index,
            channels_uv,
        })
    }
}

/// `count × 4.5 V / (gain × (2^23 − 1))`, in microvolts.
pub fn counts_to_microvolts(count: i32, gain: u32) -> Result<f64, PacketError> {
    if !SUPPORTED_GAINS.contains(&gain) {
        return Err(PacketError::UnsupportedGain(gain));
    }
    Ok(f64::from(count) * 4.5e6 / (f64::from(gain) * f64::from(COUNT_MAX)))
}

/// Inverse of [`counts_to_microvolts`], rounded to the nearest count and
/// saturated to the 24-bit range.
pub fn microvolts_to_counts(uv: f64, gain: u32) -> Result<i32, PacketError> {
    if !SUPPORTED_GAINS.contains(&gain) {
        return Err(PacketError::UnsupportedGain(gain));
    }
    let c = (uv * f64::from(gain) * f64::from(COUNT_MAX) / 4.5e6).round();
    Ok(c.clamp(f64::from(COUNT_MIN), f64::from(COUNT_MAX)) as i32)
}
