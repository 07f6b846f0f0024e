//! Recovering Cyton frames from a corrupted byte stream.
//!
//! Every offset holding `0xA0 … footer` is a candidate frame. Corruption can
//! make a spurious candidate overlap a genuine frame, so instead of accepting
//! candidates greedily the framer picks the non-overlapping subset with the
//! highest score: each frame scores [`FRAME_SCORE`], a frame that starts exactly
//! where the previous one ended adds [`CONTIGUOUS_BONUS`], and a sample index
//! consistent with the previous frame adds [`SEQUENCE_BONUS`]. Genuine frames
//! chain together; spurious ones almost never do.

use super::cyton::{is_footer, parse_packet, CytonPacket, FRAME_LEN, HEADER};

const FRAME_SCORE: u64 = 4;
const CONTIGUOUS_BONUS: u64 = 2;
const SEQUENCE_BONUS: u64 = 1;
/// How many earlier compatible candidates are examined for a chain bonus.
const LINK_WINDOW: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResyncOutcome {
    pub packets: Vec<CytonPacket>,
    /// Byte offset of each packet in the scanned buffer.
    pub offsets: Vec<usize>,
    /// Bytes discarded as unframeable.
    pub skipped: usize,
    /// Trailing bytes that may begin a frame completed by later input.
    pub remainder: Vec<u8>,
}

struct Candidate {
    pos: usize,
    packet: CytonPacket,
}

fn sequence_consistent(prev: &Candidate, next: &Candidate) -> bool {
    let gap_frames = (next.pos - (prev.pos + FRAME_LEN)).div_ceil(FRAME_LEN);
    let delta = next.packet.sample_index.wrapping_sub(prev.packet.sample_index) as usize;
    (1..=gap_frames + 2).contains(&delta)
}

/// Scans `bytes` for frames; see the module docs for the selection rule.
pub fn resync_stream(bytes: &[u8]) -> ResyncOutcome {
    let candidates: Vec<Candidate> = (0..bytes.len().saturating_sub(FRAME_LEN - 1))
        .filter(|&p| bytes[p] == HEADER && is_footer(bytes[p + FRAME_LEN - 1]))
        .filter_map(|p| {
            parse_packet(&bytes[p..p + FRAME_LEN])
                .ok()
                .map(|packet| Candidate { pos: p, packet })
        })
        .collect();

    // best[j]: best score of a selection whose last frame is candidate j.
    let mut best: Vec<u64> = Vec::with_capacity(candidates.len());
    let mut back: Vec<Option<usize>> = Vec::with_capacity(candidates.len());
    // prefix_best[k]: (score, index) of the best among candidates[..k].
    let mut prefix_best: Vec<(u64, Option<usize>)> = vec![(0, None)];
    for (j, cand) in candidates.iter().enumerate() {
        // candidates[..compatible] end at or before cand.pos
        let compatible = candidates[..j].partition_point(|c| c.pos + FRAME_LEN <= cand.pos);
        let (mut score, mut prev) = prefix_best[compatible];
        for i in (compatible.saturating_sub(LINK_WINDOW)..compatible).rev() {
            let c = &candidates[i];
            let mut s = best[i];
            if c.pos + FRAME_LEN == cand.pos {
                s += CONTIGUOUS_BONUS;
            }
            if sequence_consistent(c, cand) {
                s += SEQUENCE_BONUS;
            }
            if s > score {
                score = s;
                prev = Some(i);
            }
        }
        best.push(score + FRAME_SCORE);
        back.push(prev);
        let last = *prefix_best.last().expect("non-empty");
        prefix_best.push(if best[j] > last.0 { (best[j], Some(j)) } else { last });
    }

    let mut chosen = Vec::new();
    let mut cursor = prefix_best.last().and_then(|&(_, idx)| idx);
    while let Some(j) = cursor {
        chosen.push(j);
        cursor = back[j];
    }
    chosen.reverse();

    let mut out = ResyncOutcome::default();
    for &j in &chosen {
        out.offsets.push(candidates[j].pos);
        out.packets.push(candidates[j].packet);
    }
    let covered_end = out.offsets.last().map_or(0, |&p| p + FRAME_LEN);
    let tail_start = bytes.len().saturating_sub(FRAME_LEN - 1).max(covered_end);
    let remainder_start = (tail_start..bytes.len())
        .find(|&p| bytes[p] == HEADER)
        .unwrap_or(bytes.len());
    out.remainder = bytes[remainder_start..].to_vec();
    out.skipped = remainder_start - FRAME_LEN * out.packets.len();
    out
}

/// Incremental framer for chunked input; carries the partial-frame remainder
/// between calls and keeps running totals.
#[derive(Debug, Default)]
pub struct StreamFramer {
    pending: Vec<u8>,
    pub total_packets: usize,
    pub total_skipped: usize,
}

impl StreamFramer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Frames `chunk` appended to any pending bytes. Returns the packets and
    /// the number of bytes discarded in this call.
    pub fn push(&mut self, chunk: &[u8]) -> (Vec<CytonPacket>, usize) {
        self.pending.extend_from_slice(chunk);
        let outcome = resync_stream(&self.pending);
        self.pending = outcome.remainder;
        self.total_packets += outcome.packets.len();
        self.total_skipped += outcome.skipped;
        (outcome.packets, outcome.skipped)
    }

    /// Flushes at end of stream: pending bytes can no longer become a frame.
    pub fn finish(&mut self) -> usize {
        let n = self.pending.len();
        self.pending.clear();
        self.total_skipped += n;
        n
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(index: u8, fill: i32) -> CytonPacket {
        CytonPacket {
            sample_index: index,
            channel_counts: [fill, -fill, 3, 4, 5, 6, 7, fill * 2],
            aux: [1, 2, 3, 4, 5, 6],
        }
    }

    fn stream(n: u8) -> Vec<u8> {
        (0..n).flat_map(|i| packet(i, i as i32 * 100).to_bytes().unwrap()).collect()
    }

    #[test]
    fn clean_stream() {
        let out = resync_stream(&stream(3));
        assert_eq!(out.packets.len(), 3);
        assert_eq!(out.skipped, 0);
        assert!(out.remainder.is_empty());
        assert_eq!(out.offsets, vec![0, 33, 66]);
    }

    #[test]
    fn leading_garbage_is_skipped() {
        let mut bytes = vec![0x11, 0x22, 0x33, 0x44, 0x55];
        bytes.extend(stream(3));
        let out = resync_stream(&bytes);
        assert_eq!(out.packets.len(), 3);
        assert_eq!(out.skipped, 5);
    }

    #[test]
    fn trailing_partial_frame_is_kept() {
        let mut bytes = stream(1);
        bytes.extend_from_slice(&packet(1, 9).to_bytes().unwrap()[..10]);
        let out = resync_stream(&bytes);
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.remainder.len(), 10);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn empty_input() {
        assert_eq!(resync_stream(&[]), ResyncOutcome::default());
    }

    #[test]
    fn spurious_header_before_a_frame_does_not_steal_it() {
        // A fake 0xA0 whose +32 byte lands on a genuine footer-looking byte.
        let mut bytes = stream(2);
        let mut tail = stream(4)[66..].to_vec();
        let real = packet(2, 0);
        let mut real_bytes = real.to_bytes().unwrap();
        real_bytes[27] = 0xC3; // an aux byte of the real frame looks like a footer
        tail.splice(0..33, real_bytes);
        bytes.extend_from_slice(&[HEADER; 1]);
        bytes.extend(std::iter::repeat_n(0x00, 4));
        let first_real = bytes.len();
        bytes.extend(tail);
        // spurious candidate at first_real - 5 ends at first_real + 27 (0xC3)
        let expected = parse_packet(&bytes[first_real..first_real + 33]).unwrap();
        let out = resync_stream(&bytes);
        assert!(out.offsets.contains(&first_real), "{:?}", out.offsets);
        assert!(out.packets.contains(&expected));
        assert_eq!(out.packets.len(), 4);
    }

    #[test]
    fn chunked_framing_matches_whole_buffer() {
        let bytes = stream(10);
        let mut framer = StreamFramer::new();
        let mut got = Vec::new();
        for chunk in bytes.chunks(7) {
            got.extend(framer.push(chunk).0);
        }
        assert_eq!(got, resync_stream(&bytes).packets);
        assert_eq!(framer.total_skipped, 0);
        assert_eq!(framer.finish(), 0);
    }
}
