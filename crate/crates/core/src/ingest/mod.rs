//! EEG acquisition: Cyton framing, calibration, epochs, CSV storage and a
//! synthetic generator.

mod csv_io;
mod cyton;
mod epoch;
mod resync;
mod synth;

pub use csv_io::{
    format_value, load_epochs_csv, load_unlabeled_csv, read_epochs, save_epochs_csv, write_epochs, CsvError,
};
pub use cyton::{
    counts_to_microvolts, is_footer, microvolts_to_counts, parse_packet, CytonPacket, PacketError, Sample, CHANNELS,
    DEFAULT_FOOTER, DEFAULT_GAIN, FRAME_LEN, HEADER, SUPPORTED_GAINS,
};
pub use epoch::{EegDataset, EegEpoch, EpochError, DEFAULT_RATE_HZ};
pub use resync::{resync_stream, ResyncOutcome, StreamFramer};
pub use synth::{
    synth_dataset, synth_epoch, synth_epoch_with, SynthError, SynthParams, BAND_AMPLITUDES_UV, DEFAULT_NOISE_UV,
};
