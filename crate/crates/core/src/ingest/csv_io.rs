//! One epoch per CSV row: `label,subject,rate_hz,ch,samples,data...` where the
//! data fields are `ch × samples` values, channel-major, written with nine
//! significant digits.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::epoch::{EegDataset, EegEpoch, EpochError};
use crate::label::EmotionLabel;

pub const HEADER_FIELDS: [&str; 5] = ["label", "subject", "rate_hz", "ch", "samples"];
const HEADER_LINE: &str = "label,subject,rate_hz,ch,samples,data...";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("schema error at row {row}, column {column}: {message}")]
    Schema {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("invalid epoch at row {row}: {source}")]
    Epoch {
        row: usize,
        #[source]
        source: EpochError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CsvError {
    fn schema(row: usize, column: usize, message: impl Into<String>) -> Self {
        CsvError::Schema {
            row,
            column,
            message: message.into(),
        }
    }
}

impl From<csv::Error> for CsvError {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map_or(0, |p| p.line() as usize);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CsvError::Io(io),
            other => CsvError::schema(row, 0, format!("{other:?}")),
        }
    }
}

/// Nine significant digits in scientific notation.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes epochs (labels and subjects optional) in the CSV schema.
pub fn write_epochs<W: Write>(epochs: &[EegEpoch], out: W) -> Result<(), CsvError> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{HEADER_LINE}")?;
    let mut w = csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(out);
    for e in epochs {
        let mut record = Vec::with_capacity(5 + e.data().len());
        record.push(e.label.map(|l| l.name().to_string()).unwrap_or_default());
        record.push(e.subject.clone().unwrap_or_default());
        record.push(e.rate_hz().to_string());
        record.push(e.channels().to_string());
        record.push(e.samples().to_string());
        record.extend(e.data().iter().map(|&v| format_value(v)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every epoch; rows with an empty label yield unlabeled epochs.
pub fn read_epochs<R: Read>(input: R) -> Result<Vec<EegEpoch>, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = records.next().ok_or_else(|| CsvError::schema(1, 0, "no header"))??;
    for (column, name) in HEADER_FIELDS.iter().enumerate() {
        match header.get(column) {
            Some(h) if h.trim() == *name => {}
            other => {
                return Err(CsvError::schema(
                    1,
                    column + 1,
                    format!("expected header field {name:?}, found {other:?}"),
                ))
            }
        }
    }

    let mut epochs = Vec::new();
    for (i, record) in records.enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() < 5 {
            return Err(CsvError::schema(row, record.len() + 1, "missing metadata columns"));
        }
        let label = match record[0].trim() {
            "" => None,
            s => Some(
                s.parse::<EmotionLabel>()
                    .map_err(|e| CsvError::schema(row, 1, e.to_string()))?,
            ),
        };
        let subject = Some(record[1].trim()).filter(|s| !s.is_empty()).map(str::to_string);
        let rate_hz: f64 = parse_field(&record[2], row, 3)?;
        let channels: usize = parse_field(&record[3], row, 4)?;
        let samples: usize = parse_field(&record[4], row, 5)?;
        let values = record.len() - 5;
        if values != channels * samples {
            return Err(CsvError::schema(
                row,
                record.len(),
                format!("row declares {channels} channels x {samples} samples but has {values} values"),
            ));
        }
        let data = record
            .iter()
            .skip(5)
            .enumerate()
            .map(|(j, s)| parse_field::<f64>(s, row, j + 6))
            .collect::<Result<Vec<_>, _>>()?;
        let mut epoch = EegEpoch::new(rate_hz, channels, data).map_err(|source| CsvError::Epoch { row, source })?;
        epoch.label = label;
        epoch.subject = subject;
        epochs.push(epoch);
    }
    Ok(epochs)
}

fn parse_field<T: std::str::FromStr>(s: &str, row: usize, column: usize) -> Result<T, CsvError> {
    s.trim()
        .parse()
        .map_err(|_| CsvError::schema(row, column, format!("cannot parse {s:?}")))
}

pub fn save_epochs_csv(dataset: &EegDataset, path: impl AsRef<Path>) -> Result<(), CsvError> {
    write_epochs(dataset.epochs(), File::create(path)?)
}

/// Loads a labeled dataset.
pub fn load_epochs_csv(path: impl AsRef<Path>) -> Result<EegDataset, CsvError> {
    let epochs = read_epochs(BufReader::new(File::open(path)?))?;
    EegDataset::new(epochs).map_err(|source| CsvError::Epoch { row: 0, source })
}

/// Loads epochs whose labels may be missing (inference inputs).
pub fn load_unlabeled_csv(path: impl AsRef<Path>) -> Result<Vec<EegEpoch>, CsvError> {
    read_epochs(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(label: EmotionLabel, fill: f64) -> EegEpoch {
        EegEpoch::new(100.0, 2, (0..200).map(|i| fill + i as f64 * 0.123456789).collect())
            .unwrap()
            .with_label(label)
    }

    #[test]
    fn header_line_is_exact() {
        let mut buf = Vec::new();
        write_epochs(&[epoch(EmotionLabel::Fear, 1.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,subject,rate_hz,ch,samples,data...\nfear,,100,2,100,"));
    }

    #[test]
    fn empty_file_has_no_header() {
        let err = read_epochs(&b""[..]).unwrap_err();
        assert!(err.to_string().contains("no header"), "{err}");
    }

    #[test]
    fn value_count_must_match_declared_channels() {
        let mut text = String::from("label,subject,rate_hz,ch,samples,data...\nanger,s1,100,8,100");
        for _ in 0..700 {
            text.push_str(",0.5");
        }
        match read_epochs(text.as_bytes()) {
            Err(CsvError::Schema { row, message, .. }) => {
                assert_eq!(row, 2);
                assert!(message.contains("8 channels"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unparseable_value_reports_column() {
        let text = "label,subject,rate_hz,ch,samples,data...\nanger,,100,1,1,abc\n";
        match read_epochs(text.as_bytes()) {
            Err(CsvError::Schema { row: 2, column: 6, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip_in_memory() {
        let epochs = vec![
            epoch(EmotionLabel::Anger, -3.0).with_subject("alice"),
            epoch(EmotionLabel::Happiness, 1e-7),
        ];
        let mut buf = Vec::new();
        write_epochs(&epochs, &mut buf).unwrap();
        let back = read_epochs(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in epochs.iter().zip(&back) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.subject, b.subject);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-300));
            }
        }
    }
}
