//! Session recordings: sensor stream and prompt-label files.
//!
//! A session is two CSV files. The stream file holds one row per 100 Hz frame:
//!
//! ```text
//! t_ms,afx,afy,afz,arx,ary,arz,gx,gy,gz,mx,my,mz,force
//! ```
//!
//! The labels file holds the display window of each prompted letter:
//!
//! ```text
//! label,t_start_ms,t_end_ms
//! ```
//!
//! Windows are half-open, `[t_start_ms, t_end_ms)`.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NUM_CHANNELS;

pub const STREAM_HEADER: [&str; 14] = [
    "t_ms", "afx", "afy", "afz", "arx", "ary", "arz", "gx", "gy", "gz", "mx", "my", "mz", "force",
];
pub const LABELS_HEADER: [&str; 3] = ["label", "t_start_ms", "t_end_ms"];

/// Accelerometer range, g.
pub const ACC_RANGE: f64 = 2.0;
/// Gyroscope range, degrees per second.
pub const GYRO_RANGE: f64 = 1000.0;
/// Magnetometer range, mT.
pub const MAG_RANGE: f64 = 2.4;
/// Maximum tip force, N.
pub const FORCE_MAX: f64 = 5.32;
/// Nominal frame spacing at 100 Hz.
pub const FRAME_PERIOD_MS: i64 = 10;

/// Inclusive `(min, max)` for each of the 13 channels, in stream order.
pub fn channel_bounds(channel: usize) -> (f64, f64) {
    match channel {
        0..=5 => (-ACC_RANGE, ACC_RANGE),
        6..=8 => (-GYRO_RANGE, GYRO_RANGE),
        9..=11 => (-MAG_RANGE, MAG_RANGE),
        12 => (0.0, FORCE_MAX),
        _ => panic!("channel index {channel} out of range"),
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: bad header, expected `{expected}`")]
    BadHeader { line: usize, expected: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: {channel} = {value} outside [{min}, {max}]")]
    RangeViolation {
        line: usize,
        channel: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("line {line}: timestamp {t_ms} not after previous {prev_ms}")]
    NonMonotonicTime { line: usize, t_ms: i64, prev_ms: i64 },
    #[error("line {line}: interval starting at {t_start_ms} overlaps previous ending at {prev_end_ms}")]
    OverlappingIntervals {
        line: usize,
        t_start_ms: i64,
        prev_end_ms: i64,
    },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: empty interval [{t_start_ms}, {t_end_ms})")]
    EmptyInterval {
        line: usize,
        t_start_ms: i64,
        t_end_ms: i64,
    },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LetterCase {
    Upper,
    Lower,
}

impl LetterCase {
    pub fn of(label: char) -> Option<Self> {
        if label.is_ascii_uppercase() {
            Some(LetterCase::Upper)
        } else if label.is_ascii_lowercase() {
            Some(LetterCase::Lower)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LetterCase::Upper => "upper",
            LetterCase::Lower => "lower",
        }
    }

    /// The 26 letters of this case in alphabetical order.
    pub fn alphabet(self) -> impl Iterator<Item = char> {
        let base = match self {
            LetterCase::Upper => b'A',
            LetterCase::Lower => b'a',
        };
        (0..26u8).map(move |i| (base + i) as char)
    }

    pub fn letter(self, class: usize) -> char {
        assert!(class < 26, "class index {class} out of range");
        let base = match self {
            LetterCase::Upper => b'A',
            LetterCase::Lower => b'a',
        };
        (base + class as u8) as char
    }
}

impl fmt::Display for LetterCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LetterCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upper" => Ok(LetterCase::Upper),
            "lower" => Ok(LetterCase::Lower),
            other => Err(format!("unknown case `{other}` (expected upper or lower)")),
        }
    }
}

/// Class index 0–25 of an ASCII letter, regardless of case.
pub fn class_index(label: char) -> Option<usize> {
    LetterCase::of(label).map(|_| (label.to_ascii_uppercase() as u8 - b'A') as usize)
}

/// One 100 Hz sample of the pen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t_ms: i64,
    /// Front accelerometer, g.
    pub acc_front: [f64; 3],
    /// Rear accelerometer, g.
    pub acc_rear: [f64; 3],
    /// Angular rate, °/s.
    pub gyro: [f64; 3],
    /// Magnetic field, mT.
    pub mag: [f64; 3],
    /// Tip force, N.
    pub force: f64,
}

impl SensorFrame {
    pub fn from_channels(t_ms: i64, c: [f64; NUM_CHANNELS]) -> Self {
        SensorFrame {
            t_ms,
            acc_front: [c[0], c[1], c[2]],
            acc_rear: [c[3], c[4], c[5]],
            gyro: [c[6], c[7], c[8]],
            mag: [c[9], c[10], c[11]],
            force: c[12],
        }
    }

    /// Channel values in stream-file order, force last.
    pub fn channels(&self) -> [f64; NUM_CHANNELS] {
        let [a, b, c] = self.acc_front;
        let [d, e, f] = self.acc_rear;
        let [g, h, i] = self.gyro;
        let [j, k, l] = self.mag;
        [a, b, c, d, e, f, g, h, i, j, k, l, self.force]
    }

    /// First channel outside its physical range, as `(index, value)`.
    pub fn range_violation(&self) -> Option<(usize, f64)> {
        self.channels().into_iter().enumerate().find(|&(i, v)| {
            let (lo, hi) = channel_bounds(i);
            !(lo..=hi).contains(&v)
        })
    }

    /// Copy with every channel clamped into range. NaN becomes the lower bound.
    pub fn clamped(&self) -> Self {
        let mut c = self.channels();
        for (i, v) in c.iter_mut().enumerate() {
            let (lo, hi) = channel_bounds(i);
            *v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
        }
        SensorFrame::from_channels(self.t_ms, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInterval {
    pub label: char,
    pub t_start_ms: i64,
    pub t_end_ms: i64,
}

impl LabelInterval {
    pub fn contains(&self, t_ms: i64) -> bool {
        self.t_start_ms <= t_ms && t_ms < self.t_end_ms
    }
}

/// Frames recorded while one letter prompt was displayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterSample {
    pub frames: Vec<SensorFrame>,
    pub label: char,
    pub writer_id: String,
    pub case: LetterCase,
    /// Position of the prompt within its session.
    pub seq: usize,
}

impl LetterSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn class_index(&self) -> usize {
        class_index(self.label).expect("LetterSample label is always a letter")
    }

    /// Stable identifier `<writer>-<seq>`.
    pub fn sample_id(&self) -> String {
        sample_id(&self.writer_id, self.seq)
    }
}

pub fn sample_id(writer_id: &str, seq: usize) -> String {
    format!("{writer_id}-{seq:04}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    /// Range violations are errors.
    #[default]
    Strict,
    /// Out-of-range values are clamped and counted.
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedStream {
    pub frames: Vec<SensorFrame>,
    /// Frames that needed clamping (lenient mode only).
    pub clamped: usize,
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
}

fn check_header(record: Option<csv::StringRecord>, expected: &[&str]) -> Result<(), IngestError> {
    let ok = record
        .as_ref()
        .is_some_and(|r| r.iter().eq(expected.iter().copied()));
    if ok {
        Ok(())
    } else {
        Err(IngestError::BadHeader {
            line: 1,
            expected: expected.join(","),
        })
    }
}

fn record_line(record: &csv::StringRecord, fallback: usize) -> usize {
    record
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

/// Reads a stream CSV file in strict mode.
pub fn parse_stream(path: &Path) -> Result<Vec<SensorFrame>, IngestError> {
    Ok(parse_stream_with_mode(path, IngestMode::Strict)?.frames)
}

pub fn parse_stream_with_mode(path: &Path, mode: IngestMode) -> Result<ParsedStream, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_stream(BufReader::new(file), mode).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::io(path, source),
        other => other,
    })
}

pub fn read_stream<R: Read>(reader: R, mode: IngestMode) -> Result<ParsedStream, IngestError> {
    let mut rdr = csv_reader(reader);
    let mut records = rdr.records();
    let header = records.next().transpose().map_err(csv_error)?;
    check_header(header, &STREAM_HEADER)?;

    let mut out = ParsedStream::default();
    let mut prev: Option<i64> = None;
    for (row, record) in records.enumerate() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record, row + 2);
        if record.len() != STREAM_HEADER.len() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected {} columns, found {}", STREAM_HEADER.len(), record.len()),
            });
        }
        let t_ms: i64 = record[0].parse().map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("t_ms `{}` is not an integer", &record[0]),
        })?;
        let mut channels = [0.0; NUM_CHANNELS];
        for (i, slot) in channels.iter_mut().enumerate() {
            let field = &record[i + 1];
            *slot = field.parse().map_err(|_| IngestError::MalformedRow {
                line,
                reason: format!("{} `{field}` is not a number", STREAM_HEADER[i + 1]),
            })?;
        }
        if let Some(p) = prev {
            if t_ms <= p {
                return Err(IngestError::NonMonotonicTime {
                    line,
                    t_ms,
                    prev_ms: p,
                });
            }
        }
        prev = Some(t_ms);

        let mut frame = SensorFrame::from_channels(t_ms, channels);
        if let Some((i, value)) = frame.range_violation() {
            match mode {
                IngestMode::Strict => {
                    let (min, max) = channel_bounds(i);
                    return Err(IngestError::RangeViolation {
                        line,
                        channel: STREAM_HEADER[i + 1],
                        value,
                        min,
                        max,
                    });
                }
                IngestMode::Lenient => {
                    log::warn!("line {line}: {} = {value} clamped", STREAM_HEADER[i + 1]);
                    frame = frame.clamped();
                    out.clamped += 1;
                }
            }
        }
        out.frames.push(frame);
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io {
            path: PathBuf::new(),
            source,
        },
        csv::ErrorKind::Utf8 { err, .. } => IngestError::MalformedRow {
            line,
            reason: err.to_string(),
        },
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => IngestError::MalformedRow {
            line,
            reason: format!("expected {expected_len} columns, found {len}"),
        },
        other => IngestError::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

pub fn parse_labels(path: &Path) -> Result<Vec<LabelInterval>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_labels(BufReader::new(file)).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::io(path, source),
        other => other,
    })
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<LabelInterval>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records.next().transpose().map_err(csv_error)?;
    check_header(header, &LABELS_HEADER)?;

    let mut out: Vec<LabelInterval> = Vec::new();
    for (row, record) in records.enumerate() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record, row + 2);
        if record.len() != LABELS_HEADER.len() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 3 columns, found {}", record.len()),
            });
        }
        let text = &record[0];
        let mut chars = text.chars();
        let label = match (chars.next(), chars.next()) {
            (Some(c), None) if LetterCase::of(c).is_some() => c,
            _ => {
                return Err(IngestError::UnknownLabel {
                    line,
                    label: text.to_string(),
                })
            }
        };
        let parse_ms = |field: &str| -> Result<i64, IngestError> {
            field.parse().map_err(|_| IngestError::MalformedRow {
                line,
                reason: format!("`{field}` is not an integer millisecond value"),
            })
        };
        let t_start_ms = parse_ms(&record[1])?;
        let t_end_ms = parse_ms(&record[2])?;
        if t_start_ms >= t_end_ms {
            return Err(IngestError::EmptyInterval {
                line,
                t_start_ms,
                t_end_ms,
            });
        }
        if let Some(prev) = out.last() {
            if t_start_ms < prev.t_end_ms {
                return Err(IngestError::OverlappingIntervals {
                    line,
                    t_start_ms,
                    prev_end_ms: prev.t_end_ms,
                });
            }
        }
        out.push(LabelInterval {
            label,
            t_start_ms,
            t_end_ms,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct SessionSplit {
    pub samples: Vec<LetterSample>,
    /// Intervals that captured no frames.
    pub dropped: usize,
}

/// Cuts a session stream into one sample per label interval.
///
/// Both inputs must be time-ordered. A frame belongs to an interval when
/// `t_start_ms <= t_ms < t_end_ms`.
pub fn split_session(
    frames: &[SensorFrame],
    intervals: &[LabelInterval],
    writer_id: &str,
) -> SessionSplit {
    let mut out = SessionSplit::default();
    for (seq, interval) in intervals.iter().enumerate() {
        let lo = frames.partition_point(|f| f.t_ms < interval.t_start_ms);
        let hi = frames.partition_point(|f| f.t_ms < interval.t_end_ms);
        if lo >= hi {
            log::warn!(
                "{writer_id}: interval {seq} ({}) [{}, {}) captured no frames",
                interval.label,
                interval.t_start_ms,
                interval.t_end_ms
            );
            out.dropped += 1;
            continue;
        }
        out.samples.push(LetterSample {
            frames: frames[lo..hi].to_vec(),
            label: interval.label,
            writer_id: writer_id.to_string(),
            case: LetterCase::of(interval.label).expect("labels are validated letters"),
            seq,
        });
    }
    out
}

pub fn write_stream<W: Write>(mut w: W, frames: &[SensorFrame]) -> std::io::Result<()> {
    writeln!(w, "{}", STREAM_HEADER.join(","))?;
    for f in frames {
        write!(w, "{}", f.t_ms)?;
        for v in f.channels() {
            write!(w, ",{v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(mut w: W, intervals: &[LabelInterval]) -> std::io::Result<()> {
    writeln!(w, "{}", LABELS_HEADER.join(","))?;
    for iv in intervals {
        writeln!(w, "{},{},{}", iv.label, iv.t_start_ms, iv.t_end_ms)?;
    }
    Ok(())
}

/// Writes a session pair to `<stem>.stream.csv` and `<stem>.labels.csv`.
pub fn write_session(
    dir: &Path,
    stem: &str,
    frames: &[SensorFrame],
    intervals: &[LabelInterval],
) -> Result<(PathBuf, PathBuf), IngestError> {
    let stream_path = dir.join(format!("{stem}.stream.csv"));
    let labels_path = dir.join(format!("{stem}.labels.csv"));
    let write = |path: &Path, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
        let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| IngestError::io(path, e))
    };
    write(&stream_path, &|w| write_stream(w, frames))?;
    write(&labels_path, &|w| write_labels(w, intervals))?;
    Ok((stream_path, labels_path))
}

/// Parses and splits one session pair.
pub fn ingest_session(
    stream_path: &Path,
    labels_path: &Path,
    writer_id: &str,
    mode: IngestMode,
) -> Result<(SessionSplit, usize), IngestError> {
    let stream = parse_stream_with_mode(stream_path, mode)?;
    let labels = parse_labels(labels_path)?;
    Ok((split_session(&stream.frames, &labels, writer_id), stream.clamped))
}
