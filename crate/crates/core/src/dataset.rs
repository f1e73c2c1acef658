//! Preprocessed dataset directory.
//!
//! ```text
//! <dir>/manifest.csv      one row per letter sample, accepted or not
//! <dir>/samples/<id>.csv  target_len × 13 matrix per accepted sample
//! <dir>/dataset.bin       JSON header line + little-endian f32, row-major
//! <dir>/summary.json      counts by outcome
//! ```
//!
//! `manifest.csv` starts with `#` comment lines holding the tool version, the
//! preprocessing settings and the run config.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{write_file, RunConfig};
use crate::ingest::{ingest_session, IngestError, IngestMode, LetterCase, LetterSample, STREAM_HEADER};
use crate::preprocess::{preprocess_pipeline, PreprocessConfig, PreprocessError, RejectReason, TensorSample};
use crate::synth::{list_sessions, SynthError};
use crate::{NUM_CHANNELS, TOOL_VERSION};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SAMPLES_DIR: &str = "samples";
pub const PACKED_FILE: &str = "dataset.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PACKED_FORMAT: &str = "penhwr-dataset";
pub const PACKED_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Config(#[from] PreprocessError),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no sessions found in {0}")]
    NoSessions(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub writer_id: String,
    pub label: char,
    pub case: LetterCase,
    /// Raw frame count before trimming.
    pub frames: usize,
    pub reject_reason: Option<RejectReason>,
}

impl ManifestRow {
    pub fn accepted(&self) -> bool {
        self.reject_reason.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepSummary {
    pub total: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
    /// Label intervals that captured no frames.
    pub dropped_intervals: usize,
    /// Out-of-range values clamped in lenient ingest mode.
    pub clamped_values: usize,
}

impl PrepSummary {
    pub fn acceptance_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.accepted as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PreparedDataset {
    pub samples: Vec<TensorSample>,
    pub manifest: Vec<ManifestRow>,
    pub summary: PrepSummary,
}

impl PreparedDataset {
    pub fn push(&mut self, sample: &LetterSample, cfg: &PreprocessConfig) {
        let outcome = preprocess_pipeline(sample, cfg);
        self.manifest.push(ManifestRow {
            sample_id: sample.sample_id(),
            writer_id: sample.writer_id.clone(),
            label: sample.label,
            case: sample.case,
            frames: sample.len(),
            reject_reason: outcome.as_ref().err().copied(),
        });
        self.summary.total += 1;
        match outcome {
            Ok(t) => {
                self.summary.accepted += 1;
                self.samples.push(t);
            }
            Err(reason) => *self.summary.rejected.entry(reason.as_str().into()).or_default() += 1,
        }
    }
}

pub fn prepare_samples<'a>(
    samples: impl IntoIterator<Item = &'a LetterSample>,
    cfg: &PreprocessConfig,
) -> Result<PreparedDataset, DatasetError> {
    cfg.validate()?;
    let mut out = PreparedDataset::default();
    for s in samples {
        out.push(s, cfg);
    }
    Ok(out)
}

/// Ingests every session listed in `dir` (see [`list_sessions`]) and
/// preprocesses the letters, in writer order.
pub fn prepare_sessions(dir: &Path, cfg: &PreprocessConfig, mode: IngestMode) -> Result<PreparedDataset, DatasetError> {
    cfg.validate()?;
    let sessions = list_sessions(dir)?;
    if sessions.is_empty() {
        return Err(DatasetError::NoSessions(dir.to_path_buf()));
    }
    let mut out = PreparedDataset::default();
    for entry in sessions {
        let (split, clamped) = ingest_session(
            &dir.join(&entry.stream),
            &dir.join(&entry.labels),
            &entry.writer_id,
            mode,
        )?;
        out.summary.dropped_intervals += split.dropped;
        out.summary.clamped_values += clamped;
        for s in &split.samples {
            out.push(s, cfg);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedEntry {
    pub sample_id: String,
    pub writer_id: String,
    pub label: char,
    pub case: LetterCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedHeader {
    pub format: String,
    pub format_version: u32,
    pub tool_version: String,
    pub rows: usize,
    pub cols: usize,
    pub preprocess: PreprocessConfig,
    pub run_config: Option<RunConfig>,
    pub samples: Vec<PackedEntry>,
}

fn matrix_csv(x: &Array2<f64>) -> String {
    let mut out = STREAM_HEADER[1..].join(",");
    out.push('\n');
    for row in x.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn manifest_csv(ds: &PreparedDataset, cfg: &PreprocessConfig, run: Option<&RunConfig>) -> String {
    let mut out = format!("# {TOOL_VERSION}\n");
    out.push_str(&format!(
        "# force_threshold={} min_len={} max_len={} target_len={}\n",
        cfg.force_threshold, cfg.min_len, cfg.max_len, cfg.target_len
    ));
    out.push_str(&format!(
        "# preprocess: {}\n",
        serde_json::to_string(cfg).expect("config serializes")
    ));
    if let Some(run) = run {
        out.push_str(&format!("# run_config: {}\n", run.to_compact_json()));
    }
    out.push_str("sample_id,writer_id,label,case,frames,status,reject_reason\n");
    for r in &ds.manifest {
        let (status, reason) = match r.reject_reason {
            None => ("accepted", ""),
            Some(reason) => ("rejected", reason.as_str()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.sample_id, r.writer_id, r.label, r.case, r.frames, status, reason
        ));
    }
    out
}

pub fn encode_packed(ds: &PreparedDataset, cfg: &PreprocessConfig, run: Option<&RunConfig>) -> Vec<u8> {
    let header = PackedHeader {
        format: PACKED_FORMAT.into(),
        format_version: PACKED_VERSION,
        tool_version: TOOL_VERSION.into(),
        rows: cfg.target_len,
        cols: NUM_CHANNELS,
        preprocess: *cfg,
        run_config: run.cloned(),
        samples: ds
            .samples
            .iter()
            .map(|s| PackedEntry {
                sample_id: s.sample_id.clone(),
                writer_id: s.writer_id.clone(),
                label: s.label(),
                case: s.case,
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for s in &ds.samples {
        for v in s.x.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Writes the dataset directory. An existing `samples/` subdirectory is
/// replaced so stale files from earlier runs cannot linger.
pub fn write_prepared(
    dir: &Path,
    ds: &PreparedDataset,
    cfg: &PreprocessConfig,
    run: Option<&RunConfig>,
) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let samples_dir = dir.join(SAMPLES_DIR);
    if samples_dir.exists() {
        std::fs::remove_dir_all(&samples_dir).map_err(io_err(&samples_dir))?;
    }
    std::fs::create_dir_all(&samples_dir).map_err(io_err(&samples_dir))?;
    for s in &ds.samples {
        let path = samples_dir.join(format!("{}.csv", s.sample_id));
        write_file(&path, matrix_csv(&s.x)).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    write_file(&path, manifest_csv(ds, cfg, run)).map_err(io_err(&path))?;
    let path = dir.join(PACKED_FILE);
    let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(&encode_packed(ds, cfg, run)).map_err(io_err(&path))?;
    let summary = serde_json::json!({
        "tool_version": TOOL_VERSION,
        "summary": ds.summary,
        "acceptance_rate": ds.summary.acceptance_rate(),
        "preprocess": cfg,
        "run_config": run,
    });
    let path = dir.join(SUMMARY_FILE);
    write_file(&path, serde_json::to_string_pretty(&summary).expect("json") + "\n").map_err(io_err(&path))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub header: PackedHeader,
    pub samples: Vec<TensorSample>,
}

impl LoadedDataset {
    /// Cases present, uppercase first.
    pub fn cases(&self) -> Vec<LetterCase> {
        [LetterCase::Upper, LetterCase::Lower]
            .into_iter()
            .filter(|c| self.samples.iter().any(|s| s.case == *c))
            .collect()
    }

    pub fn of_case(&self, case: LetterCase) -> Vec<TensorSample> {
        self.samples.iter().filter(|s| s.case == case).cloned().collect()
    }
}

pub fn decode_packed(bytes: &[u8], path: &Path) -> Result<LoadedDataset, DatasetError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(path, "missing header line"))?;
    let header: PackedHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| format_err(path, format!("header: {e}")))?;
    if header.format != PACKED_FORMAT || header.format_version != PACKED_VERSION {
        return Err(format_err(path, "unsupported dataset format"));
    }
    let per = header.rows * header.cols;
    let body = &bytes[nl + 1..];
    if body.len() != 4 * per * header.samples.len() {
        return Err(format_err(
            path,
            format!("expected {} data bytes, found {}", 4 * per * header.samples.len(), body.len()),
        ));
    }
    let mut samples = Vec::with_capacity(header.samples.len());
    for (entry, chunk) in header.samples.iter().zip(body.chunks_exact(4 * per)) {
        let values: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let label_index = crate::ingest::class_index(entry.label)
            .ok_or_else(|| format_err(path, format!("bad label `{}`", entry.label)))?;
        if LetterCase::of(entry.label) != Some(entry.case) {
            return Err(format_err(path, format!("label `{}` does not match case", entry.label)));
        }
        samples.push(TensorSample {
            sample_id: entry.sample_id.clone(),
            x: Array2::from_shape_vec((header.rows, header.cols), values).expect("length checked"),
            label_index,
            writer_id: entry.writer_id.clone(),
            case: entry.case,
        });
    }
    Ok(LoadedDataset { header, samples })
}

/// Loads `dataset.bin` from a prepared directory.
pub fn load_prepared(dir: &Path) -> Result<LoadedDataset, DatasetError> {
    let path = dir.join(PACKED_FILE);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    decode_packed(&bytes, &path)
}

/// Reads one per-sample matrix CSV.
pub fn read_sample_csv(path: &Path) -> Result<Array2<f64>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    if headers.iter().ne(STREAM_HEADER[1..].iter().copied()) {
        return Err(format_err(path, "unexpected header"));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        for cell in rec.iter() {
            values.push(
                cell.parse::<f64>()
                    .map_err(|_| format_err(path, format!("row {}: `{cell}` is not a number", rows + 1)))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, NUM_CHANNELS), values).map_err(|e| format_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, write_dataset, CaseSet, GeneratorConfig};

    fn small_sessions(dir: &Path) {
        let cfg = GeneratorConfig {
            n_writers: 2,
            reps_per_letter: 1,
            cases: CaseSet::Upper,
            master_seed: 5,
        };
        write_dataset(dir, &generate_dataset(&cfg).unwrap()).unwrap();
    }

    #[test]
    fn prepare_write_load_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        small_sessions(&raw);
        let cfg = PreprocessConfig::default();
        let ds = prepare_sessions(&raw, &cfg, IngestMode::Strict).unwrap();
        assert_eq!(ds.summary.total, 52);
        assert_eq!(ds.summary.accepted, ds.samples.len());
        let out = tmp.path().join("prep");
        let run = RunConfig::new("prep").with("seed", 1);
        write_prepared(&out, &ds, &cfg, Some(&run)).unwrap();

        let loaded = load_prepared(&out).unwrap();
        assert_eq!(loaded.samples.len(), ds.samples.len());
        for (a, b) in loaded.samples.iter().zip(&ds.samples) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.label_index, b.label_index);
            for (u, v) in a.x.iter().zip(b.x.iter()) {
                assert_eq!(*u, *v as f32 as f64);
            }
        }
        let first = &ds.samples[0];
        let m = read_sample_csv(&out.join(SAMPLES_DIR).join(format!("{}.csv", first.sample_id))).unwrap();
        assert_eq!(m, first.x);

        let manifest = std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
        assert!(manifest.lines().any(|l| l.starts_with("# force_threshold=0.2 ")));
        assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 53);
    }

    #[test]
    fn rewrite_is_byte_identical_and_clears_stale_samples() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        small_sessions(&raw);
        let cfg = PreprocessConfig::default();
        let ds = prepare_sessions(&raw, &cfg, IngestMode::Strict).unwrap();
        let out = tmp.path().join("prep");
        write_prepared(&out, &ds, &cfg, None).unwrap();
        let before = std::fs::read(out.join(PACKED_FILE)).unwrap();
        std::fs::write(out.join(SAMPLES_DIR).join("stale.csv"), "x").unwrap();
        write_prepared(&out, &ds, &cfg, None).unwrap();
        assert_eq!(before, std::fs::read(out.join(PACKED_FILE)).unwrap());
        assert!(!out.join(SAMPLES_DIR).join("stale.csv").exists());
    }

    #[test]
    fn rejected_samples_are_listed_with_reason() {
        let mut s = crate::synth::generate_dataset(&GeneratorConfig {
            n_writers: 1,
            reps_per_letter: 1,
            cases: CaseSet::Upper,
            master_seed: 1,
        })
        .unwrap()
        .samples()
        .next()
        .unwrap()
        .clone();
        s.frames.iter_mut().for_each(|f| f.force = 0.0);
        let ds = prepare_samples([&s], &PreprocessConfig::default()).unwrap();
        assert_eq!(ds.summary.accepted, 0);
        assert_eq!(ds.manifest[0].reject_reason, Some(RejectReason::NoContact));
        assert_eq!(ds.summary.rejected["no_contact"], 1);
        let text = manifest_csv(&ds, &PreprocessConfig::default(), None);
        assert!(text.lines().last().unwrap().ends_with(",rejected,no_contact"));
    }

    #[test]
    fn corrupt_packed_files_fail() {
        let p = Path::new("x.bin");
        assert!(decode_packed(b"", p).is_err());
        assert!(decode_packed(b"{}\n", p).is_err());
        let ds = PreparedDataset::default();
        let mut bytes = encode_packed(&ds, &PreprocessConfig::default(), None);
        assert_eq!(decode_packed(&bytes, p).unwrap().samples.len(), 0);
        bytes.push(0);
        assert!(decode_packed(&bytes, p).is_err());
    }

    #[test]
    fn missing_session_dir() {
        let tmp = tempfile::tempdir().unwrap();
        let r = prepare_sessions(tmp.path(), &PreprocessConfig::default(), IngestMode::Strict);
        assert!(matches!(r, Err(DatasetError::NoSessions(_))));
    }
}
