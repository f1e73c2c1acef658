//! Evaluation protocols: writer-dependent 5-fold cross-validation and
//! writer-independent held-out writers, each repeated over five runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{write_file, RunConfig};
use crate::ingest::LetterCase;
use crate::nn::train::{predict, train};
use crate::nn::{ModelConfig, ModelParams, NnError, Real, TrainConfig};
use crate::preprocess::TensorSample;
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::{NUM_CLASSES, TOOL_VERSION};

pub const RUNS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {RUNS} samples for {RUNS} folds, got {0}")]
    TooFewSamples(usize),
    #[error("need at least {RUNS} writers and one training writer, got {writers} writers with {test} held out")]
    TooFewWriters { writers: usize, test: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid test fraction: {0}")]
    InvalidFraction(String),
    #[error("manifest run {run}: {message}")]
    InvalidManifest { run: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    WriterDependent,
    WriterIndependent,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::WriterDependent => "writer-dependent",
            Protocol::WriterIndependent => "writer-independent",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "writer-dependent" | "wd" => Ok(Protocol::WriterDependent),
            "writer-independent" | "wi" => Ok(Protocol::WriterIndependent),
            other => Err(format!(
                "unknown protocol `{other}` (writer-dependent, writer-independent)"
            )),
        }
    }
}

/// Share of writers held out for testing, as an exact ratio so that
/// `⌈W·num/den⌉` has no rounding surprises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFraction {
    pub num: u64,
    pub den: u64,
}

impl TestFraction {
    /// 24 of 114 writers.
    pub const REFERENCE: TestFraction = TestFraction { num: 24, den: 114 };

    pub fn new(num: u64, den: u64) -> Result<Self, EvalError> {
        if den == 0 || num == 0 || num >= den {
            return Err(EvalError::InvalidFraction(format!("{num}/{den} is not in (0, 1)")));
        }
        Ok(TestFraction { num, den })
    }

    pub fn test_writers(self, writers: usize) -> usize {
        (writers as u64 * self.num).div_ceil(self.den) as usize
    }
}

impl Default for TestFraction {
    fn default() -> Self {
        TestFraction::REFERENCE
    }
}

impl fmt::Display for TestFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for TestFraction {
    type Err = String;

    /// Accepts `a/b` or a decimal such as `0.25` (read exactly).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parsed = if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse::<u64>().map_err(|e| e.to_string())?;
            let b = b.trim().parse::<u64>().map_err(|e| e.to_string())?;
            TestFraction::new(a, b)
        } else {
            let (int, frac) = s.split_once('.').unwrap_or((s, ""));
            if frac.len() > 12 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
                return Err(format!("`{s}` is not a fraction"));
            }
            let den = 10u64.pow(frac.len() as u32);
            let num = format!("{int}{frac}").parse::<u64>().map_err(|e| e.to_string())?;
            TestFraction::new(num, den)
        };
        parsed.map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub run_index: usize,
    pub protocol: Protocol,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Checks the split against the dataset it was drawn from: disjoint,
    /// covering, and for writer-independent splits, writer-disjoint.
    pub fn validate(&self, samples: &[TensorSample]) -> Result<(), EvalError> {
        let bad = |message: String| EvalError::InvalidManifest {
            run: self.run_index,
            message,
        };
        let writer_of: BTreeMap<&str, &str> = samples
            .iter()
            .map(|s| (s.sample_id.as_str(), s.writer_id.as_str()))
            .collect();
        let train: BTreeSet<&str> = self.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.test.iter().map(String::as_str).collect();
        if train.len() != self.train.len() || test.len() != self.test.len() {
            return Err(bad("duplicate sample ids".into()));
        }
        if let Some(id) = train.intersection(&test).next() {
            return Err(bad(format!("{id} is in both train and test")));
        }
        if train.len() + test.len() != writer_of.len() || train.iter().chain(&test).any(|id| !writer_of.contains_key(id)) {
            return Err(bad("train and test do not cover the dataset".into()));
        }
        if self.protocol == Protocol::WriterIndependent {
            let train_w: BTreeSet<&str> = train.iter().map(|id| writer_of[id]).collect();
            if let Some(w) = test.iter().map(|id| writer_of[id]).find(|w| train_w.contains(w)) {
                return Err(bad(format!("writer {w} appears in train and test")));
            }
        }
        Ok(())
    }

    pub fn test_writers(&self, samples: &[TensorSample]) -> Vec<String> {
        let test: BTreeSet<&str> = self.test.iter().map(String::as_str).collect();
        let writers: BTreeSet<&str> = samples
            .iter()
            .filter(|s| test.contains(s.sample_id.as_str()))
            .map(|s| s.writer_id.as_str())
            .collect();
        writers.into_iter().map(String::from).collect()
    }

    /// CSV with header `sample_id,split`, train rows first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,split\n");
        for id in &self.train {
            out.push_str(&format!("{id},train\n"));
        }
        for id in &self.test {
            out.push_str(&format!("{id},test\n"));
        }
        out
    }
}

/// Random permutation cut into five folds whose sizes differ by at most one;
/// run `i` tests on fold `i`.
pub fn split_writer_dependent(samples: &[TensorSample], seed: u64) -> Result<Vec<SplitManifest>, EvalError> {
    let n = samples.len();
    if n < RUNS {
        return Err(EvalError::TooFewSamples(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, tag::SPLIT, 0)));
    let bounds: Vec<usize> = (0..=RUNS).map(|i| i * n / RUNS).collect();
    Ok((0..RUNS)
        .map(|run| {
            let (lo, hi) = (bounds[run], bounds[run + 1]);
            let ids = |idx: &[usize]| idx.iter().map(|&i| samples[i].sample_id.clone()).collect::<Vec<_>>();
            let mut train = ids(&order[..lo]);
            train.extend(ids(&order[hi..]));
            SplitManifest {
                run_index: run,
                protocol: Protocol::WriterDependent,
                seed,
                train,
                test: ids(&order[lo..hi]),
            }
        })
        .collect())
}

/// Per run, draws `⌈fraction·W⌉` test writers independently of other runs;
/// every sample follows its writer.
pub fn split_writer_independent(
    samples: &[TensorSample],
    seed: u64,
    fraction: TestFraction,
) -> Result<Vec<SplitManifest>, EvalError> {
    let writers: Vec<&str> = samples
        .iter()
        .map(|s| s.writer_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = fraction.test_writers(writers.len());
    if writers.len() < RUNS || k == 0 || k >= writers.len() {
        return Err(EvalError::TooFewWriters {
            writers: writers.len(),
            test: k,
        });
    }
    Ok((0..RUNS)
        .map(|run| {
            let mut rng = rng_from_seed(derive_seed(seed, tag::SPLIT, run as u64 + 1));
            let held: BTreeSet<&str> = sample_indices(&mut rng, writers.len(), k)
                .into_iter()
                .map(|i| writers[i])
                .collect();
            let (test, train): (Vec<&TensorSample>, Vec<&TensorSample>) =
                samples.iter().partition(|s| held.contains(s.writer_id.as_str()));
            SplitManifest {
                run_index: run,
                protocol: Protocol::WriterIndependent,
                seed,
                train: train.iter().map(|s| s.sample_id.clone()).collect(),
                test: test.iter().map(|s| s.sample_id.clone()).collect(),
            }
        })
        .collect())
}

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Header row of letters, then one row per true class.
    pub fn to_csv(&self, case: LetterCase) -> String {
        let letters: Vec<String> = (0..self.counts.len()).map(|i| case.letter(i).to_string()).collect();
        let mut out = format!("true\\pred,{}\n", letters.join(","));
        for (i, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{},{}\n", letters[i], cells.join(",")));
        }
        out
    }
}

/// Top-1 accuracy and confusion matrix on `test`.
pub fn evaluate<T: Real>(params: &ModelParams<T>, test: &[TensorSample]) -> Result<(f64, Confusion), EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let preds = predict(params, test)?;
    let mut confusion = Confusion::new(params.config.classes);
    for (p, s) in preds.iter().zip(test) {
        confusion.add(s.label_index, p.class);
    }
    Ok((confusion.trace() as f64 / test.len() as f64, confusion))
}

/// Accuracy figures reported for the original 114-writer recordings. Kept as
/// context in reports, never compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAccuracy {
    pub mean: f64,
    pub std: f64,
}

pub fn reference_accuracy(protocol: Protocol, case: LetterCase) -> ReferenceAccuracy {
    let (mean, std) = match (protocol, case) {
        (Protocol::WriterIndependent, LetterCase::Upper) => (0.8697, 0.0119),
        (Protocol::WriterIndependent, LetterCase::Lower) => (0.8113, 0.0252),
        (Protocol::WriterDependent, LetterCase::Upper) => (0.9104, 0.0034),
        (Protocol::WriterDependent, LetterCase::Lower) => (0.8627, 0.0075),
    };
    ReferenceAccuracy { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_index: usize,
    pub train_seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub test_writers: Vec<String>,
    pub accuracy: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub split_seed: u64,
    pub test_fraction: TestFraction,
    pub model: ModelConfig,
    /// `seed` is the base from which each run's training seed is derived.
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol) -> Self {
        ExperimentConfig {
            protocol,
            split_seed: 0,
            test_fraction: TestFraction::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.train.seed, tag::RUN, run as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub protocol: Protocol,
    pub case: LetterCase,
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
    pub accuracy_mean: f64,
    /// Population standard deviation over runs.
    pub accuracy_std: f64,
    pub std_kind: String,
    pub confusion: Confusion,
    pub reference: ReferenceAccuracy,
    pub manifests: Vec<SplitManifest>,
    pub run_config: Option<RunConfig>,
}

pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Splits, trains a fresh `f32` model per run and evaluates it.
pub fn run_experiment(
    samples: &[TensorSample],
    cfg: &ExperimentConfig,
    run_config: Option<&RunConfig>,
) -> Result<EvalReport, EvalError> {
    let case = samples.first().ok_or(NnError::EmptyDataset)?.case;
    if samples.iter().any(|s| s.case != case) {
        return Err(NnError::MixedCases.into());
    }
    let manifests = match cfg.protocol {
        Protocol::WriterDependent => split_writer_dependent(samples, cfg.split_seed)?,
        Protocol::WriterIndependent => split_writer_independent(samples, cfg.split_seed, cfg.test_fraction)?,
    };
    let by_id: BTreeMap<&str, &TensorSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let pick = |ids: &[String]| ids.iter().map(|id| by_id[id.as_str()].clone()).collect::<Vec<_>>();

    let mut runs = Vec::with_capacity(RUNS);
    let mut confusion = Confusion::new(NUM_CLASSES);
    for m in &manifests {
        m.validate(samples)?;
        let train_set = pick(&m.train);
        let test_set = pick(&m.test);
        let train_cfg = TrainConfig {
            seed: cfg.run_seed(m.run_index),
            ..cfg.train
        };
        let (params, history) = train::<f32>(&train_set, &cfg.model, &train_cfg)?;
        let (accuracy, c) = evaluate(&params, &test_set)?;
        log::info!(
            "{} {} run {}: accuracy {:.4} ({} train / {} test)",
            cfg.protocol,
            case,
            m.run_index,
            accuracy,
            train_set.len(),
            test_set.len()
        );
        confusion.merge(&c);
        runs.push(RunResult {
            run_index: m.run_index,
            train_seed: train_cfg.seed,
            train_samples: train_set.len(),
            test_samples: test_set.len(),
            test_writers: m.test_writers(samples),
            accuracy,
            final_train_loss: history.epochs.last().map_or(f64::NAN, |e| e.loss),
        });
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let (mean, std) = mean_and_population_std(&accs);
    Ok(EvalReport {
        tool_version: TOOL_VERSION.into(),
        protocol: cfg.protocol,
        case,
        config: cfg.clone(),
        runs,
        accuracy_mean: mean,
        accuracy_std: std,
        std_kind: "population".into(),
        confusion,
        reference: reference_accuracy(cfg.protocol, case),
        manifests,
        run_config: run_config.cloned(),
    })
}

pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const MANIFEST_DIR: &str = "manifests";

impl EvalReport {
    pub fn to_json(&self) -> String {
        // Manifests go to their own CSV files.
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("manifests");
        serde_json::to_string_pretty(&v).expect("json") + "\n"
    }

    /// `report.json`, `confusion.csv` and `manifests/run<i>.csv` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        let write = |path: PathBuf, text: String| {
            write_file(&path, text).map_err(|source| EvalError::Io { path, source })
        };
        write(dir.join(REPORT_FILE), self.to_json())?;
        write(dir.join(CONFUSION_FILE), self.confusion.to_csv(self.case))?;
        for m in &self.manifests {
            write(dir.join(MANIFEST_DIR).join(format!("run{}.csv", m.run_index)), m.to_csv())?;
        }
        Ok(())
    }
}

/// Largest off-diagonal confusion counts, as `(true, predicted, count)`
/// letters. Ties are ordered by `(true, predicted)`.
pub fn top_confusions(confusion: &Confusion, case: LetterCase, n: usize) -> Vec<(char, char, u64)> {
    let mut cells: Vec<(usize, usize, u64)> = Vec::new();
    for (i, row) in confusion.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if i != j && c > 0 {
                cells.push((i, j, c));
            }
        }
    }
    cells.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    cells
        .into_iter()
        .take(n)
        .map(|(i, j, c)| (case.letter(i), case.letter(j), c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn fake(writers: usize, per_writer: usize) -> Vec<TensorSample> {
        let mut out = Vec::new();
        for w in 0..writers {
            for k in 0..per_writer {
                out.push(TensorSample {
                    sample_id: format!("w{w:03}-{k:04}"),
                    x: Array2::zeros((50, 13)),
                    label_index: k % 26,
                    writer_id: format!("w{w:03}"),
                    case: LetterCase::Upper,
                });
            }
        }
        out
    }

    #[test]
    fn writer_dependent_folds() {
        let s = fake(4, 25);
        let m = split_writer_dependent(&s, 3).unwrap();
        assert_eq!(m.len(), 5);
        let mut seen = BTreeSet::new();
        for run in &m {
            assert_eq!(run.test.len(), 20);
            assert_eq!(run.train.len(), 80);
            run.validate(&s).unwrap();
            for id in &run.test {
                assert!(seen.insert(id.clone()));
            }
        }
        assert_eq!(seen.len(), 100);
        assert_eq!(m, split_writer_dependent(&s, 3).unwrap());
        assert_ne!(m, split_writer_dependent(&s, 4).unwrap());
        assert!(matches!(split_writer_dependent(&s[..4], 0), Err(EvalError::TooFewSamples(4))));
    }

    #[test]
    fn uneven_folds_differ_by_at_most_one() {
        let s = fake(1, 103);
        let sizes: Vec<usize> = split_writer_dependent(&s, 0).unwrap().iter().map(|m| m.test.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn test_writer_counts() {
        let f = TestFraction::REFERENCE;
        assert_eq!(f.test_writers(114), 24);
        assert_eq!(f.test_writers(38), 8);
        assert_eq!(f.test_writers(39), 9);
        assert_eq!(f.test_writers(5), 2);
        assert_eq!("24/114".parse::<TestFraction>().unwrap(), f);
        assert_eq!("0.25".parse::<TestFraction>().unwrap(), TestFraction { num: 25, den: 100 });
        assert!("1/1".parse::<TestFraction>().is_err());
        assert!("abc".parse::<TestFraction>().is_err());
    }

    #[test]
    fn writer_independent_runs() {
        let s = fake(38, 4);
        let m = split_writer_independent(&s, 11, TestFraction::REFERENCE).unwrap();
        assert_eq!(m.len(), 5);
        for run in &m {
            run.validate(&s).unwrap();
            assert_eq!(run.test_writers(&s).len(), 8);
            assert_eq!(run.test.len(), 32);
        }
        assert_ne!(m[0].test, m[1].test);
        assert_eq!(m, split_writer_independent(&s, 11, TestFraction::REFERENCE).unwrap());
        assert!(matches!(
            split_writer_independent(&fake(4, 3), 0, TestFraction::REFERENCE),
            Err(EvalError::TooFewWriters { .. })
        ));
    }

    #[test]
    fn validate_catches_leaks() {
        let s = fake(6, 2);
        let mut m = split_writer_independent(&s, 0, TestFraction::REFERENCE).unwrap().remove(0);
        let moved = m.test.pop().unwrap();
        m.train.push(moved);
        assert!(m.validate(&s).is_err());
        let mut wd = split_writer_dependent(&s, 0).unwrap().remove(0);
        wd.train.pop();
        assert!(wd.validate(&s).is_err());
    }

    #[test]
    fn confusion_identities() {
        let mut c = Confusion::new(26);
        for i in 0..26 {
            c.add(i, i);
        }
        c.add(3, 15);
        assert_eq!(c.total(), 27);
        assert_eq!(c.trace(), 26);
        assert_eq!(c.row_sums()[3], 2);
        let csv = c.to_csv(LetterCase::Upper);
        assert!(csv.starts_with("true\\pred,A,B,"));
        assert_eq!(csv.lines().count(), 27);
    }

    #[test]
    fn top_confusion_ordering() {
        let mut c = Confusion::new(26);
        for i in 0..26 {
            c.add(i, i);
        }
        assert!(top_confusions(&c, LetterCase::Upper, 5).is_empty());
        let idx = |ch: char| (ch as u8 - b'A') as usize;
        for _ in 0..5 {
            c.add(idx('X'), idx('Y'));
        }
        for _ in 0..3 {
            c.add(idx('P'), idx('D'));
        }
        c.add(idx('B'), idx('E'));
        c.add(idx('A'), idx('E'));
        assert_eq!(
            top_confusions(&c, LetterCase::Upper, 4),
            vec![('X', 'Y', 5), ('P', 'D', 3), ('A', 'E', 1), ('B', 'E', 1)]
        );
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_and_population_std(&[0.8, 0.9, 1.0, 0.7, 0.6]);
        assert!((m - 0.8).abs() < 1e-12);
        assert!((s - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!("writer-independent".parse::<Protocol>().unwrap(), Protocol::WriterIndependent);
        assert_eq!(Protocol::WriterDependent.to_string(), "writer-dependent");
        assert!("loo".parse::<Protocol>().is_err());
    }
}
