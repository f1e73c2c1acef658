//! Letter preprocessing: force-gated trimming, length filtering, linear
//! resampling to a fixed length and per-channel L2 normalization.
//!
//! Steps run in that order. Trimming keeps the span from the first to the last
//! frame whose tip force reaches the threshold, so pen lifts between strokes
//! stay in the sample. The length filter looks at the trimmed length.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{LetterCase, LetterSample, SensorFrame};
use crate::NUM_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Tip force (N) that counts as pen-on-paper.
    pub force_threshold: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub target_len: usize,
    pub normalization: NormScope,
}

/// Which values the L2 norm of a channel is taken over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Each channel of each sample over its own time axis.
    #[default]
    PerSample,
    /// Statistics fitted on a training set. Reserved, not implemented.
    Dataset,
}

impl std::str::FromStr for NormScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_sample" | "per-sample" => Ok(NormScope::PerSample),
            "dataset" => Ok(NormScope::Dataset),
            other => Err(format!("unknown normalization `{other}` (per_sample, dataset)")),
        }
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            force_threshold: 0.2,
            min_len: 10,
            max_len: 500,
            target_len: 50,
            normalization: NormScope::PerSample,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
    #[error("no frame reaches the force threshold")]
    EmptyAfterTrim,
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |m: String| Err(PreprocessError::InvalidConfig(m));
        if !(self.force_threshold > 0.0) {
            return bad(format!("force_threshold must be > 0, got {}", self.force_threshold));
        }
        if self.min_len == 0 || self.min_len > self.target_len || self.target_len > self.max_len {
            return bad(format!(
                "need 0 < min_len <= target_len <= max_len, got {} / {} / {}",
                self.min_len, self.target_len, self.max_len
            ));
        }
        if self.target_len < 2 {
            return bad("target_len must be at least 2".into());
        }
        if self.normalization == NormScope::Dataset {
            return bad("dataset-level normalization is not implemented".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Force never reached the threshold.
    NoContact,
    TooShort,
    TooLong,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NoContact => "no_contact",
            RejectReason::TooShort => "too_short",
            RejectReason::TooLong => "too_long",
        }
    }
}

impl std::str::FromStr for RejectReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_contact" => Ok(RejectReason::NoContact),
            "too_short" => Ok(RejectReason::TooShort),
            "too_long" => Ok(RejectReason::TooLong),
            other => Err(format!("unknown reject reason `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthCheck {
    Keep,
    Reject(RejectReason),
}

/// A preprocessed letter ready for the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSample {
    pub sample_id: String,
    /// `target_len × 13`, channels in stream order with force last.
    pub x: Array2<f64>,
    /// 0–25.
    pub label_index: usize,
    pub writer_id: String,
    pub case: LetterCase,
}

impl TensorSample {
    pub fn label(&self) -> char {
        self.case.letter(self.label_index)
    }
}

/// Index range `first..=last` of frames at or above the threshold.
pub fn contact_span(frames: &[SensorFrame], threshold: f64) -> Option<(usize, usize)> {
    let first = frames.iter().position(|f| f.force >= threshold)?;
    let last = frames.iter().rposition(|f| f.force >= threshold)?;
    Some((first, last))
}

pub fn trim_by_force(
    sample: &LetterSample,
    cfg: &PreprocessConfig,
) -> Result<LetterSample, PreprocessError> {
    let (first, last) =
        contact_span(&sample.frames, cfg.force_threshold).ok_or(PreprocessError::EmptyAfterTrim)?;
    Ok(LetterSample {
        frames: sample.frames[first..=last].to_vec(),
        ..sample.clone()
    })
}

pub fn check_length(len: usize, cfg: &PreprocessConfig) -> LengthCheck {
    if len < cfg.min_len {
        LengthCheck::Reject(RejectReason::TooShort)
    } else if len > cfg.max_len {
        LengthCheck::Reject(RejectReason::TooLong)
    } else {
        LengthCheck::Keep
    }
}

/// Frames as an `L × 13` matrix.
pub fn frames_matrix(frames: &[SensorFrame]) -> Array2<f64> {
    let mut m = Array2::zeros((frames.len(), NUM_CHANNELS));
    for (mut row, f) in m.axis_iter_mut(Axis(0)).zip(frames) {
        for (dst, v) in row.iter_mut().zip(f.channels()) {
            *dst = v;
        }
    }
    m
}

/// Linear interpolation of every column onto `target_len` evenly spaced
/// positions. Output row `i` samples the input at `i·(L−1)/(target_len−1)`,
/// so the first and last rows reproduce the input endpoints exactly.
///
/// A single input row is repeated.
pub fn resample_linear(input: ArrayView2<'_, f64>, target_len: usize) -> Array2<f64> {
    let (len, channels) = input.dim();
    assert!(len >= 1, "cannot resample an empty signal");
    assert!(target_len >= 1, "target length must be positive");
    let mut out = Array2::zeros((target_len, channels));
    if len == 1 || target_len == 1 {
        for mut row in out.axis_iter_mut(Axis(0)) {
            row.assign(&input.row(0));
        }
        return out;
    }
    let span = (len - 1) as f64;
    let steps = (target_len - 1) as f64;
    for i in 0..target_len {
        let pos = (i * (len - 1)) as f64 / steps;
        let j = (pos.floor() as usize).min(len - 2);
        let frac = pos - j as f64;
        debug_assert!(pos <= span);
        for c in 0..channels {
            let a = input[[j, c]];
            let b = input[[j + 1, c]];
            let v = if frac == 0.0 {
                a
            } else if frac == 1.0 {
                b
            } else {
                (a + (b - a) * frac).clamp(a.min(b), a.max(b))
            };
            out[[i, c]] = v;
        }
    }
    out
}

/// Divides every column by its L2 norm. All-zero columns are left as is.
pub fn normalize_l2(matrix: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = matrix.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Trim, length filter, resample and normalize raw frames.
pub fn preprocess_frames(frames: &[SensorFrame], cfg: &PreprocessConfig) -> Result<Array2<f64>, RejectReason> {
    let (first, last) = contact_span(frames, cfg.force_threshold).ok_or(RejectReason::NoContact)?;
    let trimmed = &frames[first..=last];
    if let LengthCheck::Reject(reason) = check_length(trimmed.len(), cfg) {
        return Err(reason);
    }
    let resampled = resample_linear(frames_matrix(trimmed).view(), cfg.target_len);
    Ok(normalize_l2(resampled.view()))
}

/// [`preprocess_frames`] on a labeled sample.
pub fn preprocess_pipeline(
    sample: &LetterSample,
    cfg: &PreprocessConfig,
) -> Result<TensorSample, RejectReason> {
    Ok(TensorSample {
        sample_id: sample.sample_id(),
        x: preprocess_frames(&sample.frames, cfg)?,
        label_index: sample.class_index(),
        writer_id: sample.writer_id.clone(),
        case: sample.case,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn sample_with_forces(forces: &[f64]) -> LetterSample {
        LetterSample {
            frames: forces
                .iter()
                .enumerate()
                .map(|(i, &force)| {
                    let mut c = [0.0; NUM_CHANNELS];
                    c[0] = i as f64 * 0.01;
                    c[2] = 1.0;
                    c[12] = force;
                    SensorFrame::from_channels(i as i64 * 10, c)
                })
                .collect(),
            label: 'B',
            writer_id: "w".into(),
            case: LetterCase::Upper,
            seq: 0,
        }
    }

    fn forces(s: &LetterSample) -> Vec<f64> {
        s.frames.iter().map(|f| f.force).collect()
    }

    // Independent oracle: scan for first/last index at or above threshold.
    fn scan_oracle(forces: &[f64], thr: f64) -> Option<(usize, usize)> {
        let mut first = None;
        let mut last = None;
        for (i, &f) in forces.iter().enumerate() {
            if f >= thr {
                if first.is_none() {
                    first = Some(i);
                }
                last = Some(i);
            }
        }
        first.zip(last)
    }

    #[test]
    fn trim_keeps_interior_dip() {
        let f = [0.0, 0.1, 0.5, 0.05, 0.7, 0.1, 0.0];
        assert_eq!(scan_oracle(&f, 0.2), Some((2, 4)));
        let trimmed = trim_by_force(&sample_with_forces(&f), &PreprocessConfig::default()).unwrap();
        assert_eq!(forces(&trimmed), vec![0.5, 0.05, 0.7]);
    }

    #[test]
    fn trim_identity_and_empty() {
        let cfg = PreprocessConfig::default();
        let s = sample_with_forces(&[0.2, 0.3, 1.0, 0.25]);
        assert_eq!(trim_by_force(&s, &cfg).unwrap(), s);
        let none = sample_with_forces(&[0.0, 0.19, 0.1]);
        assert_eq!(trim_by_force(&none, &cfg), Err(PreprocessError::EmptyAfterTrim));
    }

    #[test]
    fn length_bounds_inclusive() {
        let cfg = PreprocessConfig::default();
        assert_eq!(check_length(50, &cfg), LengthCheck::Keep);
        assert_eq!(check_length(10, &cfg), LengthCheck::Keep);
        assert_eq!(check_length(500, &cfg), LengthCheck::Keep);
        assert_eq!(check_length(9, &cfg), LengthCheck::Reject(RejectReason::TooShort));
        assert_eq!(check_length(501, &cfg), LengthCheck::Reject(RejectReason::TooLong));
    }

    #[test]
    fn resample_examples() {
        let x = array![[0.0], [1.0], [2.0]];
        let y = resample_linear(x.view(), 5);
        assert_eq!(y.column(0).to_vec(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);

        let x = array![[1.0], [3.0]];
        let y = resample_linear(x.view(), 4);
        // Closed form on [1, 3] at t = 0, 1/3, 2/3, 1.
        let expected: Vec<f64> = (0..4).map(|i| 1.0 + 2.0 * i as f64 / 3.0).collect();
        for (a, b) in y.column(0).iter().zip(&expected) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(y[[1, 0]], 1.6667, epsilon = 1e-4);
        assert_abs_diff_eq!(y[[2, 0]], 2.3333, epsilon = 1e-4);
    }

    #[test]
    fn resample_identity_at_target_length() {
        let x = Array2::from_shape_fn((50, 13), |(i, c)| ((i * 31 + c * 7) % 17) as f64 * 0.37 - 2.0);
        assert_eq!(resample_linear(x.view(), 50), x);
    }

    #[test]
    fn normalize_examples() {
        let mut m = Array2::<f64>::zeros((50, 2));
        m[[0, 0]] = 3.0;
        m[[1, 0]] = 4.0;
        let n = normalize_l2(m.view());
        assert_abs_diff_eq!(n[[0, 0]], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(n[[1, 0]], 0.8, epsilon = 1e-15);
        assert!(n.column(0).iter().skip(2).all(|&v| v == 0.0));
        assert_eq!(n.column(1), Array1::<f64>::zeros(50));
    }

    #[test]
    fn pipeline_rejections() {
        let cfg = PreprocessConfig::default();
        // 700 frames, 600 in contact.
        let mut f = vec![0.0; 50];
        f.extend(std::iter::repeat(1.0).take(600));
        f.extend(std::iter::repeat(0.0).take(50));
        assert_eq!(
            preprocess_pipeline(&sample_with_forces(&f), &cfg),
            Err(RejectReason::TooLong)
        );
        assert_eq!(
            preprocess_pipeline(&sample_with_forces(&[0.0; 30]), &cfg),
            Err(RejectReason::NoContact)
        );
        assert_eq!(
            preprocess_pipeline(&sample_with_forces(&[0.0, 1.0, 0.0]), &cfg),
            Err(RejectReason::TooShort)
        );
    }

    #[test]
    fn pipeline_eighty_contact_frames() {
        let cfg = PreprocessConfig::default();
        let mut f = vec![0.01; 20];
        f.extend((0..80).map(|i| 0.5 + (i as f64 * 0.3).sin() * 0.2));
        f.extend(vec![0.01; 20]);
        let t = preprocess_pipeline(&sample_with_forces(&f), &cfg).unwrap();
        assert_eq!(t.x.dim(), (50, 13));
        assert_eq!(t.label_index, 1);
        for col in t.x.axis_iter(Axis(1)) {
            let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-6, "norm {n}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(PreprocessConfig::default().validate().is_ok());
        let bad = PreprocessConfig { min_len: 60, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PreprocessConfig { force_threshold: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let stub = PreprocessConfig { normalization: NormScope::Dataset, ..Default::default() };
        assert!(stub.validate().is_err());
    }
}
