//! Model checkpoints.
//!
//! Layout: one line of JSON ([`CheckpointHeader`]) terminated by `\n`, then
//! every tensor as packed little-endian `f32` in row-major order. Tensor order
//! is [`LEARNABLE_NAMES`] followed by [`RUNNING_STAT_NAMES`]; the header lists
//! each name with its shape.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams, LEARNABLE_NAMES, RUNNING_STAT_NAMES};
use super::train::TrainConfig;
use super::{NnError, Real};
use crate::ingest::LetterCase;
use crate::rng::rng_from_seed;

pub const FORMAT: &str = "penhwr-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub format_version: u32,
    pub tool_version: String,
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
    /// Letter case the classes index into.
    #[serde(default)]
    pub case: Option<LetterCase>,
    /// Provenance of the command that wrote the file.
    #[serde(default)]
    pub run_config: Option<serde_json::Value>,
}

fn all_names() -> impl Iterator<Item = &'static str> {
    LEARNABLE_NAMES.iter().chain(RUNNING_STAT_NAMES.iter()).copied()
}

/// Everything in the header besides the tensor layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub train_config: Option<TrainConfig>,
    pub epoch: usize,
    pub case: Option<LetterCase>,
    pub run_config: Option<serde_json::Value>,
}

pub fn encode<T: Real>(params: &ModelParams<T>, meta: &CheckpointMeta) -> Result<Vec<u8>, NnError> {
    let train_config = meta.train_config.as_ref();
    let arrays: Vec<_> = params.tensors().into_iter().chain(params.running_stats()).collect();
    let header = CheckpointHeader {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        tool_version: crate::TOOL_VERSION.into(),
        model_config: params.config,
        train_config: train_config.copied(),
        seed: train_config.map_or(0, |t| t.seed),
        epoch: meta.epoch,
        tensors: all_names()
            .zip(&arrays)
            .map(|(name, a)| TensorEntry {
                name: name.into(),
                shape: a.shape().to_vec(),
            })
            .collect(),
        case: meta.case,
        run_config: meta.run_config.clone(),
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    out.push(b'\n');
    for a in &arrays {
        for v in a.iter() {
            let f = v.to_f32().expect("finite parameter");
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, ModelParams<f32>), NnError> {
    let bad = |m: String| NnError::Checkpoint(m);
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT || header.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format {} v{}",
            header.format, header.format_version
        )));
    }
    header.model_config.validate()?;
    // A freshly initialized model provides the expected shapes.
    let mut params = ModelParams::<f32>::init(header.model_config, &mut rng_from_seed(0))?;
    let expected: Vec<(&str, Vec<usize>)> = all_names()
        .zip(params.tensors().into_iter().chain(params.running_stats()))
        .map(|(n, a)| (n, a.shape().to_vec()))
        .collect();
    let listed: Vec<(&str, Vec<usize>)> = header
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t.shape.clone()))
        .collect();
    if listed != expected {
        return Err(bad("tensor list does not match model configuration".into()));
    }
    let body = &bytes[nl + 1..];
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if body.len() != 4 * total {
        return Err(bad(format!("expected {} data bytes, found {}", 4 * total, body.len())));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let fill = |a: &mut ndarray::ArrayViewMutD<'_, f32>, values: &mut dyn Iterator<Item = f32>| {
        for slot in a.iter_mut() {
            *slot = values.next().expect("length checked");
        }
    };
    for mut a in params.tensors_mut() {
        fill(&mut a, &mut values);
    }
    for mut a in params.running_stats_mut() {
        fill(&mut a, &mut values);
    }
    if !params.all_finite() {
        return Err(bad("non-finite parameter values".into()));
    }
    Ok((header, params))
}

pub fn save<T: Real>(path: &Path, params: &ModelParams<T>, meta: &CheckpointMeta) -> Result<(), NnError> {
    let bytes = encode(params, meta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, ModelParams<f32>), NnError> {
    decode(&std::fs::read(path)?)
}

/// Loads and converts to another element type.
pub fn load_as<T: Real>(path: &Path) -> Result<(CheckpointHeader, ModelParams<T>), NnError> {
    let (h, p) = load(path)?;
    Ok((h, p.cast()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), &mut rng_from_seed(3)).unwrap();
        let tc = TrainConfig { seed: 9, ..Default::default() };
        let meta = CheckpointMeta {
            train_config: Some(tc),
            epoch: 50,
            case: Some(LetterCase::Lower),
            run_config: Some(serde_json::json!({"a": 1})),
        };
        let bytes = encode(&p, &meta).unwrap();
        let (h, q) = decode(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(h.seed, 9);
        assert_eq!(h.epoch, 50);
        assert_eq!(h.case, Some(LetterCase::Lower));
        assert_eq!(h.tensors.len(), 20);
        assert_eq!(h.tensors[0].shape, vec![4, 13, 64]);
        assert_eq!(encode(&q, &meta).unwrap(), bytes);
    }

    #[test]
    fn header_is_first_line() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), &mut rng_from_seed(3)).unwrap();
        let bytes = encode(&p, &CheckpointMeta::default()).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(v["format"], FORMAT);
        assert_eq!(v["model_config"]["input_len"], 50);
        assert_eq!(bytes.len() - nl - 1, 4 * (p.num_learnable() + 2 * (64 + 64 + 100)));
    }

    #[test]
    fn truncated_or_corrupt_files_fail() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), &mut rng_from_seed(3)).unwrap();
        let bytes = encode(&p, &CheckpointMeta::default()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"not json\n").is_err());
        assert!(decode(b"").is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = ModelParams::<f64>::init(ModelConfig::default(), &mut rng_from_seed(5)).unwrap();
        save(&path, &p, &CheckpointMeta::default()).unwrap();
        let (_, q) = load_as::<f64>(&path).unwrap();
        let expected: ModelParams<f64> = p.cast::<f32>().cast();
        assert_eq!(q, expected);
    }
}
