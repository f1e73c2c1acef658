use ndarray::{s, Array2, Array3, ArrayView3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::layers::{argmax_rows, gather_batch, softmax_rows, softmax_xent};
use super::model::{backward, forward_infer, forward_train, stack_inputs, MaskSource, ModelConfig, ModelParams};
use super::{NnError, Real};
use crate::preprocess::TensorSample;
use crate::rng::{derive_seed, rng_from_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(NnError::InvalidConfig("batch size must be >= 2 for batch norm".into()));
        }
        self.adam().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    /// Train-mode (dropout active) accuracy accumulated over the epoch.
    pub accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// CSV with header `epoch,loss,accuracy,val_accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy,val_accuracy\n");
        for e in &self.epochs {
            let val = e.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.accuracy, val));
        }
        out
    }
}

/// Batch boundaries for one epoch. A trailing batch of a single sample is
/// folded into the previous one so batch norm always sees two rows.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|start| (start, (start + batch_size).min(n)))
        .collect();
    if out.len() >= 2 && out[out.len() - 1].1 - out[out.len() - 1].0 == 1 {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").1 = last.1;
    }
    out
}

/// Samples stacked into a `[N, L, C]` tensor with their labels.
pub struct Batch<T> {
    pub x: Array3<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn from_samples(samples: &[TensorSample]) -> Result<Self, NnError> {
        let first = samples.first().ok_or(NnError::EmptyDataset)?;
        let (len, channels) = first.x.dim();
        if let Some(bad) = samples.iter().find(|s| s.x.dim() != (len, channels)) {
            return Err(NnError::ShapeMismatch(format!(
                "sample {} is {:?}, expected {:?}",
                bad.sample_id,
                bad.x.dim(),
                (len, channels)
            )));
        }
        Ok(Batch {
            x: stack_inputs(samples.iter().map(|s| s.x.view()), len, channels),
            labels: samples.iter().map(|s| s.label_index).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_cases(samples: &[TensorSample]) -> Result<(), NnError> {
    let first = samples.first().ok_or(NnError::EmptyDataset)?;
    if samples.iter().any(|s| s.case != first.case) {
        return Err(NnError::MixedCases);
    }
    Ok(())
}

/// Trains a fresh model. See [`train_with_validation`].
pub fn train<T: Real>(
    samples: &[TensorSample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainHistory), NnError> {
    train_with_validation(samples, None, model_cfg, train_cfg)
}

/// Trains a fresh model for exactly `train_cfg.epochs` epochs. The result is a
/// pure function of the inputs: initialization, shuffling and dropout each
/// draw from their own stream derived from `train_cfg.seed`.
pub fn train_with_validation<T: Real>(
    samples: &[TensorSample],
    validation: Option<&[TensorSample]>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainHistory), NnError> {
    train_cfg.validate()?;
    check_cases(samples)?;
    if samples.len() < 2 {
        return Err(NnError::DegenerateBatch(samples.len()));
    }
    let data = Batch::<T>::from_samples(samples)?;
    let val = validation
        .filter(|v| !v.is_empty())
        .map(Batch::<T>::from_samples)
        .transpose()?;

    let seed = train_cfg.seed;
    let mut params = ModelParams::<T>::init(*model_cfg, &mut rng_from_seed(derive_seed(seed, tag::INIT, 0)))?;
    let mut shuffle_rng = rng_from_seed(derive_seed(seed, tag::SHUFFLE, 0));
    let mut dropout_rng = rng_from_seed(derive_seed(seed, tag::DROPOUT, 0));
    let adam = train_cfg.adam();
    let mut state = AdamState::new(&params);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, &(lo, hi)) in batch_ranges(order.len(), train_cfg.batch_size).iter().enumerate() {
            let idx = &order[lo..hi];
            let x = gather_batch(data.x.view(), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let (logits, cache) = forward_train(&params, x.view(), MaskSource::Sample(&mut dropout_rng))?;
            let (loss, dlogits) = softmax_xent(logits.view(), &labels);
            if !loss.is_finite() {
                return Err(NnError::NonFinite { what: "loss", epoch, step });
            }
            loss_sum += loss * idx.len() as f64;
            correct += argmax_rows(logits.view())
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = backward(&params, &cache, dlogits.view())?;
            state.step(&adam, &mut params, &grads);
            params.update_running_stats(&cache);
            if !params.all_finite() {
                return Err(NnError::NonFinite { what: "parameters", epoch, step });
            }
        }
        let val_accuracy = match &val {
            Some(v) => Some(accuracy(&params, v)?),
            None => None,
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            val_accuracy,
        };
        log::debug!(
            "epoch {}: loss {:.4} acc {:.4} val {:?}",
            stats.epoch,
            stats.loss,
            stats.accuracy,
            stats.val_accuracy
        );
        history.epochs.push(stats);
    }
    Ok((params, history))
}

/// Rows per inference forward pass.
const INFER_CHUNK: usize = 256;

/// Inference-mode logits for `[N, L, C]`, computed in chunks.
pub fn infer_logits<T: Real>(params: &ModelParams<T>, x: ArrayView3<'_, T>) -> Result<Array2<T>, NnError> {
    let n = x.dim().0;
    let mut out = Array2::zeros((n, params.config.classes));
    for lo in (0..n).step_by(INFER_CHUNK) {
        let hi = (lo + INFER_CHUNK).min(n);
        let logits = forward_infer(params, x.slice(s![lo..hi, .., ..]))?;
        out.slice_mut(s![lo..hi, ..]).assign(&logits);
    }
    Ok(out)
}

fn accuracy<T: Real>(params: &ModelParams<T>, data: &Batch<T>) -> Result<f64, NnError> {
    let pred = argmax_rows(infer_logits(params, data.x.view())?.view());
    let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub class: usize,
}

/// Class probabilities and top-1 class per sample, in inference mode.
pub fn predict<T: Real>(params: &ModelParams<T>, samples: &[TensorSample]) -> Result<Vec<Prediction>, NnError> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let data = Batch::<T>::from_samples(samples)?;
    predict_tensor(params, data.x.view())
}

pub fn predict_tensor<T: Real>(params: &ModelParams<T>, x: ArrayView3<'_, T>) -> Result<Vec<Prediction>, NnError> {
    let logits = infer_logits(params, x)?;
    let classes = argmax_rows(logits.view());
    let probs = softmax_rows(logits.view());
    Ok(probs
        .rows()
        .into_iter()
        .zip(classes)
        .map(|(p, class)| Prediction {
            probs: p.to_vec(),
            class,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::LetterCase;
    use rand_distr::{Distribution, Normal};

    fn toy(n_per_class: usize, classes: usize, seed: u64) -> Vec<TensorSample> {
        // Each class is a fixed random pattern plus small noise.
        let mut rng = rng_from_seed(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let protos: Vec<Array2<f64>> = (0..classes)
            .map(|_| Array2::from_shape_simple_fn((50, 13), || n.sample(&mut rng)))
            .collect();
        let mut out = Vec::new();
        for rep in 0..n_per_class {
            for (c, p) in protos.iter().enumerate() {
                let x = p.mapv(|v| v + 0.1 * n.sample(&mut rng));
                out.push(TensorSample {
                    sample_id: format!("t{c}-{rep}"),
                    x,
                    label_index: c,
                    writer_id: "w".into(),
                    case: LetterCase::Upper,
                });
            }
        }
        out
    }

    #[test]
    fn batch_ranges_fold_singleton_tail() {
        assert_eq!(batch_ranges(129, 64), vec![(0, 64), (64, 129)]);
        assert_eq!(batch_ranges(130, 64), vec![(0, 64), (64, 128), (128, 130)]);
        assert_eq!(batch_ranges(52, 64), vec![(0, 52)]);
        assert_eq!(batch_ranges(128, 64), vec![(0, 64), (64, 128)]);
        for n in 2..300 {
            let r = batch_ranges(n, 64);
            assert_eq!(r[0].0, 0);
            assert_eq!(r.last().unwrap().1, n);
            assert!(r.windows(2).all(|w| w[0].1 == w[1].0));
            assert!(r.iter().all(|(a, b)| b - a >= 2));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig { epochs: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { learning_rate: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
        let d = TrainConfig::default();
        assert_eq!((d.epochs, d.learning_rate, d.batch_size), (50, 0.001, 64));
    }

    #[test]
    fn empty_and_mixed_datasets_are_rejected() {
        let cfg = ModelConfig::default();
        let tc = TrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(train::<f32>(&[], &cfg, &tc), Err(NnError::EmptyDataset)));
        let mut data = toy(1, 3, 1);
        data[1].case = LetterCase::Lower;
        assert!(matches!(train::<f32>(&data, &cfg, &tc), Err(NnError::MixedCases)));
    }

    #[test]
    fn deterministic_history_and_length() {
        let data = toy(3, 4, 2);
        let tc = TrainConfig { epochs: 3, batch_size: 5, seed: 17, ..Default::default() };
        let (p1, h1) = train::<f32>(&data, &ModelConfig::default(), &tc).unwrap();
        let (p2, h2) = train::<f32>(&data, &ModelConfig::default(), &tc).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(h1.len(), 3);
        let (_, h3) = train::<f32>(&data, &ModelConfig::default(), &TrainConfig { seed: 18, ..tc }).unwrap();
        assert_ne!(h1, h3);
    }

    #[test]
    fn predictions_are_distributions_and_batch_independent() {
        let data = toy(2, 3, 3);
        let tc = TrainConfig { epochs: 2, batch_size: 4, ..Default::default() };
        let (p, _) = train::<f64>(&data, &ModelConfig::default(), &tc).unwrap();
        let all = predict(&p, &data).unwrap();
        for (i, pred) in all.iter().enumerate() {
            let total: f64 = pred.probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-6);
            let alone = predict(&p, &data[i..i + 1]).unwrap();
            assert_eq!(alone[0].class, pred.class);
            for (a, b) in alone[0].probs.iter().zip(&pred.probs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn learns_separable_toy_problem() {
        let data = toy(4, 5, 4);
        let tc = TrainConfig { epochs: 40, batch_size: 8, ..Default::default() };
        let (p, h) = train::<f32>(&data, &ModelConfig::default(), &tc).unwrap();
        assert!(h.epochs.last().unwrap().loss < h.epochs[0].loss);
        let hits = predict(&p, &data)
            .unwrap()
            .iter()
            .zip(&data)
            .filter(|(p, s)| p.class == s.label_index)
            .count();
        assert_eq!(hits, data.len());
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            epochs: vec![EpochStats { epoch: 1, loss: 0.5, accuracy: 0.25, val_accuracy: None }],
        };
        assert_eq!(h.to_csv(), "epoch,loss,accuracy,val_accuracy\n1,0.5,0.25,\n");
    }
}
