//! Central finite-difference check of [`backward`](super::model::backward).

use ndarray::{Array3, ArrayViewMutD};
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::Serialize;

use super::layers::softmax_xent;
use super::model::{
    backward, forward_train, DropoutMasks, ForwardCache, MaskSource, ModelConfig, ModelParams, LEARNABLE_NAMES,
};
use super::NnError;
use crate::ingest::LetterCase;
use crate::preprocess::{preprocess_pipeline, PreprocessConfig};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::synth::{letter_template, synthesize_sample, WriterStyle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub step: f64,
    pub threshold: f64,
    /// Tensors with at most this many entries are checked in full; larger
    /// ones on a seeded random subset of this size.
    pub max_coords_per_tensor: usize,
    /// Smallest step tried when `±step` straddles a ReLU kink.
    pub min_step: f64,
    /// Negative control: scales one analytic gradient tensor before comparing.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            batch_size: 8,
            step: 1e-4,
            threshold: 1e-3,
            max_coords_per_tensor: 4096,
            min_step: 1e-7,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub size: usize,
    pub checked: usize,
    /// Coordinates re-measured with a smaller step because the ReLU
    /// on/off pattern differed between the `+h` and `−h` evaluations.
    pub kink_refined: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Denominator floor of the relative error. Biases feeding a batch norm have
/// an exact gradient of zero, so both sides sit at rounding noise there.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `n` preprocessed uppercase letters from one synthetic writer.
pub fn synthetic_batch(seed: u64, n: usize) -> (Array3<f64>, Vec<usize>) {
    let style = WriterStyle::draw(derive_seed(seed, tag::WRITER, 0));
    let cfg = PreprocessConfig::default();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut i = 0u64;
    while rows.len() < n {
        let letter = LetterCase::Upper.letter(i as usize % 26);
        let template = letter_template(letter, LetterCase::Upper).expect("known letter");
        let sample = synthesize_sample(&template, &style, derive_seed(seed, tag::SAMPLE, i));
        if let Ok(t) = preprocess_pipeline(&sample, &cfg) {
            rows.push(t.x);
            labels.push(t.label_index);
        }
        i += 1;
    }
    let mut x = Array3::zeros((n, rows[0].nrows(), rows[0].ncols()));
    for (mut dst, src) in x.outer_iter_mut().zip(&rows) {
        dst.assign(src);
    }
    (x, labels)
}

/// Moves γ, β and the biases away from their initial values so every path
/// through the network carries signal.
fn perturb(params: &mut ModelParams<f64>, seed: u64) {
    let mut rng = rng_from_seed(derive_seed(seed, tag::GRADCHECK, 1));
    for (name, mut t) in LEARNABLE_NAMES.iter().zip(params.tensors_mut()) {
        if name.ends_with("gamma") {
            t.mapv_inplace(|_| rng.random_range(0.5..1.5));
        } else if name.ends_with("beta") || name.ends_with("bias") {
            t.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
    }
}

fn loss_with(
    params: &ModelParams<f64>,
    x: &Array3<f64>,
    labels: &[usize],
    masks: &DropoutMasks<f64>,
) -> Result<(f64, ForwardCache<f64>), NnError> {
    let (logits, cache) = forward_train(params, x.view(), MaskSource::Fixed(masks))?;
    Ok((softmax_xent(logits.view(), labels).0, cache))
}

fn tensor_mut<'a>(params: &'a mut ModelParams<f64>, k: usize) -> ArrayViewMutD<'a, f64> {
    params.tensors_mut().swap_remove(k)
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport, NnError> {
    if cfg.batch_size < 2 || !(cfg.step > 0.0) || cfg.max_coords_per_tensor == 0 {
        return Err(NnError::InvalidConfig(format!("invalid gradcheck settings {cfg:?}")));
    }
    let (x, labels) = synthetic_batch(cfg.seed, cfg.batch_size);
    let mut params = ModelParams::<f64>::init(
        ModelConfig::default(),
        &mut rng_from_seed(derive_seed(cfg.seed, tag::INIT, 0)),
    )?;
    perturb(&mut params, cfg.seed);

    let mut dropout_rng = rng_from_seed(derive_seed(cfg.seed, tag::DROPOUT, 0));
    let (logits, cache) = forward_train(&params, x.view(), MaskSource::Sample(&mut dropout_rng))?;
    let masks = cache.masks.clone();
    let (_, dlogits) = softmax_xent(logits.view(), &labels);
    let mut grads = backward(&params, &cache, dlogits.view())?;
    if cfg.corrupt_gradient {
        grads.dense2.weight.mapv_inplace(|g| g * 1.05);
    }
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.iter().copied().collect()).collect();

    let mut pick_rng = rng_from_seed(derive_seed(cfg.seed, tag::GRADCHECK, 2));
    let mut tensors = Vec::with_capacity(LEARNABLE_NAMES.len());
    for (k, name) in LEARNABLE_NAMES.iter().enumerate() {
        let size = analytic[k].len();
        let mut coords: Vec<usize> = if size <= cfg.max_coords_per_tensor {
            (0..size).collect()
        } else {
            sample_indices(&mut pick_rng, size, cfg.max_coords_per_tensor).into_vec()
        };
        coords.sort_unstable();
        let mut worst = (0.0f64, 0usize);
        let mut kink_refined = 0;
        for &i in &coords {
            let original = tensor_mut(&mut params, k).as_slice_mut().expect("contiguous")[i];
            let mut h = cfg.step;
            let numeric = loop {
                tensor_mut(&mut params, k).as_slice_mut().expect("contiguous")[i] = original + h;
                let (plus, cache_plus) = loss_with(&params, &x, &labels, &masks)?;
                tensor_mut(&mut params, k).as_slice_mut().expect("contiguous")[i] = original - h;
                let (minus, cache_minus) = loss_with(&params, &x, &labels, &masks)?;
                tensor_mut(&mut params, k).as_slice_mut().expect("contiguous")[i] = original;
                let smooth = cache_plus.same_relu_pattern(&cache_minus);
                if smooth || h / 10.0 < cfg.min_step {
                    break (plus - minus) / (2.0 * h);
                }
                if h == cfg.step {
                    kink_refined += 1;
                }
                h /= 10.0;
            };
            let err = relative_error(analytic[k][i], numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, i);
            }
        }
        tensors.push(TensorCheck {
            name: (*name).into(),
            size,
            checked: coords.len(),
            kink_refined,
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        config: *cfg,
        passed: max_rel_error < cfg.threshold,
        tensors,
        max_rel_error,
    })
}
