use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{self, BatchNormCache};
use super::{cast, NnError, Real};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_len: usize,
    pub input_channels: usize,
    pub conv_filters: [usize; 2],
    pub kernel_size: usize,
    pub dense_hidden: usize,
    pub classes: usize,
    /// Applied after the two convolution blocks.
    pub dropout_rate: f64,
    pub bn_eps: f64,
    /// Weight of the old value in the running-statistics average.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 50,
            input_channels: 13,
            conv_filters: [64, 64],
            kernel_size: 4,
            dense_hidden: 100,
            classes: 26,
            dropout_rate: 0.4,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl ModelConfig {
    pub fn conv1_len(&self) -> usize {
        self.input_len + 1 - self.kernel_size
    }

    pub fn conv2_len(&self) -> usize {
        self.conv1_len() + 1 - self.kernel_size
    }

    pub fn flat_len(&self) -> usize {
        self.conv2_len() * self.conv_filters[1]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.kernel_size == 0 || self.input_len < 2 * self.kernel_size - 1 {
            return bad(format!(
                "input length {} too short for two valid convolutions of size {}",
                self.input_len, self.kernel_size
            ));
        }
        if self.input_channels == 0
            || self.conv_filters.contains(&0)
            || self.dense_hidden == 0
            || self.classes < 2
        {
            return bad("layer widths must be positive and classes >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("batch norm eps must be > 0 and momentum in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    /// `[kernel, in_channels, filters]`.
    pub kernel: Array3<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[inputs, outputs]`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Real> BatchNorm<T> {
    fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }

    fn update_running(&mut self, cache: &BatchNormCache<T>, momentum: f64) {
        let keep: T = cast(momentum);
        let take: T = cast(1.0 - momentum);
        self.running_mean.zip_mut_with(&cache.mean, |r, &m| *r = keep * *r + take * m);
        self.running_var.zip_mut_with(&cache.var, |r, &v| *r = keep * *r + take * v);
    }

    fn infer(&self, x: ArrayView2<'_, T>, eps: f64) -> Array2<T> {
        layers::batchnorm_forward_infer(
            x,
            self.gamma.view(),
            self.beta.view(),
            self.running_mean.view(),
            self.running_var.view(),
            eps,
        )
    }
}

/// All arrays of the network: learnable weights plus batch-norm running
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub conv1: Conv1d<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv1d<T>,
    pub bn2: BatchNorm<T>,
    pub dense1: Dense<T>,
    pub bn3: BatchNorm<T>,
    pub dense2: Dense<T>,
}

/// Names of the learnable tensors, in the order used by [`ModelParams::tensors`],
/// the optimizer and checkpoints.
pub const LEARNABLE_NAMES: [&str; 14] = [
    "conv1.kernel",
    "conv1.bias",
    "bn1.gamma",
    "bn1.beta",
    "conv2.kernel",
    "conv2.bias",
    "bn2.gamma",
    "bn2.beta",
    "dense1.weight",
    "dense1.bias",
    "bn3.gamma",
    "bn3.beta",
    "dense2.weight",
    "dense2.bias",
];

pub const RUNNING_STAT_NAMES: [&str; 6] = [
    "bn1.running_mean",
    "bn1.running_var",
    "bn2.running_mean",
    "bn2.running_var",
    "bn3.running_mean",
    "bn3.running_var",
];

fn he_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> ndarray::ArrayD<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    ndarray::ArrayD::from_shape_simple_fn(shape, || cast(rng.random_range(-limit..limit)))
}

impl<T: Real> ModelParams<T> {
    /// He-uniform weights, zero biases, γ = 1, β = 0.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self, NnError> {
        config.validate()?;
        let k = config.kernel_size;
        let [f1, f2] = config.conv_filters;
        let c = config.input_channels;
        let conv = |cin: usize, f: usize, rng: &mut Rng| Conv1d {
            kernel: he_uniform(&[k, cin, f], k * cin, rng)
                .into_dimensionality()
                .expect("rank 3"),
            bias: Array1::zeros(f),
        };
        let dense = |i: usize, o: usize, rng: &mut Rng| Dense {
            weight: he_uniform(&[i, o], i, rng).into_dimensionality().expect("rank 2"),
            bias: Array1::zeros(o),
        };
        Ok(ModelParams {
            config,
            conv1: conv(c, f1, rng),
            bn1: BatchNorm::new(f1),
            conv2: conv(f1, f2, rng),
            bn2: BatchNorm::new(f2),
            dense1: dense(config.flat_len(), config.dense_hidden, rng),
            bn3: BatchNorm::new(config.dense_hidden),
            dense2: dense(config.dense_hidden, config.classes, rng),
        })
    }

    pub fn tensors(&self) -> Vec<ArrayViewD<'_, T>> {
        vec![
            self.conv1.kernel.view().into_dyn(),
            self.conv1.bias.view().into_dyn(),
            self.bn1.gamma.view().into_dyn(),
            self.bn1.beta.view().into_dyn(),
            self.conv2.kernel.view().into_dyn(),
            self.conv2.bias.view().into_dyn(),
            self.bn2.gamma.view().into_dyn(),
            self.bn2.beta.view().into_dyn(),
            self.dense1.weight.view().into_dyn(),
            self.dense1.bias.view().into_dyn(),
            self.bn3.gamma.view().into_dyn(),
            self.bn3.beta.view().into_dyn(),
            self.dense2.weight.view().into_dyn(),
            self.dense2.bias.view().into_dyn(),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        vec![
            self.conv1.kernel.view_mut().into_dyn(),
            self.conv1.bias.view_mut().into_dyn(),
            self.bn1.gamma.view_mut().into_dyn(),
            self.bn1.beta.view_mut().into_dyn(),
            self.conv2.kernel.view_mut().into_dyn(),
            self.conv2.bias.view_mut().into_dyn(),
            self.bn2.gamma.view_mut().into_dyn(),
            self.bn2.beta.view_mut().into_dyn(),
            self.dense1.weight.view_mut().into_dyn(),
            self.dense1.bias.view_mut().into_dyn(),
            self.bn3.gamma.view_mut().into_dyn(),
            self.bn3.beta.view_mut().into_dyn(),
            self.dense2.weight.view_mut().into_dyn(),
            self.dense2.bias.view_mut().into_dyn(),
        ]
    }

    pub fn running_stats(&self) -> Vec<ArrayViewD<'_, T>> {
        vec![
            self.bn1.running_mean.view().into_dyn(),
            self.bn1.running_var.view().into_dyn(),
            self.bn2.running_mean.view().into_dyn(),
            self.bn2.running_var.view().into_dyn(),
            self.bn3.running_mean.view().into_dyn(),
            self.bn3.running_var.view().into_dyn(),
        ]
    }

    pub fn running_stats_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        vec![
            self.bn1.running_mean.view_mut().into_dyn(),
            self.bn1.running_var.view_mut().into_dyn(),
            self.bn2.running_mean.view_mut().into_dyn(),
            self.bn2.running_var.view_mut().into_dyn(),
            self.bn3.running_mean.view_mut().into_dyn(),
            self.bn3.running_var.view_mut().into_dyn(),
        ]
    }

    pub fn num_learnable(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().into_iter().chain(self.running_stats()).all(|t| {
            let s = t.as_slice_memory_order().expect("owned arrays are contiguous");
            s.iter().fold(true, |ok, v| ok & v.is_finite())
        })
    }

    /// Element-type conversion, e.g. `f32` weights into an `f64` model.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        fn c1<T: Real, U: Real>(a: &Array1<T>) -> Array1<U> {
            a.mapv(|v| cast(v.to_f64().expect("finite")))
        }
        fn c2<T: Real, U: Real>(a: &Array2<T>) -> Array2<U> {
            a.mapv(|v| cast(v.to_f64().expect("finite")))
        }
        fn c3<T: Real, U: Real>(a: &Array3<T>) -> Array3<U> {
            a.mapv(|v| cast(v.to_f64().expect("finite")))
        }
        let bn = |b: &BatchNorm<T>| BatchNorm {
            gamma: c1(&b.gamma),
            beta: c1(&b.beta),
            running_mean: c1(&b.running_mean),
            running_var: c1(&b.running_var),
        };
        ModelParams {
            config: self.config,
            conv1: Conv1d { kernel: c3(&self.conv1.kernel), bias: c1(&self.conv1.bias) },
            bn1: bn(&self.bn1),
            conv2: Conv1d { kernel: c3(&self.conv2.kernel), bias: c1(&self.conv2.bias) },
            bn2: bn(&self.bn2),
            dense1: Dense { weight: c2(&self.dense1.weight), bias: c1(&self.dense1.bias) },
            bn3: bn(&self.bn3),
            dense2: Dense { weight: c2(&self.dense2.weight), bias: c1(&self.dense2.bias) },
        }
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let m = self.config.bn_momentum;
        self.bn1.update_running(&cache.bn1, m);
        self.bn2.update_running(&cache.bn2, m);
        self.bn3.update_running(&cache.bn3, m);
    }

    fn check_input(&self, x: &ArrayView3<'_, T>) -> Result<(), NnError> {
        let (b, l, c) = x.dim();
        if b == 0 || l != self.config.input_len || c != self.config.input_channels {
            return Err(NnError::ShapeMismatch(format!(
                "expected [B>0, {}, {}] input, got [{b}, {l}, {c}]",
                self.config.input_len, self.config.input_channels
            )));
        }
        Ok(())
    }
}

/// Dropout masks of the two convolution blocks, `[B·time, filters]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub block1: Array2<T>,
    pub block2: Array2<T>,
}

/// Where train-mode dropout masks come from.
pub enum MaskSource<'a, T> {
    Sample(&'a mut Rng),
    Fixed(&'a DropoutMasks<T>),
}

/// Activations saved by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub batch: usize,
    patches1: Array2<T>,
    bn1: BatchNormCache<T>,
    act1: Array2<T>,
    patches2: Array2<T>,
    bn2: BatchNormCache<T>,
    act2: Array2<T>,
    flat: Array2<T>,
    bn3: BatchNormCache<T>,
    act3: Array2<T>,
    pub masks: DropoutMasks<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Whether every ReLU is on the same side of its kink in both passes.
    pub fn same_relu_pattern(&self, other: &ForwardCache<T>) -> bool {
        let on = |a: &Array2<T>, b: &Array2<T>| {
            a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (*x > T::zero()) == (*y > T::zero()))
        };
        on(&self.act1, &other.act1) && on(&self.act2, &other.act2) && on(&self.act3, &other.act3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Train-mode forward pass: batch statistics in batch norm and dropout masks
/// from `masks`. Parameters are not modified; see
/// [`ModelParams::update_running_stats`].
pub fn forward_train<T: Real>(
    params: &ModelParams<T>,
    x: ArrayView3<'_, T>,
    masks: MaskSource<'_, T>,
) -> Result<(Array2<T>, ForwardCache<T>), NnError> {
    params.check_input(&x)?;
    let cfg = &params.config;
    let batch = x.dim().0;
    let eps = cfg.bn_eps;
    let (l1, l2) = (cfg.conv1_len(), cfg.conv2_len());
    let [f1, f2] = cfg.conv_filters;

    let (patches1, z1) =
        layers::conv1d_forward_batch(x, params.conv1.kernel.view(), params.conv1.bias.view())?;
    let (mut act1, bn1) =
        layers::batchnorm_forward_train(z1.view(), params.bn1.gamma.view(), params.bn1.beta.view(), eps)?;
    layers::relu_inplace(&mut act1);

    let (mask1, mask2) = match masks {
        MaskSource::Sample(rng) => {
            let m1 = layers::dropout_mask(act1.dim(), cfg.dropout_rate, rng);
            let m2 = layers::dropout_mask((batch * l2, f2), cfg.dropout_rate, rng);
            (m1, m2)
        }
        MaskSource::Fixed(m) => {
            if m.block1.dim() != (batch * l1, f1) || m.block2.dim() != (batch * l2, f2) {
                return Err(NnError::ShapeMismatch("fixed dropout masks do not fit batch".into()));
            }
            (m.block1.clone(), m.block2.clone())
        }
    };
    let h1 = (&act1 * &mask1)
        .into_shape_with_order((batch, l1, f1))
        .expect("contiguous activations");

    let (patches2, z2) =
        layers::conv1d_forward_batch(h1.view(), params.conv2.kernel.view(), params.conv2.bias.view())?;
    let (mut act2, bn2) =
        layers::batchnorm_forward_train(z2.view(), params.bn2.gamma.view(), params.bn2.beta.view(), eps)?;
    layers::relu_inplace(&mut act2);
    let flat = (&act2 * &mask2)
        .into_shape_with_order((batch, l2 * f2))
        .expect("contiguous activations");

    let mut z3 = flat.dot(&params.dense1.weight);
    z3 += &params.dense1.bias;
    let (mut act3, bn3) =
        layers::batchnorm_forward_train(z3.view(), params.bn3.gamma.view(), params.bn3.beta.view(), eps)?;
    layers::relu_inplace(&mut act3);

    let mut logits = act3.dot(&params.dense2.weight);
    logits += &params.dense2.bias;

    Ok((
        logits,
        ForwardCache {
            batch,
            patches1,
            bn1,
            act1,
            patches2,
            bn2,
            act2,
            flat,
            bn3,
            act3,
            masks: DropoutMasks {
                block1: mask1,
                block2: mask2,
            },
        },
    ))
}

/// Inference forward pass: running statistics, no dropout. Rows are
/// independent of each other.
pub fn forward_infer<T: Real>(params: &ModelParams<T>, x: ArrayView3<'_, T>) -> Result<Array2<T>, NnError> {
    params.check_input(&x)?;
    let cfg = &params.config;
    let batch = x.dim().0;
    let eps = cfg.bn_eps;
    let (l1, l2) = (cfg.conv1_len(), cfg.conv2_len());
    let [f1, f2] = cfg.conv_filters;

    let (_, z1) = layers::conv1d_forward_batch(x, params.conv1.kernel.view(), params.conv1.bias.view())?;
    let mut a1 = params.bn1.infer(z1.view(), eps);
    layers::relu_inplace(&mut a1);
    let h1 = a1.into_shape_with_order((batch, l1, f1)).expect("contiguous");

    let (_, z2) =
        layers::conv1d_forward_batch(h1.view(), params.conv2.kernel.view(), params.conv2.bias.view())?;
    let mut a2 = params.bn2.infer(z2.view(), eps);
    layers::relu_inplace(&mut a2);
    let flat = a2.into_shape_with_order((batch, l2 * f2)).expect("contiguous");

    let mut z3 = flat.dot(&params.dense1.weight);
    z3 += &params.dense1.bias;
    let mut a3 = params.bn3.infer(z3.view(), eps);
    layers::relu_inplace(&mut a3);
    let mut logits = a3.dot(&params.dense2.weight);
    logits += &params.dense2.bias;
    Ok(logits)
}

/// Logits for a batch in either mode. Train mode samples dropout from `rng`.
pub fn model_forward<T: Real>(
    params: &ModelParams<T>,
    x: ArrayView3<'_, T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Array2<T>, NnError> {
    match mode {
        Mode::Infer => forward_infer(params, x),
        Mode::Train => forward_train(params, x, MaskSource::Sample(rng)).map(|(l, _)| l),
    }
}

/// Gradients with the same layout as the learnable part of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub conv1: Conv1d<T>,
    pub bn1: (Array1<T>, Array1<T>),
    pub conv2: Conv1d<T>,
    pub bn2: (Array1<T>, Array1<T>),
    pub dense1: Dense<T>,
    pub bn3: (Array1<T>, Array1<T>),
    pub dense2: Dense<T>,
}

impl<T: Real> Gradients<T> {
    /// Same order as [`LEARNABLE_NAMES`].
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, T>> {
        vec![
            self.conv1.kernel.view().into_dyn(),
            self.conv1.bias.view().into_dyn(),
            self.bn1.0.view().into_dyn(),
            self.bn1.1.view().into_dyn(),
            self.conv2.kernel.view().into_dyn(),
            self.conv2.bias.view().into_dyn(),
            self.bn2.0.view().into_dyn(),
            self.bn2.1.view().into_dyn(),
            self.dense1.weight.view().into_dyn(),
            self.dense1.bias.view().into_dyn(),
            self.bn3.0.view().into_dyn(),
            self.bn3.1.view().into_dyn(),
            self.dense2.weight.view().into_dyn(),
            self.dense2.bias.view().into_dyn(),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        vec![
            self.conv1.kernel.view_mut().into_dyn(),
            self.conv1.bias.view_mut().into_dyn(),
            self.bn1.0.view_mut().into_dyn(),
            self.bn1.1.view_mut().into_dyn(),
            self.conv2.kernel.view_mut().into_dyn(),
            self.conv2.bias.view_mut().into_dyn(),
            self.bn2.0.view_mut().into_dyn(),
            self.bn2.1.view_mut().into_dyn(),
            self.dense1.weight.view_mut().into_dyn(),
            self.dense1.bias.view_mut().into_dyn(),
            self.bn3.0.view_mut().into_dyn(),
            self.bn3.1.view_mut().into_dyn(),
            self.dense2.weight.view_mut().into_dyn(),
            self.dense2.bias.view_mut().into_dyn(),
        ]
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v.to_f64().expect("finite").powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Exact gradients of the mean cross-entropy with respect to every learnable
/// tensor, given the cache of the matching train-mode forward pass.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    dlogits: ArrayView2<'_, T>,
) -> Result<Gradients<T>, NnError> {
    let cfg = &params.config;
    let batch = cache.batch;
    if dlogits.dim() != (batch, cfg.classes) {
        return Err(NnError::StateMismatch(format!(
            "cached batch of {batch} but logit gradient of shape {:?}",
            dlogits.dim()
        )));
    }
    let (l1, l2) = (cfg.conv1_len(), cfg.conv2_len());
    let [f1, f2] = cfg.conv_filters;
    if cache.flat.dim() != (batch, cfg.flat_len()) || cache.act1.dim() != (batch * l1, f1) {
        return Err(NnError::StateMismatch("cache does not match model shape".into()));
    }

    // Output layer.
    let dw4 = cache.act3.t().dot(&dlogits);
    let db4 = dlogits.sum_axis(ndarray::Axis(0));
    let mut da3 = dlogits.dot(&params.dense2.weight.t());
    layers::relu_backward_inplace(&mut da3, cache.act3.view());
    let (dz3, dg3, dbt3) = layers::batchnorm_backward(da3.view(), &cache.bn3, params.bn3.gamma.view());

    // Dense hidden layer.
    let dw3 = cache.flat.t().dot(&dz3);
    let db3 = dz3.sum_axis(ndarray::Axis(0));
    let dflat = dz3.dot(&params.dense1.weight.t());
    let mut da2 = dflat
        .into_shape_with_order((batch * l2, f2))
        .expect("contiguous gradient");
    da2 *= &cache.masks.block2;
    layers::relu_backward_inplace(&mut da2, cache.act2.view());
    let (dz2, dg2, dbt2) = layers::batchnorm_backward(da2.view(), &cache.bn2, params.bn2.gamma.view());

    // Second convolution.
    let (dk2, dc2, dpatches2) =
        layers::conv1d_backward(cache.patches2.view(), params.conv2.kernel.view(), dz2.view(), true);
    let dh1 = layers::col2im(
        dpatches2.expect("requested input gradient").view(),
        batch,
        l1,
        f1,
        cfg.kernel_size,
    );
    let mut da1 = dh1
        .into_shape_with_order((batch * l1, f1))
        .expect("contiguous gradient");
    da1 *= &cache.masks.block1;
    layers::relu_backward_inplace(&mut da1, cache.act1.view());
    let (dz1, dg1, dbt1) = layers::batchnorm_backward(da1.view(), &cache.bn1, params.bn1.gamma.view());

    // First convolution; its input gradient is not needed.
    let (dk1, dc1, _) =
        layers::conv1d_backward(cache.patches1.view(), params.conv1.kernel.view(), dz1.view(), false);

    Ok(Gradients {
        conv1: Conv1d { kernel: dk1, bias: dc1 },
        bn1: (dg1, dbt1),
        conv2: Conv1d { kernel: dk2, bias: dc2 },
        bn2: (dg2, dbt2),
        dense1: Dense { weight: dw3, bias: db3 },
        bn3: (dg3, dbt3),
        dense2: Dense { weight: dw4, bias: db4 },
    })
}

/// Stacks `[L, C]` samples into a `[B, L, C]` batch of element type `T`.
pub fn stack_inputs<'a, T: Real, I>(samples: I, len: usize, channels: usize) -> Array3<T>
where
    I: IntoIterator<Item = ArrayView2<'a, f64>>,
{
    let rows: Vec<_> = samples.into_iter().collect();
    let mut out = Array3::zeros((rows.len(), len, channels));
    for (mut dst, src) in out.outer_iter_mut().zip(rows) {
        dst.zip_mut_with(&src, |d, &s| *d = cast(s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::softmax_xent;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, Normal};

    fn random_batch(b: usize, seed: u64) -> Array3<f64> {
        let mut rng = rng_from_seed(seed);
        let n = Normal::new(0.0, 0.3).unwrap();
        Array3::from_shape_simple_fn((b, 50, 13), || n.sample(&mut rng))
    }

    #[test]
    fn shape_chain() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.conv1_len(), 47);
        assert_eq!(cfg.conv2_len(), 44);
        assert_eq!(cfg.flat_len(), 2816);
        let p = ModelParams::<f64>::init(cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(p.dense1.weight.dim(), (2816, 100));
        assert_eq!(p.dense2.weight.dim(), (100, 26));
        assert_eq!(p.tensors().len(), LEARNABLE_NAMES.len());
        assert_eq!(
            p.num_learnable(),
            4 * 13 * 64 + 64 + 128 + 4 * 64 * 64 + 64 + 128 + 2816 * 100 + 100 + 200 + 2600 + 26
        );
    }

    #[test]
    fn invalid_config() {
        let cfg = ModelConfig { input_len: 5, ..Default::default() };
        assert!(ModelParams::<f32>::init(cfg, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn output_shape_and_finite() {
        let p = ModelParams::<f64>::init(ModelConfig::default(), &mut rng_from_seed(1)).unwrap();
        let x = random_batch(5, 2);
        let mut rng = rng_from_seed(3);
        for mode in [Mode::Train, Mode::Infer] {
            let y = model_forward(&p, x.view(), mode, &mut rng).unwrap();
            assert_eq!(y.dim(), (5, 26));
            assert!(y.iter().all(|v| v.is_finite()));
        }
        let bad = Array3::<f64>::zeros((2, 49, 13));
        assert!(matches!(forward_infer(&p, bad.view()), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_input_gives_zero_logits() {
        let p = ModelParams::<f64>::init(ModelConfig::default(), &mut rng_from_seed(1)).unwrap();
        let x = Array3::<f64>::zeros((3, 50, 13));
        let y = forward_infer(&p, x.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let (y, _) = forward_train(&p, x.view(), MaskSource::Sample(&mut rng_from_seed(2))).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_is_pure() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), &mut rng_from_seed(4)).unwrap();
        let x = random_batch(4, 5).mapv(|v| v as f32);
        assert_eq!(forward_infer(&p, x.view()).unwrap(), forward_infer(&p, x.view()).unwrap());
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let p = ModelParams::<f64>::init(ModelConfig::default(), &mut rng_from_seed(6)).unwrap();
        let x = random_batch(4, 7);
        let (_, cache) = forward_train(&p, x.view(), MaskSource::Sample(&mut rng_from_seed(8))).unwrap();
        let dl = Array2::<f64>::zeros((3, 26));
        assert!(matches!(backward(&p, &cache, dl.view()), Err(NnError::StateMismatch(_))));
    }

    #[test]
    fn duplicated_batch_gives_same_gradients() {
        let p = ModelParams::<f64>::init(ModelConfig::default(), &mut rng_from_seed(9)).unwrap();
        let x = random_batch(4, 10);
        let labels = [1, 2, 3, 4];
        let ones = DropoutMasks {
            block1: Array2::ones((4 * 47, 64)),
            block2: Array2::ones((4 * 44, 64)),
        };
        let (logits, cache) = forward_train(&p, x.view(), MaskSource::Fixed(&ones)).unwrap();
        let (_, dl) = softmax_xent(logits.view(), &labels);
        let g = backward(&p, &cache, dl.view()).unwrap();

        let x2 = ndarray::concatenate(ndarray::Axis(0), &[x.view(), x.view()]).unwrap();
        let ones2 = DropoutMasks {
            block1: Array2::ones((8 * 47, 64)),
            block2: Array2::ones((8 * 44, 64)),
        };
        let (logits2, cache2) = forward_train(&p, x2.view(), MaskSource::Fixed(&ones2)).unwrap();
        let (_, dl2) = softmax_xent(logits2.view(), &[1, 2, 3, 4, 1, 2, 3, 4]);
        let g2 = backward(&p, &cache2, dl2.view()).unwrap();
        for (a, b) in g.tensors().iter().zip(g2.tensors()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn saturated_fixed_point_has_vanishing_gradient() {
        let mut p = ModelParams::<f64>::init(ModelConfig::default(), &mut rng_from_seed(14)).unwrap();
        p.dense2.bias[7] = 100.0;
        let x = random_batch(6, 15);
        let (logits, cache) = forward_train(&p, x.view(), MaskSource::Sample(&mut rng_from_seed(16))).unwrap();
        let labels = crate::nn::layers::argmax_rows(logits.view());
        assert!(labels.iter().all(|&l| l == 7));
        let (loss, dl) = softmax_xent(logits.view(), &labels);
        assert!(loss < 1e-30);
        let g = backward(&p, &cache, dl.view()).unwrap();
        assert!(g.norm() < 1e-30, "gradient norm {}", g.norm());
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut p = ModelParams::<f64>::init(ModelConfig::default(), &mut rng_from_seed(11)).unwrap();
        let x = random_batch(6, 12);
        let (_, cache) = forward_train(&p, x.view(), MaskSource::Sample(&mut rng_from_seed(1))).unwrap();
        p.update_running_stats(&cache);
        assert!(p.bn1.running_var.iter().all(|&v| v >= 0.0));
        assert!(p.bn1.running_mean.iter().any(|&v| v != 0.0));
        assert!(p.all_finite());
    }

    #[test]
    fn cast_round_trip() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), &mut rng_from_seed(13)).unwrap();
        let back: ModelParams<f32> = p.cast::<f64>().cast();
        assert_eq!(p, back);
    }
}
