//! Layer kernels. Activations are kept as 2D `[rows, features]` matrices;
//! convolution outputs are `[batch·time, filters]` so batch norm treats every
//! time step of a filter as one observation.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng as _;

use super::{cast, NnError, Real};
use crate::rng::Rng;

/// Unfolds `[B, L, C]` into `[B·(L−K+1), K·C]`; row `(b, t)` is the window
/// `x[b, t..t+K, :]` flattened time-major.
pub fn im2col<T: Real>(x: ArrayView3<'_, T>, kernel_len: usize) -> Array2<T> {
    let (batch, len, channels) = x.dim();
    let out_len = len + 1 - kernel_len;
    let width = kernel_len * channels;
    let mut patches = Array2::<T>::zeros((batch * out_len, width));
    let x = x.as_standard_layout();
    let flat = x.as_slice().expect("standard layout");
    let dst = patches.as_slice_mut().expect("fresh array is contiguous");
    for b in 0..batch {
        for t in 0..out_len {
            let src = (b * len + t) * channels;
            let row = (b * out_len + t) * width;
            dst[row..row + width].copy_from_slice(&flat[src..src + width]);
        }
    }
    patches
}

/// Adjoint of [`im2col`]: scatters window gradients back onto `[B, L, C]`.
pub fn col2im<T: Real>(
    dpatches: ArrayView2<'_, T>,
    batch: usize,
    len: usize,
    channels: usize,
    kernel_len: usize,
) -> Array3<T> {
    let out_len = len + 1 - kernel_len;
    let width = kernel_len * channels;
    let mut dx = Array3::<T>::zeros((batch, len, channels));
    let dp = dpatches.as_standard_layout();
    let src = dp.as_slice().expect("standard layout");
    let dst = dx.as_slice_mut().expect("fresh array is contiguous");
    for b in 0..batch {
        for t in 0..out_len {
            let row = (b * out_len + t) * width;
            let base = (b * len + t) * channels;
            for (d, &g) in dst[base..base + width].iter_mut().zip(&src[row..row + width]) {
                *d += g;
            }
        }
    }
    dx
}

fn conv_shapes<T: Real>(
    x: &ArrayView3<'_, T>,
    kernel: &ArrayView3<'_, T>,
    bias: &ArrayView1<'_, T>,
) -> Result<(usize, usize, usize), NnError> {
    let (_, len, channels) = x.dim();
    let (k, kc, filters) = kernel.dim();
    if kc != channels {
        return Err(NnError::ShapeMismatch(format!(
            "kernel expects {kc} input channels, input has {channels}"
        )));
    }
    if bias.len() != filters {
        return Err(NnError::ShapeMismatch(format!(
            "bias has {} entries for {filters} filters",
            bias.len()
        )));
    }
    if k == 0 || len < k {
        return Err(NnError::ShapeMismatch(format!(
            "input length {len} shorter than kernel {k}"
        )));
    }
    Ok((k, channels, filters))
}

/// Valid 1D cross-correlation over a batch `[B, L, C_in]` with kernels
/// `[K, C_in, F]`. Returns the unfolded input (for backward) and the output
/// as `[B·(L−K+1), F]`.
pub fn conv1d_forward_batch<T: Real>(
    x: ArrayView3<'_, T>,
    kernel: ArrayView3<'_, T>,
    bias: ArrayView1<'_, T>,
) -> Result<(Array2<T>, Array2<T>), NnError> {
    let (k, channels, filters) = conv_shapes(&x, &kernel, &bias)?;
    let patches = im2col(x, k);
    let w = kernel
        .into_shape_with_order((k * channels, filters))
        .map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
    let mut out = patches.dot(&w);
    out += &bias;
    Ok((patches, out))
}

/// Single-sample convolution: `[L, C_in]` → `[L−K+1, F]`.
pub fn conv1d_forward<T: Real>(
    x: ArrayView2<'_, T>,
    kernel: ArrayView3<'_, T>,
    bias: ArrayView1<'_, T>,
) -> Result<Array2<T>, NnError> {
    let (_, out) = conv1d_forward_batch(x.insert_axis(Axis(0)), kernel, bias)?;
    Ok(out)
}

/// Gradients of a convolution given the cached unfolded input.
/// Returns `(d_kernel [K, C, F], d_bias [F], d_patches)`; `d_patches` is only
/// computed when `need_input_grad`.
pub fn conv1d_backward<T: Real>(
    patches: ArrayView2<'_, T>,
    kernel: ArrayView3<'_, T>,
    dout: ArrayView2<'_, T>,
    need_input_grad: bool,
) -> (Array3<T>, Array1<T>, Option<Array2<T>>) {
    let (k, channels, filters) = kernel.dim();
    let dw = patches.t().dot(&dout);
    let dkernel = dw
        .into_shape_with_order((k, channels, filters))
        .expect("kernel gradient has kernel shape");
    let dbias = dout.sum_axis(Axis(0));
    let dpatches = need_input_grad.then(|| {
        let w = kernel
            .into_shape_with_order((k * channels, filters))
            .expect("contiguous kernel");
        dout.dot(&w.t())
    });
    (dkernel, dbias, dpatches)
}

/// Values saved by a train-mode batch norm for its backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
    pub mean: Array1<T>,
    /// Biased batch variance.
    pub var: Array1<T>,
}

/// Per-feature mean and biased variance over the rows of a row-major
/// `[n, f]` slice, accumulated in `f64`.
fn column_moments<T: Real>(x: &[T], f: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / f;
    let mut mean = vec![0.0f64; f];
    for row in x.chunks_exact(f) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.to_f64().expect("finite");
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; f];
    for row in x.chunks_exact(f) {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.to_f64().expect("finite") - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    (mean, var)
}

/// Train-mode batch norm over the rows of `x`.
pub fn batchnorm_forward_train<T: Real>(
    x: ArrayView2<'_, T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
    eps: f64,
) -> Result<(Array2<T>, BatchNormCache<T>), NnError> {
    let (n, f) = x.dim();
    if n < 2 {
        return Err(NnError::DegenerateBatch(n));
    }
    if gamma.len() != f || beta.len() != f {
        return Err(NnError::ShapeMismatch(format!(
            "batch norm over {f} features with {} scales",
            gamma.len()
        )));
    }
    let mut xhat = x.as_standard_layout().into_owned();
    let (mean, var) = column_moments(xhat.as_slice().expect("standard layout"), f);
    let inv_std: Array1<T> = var.iter().map(|v| cast(1.0 / (v + eps).sqrt())).collect();
    let mean: Array1<T> = mean.into_iter().map(cast).collect();
    let mut y = Array2::<T>::zeros((n, f));
    {
        let (m, s) = (mean.as_slice().expect("1d"), inv_std.as_slice().expect("1d"));
        let g = gamma.to_vec();
        let b = beta.to_vec();
        let xs = xhat.as_slice_mut().expect("standard layout");
        let ys = y.as_slice_mut().expect("fresh array");
        for (xr, yr) in xs.chunks_exact_mut(f).zip(ys.chunks_exact_mut(f)) {
            for j in 0..f {
                let h = (xr[j] - m[j]) * s[j];
                xr[j] = h;
                yr[j] = h * g[j] + b[j];
            }
        }
    }
    let var = var.into_iter().map(cast).collect();
    Ok((
        y,
        BatchNormCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Inference batch norm with fixed statistics.
pub fn batchnorm_forward_infer<T: Real>(
    x: ArrayView2<'_, T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
    running_mean: ArrayView1<'_, T>,
    running_var: ArrayView1<'_, T>,
    eps: f64,
) -> Array2<T> {
    let eps: T = cast(eps);
    let scale: Array1<T> = Zip::from(&gamma)
        .and(&running_var)
        .map_collect(|&g, &v| g / (v + eps).sqrt());
    let shift: Array1<T> = Zip::from(&beta)
        .and(&running_mean)
        .and(&scale)
        .map_collect(|&b, &m, &s| b - m * s);
    let mut y = x.to_owned();
    for mut row in y.rows_mut() {
        Zip::from(&mut row)
            .and(&scale)
            .and(&shift)
            .for_each(|v, &s, &b| *v = *v * s + b);
    }
    y
}

/// Backward of train-mode batch norm, including the dependence of the batch
/// mean and variance on every input. Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Real>(
    dy: ArrayView2<'_, T>,
    cache: &BatchNormCache<T>,
    gamma: ArrayView1<'_, T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let (n, f) = dy.dim();
    let mut dx = dy.as_standard_layout().into_owned();
    let xhat = cache.xhat.as_slice().expect("cached in standard layout");
    let mut dgamma = vec![0.0f64; f];
    let mut dbeta = vec![0.0f64; f];
    for (g_row, x_row) in dx.as_slice().expect("standard layout").chunks_exact(f).zip(xhat.chunks_exact(f)) {
        for j in 0..f {
            let g = g_row[j].to_f64().expect("finite");
            dbeta[j] += g;
            dgamma[j] += g * x_row[j].to_f64().expect("finite");
        }
    }
    // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
    let inv_n = 1.0 / n as f64;
    let mean_dy: Vec<T> = dbeta.iter().map(|&v| cast(v * inv_n)).collect();
    let mean_dyx: Vec<T> = dgamma.iter().map(|&v| cast(v * inv_n)).collect();
    let coef: Vec<T> = gamma.iter().zip(&cache.inv_std).map(|(&g, &s)| g * s).collect();
    for (row, x_row) in dx.as_slice_mut().expect("standard layout").chunks_exact_mut(f).zip(xhat.chunks_exact(f)) {
        for j in 0..f {
            row[j] = (row[j] - mean_dy[j] - x_row[j] * mean_dyx[j]) * coef[j];
        }
    }
    (
        dx,
        dgamma.into_iter().map(cast).collect(),
        dbeta.into_iter().map(cast).collect(),
    )
}

pub fn relu_inplace<T: Real>(x: &mut Array2<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes `dy` where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(dy: &mut Array2<T>, activated: ArrayView2<'_, T>) {
    Zip::from(dy).and(activated).for_each(|d, &a| {
        if a <= T::zero() {
            *d = T::zero();
        }
    });
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1/(1−rate)`.
pub fn dropout_mask<T: Real>(shape: (usize, usize), rate: f64, rng: &mut Rng) -> Array2<T> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let keep: T = cast(1.0 / (1.0 - rate));
    if rate == 0.0 {
        return Array2::from_elem(shape, T::one());
    }
    // An element is dropped when a uniform 32-bit word falls below rate·2³².
    let threshold = (rate * 4_294_967_296.0).round() as u64;
    let mut bits = vec![0u32; shape.0 * shape.1];
    rng.fill(&mut bits[..]);
    let values = bits
        .into_iter()
        .map(|b| if (b as u64) < threshold { T::zero() } else { keep })
        .collect();
    Array2::from_shape_vec(shape, values).expect("length matches shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Dropout as a standalone op. Returns the output and the mask used (all ones
/// in inference).
pub fn dropout<T: Real>(
    x: ArrayView2<'_, T>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut Rng,
) -> (Array2<T>, Array2<T>) {
    match mode {
        DropoutMode::Infer => (x.to_owned(), Array2::from_elem(x.dim(), T::one())),
        DropoutMode::Train => {
            let mask = dropout_mask(x.dim(), rate, rng);
            (&x * &mask, mask)
        }
    }
}

/// Mean categorical cross-entropy of softmax(logits) and its gradient
/// `(softmax − onehot)/B`. Uses max subtraction, so large logits are safe.
pub fn softmax_xent<T: Real>(logits: ArrayView2<'_, T>, labels: &[usize]) -> (f64, Array2<T>) {
    let (batch, classes) = logits.dim();
    assert_eq!(batch, labels.len(), "one label per row");
    let mut grad = Array2::<T>::zeros((batch, classes));
    let mut loss = 0.0f64;
    let inv_b = 1.0 / batch as f64;
    for ((row, mut g), &label) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        assert!(label < classes, "label {label} out of range");
        let max = row
            .iter()
            .map(|v| v.to_f64().expect("finite"))
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64().expect("finite") - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let log_total = total.ln();
        loss -= row[label].to_f64().expect("finite") - max - log_total;
        for (j, (gv, e)) in g.iter_mut().zip(&exps).enumerate() {
            let p = e / total;
            let target = if j == label { 1.0 } else { 0.0 };
            *gv = cast((p - target) * inv_b);
        }
    }
    (loss * inv_b, grad)
}

/// Row-wise softmax in `f64`.
pub fn softmax_rows<T: Real>(logits: ArrayView2<'_, T>) -> Array2<f64> {
    let mut out = logits.mapv(|v| v.to_f64().expect("finite"));
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Index of the largest entry in each row; first wins on ties.
pub fn argmax_rows<T: Real>(x: ArrayView2<'_, T>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Copies the rows `idx` of `[N, L, C]` into a new batch.
pub fn gather_batch<T: Real>(x: ArrayView3<'_, T>, idx: &[usize]) -> Array3<T> {
    let (_, l, c) = x.dim();
    let mut out = Array3::zeros((idx.len(), l, c));
    for (mut dst, &i) in out.outer_iter_mut().zip(idx) {
        dst.assign(&x.slice(s![i, .., ..]));
    }
    out
}
