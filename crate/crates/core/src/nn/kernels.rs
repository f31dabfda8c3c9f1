//! Layer arithmetic on raw buffers. Sequence activations are `[B, C, L]`
//! row-major; flat activations are `[B, F]`.
//!
//! Convolutions go through im2col: a column matrix with one row per
//! (channel, tap) pair and one column per (sample, output position), so the
//! channel mixing becomes a single GEMM per layer and batch.

use super::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub channels: usize,
    /// Length of the signal being gathered from / scattered into.
    pub signal_len: usize,
    /// Number of window positions.
    pub positions: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel
    }

    fn cols(&self) -> usize {
        self.batch * self.positions
    }

    #[inline]
    fn source(&self, pos: usize, tap: usize) -> Option<usize> {
        let idx = (pos * self.stride + tap).checked_sub(self.padding)?;
        (idx < self.signal_len).then_some(idx)
    }
}

/// Gathers sliding windows of `x` into a `(C·K) × (B·P)` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], g: Geometry) -> Vec<T> {
    let q = g.cols();
    let mut cols = vec![T::zero(); g.rows() * q];
    for c in 0..g.channels {
        for tap in 0..g.kernel {
            let row = &mut cols[(c * g.kernel + tap) * q..][..q];
            for b in 0..g.batch {
                let src = &x[(b * g.channels + c) * g.signal_len..][..g.signal_len];
                let dst = &mut row[b * g.positions..][..g.positions];
                for (pos, d) in dst.iter_mut().enumerate() {
                    if let Some(i) = g.source(pos, tap) {
                        *d = src[i];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a `[B, C, L]` buffer.
pub(crate) fn col2im<T: Real>(cols: &[T], g: Geometry, out: &mut [T]) {
    let q = g.cols();
    for c in 0..g.channels {
        for tap in 0..g.kernel {
            let row = &cols[(c * g.kernel + tap) * q..][..q];
            for b in 0..g.batch {
                let dst = &mut out[(b * g.channels + c) * g.signal_len..][..g.signal_len];
                let src = &row[b * g.positions..][..g.positions];
                for (pos, &v) in src.iter().enumerate() {
                    if let Some(i) = g.source(pos, tap) {
                        dst[i] += v;
                    }
                }
            }
        }
    }
}

/// `[B, C, L]` -> `[C, B·L]`.
pub(crate) fn to_channel_major<T: Real>(x: &[T], batch: usize, channels: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(c * batch + b) * len..][..len].copy_from_slice(&x[(b * channels + c) * len..][..len]);
        }
    }
    out
}

/// `[C, B·L]` -> `[B, C, L]`.
pub(crate) fn from_channel_major<T: Real>(x: &[T], batch: usize, channels: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(b * channels + c) * len..][..len].copy_from_slice(&x[(c * batch + b) * len..][..len]);
        }
    }
    out
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T], batch: usize, len: usize) {
    let channels = bias.len();
    for b in 0..batch {
        for (c, &beta) in bias.iter().enumerate() {
            for v in &mut y[(b * channels + c) * len..][..len] {
                *v += beta;
            }
        }
    }
}

fn accumulate_bias_grad<T: Real>(dy: &[T], dbias: &mut [T], batch: usize, len: usize) {
    let channels = dbias.len();
    for b in 0..batch {
        for (c, g) in dbias.iter_mut().enumerate() {
            for &v in &dy[(b * channels + c) * len..][..len] {
                *g += v;
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvDims {
    fn conv_geometry(&self) -> Geometry {
        Geometry {
            batch: self.batch,
            channels: self.in_channels,
            signal_len: self.in_len,
            positions: self.out_len,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Transposed convolution scatters each input position over the output.
    fn deconv_geometry(&self) -> Geometry {
        Geometry {
            batch: self.batch,
            channels: self.out_channels,
            signal_len: self.out_len,
            positions: self.in_len,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Weight `[O, I, K]`. Returns `(y, cols)`; `cols` is kept for backward.
pub(crate) fn conv_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], d: &ConvDims) -> (Vec<T>, Vec<T>) {
    let g = d.conv_geometry();
    let cols = im2col(x, g);
    let (r, q) = (g.rows(), g.cols());
    let mut y2 = vec![T::zero(); d.out_channels * q];
    T::gemm(d.out_channels, r, q, T::one(), weight, (r, 1), &cols, (q, 1), T::zero(), &mut y2, (q, 1));
    let mut y = from_channel_major(&y2, d.batch, d.out_channels, d.out_len);
    add_bias(&mut y, bias, d.batch, d.out_len);
    (y, cols)
}

pub(crate) fn conv_backward<T: Real>(
    dy: &[T],
    cols: &[T],
    weight: &[T],
    grads: Option<(&mut [T], &mut [T])>,
    want_input: bool,
    d: &ConvDims,
) -> Option<Vec<T>> {
    let g = d.conv_geometry();
    let (r, q) = (g.rows(), g.cols());
    let dy2 = to_channel_major(dy, d.batch, d.out_channels, d.out_len);
    if let Some((dw, db)) = grads {
        T::gemm(d.out_channels, q, r, T::one(), &dy2, (q, 1), cols, (1, q), T::one(), dw, (r, 1));
        accumulate_bias_grad(dy, db, d.batch, d.out_len);
    }
    want_input.then(|| {
        let mut dcols = vec![T::zero(); r * q];
        T::gemm(r, d.out_channels, q, T::one(), weight, (1, r), &dy2, (q, 1), T::zero(), &mut dcols, (q, 1));
        let mut dx = vec![T::zero(); d.batch * d.in_channels * d.in_len];
        col2im(&dcols, g, &mut dx);
        dx
    })
}

/// Weight `[I, O, K]`. Returns `(y, x_channel_major)`.
pub(crate) fn deconv_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], d: &ConvDims) -> (Vec<T>, Vec<T>) {
    let g = d.deconv_geometry();
    let (r, q) = (g.rows(), g.cols());
    let x2 = to_channel_major(x, d.batch, d.in_channels, d.in_len);
    let mut cols = vec![T::zero(); r * q];
    T::gemm(r, d.in_channels, q, T::one(), weight, (1, r), &x2, (q, 1), T::zero(), &mut cols, (q, 1));
    let mut y = vec![T::zero(); d.batch * d.out_channels * d.out_len];
    col2im(&cols, g, &mut y);
    add_bias(&mut y, bias, d.batch, d.out_len);
    (y, x2)
}

pub(crate) fn deconv_backward<T: Real>(
    dy: &[T],
    x2: &[T],
    weight: &[T],
    grads: Option<(&mut [T], &mut [T])>,
    want_input: bool,
    d: &ConvDims,
) -> Option<Vec<T>> {
    let g = d.deconv_geometry();
    let (r, q) = (g.rows(), g.cols());
    let dcols = im2col(dy, g);
    if let Some((dw, db)) = grads {
        T::gemm(d.in_channels, q, r, T::one(), x2, (q, 1), &dcols, (1, q), T::one(), dw, (r, 1));
        accumulate_bias_grad(dy, db, d.batch, d.out_len);
    }
    want_input.then(|| {
        let mut dx2 = vec![T::zero(); d.in_channels * q];
        T::gemm(d.in_channels, r, q, T::one(), weight, (r, 1), &dcols, (q, 1), T::zero(), &mut dx2, (q, 1));
        from_channel_major(&dx2, d.batch, d.in_channels, d.in_len)
    })
}

/// `y = x·Wᵀ + b` with `W` of shape `[O, I]`.
pub(crate) fn affine_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], batch: usize, inputs: usize) -> Vec<T> {
    let outputs = bias.len();
    let mut y = vec![T::zero(); batch * outputs];
    T::gemm(batch, inputs, outputs, T::one(), x, (inputs, 1), weight, (1, inputs), T::zero(), &mut y, (outputs, 1));
    add_bias(&mut y, bias, batch, 1);
    y
}

pub(crate) fn affine_backward<T: Real>(
    dy: &[T],
    x: &[T],
    weight: &[T],
    grads: Option<(&mut [T], &mut [T])>,
    want_input: bool,
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> Option<Vec<T>> {
    if let Some((dw, db)) = grads {
        T::gemm(outputs, batch, inputs, T::one(), dy, (1, outputs), x, (inputs, 1), T::one(), dw, (inputs, 1));
        accumulate_bias_grad(dy, db, batch, 1);
    }
    want_input.then(|| {
        let mut dx = vec![T::zero(); batch * inputs];
        T::gemm(batch, outputs, inputs, T::one(), dy, (outputs, 1), weight, (inputs, 1), T::zero(), &mut dx, (inputs, 1));
        dx
    })
}

/// Per-channel batch statistics over `(B, L)`: biased mean and variance.
pub(crate) fn channel_moments<T: Real>(x: &[T], batch: usize, channels: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * len) as f64;
    let mut mean = vec![0f64; channels];
    let mut var = vec![0f64; channels];
    for b in 0..batch {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += x[(b * channels + c) * len..][..len].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for b in 0..batch {
        for c in 0..channels {
            let m = mean[c];
            var[c] += x[(b * channels + c) * len..][..len]
                .iter()
                .map(|v| (v.as_f64() - m).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Normalizes with the given per-channel statistics; returns `(y, x_hat)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_apply<T: Real>(
    x: &[T],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
    batch: usize,
    len: usize,
) -> (Vec<T>, Vec<T>) {
    let channels = gamma.len();
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            for i in off..off + len {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat)
}

/// Train-mode batch-norm backward through the batch statistics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    grads: Option<(&mut [T], &mut [T])>,
    want_input: bool,
    batch: usize,
    len: usize,
) -> Option<Vec<T>> {
    let channels = gamma.len();
    let mut sum_dy = vec![T::zero(); channels];
    let mut sum_dy_xhat = vec![T::zero(); channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            for i in off..off + len {
                sum_dy[c] += dy[i];
                sum_dy_xhat[c] += dy[i] * xhat[i];
            }
        }
    }
    if let Some((dgamma, dbeta)) = grads {
        for c in 0..channels {
            dgamma[c] += sum_dy_xhat[c];
            dbeta[c] += sum_dy[c];
        }
    }
    want_input.then(|| {
        let n = T::from_usize(batch * len).unwrap();
        let mut dx = vec![T::zero(); dy.len()];
        for b in 0..batch {
            for c in 0..channels {
                let scale = gamma[c] * inv_std[c] / n;
                let off = (b * channels + c) * len;
                for i in off..off + len {
                    dx[i] = scale * (n * dy[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
                }
            }
        }
        dx
    })
}
