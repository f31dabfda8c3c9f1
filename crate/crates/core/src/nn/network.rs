use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

use super::kernels::{self, ConvDims};
use super::layer::{LayerKind, LayerSpec, Shape};
use super::tensor::Tensor;
use super::{Real, BN_EPS, BN_MOMENTUM, INIT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub(crate) specs: Vec<LayerSpec>,
    pub(crate) input: Shape,
    pub(crate) shapes: Vec<Shape>,
    pub(crate) params: Vec<Vec<Tensor<T>>>,
    pub(crate) running: Vec<Option<RunningStats<T>>>,
    pub(crate) mode: Mode,
    /// Logical signal length carried alongside the weights; callers that pad
    /// inputs (the generator) crop outputs back to this length.
    pub(crate) signal_len: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Cache<T> {
    None,
    Cols(Vec<T>),
    ChannelMajor(Vec<T>),
    Norm { xhat: Vec<T>, inv_std: Vec<T> },
}

/// Everything a forward pass must keep for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    mode: Mode,
    batch: usize,
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

impl<T: Real> Activations<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().unwrap_or(&self.input)
    }

    pub fn layer_outputs(&self) -> &[Tensor<T>] {
        &self.outputs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    /// Accumulate parameter gradients.
    pub param_grads: bool,
    /// Compute the gradient with respect to the network input.
    pub input_grad: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            param_grads: true,
            input_grad: true,
        }
    }
}

/// Builds a network with weights drawn from the `Network` stream of `seed`.
pub fn init_network<T: Real>(specs: &[LayerSpec], input: Shape, seed: u64) -> Result<Network<T>> {
    Network::new(specs, input, &mut stream_rng(seed, Stream::Network))
}

impl<T: Real> Network<T> {
    /// Conv, deconv and affine weights ~ N(0, 0.02²) with zero biases;
    /// batch norm starts at γ = 1, β = 0 with running mean 0 and variance 1.
    pub fn new<R: Rng>(specs: &[LayerSpec], input: Shape, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(specs, input)?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (spec, params) in net.specs.iter().zip(net.params.iter_mut()) {
            match spec.kind {
                LayerKind::Conv1d | LayerKind::Deconv1d | LayerKind::Affine => {
                    for w in params[0].data_mut() {
                        *w = T::from_f64_lossy(normal.sample(rng));
                    }
                }
                LayerKind::BatchNorm => params[0].data_mut().fill(T::one()),
                _ => {}
            }
        }
        Ok(net)
    }

    /// All parameters zero (γ included); used when loading from disk.
    pub(crate) fn zeroed(specs: &[LayerSpec], input: Shape) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Architecture("network has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(specs.len());
        let mut current = input;
        for (i, spec) in specs.iter().enumerate() {
            current = spec
                .output_shape(current)
                .map_err(|e| Error::Architecture(format!("layer {i}: {e}")))?;
            shapes.push(current);
        }
        let params = specs
            .iter()
            .map(|s| s.param_shapes().iter().map(|shape| Tensor::zeros(shape)).collect())
            .collect();
        let running = specs
            .iter()
            .map(|s| {
                (s.kind == LayerKind::BatchNorm).then(|| RunningStats {
                    mean: vec![T::zero(); s.out_channels],
                    var: vec![T::one(); s.out_channels],
                })
            })
            .collect();
        let signal_len = match input {
            Shape::Seq { len, .. } => len,
            Shape::Flat(n) => n,
        };
        Ok(Self {
            specs: specs.to_vec(),
            input,
            shapes,
            params,
            running,
            mode: Mode::Train,
            signal_len,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("non-empty network")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn set_signal_len(&mut self, len: usize) {
        self.signal_len = len;
    }

    pub fn layer_params(&self, layer: usize) -> &[Tensor<T>] {
        &self.params[layer]
    }

    pub fn layer_params_mut(&mut self, layer: usize) -> &mut [Tensor<T>] {
        &mut self.params[layer]
    }

    /// Running `(mean, var)` of a batch-norm layer.
    pub fn running_stats(&self, layer: usize) -> Option<(&[T], &[T])> {
        self.running[layer].as_ref().map(|r| (&r.mean[..], &r.var[..]))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    /// Parameter tensors in a fixed order (layer by layer, storage order).
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.params.iter().flatten()
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().flatten()
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let cast_vec = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        Network {
            specs: self.specs.clone(),
            input: self.input,
            shapes: self.shapes.clone(),
            params: self.params.iter().map(|p| p.iter().map(Tensor::cast).collect()).collect(),
            running: self
                .running
                .iter()
                .map(|r| {
                    r.as_ref().map(|r| RunningStats {
                        mean: cast_vec(&r.mean),
                        var: cast_vec(&r.var),
                    })
                })
                .collect(),
            mode: self.mode,
            signal_len: self.signal_len,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let batch = x.shape().first().copied().unwrap_or(0);
        if batch == 0 || x.shape() != self.input.batch_dims(batch).as_slice() {
            return Err(Error::Shape(format!(
                "network expects [B, {}] input, got {:?}",
                self.input,
                x.shape()
            )));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        Ok(batch)
    }

    /// Forward pass in the network's current mode. In train mode batch norm
    /// uses batch statistics and updates its running estimates.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Activations<T>> {
        let mode = self.mode;
        self.run(x, mode, true)
    }

    /// Eval-mode forward on a shared network; returns only the output.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_input(x)?;
        let mut current = x.clone();
        for layer in 0..self.specs.len() {
            let (out, _) = self.layer_forward(layer, &current, batch, Mode::Eval)?;
            current = out;
        }
        Ok(current)
    }

    fn run(&mut self, x: &Tensor<T>, mode: Mode, update_running: bool) -> Result<Activations<T>> {
        let batch = self.check_input(x)?;
        if mode == Mode::Train && batch < 2 && self.specs.iter().any(|s| s.kind == LayerKind::BatchNorm) {
            return Err(Error::Batch(
                "train-mode batch normalization needs at least 2 samples".into(),
            ));
        }
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.specs.len());
        let mut caches = Vec::with_capacity(self.specs.len());
        for layer in 0..self.specs.len() {
            let input = outputs.last().unwrap_or(x);
            let (out, cache) = self.layer_forward(layer, input, batch, mode)?;
            if mode == Mode::Train && update_running && self.specs[layer].kind == LayerKind::BatchNorm {
                self.update_running(layer, input, batch);
            }
            outputs.push(out);
            caches.push(cache);
        }
        if !outputs.last().is_some_and(Tensor::is_finite) {
            return Err(Error::Numeric("non-finite activation".into()));
        }
        Ok(Activations {
            mode,
            batch,
            input: x.clone(),
            outputs,
            caches,
        })
    }

    fn update_running(&mut self, layer: usize, input: &Tensor<T>, batch: usize) {
        let (channels, len) = self.input_shape_of(layer).channels_len();
        let (mean, var) = kernels::channel_moments(input.data(), batch, channels, len);
        let n = (batch * len) as f64;
        let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let stats = self.running[layer].as_mut().expect("batchnorm running stats");
        for c in 0..channels {
            let m = stats.mean[c].as_f64() * BN_MOMENTUM + (1.0 - BN_MOMENTUM) * mean[c];
            let v = stats.var[c].as_f64() * BN_MOMENTUM + (1.0 - BN_MOMENTUM) * var[c] * unbiased;
            stats.mean[c] = T::from_f64_lossy(m);
            stats.var[c] = T::from_f64_lossy(v.max(0.0));
        }
    }

    fn input_shape_of(&self, layer: usize) -> Shape {
        if layer == 0 {
            self.input
        } else {
            self.shapes[layer - 1]
        }
    }

    fn conv_dims(&self, layer: usize, batch: usize) -> ConvDims {
        let spec = &self.specs[layer];
        let (_, in_len) = self.input_shape_of(layer).channels_len();
        let (_, out_len) = self.shapes[layer].channels_len();
        ConvDims {
            batch,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            in_len,
            out_len,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
        }
    }

    fn layer_forward(&self, layer: usize, x: &Tensor<T>, batch: usize, mode: Mode) -> Result<(Tensor<T>, Cache<T>)> {
        let spec = &self.specs[layer];
        let out_dims = self.shapes[layer].batch_dims(batch);
        let params = &self.params[layer];
        let (data, cache) = match spec.kind {
            LayerKind::Conv1d => {
                let d = self.conv_dims(layer, batch);
                let (y, cols) = kernels::conv_forward(x.data(), params[0].data(), params[1].data(), &d);
                (y, Cache::Cols(cols))
            }
            LayerKind::Deconv1d => {
                let d = self.conv_dims(layer, batch);
                let (y, x2) = kernels::deconv_forward(x.data(), params[0].data(), params[1].data(), &d);
                (y, Cache::ChannelMajor(x2))
            }
            LayerKind::BatchNorm => {
                let (channels, len) = self.input_shape_of(layer).channels_len();
                let eps = BN_EPS;
                let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
                    Mode::Train => kernels::channel_moments(x.data(), batch, channels, len),
                    Mode::Eval => {
                        let r = self.running[layer].as_ref().expect("running stats");
                        (
                            r.mean.iter().map(|v| v.as_f64()).collect(),
                            r.var.iter().map(|v| v.as_f64()).collect(),
                        )
                    }
                };
                let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64_lossy(m)).collect();
                let inv_std: Vec<T> = var
                    .iter()
                    .map(|&v| T::from_f64_lossy(1.0 / (v.max(0.0) + eps).sqrt()))
                    .collect();
                let (y, xhat) = kernels::batchnorm_apply(
                    x.data(),
                    &mean_t,
                    &inv_std,
                    params[0].data(),
                    params[1].data(),
                    batch,
                    len,
                );
                (y, Cache::Norm { xhat, inv_std })
            }
            LayerKind::LeakyRelu => {
                let slope = T::from_f64_lossy(spec.negative_slope);
                let y = x.data().iter().map(|&v| if v > T::zero() { v } else { slope * v }).collect();
                (y, Cache::None)
            }
            LayerKind::Tanh => (x.data().iter().map(|v| v.tanh()).collect(), Cache::None),
            LayerKind::Sigmoid => (x.data().iter().map(|&v| sigmoid(v)).collect(), Cache::None),
            LayerKind::Affine => {
                let y = kernels::affine_forward(x.data(), params[0].data(), params[1].data(), batch, spec.in_channels);
                (y, Cache::None)
            }
            LayerKind::Flatten => (x.data().to_vec(), Cache::None),
            LayerKind::GlobalAvgPool => {
                let (channels, len) = self.input_shape_of(layer).channels_len();
                let scale = T::one() / T::from_usize(len).unwrap();
                let y = x
                    .data()
                    .chunks_exact(len)
                    .map(|row| row.iter().fold(T::zero(), |a, &v| a + v) * scale)
                    .collect::<Vec<_>>();
                debug_assert_eq!(y.len(), batch * channels);
                (y, Cache::None)
            }
        };
        Ok((Tensor::from_vec(&out_dims, data)?, cache))
    }

    /// Backpropagates `upstream` (gradient w.r.t. the network output),
    /// accumulating parameter gradients and returning the input gradient.
    pub fn backward(&mut self, acts: &Activations<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_with(acts, upstream, BackwardOptions::default())
            .map(|g| g.expect("input gradient requested"))
    }

    pub fn backward_with(
        &mut self,
        acts: &Activations<T>,
        upstream: &Tensor<T>,
        opts: BackwardOptions,
    ) -> Result<Option<Tensor<T>>> {
        if acts.mode != Mode::Train {
            return Err(Error::State("backward requires a train-mode forward pass".into()));
        }
        if acts.outputs.len() != self.specs.len() {
            return Err(Error::State("activations do not belong to this network".into()));
        }
        if upstream.shape() != acts.output().shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                acts.output().shape()
            )));
        }
        let batch = acts.batch;
        let mut grad = upstream.data().to_vec();
        for layer in (0..self.specs.len()).rev() {
            let need_input = layer > 0 || opts.input_grad;
            let input = if layer == 0 { &acts.input } else { &acts.outputs[layer - 1] };
            let output = &acts.outputs[layer];
            let next = self.layer_backward(layer, input, output, &acts.caches[layer], &grad, batch, opts.param_grads, need_input)?;
            match next {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        let dims = self.input.batch_dims(batch);
        Ok(Some(Tensor::from_vec(&dims, grad)?))
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &mut self,
        layer: usize,
        input: &Tensor<T>,
        output: &Tensor<T>,
        cache: &Cache<T>,
        dy: &[T],
        batch: usize,
        param_grads: bool,
        want_input: bool,
    ) -> Result<Option<Vec<T>>> {
        let spec = self.specs[layer];
        let conv_dims = matches!(spec.kind, LayerKind::Conv1d | LayerKind::Deconv1d)
            .then(|| self.conv_dims(layer, batch));
        let (channels, len) = self.input_shape_of(layer).channels_len();
        let params = &mut self.params[layer];
        let dx = match spec.kind {
            LayerKind::Conv1d | LayerKind::Deconv1d => {
                let d = conv_dims.expect("conv dims");
                let (w, rest) = params.split_at_mut(1);
                let weight = w[0].data().to_vec();
                let grads = param_grads.then(|| (w[0].grad_mut(), rest[0].grad_mut()));
                match (spec.kind, cache) {
                    (LayerKind::Conv1d, Cache::Cols(cols)) => {
                        kernels::conv_backward(dy, cols, &weight, grads, want_input, &d)
                    }
                    (LayerKind::Deconv1d, Cache::ChannelMajor(x2)) => {
                        kernels::deconv_backward(dy, x2, &weight, grads, want_input, &d)
                    }
                    _ => return Err(Error::State("missing convolution cache".into())),
                }
            }
            LayerKind::BatchNorm => {
                let Cache::Norm { xhat, inv_std } = cache else {
                    return Err(Error::State("missing batch-norm cache".into()));
                };
                let (g, b) = params.split_at_mut(1);
                let gamma = g[0].data().to_vec();
                let grads = param_grads.then(|| (g[0].grad_mut(), b[0].grad_mut()));
                kernels::batchnorm_backward(dy, xhat, inv_std, &gamma, grads, want_input, batch, len)
            }
            LayerKind::Affine => {
                let (w, b) = params.split_at_mut(1);
                let weight = w[0].data().to_vec();
                let grads = param_grads.then(|| (w[0].grad_mut(), b[0].grad_mut()));
                kernels::affine_backward(dy, input.data(), &weight, grads, want_input, batch, spec.in_channels, spec.out_channels)
            }
            LayerKind::LeakyRelu => {
                let slope = T::from_f64_lossy(spec.negative_slope);
                want_input.then(|| {
                    input
                        .data()
                        .iter()
                        .zip(dy)
                        .map(|(&x, &g)| if x > T::zero() { g } else { slope * g })
                        .collect()
                })
            }
            LayerKind::Tanh => want_input.then(|| {
                output.data().iter().zip(dy).map(|(&y, &g)| g * (T::one() - y * y)).collect()
            }),
            LayerKind::Sigmoid => want_input.then(|| {
                output.data().iter().zip(dy).map(|(&y, &g)| g * y * (T::one() - y)).collect()
            }),
            LayerKind::Flatten => want_input.then(|| dy.to_vec()),
            LayerKind::GlobalAvgPool => want_input.then(|| {
                let scale = T::one() / T::from_usize(len).unwrap();
                let mut dx = Vec::with_capacity(batch * channels * len);
                for &g in dy {
                    dx.extend(std::iter::repeat_n(g * scale, len));
                }
                dx
            }),
        };
        Ok(dx)
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
