//! Conditional encoder–decoder GAN over single spectra.
//!
//! The generator maps a spectrum `s` to a reconstruction `G(s)`; the
//! discriminator scores spectra as real or reconstructed. Training
//! alternates a discriminator step on the cross-entropy objective with a
//! generator step on `−log D(G(s)) + α·‖s − G(s)‖₁`. After training, the
//! difference `s − G(s)` suppresses the background the generator learned.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::fsutil::{fmt_sig9, write_atomic};
use crate::hsi::HsiCube;
use crate::nn::{
    AdamConfig, AdamState, BackwardOptions, LayerSpec, Mode, Network, Shape, Tensor,
    DEFAULT_LEAKY_SLOPE,
};
use crate::rng::{stream_rng, Stream};

/// Smallest band count the three stride-2 stages can encode.
pub const MIN_BANDS: usize = 8;
const CHANNELS: [usize; 4] = [1, 16, 32, 64];
const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PADDING: usize = 1;
/// Probabilities are clamped to `[ε, 1 − ε]` inside the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;
const INFER_BATCH: usize = 256;

/// Input length after reflect-padding to a multiple of 8.
pub fn padded_len(bands: usize) -> usize {
    bands.div_ceil(8) * 8
}

fn check_bands(bands: usize) -> Result<()> {
    if bands < MIN_BANDS {
        return Err(Error::Architecture(format!(
            "need at least {MIN_BANDS} bands, got {bands}"
        )));
    }
    Ok(())
}

fn encoder_blocks() -> Vec<LayerSpec> {
    CHANNELS
        .windows(2)
        .flat_map(|w| {
            [
                LayerSpec::conv1d(w[0], w[1], KERNEL, STRIDE, PADDING),
                LayerSpec::batchnorm(w[1]),
                LayerSpec::leaky_relu(DEFAULT_LEAKY_SLOPE),
            ]
        })
        .collect()
}

pub fn generator_specs() -> Vec<LayerSpec> {
    let mut specs = encoder_blocks();
    for w in [[64, 32], [32, 16]] {
        specs.push(LayerSpec::deconv1d(w[0], w[1], KERNEL, STRIDE, PADDING));
        specs.push(LayerSpec::batchnorm(w[1]));
        specs.push(LayerSpec::leaky_relu(DEFAULT_LEAKY_SLOPE));
    }
    specs.push(LayerSpec::deconv1d(16, 1, KERNEL, STRIDE, PADDING));
    specs.push(LayerSpec::tanh());
    specs
}

pub fn discriminator_specs() -> Vec<LayerSpec> {
    let mut specs = encoder_blocks();
    specs.push(LayerSpec::global_avg_pool());
    specs.push(LayerSpec::affine(CHANNELS[3], 1));
    specs.push(LayerSpec::sigmoid());
    specs
}

/// Generator network plus the pad/crop contract around it: spectra of
/// length `L` are reflect-padded to [`padded_len`] and outputs cropped back.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    net: Network<f32>,
}

impl Generator {
    pub fn from_network(net: Network<f32>) -> Result<Self> {
        let bands = net.signal_len();
        let ok = matches!(net.input_shape(), Shape::Seq { channels: 1, len } if len == padded_len(bands))
            && net.output_shape() == net.input_shape()
            && bands >= MIN_BANDS;
        if !ok {
            return Err(Error::Architecture(format!(
                "network with input {} and output {} for {} bands is not a generator",
                net.input_shape(),
                net.output_shape(),
                bands
            )));
        }
        Ok(Self { net })
    }

    pub fn bands(&self) -> usize {
        self.net.signal_len()
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    /// Pixel-major spectra `[B × L]` -> padded network input `[B, 1, Lp]`.
    fn pad(&self, spectra: &[f32]) -> Tensor<f32> {
        let bands = self.bands();
        let lp = padded_len(bands);
        let batch = spectra.len() / bands;
        let mut data = Vec::with_capacity(batch * lp);
        for s in spectra.chunks_exact(bands) {
            data.extend_from_slice(s);
            // reflect about the last sample, excluding it
            data.extend((0..lp - bands).map(|i| s[bands - 2 - i]));
        }
        Tensor::from_vec(&[batch, 1, lp], data).expect("padded shape")
    }

    fn crop(&self, padded: &Tensor<f32>) -> Vec<f32> {
        let bands = self.bands();
        let lp = padded_len(bands);
        padded
            .data()
            .chunks_exact(lp)
            .flat_map(|row| row[..bands].iter().copied())
            .collect()
    }

    fn uncrop(&self, grad: &[f32]) -> Tensor<f32> {
        let bands = self.bands();
        let lp = padded_len(bands);
        let batch = grad.len() / bands;
        let mut data = vec![0.0; batch * lp];
        for (dst, src) in data.chunks_exact_mut(lp).zip(grad.chunks_exact(bands)) {
            dst[..bands].copy_from_slice(src);
        }
        Tensor::from_vec(&[batch, 1, lp], data).expect("padded shape")
    }

    /// Eval-mode reconstruction of pixel-major spectra.
    pub fn reconstruct_spectra(&self, spectra: &[f32]) -> Result<Vec<f32>> {
        if spectra.len() % self.bands() != 0 {
            return Err(Error::Shape(format!(
                "{} values are not a whole number of {}-band spectra",
                spectra.len(),
                self.bands()
            )));
        }
        let out = self.net.infer(&self.pad(spectra))?;
        Ok(self.crop(&out))
    }
}

pub fn build_generator(bands: usize, seed: u64) -> Result<Generator> {
    check_bands(bands)?;
    let mut rng = stream_rng(seed, Stream::GeneratorInit);
    let mut net = Network::new(&generator_specs(), Shape::seq(1, padded_len(bands)), &mut rng)?;
    net.set_signal_len(bands);
    Generator::from_network(net)
}

pub fn build_discriminator(bands: usize, seed: u64) -> Result<Network<f32>> {
    check_bands(bands)?;
    let mut rng = stream_rng(seed, Stream::DiscriminatorInit);
    Network::new(&discriminator_specs(), Shape::seq(1, bands), &mut rng)
}

/// Binary cross-entropy of one probability; returns `(loss, d loss / d p)`
/// evaluated at the clamped probability.
pub fn bce(p: f64, label: f64) -> (f64, f64) {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    let grad = -label / p + (1.0 - label) / (1.0 - p);
    (loss, grad)
}

/// Mean BCE over a batch of probabilities with per-sample gradients.
fn bce_batch(probs: &[f32], label: f64) -> (f64, Vec<f32>) {
    let n = probs.len() as f64;
    let mut total = 0.0;
    let grads = probs
        .iter()
        .map(|&p| {
            let (l, g) = bce(p as f64, label);
            total += l;
            (g / n) as f32
        })
        .collect();
    (total / n, grads)
}

/// Mean absolute error and its subgradient (`sign(g − s) / n`, 0 at ties).
pub fn l1_reconstruction(real: &[f32], recon: &[f32]) -> Result<(f64, Vec<f32>)> {
    if real.len() != recon.len() || real.is_empty() {
        return Err(Error::Shape(format!(
            "reconstruction has {} values, input {}",
            recon.len(),
            real.len()
        )));
    }
    let n = real.len() as f64;
    let inv = (1.0 / n) as f32;
    let mut total = 0.0;
    let grad = real
        .iter()
        .zip(recon)
        .map(|(&s, &g)| {
            let d = g - s;
            total += d.abs() as f64;
            if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    Ok((total / n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanHyper {
    /// Weight of the reconstruction term.
    pub alpha: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GanHyper {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 64,
            epochs: 200,
            seed: 0,
        }
    }
}

impl GanHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Per-epoch means over batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub l1: f64,
    /// `g_adv + α·l1`.
    pub total: f64,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,d_loss,g_adv,l1,total\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            m.epoch,
            fmt_sig9(m.d_loss),
            fmt_sig9(m.g_adv),
            fmt_sig9(m.l1),
            fmt_sig9(m.total)
        );
    }
    out
}

pub fn write_metrics(metrics: &[EpochMetrics], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, metrics_csv(metrics).as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub generator: Generator,
    pub discriminator: Network<f32>,
    pub metrics: Vec<EpochMetrics>,
}

/// Pixel-major copy of every spectrum.
fn pixel_major(cube: &HsiCube) -> Vec<f32> {
    let (n, bands) = (cube.pixels(), cube.bands());
    let mut out = vec![0f32; n * bands];
    for b in 0..bands {
        for (i, &v) in cube.band(b).iter().enumerate() {
            out[i * bands + b] = v;
        }
    }
    out
}

fn gather(spectra: &[f32], bands: usize, pixels: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(pixels.len() * bands);
    for &p in pixels {
        out.extend_from_slice(&spectra[p * bands..(p + 1) * bands]);
    }
    out
}

fn check_training_data(cube: &HsiCube, hyper: &GanHyper) -> Result<()> {
    hyper.validate()?;
    if cube.pixels() < hyper.batch_size {
        return Err(Error::Data(format!(
            "cube has {} pixels, fewer than batch size {}",
            cube.pixels(),
            hyper.batch_size
        )));
    }
    if cube.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::Data("training cube must be normalized to [-1, 1]".into()));
    }
    check_bands(cube.bands())
}

fn finite_or_fail(metrics: &EpochMetrics) -> Result<()> {
    let values = [metrics.d_loss, metrics.g_adv, metrics.l1, metrics.total];
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite loss in epoch {}", metrics.epoch)))
    }
}

/// Shuffled minibatches; a trailing batch of one is dropped because batch
/// normalization cannot train on it.
fn epoch_batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size).filter(|c| c.len() >= 2)
}

/// Adversarial training on every pixel of a normalized cube.
pub fn train(cube: &HsiCube, hyper: &GanHyper) -> Result<TrainedGan> {
    check_training_data(cube, hyper)?;
    let bands = cube.bands();
    let spectra = pixel_major(cube);
    let mut generator = build_generator(bands, hyper.seed)?;
    let mut disc = build_discriminator(bands, hyper.seed)?;
    let mut adam_g = AdamState::for_network(hyper.adam(), generator.network());
    let mut adam_d = AdamState::for_network(hyper.adam(), &disc);
    let mut shuffle_rng = stream_rng(hyper.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..cube.pixels()).collect();
    let params_only = BackwardOptions {
        param_grads: true,
        input_grad: false,
    };
    let input_only = BackwardOptions {
        param_grads: false,
        input_grad: true,
    };

    let mut metrics = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0f64; 3];
        let mut batches = 0usize;
        for pixels in epoch_batches(&order, hyper.batch_size) {
            let batch = pixels.len();
            let real = gather(&spectra, bands, pixels);
            let real_t = Tensor::from_vec(&[batch, 1, bands], real.clone())?;

            let g_acts = generator.net.forward(&generator.pad(&real))?;
            let fake = generator.crop(g_acts.output());
            let fake_t = Tensor::from_vec(&[batch, 1, bands], fake.clone())?;

            // discriminator: real -> 1, reconstruction -> 0
            disc.zero_grad();
            let acts = disc.forward(&real_t)?;
            let (loss_real, grad) = bce_batch(acts.output().data(), 1.0);
            disc.backward_with(&acts, &Tensor::from_vec(&[batch, 1], grad)?, params_only)?;
            let acts = disc.forward(&fake_t)?;
            let (loss_fake, grad) = bce_batch(acts.output().data(), 0.0);
            disc.backward_with(&acts, &Tensor::from_vec(&[batch, 1], grad)?, params_only)?;
            adam_d.step(&mut disc)?;

            // generator: non-saturating adversarial term plus α·L1
            let acts = disc.forward(&fake_t)?;
            let (g_adv, grad) = bce_batch(acts.output().data(), 1.0);
            let d_fake = disc
                .backward_with(&acts, &Tensor::from_vec(&[batch, 1], grad)?, input_only)?
                .expect("input gradient");
            let (l1, l1_grad) = l1_reconstruction(&real, &fake)?;
            let alpha = hyper.alpha as f32;
            let upstream: Vec<f32> = d_fake
                .data()
                .iter()
                .zip(&l1_grad)
                .map(|(a, r)| a + alpha * r)
                .collect();
            generator.net.zero_grad();
            generator
                .net
                .backward_with(&g_acts, &generator.uncrop(&upstream), params_only)?;
            adam_g.step(&mut generator.net).map_err(|e| epoch_error(e, epoch))?;

            sums[0] += loss_real + loss_fake;
            sums[1] += g_adv;
            sums[2] += l1;
            batches += 1;
        }
        let b = batches as f64;
        let m = EpochMetrics {
            epoch,
            d_loss: sums[0] / b,
            g_adv: sums[1] / b,
            l1: sums[2] / b,
            total: sums[1] / b + hyper.alpha * sums[2] / b,
        };
        finite_or_fail(&m)?;
        metrics.push(m);
    }
    generator.net.set_mode(Mode::Eval);
    disc.set_mode(Mode::Eval);
    Ok(TrainedGan {
        generator,
        discriminator: disc,
        metrics,
    })
}

fn epoch_error(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// The same generator topology trained on the reconstruction loss alone,
/// used by the autoencoder baseline.
pub fn train_autoencoder(cube: &HsiCube, hyper: &GanHyper) -> Result<(Generator, Vec<EpochMetrics>)> {
    check_training_data(cube, hyper)?;
    let bands = cube.bands();
    let spectra = pixel_major(cube);
    let mut generator = build_generator(bands, hyper.seed)?;
    let mut adam = AdamState::for_network(hyper.adam(), generator.network());
    let mut shuffle_rng = stream_rng(hyper.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..cube.pixels()).collect();
    let params_only = BackwardOptions {
        param_grads: true,
        input_grad: false,
    };
    let alpha = hyper.alpha.max(f64::MIN_POSITIVE) as f32;

    let mut metrics = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut batches) = (0f64, 0usize);
        for pixels in epoch_batches(&order, hyper.batch_size) {
            let real = gather(&spectra, bands, pixels);
            let acts = generator.net.forward(&generator.pad(&real))?;
            let recon = generator.crop(acts.output());
            let (l1, grad) = l1_reconstruction(&real, &recon)?;
            let grad: Vec<f32> = grad.into_iter().map(|g| alpha * g).collect();
            generator.net.zero_grad();
            generator
                .net
                .backward_with(&acts, &generator.uncrop(&grad), params_only)?;
            adam.step(&mut generator.net).map_err(|e| epoch_error(e, epoch))?;
            sum += l1;
            batches += 1;
        }
        let l1 = sum / batches as f64;
        let m = EpochMetrics {
            epoch,
            d_loss: 0.0,
            g_adv: 0.0,
            l1,
            total: hyper.alpha * l1,
        };
        finite_or_fail(&m)?;
        metrics.push(m);
    }
    generator.net.set_mode(Mode::Eval);
    Ok((generator, metrics))
}

/// Eval-mode reconstruction of every pixel of a normalized cube.
pub fn reconstruct(generator: &Generator, cube: &HsiCube) -> Result<HsiCube> {
    reconstruct_batched(generator, cube, INFER_BATCH)
}

pub fn reconstruct_batched(generator: &Generator, cube: &HsiCube, batch: usize) -> Result<HsiCube> {
    if cube.bands() != generator.bands() {
        return Err(Error::Shape(format!(
            "generator expects {} bands, cube has {}",
            generator.bands(),
            cube.bands()
        )));
    }
    let bands = cube.bands();
    let spectra = pixel_major(cube);
    let mut recon = Vec::with_capacity(spectra.len());
    for chunk in spectra.chunks(batch.max(1) * bands) {
        recon.extend(generator.reconstruct_spectra(chunk)?);
    }
    let n = cube.pixels();
    let mut data = vec![0f32; n * bands];
    for (i, s) in recon.chunks_exact(bands).enumerate() {
        for (b, &v) in s.iter().enumerate() {
            data[b * n + i] = v;
        }
    }
    HsiCube::new(cube.width(), cube.height(), bands, data)
}

/// `d_i = s_i − G(s_i)` for every pixel.
pub fn difference_image(cube: &HsiCube, reconstruction: &HsiCube) -> Result<HsiCube> {
    if !cube.same_shape(reconstruction) {
        return Err(Error::Shape(format!(
            "cube is {}x{}x{}, reconstruction {}x{}x{}",
            cube.width(),
            cube.height(),
            cube.bands(),
            reconstruction.width(),
            reconstruction.height(),
            reconstruction.bands()
        )));
    }
    let data = cube
        .data()
        .iter()
        .zip(reconstruction.data())
        .map(|(s, g)| s - g)
        .collect();
    HsiCube::new(cube.width(), cube.height(), cube.bands(), data)
}
