//! Central finite-difference check of the analytic backward pass, one
//! single-layer network per case, in `f64`.
//!
//! The loss is a fixed random projection `Σ rᵢ·yᵢ`, so the analytic
//! gradient is simply `backward(r)`; the numeric side only ever calls
//! `forward`.

use rand::Rng;

use crate::error::Result;
use crate::rng::{stream_rng, Stream};

use super::layer::{LayerKind, LayerSpec, Shape};
use super::network::Network;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub cases: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Flip the sign of the analytic gradients for one layer kind. Lets the
    /// checker itself be tested against a known-broken backward pass.
    pub inject_sign_error: Option<LayerKind>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            cases: 20,
            seed: 0,
            step: 1e-4,
            tolerance: 1e-4,
            inject_sign_error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub kind: LayerKind,
    pub cases: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

struct Case {
    spec: LayerSpec,
    input: Shape,
    batch: usize,
}

fn random_case<R: Rng>(kind: LayerKind, rng: &mut R) -> Case {
    loop {
        let batch = rng.random_range(2..=4);
        let channels = rng.random_range(1..=8);
        let len = rng.random_range(1..=32);
        let (spec, input) = match kind {
            LayerKind::Conv1d | LayerKind::Deconv1d => {
                let kernel = rng.random_range(1..=5);
                let stride = rng.random_range(1..=3);
                let padding = rng.random_range(0..kernel);
                let out = rng.random_range(1..=8);
                let spec = if kind == LayerKind::Conv1d {
                    LayerSpec::conv1d(channels, out, kernel, stride, padding)
                } else {
                    LayerSpec::deconv1d(channels, out, kernel, stride, padding)
                };
                (spec, Shape::seq(channels, len))
            }
            LayerKind::BatchNorm => (LayerSpec::batchnorm(channels), Shape::seq(channels, len)),
            LayerKind::LeakyRelu => (
                LayerSpec::leaky_relu(super::DEFAULT_LEAKY_SLOPE),
                Shape::seq(channels, len),
            ),
            LayerKind::Tanh => (LayerSpec::tanh(), Shape::seq(channels, len)),
            LayerKind::Sigmoid => (LayerSpec::sigmoid(), Shape::seq(channels, len)),
            LayerKind::Affine => {
                let inputs = rng.random_range(1..=32);
                (LayerSpec::affine(inputs, channels), Shape::Flat(inputs))
            }
            LayerKind::Flatten => (LayerSpec::flatten(), Shape::seq(channels, len)),
            LayerKind::GlobalAvgPool => (LayerSpec::global_avg_pool(), Shape::seq(channels, len)),
        };
        if spec.output_shape(input).is_ok() {
            return Case { spec, input, batch };
        }
    }
}

fn projection_loss(net: &mut Network<f64>, x: &Tensor<f64>, r: &[f64]) -> Result<f64> {
    let acts = net.forward(x)?;
    Ok(acts.output().data().iter().zip(r).map(|(y, w)| y * w).sum())
}

/// Runs one case and returns the worst relative error over the input and
/// every parameter tensor.
fn check_case<R: Rng>(kind: LayerKind, config: &GradCheckConfig, rng: &mut R) -> Result<f64> {
    let case = random_case(kind, rng);
    let mut net = Network::<f64>::new(&[case.spec], case.input, rng)?;
    for (i, p) in net.layer_params_mut(0).iter_mut().enumerate() {
        for v in p.data_mut() {
            *v = if kind == LayerKind::BatchNorm && i == 0 {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(-1.0..1.0)
            };
        }
    }
    let dims = case.input.batch_dims(case.batch);
    let n: usize = dims.iter().product();
    let x_data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-2.0..2.0);
            // keep clear of the leaky-ReLU kink
            if v.abs() < 0.05 {
                v + 0.1f64.copysign(v)
            } else {
                v
            }
        })
        .collect();
    let x = Tensor::from_vec(&dims, x_data)?;
    let out_len = case.spec.output_shape(case.input)?.volume() * case.batch;
    let r: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();

    net.zero_grad();
    let acts = net.forward(&x)?;
    let upstream = Tensor::from_vec(acts.output().shape(), r.clone())?;
    let dx = net.backward(&acts, &upstream)?;
    let flip = if config.inject_sign_error == Some(kind) { -1.0 } else { 1.0 };
    let mut analytic: Vec<Vec<f64>> = vec![dx.data().iter().map(|g| flip * g).collect()];
    for p in net.layer_params(0) {
        let g = p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]);
        analytic.push(g.into_iter().map(|g| flip * g).collect());
    }

    let h = config.step;
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = x.clone();
    let mut dxn = vec![0.0; n];
    for (i, slot) in dxn.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = projection_loss(&mut net, &probe, &r)?;
        probe.data_mut()[i] = orig - h;
        let minus = projection_loss(&mut net, &probe, &r)?;
        probe.data_mut()[i] = orig;
        *slot = (plus - minus) / (2.0 * h);
    }
    numeric.push(dxn);
    for t in 0..net.layer_params(0).len() {
        let len = net.layer_params(0)[t].len();
        let mut g = vec![0.0; len];
        for (i, slot) in g.iter_mut().enumerate() {
            let orig = net.layer_params(0)[t].data()[i];
            net.layer_params_mut(0)[t].data_mut()[i] = orig + h;
            let plus = projection_loss(&mut net, &x, &r)?;
            net.layer_params_mut(0)[t].data_mut()[i] = orig - h;
            let minus = projection_loss(&mut net, &x, &r)?;
            net.layer_params_mut(0)[t].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        numeric.push(g);
    }

    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

pub fn check_layer_kind(kind: LayerKind, config: &GradCheckConfig) -> Result<LayerCheck> {
    let mut rng = stream_rng(config.seed, Stream::GradCheck);
    // decorrelate kinds while keeping each kind's cases reproducible
    for _ in 0..LayerKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) {
        let _: u64 = rng.random();
    }
    let mut worst: f64 = 0.0;
    for _ in 0..config.cases {
        worst = worst.max(check_case(kind, config, &mut rng)?);
    }
    Ok(LayerCheck {
        kind,
        cases: config.cases,
        max_rel_err: worst,
        passed: worst < config.tolerance,
    })
}

pub fn check_all(config: &GradCheckConfig) -> Result<Vec<LayerCheck>> {
    LayerKind::ALL.iter().map(|&k| check_layer_kind(k, config)).collect()
}
