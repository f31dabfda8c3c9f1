//! Mahalanobis-distance detectors: RX on any cube, weighted RX, RX on the
//! GAN difference image, and an autoencoder reconstruction-error baseline.
//! All statistics are computed in `f64`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::gan::{difference_image, reconstruct, Generator};
use crate::hsi::{encode_pgm, normalize_cube, save_cube, HsiCube};

/// Relative ridge `ε` in `Ĉ + ε·(tr Ĉ / L)·I`.
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Added to the diagonal when the covariance has zero trace.
pub const TRACE_FLOOR: f64 = 1e-12;
pub const DEFAULT_WRX_ITERATIONS: usize = 5;

/// Background mean and covariance with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundStats {
    bands: usize,
    mean: Vec<f64>,
    /// Row-major `L × L`.
    cov: Vec<f64>,
    /// Lower-triangular factor, row-major; `None` if `cov` is not positive definite.
    chol: Option<Vec<f64>>,
}

impl BackgroundStats {
    pub fn from_parts(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let bands = mean.len();
        if bands == 0 || cov.len() != bands * bands {
            return Err(Error::Shape(format!(
                "covariance has {} entries for {} bands",
                cov.len(),
                bands
            )));
        }
        let chol = cholesky(&cov, bands);
        Ok(Self {
            bands,
            mean,
            cov,
            chol,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.cov
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.bands + j]
    }

    pub fn is_factorized(&self) -> bool {
        self.chol.is_some()
    }

    /// `(x − m̂)ᵀ Ĉ⁻¹ (x − m̂)` via one forward substitution: with `Ĉ = LLᵀ`
    /// this is `‖L⁻¹(x − m̂)‖²`.
    fn distance(&self, chol: &[f64], x: impl Iterator<Item = f64>, z: &mut [f64]) -> f64 {
        let n = self.bands;
        for ((zi, xi), m) in z.iter_mut().zip(x).zip(&self.mean) {
            *zi = xi - m;
        }
        let mut total = 0.0;
        for i in 0..n {
            let row = &chol[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&z[..i]).map(|(l, v)| l * v).sum();
            z[i] = (z[i] - dot) / chol[i * n + i];
            total += z[i] * z[i];
        }
        total
    }
}

/// Lower Cholesky factor of a row-major matrix, or `None` on a non-positive pivot.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            let v = a[i * n + j] - dot;
            if i == j {
                if !(v > 0.0 && v.is_finite()) {
                    return None;
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = v / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Weighted sample mean and covariance normalized by `Σw` (uniform weights
/// give `1/N`), then ridge-regularized.
pub fn estimate_stats(cube: &HsiCube, weights: Option<&[f64]>, ridge: f64) -> Result<BackgroundStats> {
    let (n, bands) = (cube.pixels(), cube.bands());
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 pixels, got {n}")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Shape(format!("{} weights for {} pixels", w.len(), n)));
        }
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Data("weights must be finite and non-negative".into()));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..n).map(weight).sum();
    if total <= 0.0 {
        return Err(Error::Data("all weights are zero".into()));
    }

    let mut mean = vec![0.0; bands];
    for (b, m) in mean.iter_mut().enumerate() {
        let sum: f64 = cube.band(b).iter().enumerate().map(|(i, &v)| weight(i) * v as f64).sum();
        *m = sum / total;
    }
    // centered, pixel-major
    let mut centered = vec![0.0; n * bands];
    for (b, m) in mean.iter().enumerate() {
        for (i, &v) in cube.band(b).iter().enumerate() {
            centered[i * bands + b] = v as f64 - m;
        }
    }
    let mut cov = vec![0.0; bands * bands];
    for (i, d) in centered.chunks_exact(bands).enumerate() {
        let w = weight(i);
        if w == 0.0 {
            continue;
        }
        for r in 0..bands {
            let wr = w * d[r];
            let row = &mut cov[r * bands..r * bands + r + 1];
            for (c, slot) in row.iter_mut().enumerate() {
                *slot += wr * d[c];
            }
        }
    }
    for r in 0..bands {
        for c in 0..=r {
            let v = cov[r * bands + c] / total;
            cov[r * bands + c] = v;
            cov[c * bands + r] = v;
        }
    }

    let trace: f64 = (0..bands).map(|i| cov[i * bands + i]).sum();
    let shift = if trace > 0.0 {
        ridge * trace / bands as f64
    } else {
        TRACE_FLOOR
    };
    for i in 0..bands {
        cov[i * bands + i] += shift;
    }
    BackgroundStats::from_parts(mean, cov)
}

/// Per-pixel non-negative anomaly scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    scores: Vec<f64>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != width * height || scores.is_empty() {
            return Err(Error::Shape(format!(
                "{} scores for a {width}x{height} map",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Numeric("scores must be finite and non-negative".into()));
        }
        Ok(Self {
            width,
            height,
            scores,
        })
    }

    /// Reads a single-band cube back as a score map.
    pub fn from_cube(cube: &HsiCube) -> Result<Self> {
        if cube.bands() != 1 {
            return Err(Error::Shape(format!(
                "score cube must have 1 band, got {}",
                cube.bands()
            )));
        }
        Self::new(
            cube.width(),
            cube.height(),
            cube.data().iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }

    pub fn to_cube(&self) -> HsiCube {
        let data = self.scores.iter().map(|&s| s as f32).collect();
        HsiCube::new(self.width, self.height, 1, data).expect("valid score cube")
    }

    /// Min–max stretch to 0–255; a constant map renders as all zeros.
    pub fn stretch(&self) -> Vec<u8> {
        let lo = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return vec![0; self.scores.len()];
        }
        self.scores
            .iter()
            .map(|&s| (255.0 * (s - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(self.width, self.height, &self.stretch())
    }

    pub fn save_cube(&self, path: impl AsRef<Path>) -> Result<()> {
        save_cube(&self.to_cube(), path)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_pgm())
    }
}

pub fn mahalanobis_scores(cube: &HsiCube, stats: &BackgroundStats) -> Result<ScoreMap> {
    if cube.bands() != stats.bands {
        return Err(Error::Shape(format!(
            "statistics have {} bands, cube {}",
            stats.bands,
            cube.bands()
        )));
    }
    let chol = stats
        .chol
        .as_deref()
        .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
    let n = cube.pixels();
    let mut z = vec![0.0; stats.bands];
    let scores = (0..n)
        .map(|i| {
            let x = (0..stats.bands).map(|b| cube.band(b)[i] as f64);
            stats.distance(chol, x, &mut z)
        })
        .collect();
    ScoreMap::new(cube.width(), cube.height(), scores)
}

pub fn rx_with_ridge(cube: &HsiCube, ridge: f64) -> Result<ScoreMap> {
    let stats = estimate_stats(cube, None, ridge)?;
    mahalanobis_scores(cube, &stats)
}

pub fn rx_detect(cube: &HsiCube) -> Result<ScoreMap> {
    rx_with_ridge(cube, DEFAULT_RIDGE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrxResult {
    pub map: ScoreMap,
    /// Weights after the final reweighting; they sum to 1.
    pub weights: Vec<f64>,
}

/// Iteratively reweighted RX: statistics from the current weights, score,
/// then `wᵢ = 1/(1 + scoreᵢ)` renormalized. The map holds the scores from
/// the last statistics.
pub fn wrx_detect(cube: &HsiCube, iterations: usize) -> Result<WrxResult> {
    wrx_with_ridge(cube, iterations, DEFAULT_RIDGE)
}

pub fn wrx_with_ridge(cube: &HsiCube, iterations: usize, ridge: f64) -> Result<WrxResult> {
    if iterations == 0 {
        return Err(Error::Config("WRX needs at least one iteration".into()));
    }
    let n = cube.pixels();
    let mut weights = vec![1.0 / n as f64; n];
    let mut map = None;
    for _ in 0..iterations {
        let stats = estimate_stats(cube, Some(&weights), ridge)?;
        let scores = mahalanobis_scores(cube, &stats)?;
        weights = scores.scores().iter().map(|s| 1.0 / (1.0 + s)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        map = Some(scores);
    }
    Ok(WrxResult {
        map: map.expect("at least one iteration"),
        weights,
    })
}

/// Squared L2 norm of each pixel of a cube.
pub fn squared_norms(cube: &HsiCube) -> Result<ScoreMap> {
    let mut scores = vec![0.0; cube.pixels()];
    for b in 0..cube.bands() {
        for (s, &v) in scores.iter_mut().zip(cube.band(b)) {
            *s += (v as f64) * (v as f64);
        }
    }
    ScoreMap::new(cube.width(), cube.height(), scores)
}

/// Reconstruction error `‖sᵢ − G(sᵢ)‖²` on a normalized cube.
pub fn ae_detect(generator: &Generator, cube: &HsiCube) -> Result<ScoreMap> {
    let diff = difference_image(cube, &reconstruct(generator, cube)?)?;
    squared_norms(&diff)
}

/// RX on the difference image of a normalized cube.
pub fn gan_rx_detect(generator: &Generator, cube: &HsiCube) -> Result<ScoreMap> {
    gan_rx_with_ridge(generator, cube, DEFAULT_RIDGE)
}

pub fn gan_rx_with_ridge(generator: &Generator, cube: &HsiCube, ridge: f64) -> Result<ScoreMap> {
    let diff = difference_image(cube, &reconstruct(generator, cube)?)?;
    rx_with_ridge(&diff, ridge)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rx,
    Wrx,
    Ae,
    GanRx,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rx, Method::Wrx, Method::Ae, Method::GanRx];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rx => "rx",
            Method::Wrx => "wrx",
            Method::Ae => "ae",
            Method::GanRx => "gan-rx",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Method::Ae | Method::GanRx)
    }

    /// Whether repeated runs with different seeds can change the result.
    pub fn is_stochastic(self) -> bool {
        self.needs_model()
    }

    pub fn valid_names() -> String {
        Self::ALL.map(Method::name).join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; valid methods: {}",
                    Method::valid_names()
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub ridge: f64,
    pub wrx_iterations: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            ridge: DEFAULT_RIDGE,
            wrx_iterations: DEFAULT_WRX_ITERATIONS,
        }
    }
}

/// Scores a cube with one method. `raw` is the cube as loaded; model-based
/// methods operate on its normalized form.
pub fn detect(
    method: Method,
    raw: &HsiCube,
    generator: Option<&Generator>,
    opts: &DetectOptions,
) -> Result<ScoreMap> {
    let model = || {
        generator.ok_or_else(|| Error::Config(format!("method {method} requires a model")))
    };
    match method {
        Method::Rx => rx_with_ridge(raw, opts.ridge),
        Method::Wrx => Ok(wrx_with_ridge(raw, opts.wrx_iterations, opts.ridge)?.map),
        Method::Ae => ae_detect(model()?, &normalize_cube(raw).0),
        Method::GanRx => gan_rx_with_ridge(model()?, &normalize_cube(raw).0, opts.ridge),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_from_pixels(width: usize, height: usize, pixels: &[Vec<f64>]) -> HsiCube {
        let spectra: Vec<Vec<f32>> = pixels
            .iter()
            .map(|p| p.iter().map(|&v| v as f32).collect())
            .collect();
        HsiCube::from_spectra(width, height, &spectra).unwrap()
    }

    fn random_pixels(rng: &mut ChaCha8Rng, n: usize, bands: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..bands).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn as_f64(cube: &HsiCube) -> Vec<Vec<f64>> {
        (0..cube.pixels())
            .map(|i| cube.spectrum(i).iter().map(|&v| v as f64).collect())
            .collect()
    }

    /// Two-pass mean and covariance, nothing shared with the implementation.
    fn two_pass(pixels: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = pixels.len() as f64;
        let l = pixels[0].len();
        let mean: Vec<f64> = (0..l).map(|b| pixels.iter().map(|p| p[b]).sum::<f64>() / n).collect();
        let cov = (0..l)
            .map(|r| {
                (0..l)
                    .map(|c| pixels.iter().map(|p| (p[r] - mean[r]) * (p[c] - mean[c])).sum::<f64>() / n)
                    .collect()
            })
            .collect();
        (mean, cov)
    }

    fn inverse_scores(pixels: &[Vec<f64>], mean: &[f64], cov: &[f64]) -> Vec<f64> {
        let l = mean.len();
        let inv = DMatrix::from_row_slice(l, l, cov).try_inverse().unwrap();
        pixels
            .iter()
            .map(|p| {
                let d = nalgebra::DVector::from_iterator(l, p.iter().zip(mean).map(|(x, m)| x - m));
                (d.transpose() * &inv * &d)[(0, 0)]
            })
            .collect()
    }

    #[test]
    fn two_point_stats() {
        let cube = cube_from_pixels(2, 1, &[vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let s = estimate_stats(&cube, None, 0.0).unwrap();
        assert_eq!(s.mean(), &[0.0, 0.0]);
        assert_eq!(s.covariance(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(!s.is_factorized());
        assert!(matches!(mahalanobis_scores(&cube, &s), Err(Error::Numeric(_))));
    }

    #[test]
    fn identical_pixels_use_trace_floor() {
        let cube = cube_from_pixels(3, 1, &vec![vec![0.5, 0.2]; 3]);
        let s = estimate_stats(&cube, None, 1e-6).unwrap();
        assert_eq!(s.cov(0, 0), TRACE_FLOOR);
        assert!(s.is_factorized());
        let map = rx_detect(&cube).unwrap();
        assert!(map.scores().iter().all(|&v| v == map.scores()[0]));
    }

    #[test]
    fn stats_errors() {
        let one = cube_from_pixels(1, 1, &[vec![1.0]]);
        assert!(matches!(estimate_stats(&one, None, 0.0), Err(Error::Data(_))));
        let two = cube_from_pixels(2, 1, &[vec![1.0], vec![2.0]]);
        assert!(matches!(estimate_stats(&two, Some(&[0.0, 0.0]), 0.0), Err(Error::Data(_))));
        assert!(matches!(estimate_stats(&two, Some(&[1.0]), 0.0), Err(Error::Shape(_))));
        let stats = estimate_stats(&two, None, 1e-6).unwrap();
        let wide = cube_from_pixels(2, 1, &[vec![1.0, 0.0], vec![2.0, 1.0]]);
        assert!(matches!(mahalanobis_scores(&wide, &stats), Err(Error::Shape(_))));
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pixels = random_pixels(&mut rng, 50, 6);
        let cube = cube_from_pixels(10, 5, &pixels);
        let (mean, cov) = two_pass(&as_f64(&cube));
        let s = estimate_stats(&cube, None, 0.0).unwrap();
        for b in 0..6 {
            assert!((s.mean()[b] - mean[b]).abs() < 1e-10);
            for c in 0..6 {
                assert!((s.cov(b, c) - cov[b][c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ridge_adds_scaled_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cube = cube_from_pixels(5, 4, &random_pixels(&mut rng, 20, 3));
        let plain = estimate_stats(&cube, None, 0.0).unwrap();
        let ridged = estimate_stats(&cube, None, 0.5).unwrap();
        let tr: f64 = (0..3).map(|i| plain.cov(i, i)).sum();
        for i in 0..3 {
            for j in 0..3 {
                let expect = plain.cov(i, j) + if i == j { 0.5 * tr / 3.0 } else { 0.0 };
                assert!((ridged.cov(i, j) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn simple_distances() {
        let stats = BackgroundStats::from_parts(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cube = cube_from_pixels(1, 1, &[vec![3.0, 4.0]]);
        assert!((mahalanobis_scores(&cube, &stats).unwrap().scores()[0] - 25.0).abs() < 1e-12);
        let stats = BackgroundStats::from_parts(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 4.0]).unwrap();
        assert!((mahalanobis_scores(&cube, &stats).unwrap().scores()[0] - 13.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pixels = random_pixels(&mut rng, 25, 4);
        let cube = cube_from_pixels(5, 5, &pixels);
        let stats = estimate_stats(&cube, None, 0.0).unwrap();
        let oracle = inverse_scores(&as_f64(&cube), stats.mean(), stats.covariance());
        let got = mahalanobis_scores(&cube, &stats).unwrap();
        for (a, b) in got.scores().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-12));
        }
    }

    fn cluster_with_outlier() -> HsiCube {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pixels: Vec<Vec<f64>> = (0..99)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        pixels.push(vec![20.0, -15.0]);
        cube_from_pixels(10, 10, &pixels)
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
    }

    #[test]
    fn rx_finds_outlier() {
        let map = rx_detect(&cluster_with_outlier()).unwrap();
        assert_eq!(argmax(map.scores()), 99);
    }

    #[test]
    fn rx_ranking_survives_band_scaling() {
        let cube = cluster_with_outlier();
        let scaled_data = (0..2)
            .flat_map(|b| cube.band(b).iter().map(move |&v| v * [3.0, 0.25][b] + [1.0, -2.0][b]))
            .collect();
        let scaled = HsiCube::new(10, 10, 2, scaled_data).unwrap();
        let a = rx_with_ridge(&cube, 0.0).unwrap();
        let b = rx_with_ridge(&scaled, 0.0).unwrap();
        let mut ia: Vec<usize> = (0..100).collect();
        let mut ib = ia.clone();
        ia.sort_by(|&x, &y| a.scores()[x].total_cmp(&a.scores()[y]));
        ib.sort_by(|&x, &y| b.scores()[x].total_cmp(&b.scores()[y]));
        for (x, y) in a.scores().iter().zip(b.scores()) {
            assert!((x - y).abs() <= 1e-4 * x.max(1.0));
        }
        assert_eq!(ia[99], ib[99]);
    }

    #[test]
    fn wrx_single_pass_is_rx() {
        let cube = cluster_with_outlier();
        let wrx = wrx_detect(&cube, 1).unwrap();
        let rx = rx_detect(&cube).unwrap();
        for (a, b) in wrx.map.scores().iter().zip(rx.scores()) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
        assert!(matches!(wrx_detect(&cube, 0), Err(Error::Config(_))));
    }

    #[test]
    fn wrx_downweights_outlier() {
        let r = wrx_detect(&cluster_with_outlier(), 3).unwrap();
        let bg_mean: f64 = r.weights[..99].iter().sum::<f64>() / 99.0;
        assert!(r.weights[99] < bg_mean);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn wrx_uniform_on_identical_pixels() {
        let cube = cube_from_pixels(4, 1, &vec![vec![0.3, 0.7]; 4]);
        let r = wrx_detect(&cube, 4).unwrap();
        assert!(r.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn squared_norm_values() {
        let cube = cube_from_pixels(2, 1, &[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(squared_norms(&cube).unwrap().scores(), &[1.0, 0.0]);
    }

    #[test]
    fn score_map_export() {
        let map = ScoreMap::new(3, 1, vec![2.0, 4.0, 3.0]).unwrap();
        assert_eq!(map.stretch(), vec![0, 255, 128]);
        let flat = ScoreMap::new(2, 1, vec![7.0, 7.0]).unwrap();
        assert_eq!(flat.stretch(), vec![0, 0]);
        assert_eq!(map.to_pgm(), b"P5\n3 1\n255\n\x00\xff\x80".to_vec());
        assert_eq!(ScoreMap::from_cube(&map.to_cube()).unwrap(), map);
        assert!(matches!(ScoreMap::new(1, 1, vec![-1.0]), Err(Error::Numeric(_))));
        assert!(matches!(ScoreMap::new(2, 1, vec![1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "svdd".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("rx, wrx, ae, gan-rx"), "{err}");
    }

    #[test]
    fn model_methods_need_model() {
        let cube = cluster_with_outlier();
        assert!(detect(Method::Rx, &cube, None, &DetectOptions::default()).is_ok());
        assert!(matches!(detect(Method::GanRx, &cube, None, &DetectOptions::default()), Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn affine_invariance(seed in any::<u64>(), bands in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let pixels = random_pixels(&mut rng, n, bands);
            let a: Vec<f64> = (0..bands * bands)
                .map(|i| if i % (bands + 1) == 0 { 2.0 } else { rng.random_range(-0.5..0.5) })
                .collect();
            let shift: Vec<f64> = (0..bands).map(|_| rng.random_range(-3.0..3.0)).collect();
            let moved: Vec<Vec<f64>> = pixels
                .iter()
                .map(|p| (0..bands).map(|r| (0..bands).map(|c| a[r * bands + c] * p[c]).sum::<f64>() + shift[r]).collect())
                .collect();
            // compare in f64 via explicit stats to avoid f32 storage error
            let stats = |px: &[Vec<f64>]| {
                let (m, c) = two_pass(px);
                BackgroundStats::from_parts(m, c.concat()).unwrap()
            };
            let score = |px: &[Vec<f64>]| {
                let s = stats(px);
                let chol = s.chol.clone().unwrap();
                let mut z = vec![0.0; bands];
                px.iter().map(|p| s.distance(&chol, p.iter().copied(), &mut z)).collect::<Vec<_>>()
            };
            for (x, y) in score(&pixels).iter().zip(score(&moved)) {
                prop_assert!((x - y).abs() <= 1e-6 * x.max(1e-3));
            }
        }

        #[test]
        fn scores_nonnegative_and_match_inverse(seed in any::<u64>(), n in 2usize..200, bands in 1usize..=16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = n.max(bands + 2);
            let cube = cube_from_pixels(n, 1, &random_pixels(&mut rng, n, bands));
            let stats = estimate_stats(&cube, None, 0.0).unwrap();
            let got = mahalanobis_scores(&cube, &stats).unwrap();
            let oracle = inverse_scores(&as_f64(&cube), stats.mean(), stats.covariance());
            for (a, b) in got.scores().iter().zip(&oracle) {
                prop_assert!(*a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-6));
            }
        }
    }
}
