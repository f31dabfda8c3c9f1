//! Synthetic scenes with ground truth: a linear-mixture background plus
//! targets implanted by linear mixing at known abundances.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::hsi::{HsiCube, Mask};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub endmembers: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            bands: 40,
            endmembers: 4,
            noise_sigma: 0.0005,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 || self.endmembers == 0 {
            return Err(Error::Shape(format!(
                "scene dimensions must be positive: {}x{}x{}, {} endmembers",
                self.width, self.height, self.bands, self.endmembers
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Data(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// A smooth random spectrum: a Gaussian random walk rescaled to `[0.1, 1]`.
pub fn smooth_spectrum<R: Rng>(bands: usize, rng: &mut R) -> Vec<f64> {
    let mut acc = 0.0;
    let walk: Vec<f64> = (0..bands)
        .map(|_| {
            let step: f64 = StandardNormal.sample(rng);
            acc += step;
            acc
        })
        .collect();
    let lo = walk.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = walk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        walk.iter().map(|v| 0.1 + 0.9 * (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.55; bands]
    }
}

pub fn endmembers(spec: &SceneSpec) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(spec.seed, Stream::Endmembers);
    (0..spec.endmembers)
        .map(|_| smooth_spectrum(spec.bands, &mut rng))
        .collect()
}

/// Candidate spectra drawn for the default target.
pub const TARGET_CANDIDATES: usize = 16;

/// Fraction of `t`'s norm left after projecting it onto the span of `basis`.
pub fn residual_fraction(t: &[f64], basis: &[Vec<f64>]) -> f64 {
    // modified Gram-Schmidt, skipping directions already in the span
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for v in basis {
        let mut u = v.clone();
        for q in &ortho {
            let dot: f64 = u.iter().zip(q).map(|(a, b)| a * b).sum();
            u.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-10 {
            ortho.push(u.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut r = t.to_vec();
    for q in &ortho {
        let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
    }
    let total = t.iter().map(|a| a * a).sum::<f64>().sqrt();
    if total > 0.0 {
        r.iter().map(|a| a * a).sum::<f64>().sqrt() / total
    } else {
        0.0
    }
}

/// Default target signature for a scene: of `TARGET_CANDIDATES` smooth
/// spectra drawn from the target stream, the one furthest outside the span
/// of the scene's endmembers. A target the background can already mix is
/// not an anomaly in any useful sense.
pub fn default_target(spec: &SceneSpec) -> Vec<f32> {
    let members = endmembers(spec);
    let mut rng = stream_rng(spec.seed, Stream::Target);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..TARGET_CANDIDATES {
        let candidate = smooth_spectrum(spec.bands, &mut rng);
        let score = residual_fraction(&candidate, &members);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    best.expect("at least one candidate").1.into_iter().map(|v| v as f32).collect()
}

/// Each pixel is a Dirichlet(1)-weighted mixture of the scene's endmembers
/// plus i.i.d. Gaussian noise, clipped at zero.
pub fn generate_background(spec: &SceneSpec) -> Result<HsiCube> {
    spec.validate()?;
    let members = endmembers(spec);
    let mut abundance_rng = stream_rng(spec.seed, Stream::AbundanceMap);
    let mut noise_rng = stream_rng(spec.seed, Stream::Noise);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");

    let n = spec.width * spec.height;
    let mut data = vec![0f32; n * spec.bands];
    let mut weights = vec![0f64; spec.endmembers];
    for pixel in 0..n {
        let mut total = 0.0;
        for w in weights.iter_mut() {
            *w = Exp1.sample(&mut abundance_rng);
            total += *w;
        }
        for b in 0..spec.bands {
            let clean: f64 = weights
                .iter()
                .zip(&members)
                .map(|(w, m)| w / total * m[b])
                .sum();
            let noisy = if spec.noise_sigma > 0.0 {
                clean + noise.sample(&mut noise_rng)
            } else {
                clean
            };
            data[b * n + pixel] = noisy.max(0.0) as f32;
        }
    }
    HsiCube::new(spec.width, spec.height, spec.bands, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub row: usize,
    pub col: usize,
    pub block_height: usize,
    pub block_width: usize,
    pub abundance: f64,
}

impl Placement {
    fn overlaps(&self, other: &Placement) -> bool {
        self.row < other.row + other.block_height
            && other.row < self.row + self.block_height
            && self.col < other.col + other.block_width
            && other.col < self.col + self.block_width
    }

    fn area(&self) -> usize {
        self.block_height * self.block_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplantSpec {
    pub target: Vec<f32>,
    pub placements: Vec<Placement>,
}

impl ImplantSpec {
    pub fn anomaly_pixels(&self) -> usize {
        self.placements.iter().map(Placement::area).sum()
    }
}

/// Replaces every placed pixel `s` by `a·t + (1−a)·s`, band by band, and
/// returns the implanted cube with its ground-truth mask.
pub fn implant_targets(cube: &HsiCube, spec: &ImplantSpec) -> Result<(HsiCube, Mask)> {
    if spec.target.len() != cube.bands() {
        return Err(Error::Shape(format!(
            "target has {} bands, cube has {}",
            spec.target.len(),
            cube.bands()
        )));
    }
    for (i, p) in spec.placements.iter().enumerate() {
        if !(p.abundance > 0.0 && p.abundance <= 1.0) {
            return Err(Error::Placement(format!(
                "block {i}: abundance {} outside (0, 1]",
                p.abundance
            )));
        }
        if p.block_height == 0
            || p.block_width == 0
            || p.row + p.block_height > cube.height()
            || p.col + p.block_width > cube.width()
        {
            return Err(Error::Placement(format!(
                "block {i} at ({}, {}) size {}x{} outside {}x{} image",
                p.row,
                p.col,
                p.block_height,
                p.block_width,
                cube.height(),
                cube.width()
            )));
        }
        if let Some(j) = spec.placements[..i].iter().position(|q| q.overlaps(p)) {
            return Err(Error::Placement(format!("blocks {j} and {i} overlap")));
        }
    }

    let mut out = cube.clone();
    let mut mask = Mask::empty(cube.width(), cube.height());
    let mut spectrum = vec![0f32; cube.bands()];
    for p in &spec.placements {
        let a = p.abundance;
        for row in p.row..p.row + p.block_height {
            for col in p.col..p.col + p.block_width {
                let pixel = row * cube.width() + col;
                cube.spectrum_into(pixel, &mut spectrum);
                for (s, &t) in spectrum.iter_mut().zip(&spec.target) {
                    *s = if a == 1.0 {
                        t
                    } else {
                        (a * t as f64 + (1.0 - a) * *s as f64) as f32
                    };
                }
                out.set_spectrum(pixel, &spectrum);
                mask.set(pixel, true);
            }
        }
    }
    Ok((out, mask))
}

/// Square blocks along the main diagonal, one per abundance, sorted by
/// increasing abundance and separated by equal gaps (including the margins).
pub fn diagonal_layout(
    width: usize,
    height: usize,
    block: usize,
    abundances: &[f64],
) -> Result<Vec<Placement>> {
    let diagonal = width.min(height);
    let count = abundances.len();
    if block == 0 || count == 0 {
        return Err(Error::Layout("need a positive block size and at least one abundance".into()));
    }
    let needed = count
        .checked_mul(block)
        .ok_or_else(|| Error::Layout("block count overflows".into()))?;
    if needed > diagonal {
        return Err(Error::Layout(format!(
            "{count} blocks of {block} px need {needed} diagonal pixels, only {diagonal} available"
        )));
    }
    let mut sorted = abundances.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let free = diagonal - needed;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, abundance)| {
            let start = (i + 1) * free / (count + 1) + i * block;
            Placement {
                row: start,
                col: start,
                block_height: block,
                block_width: block,
                abundance,
            }
        })
        .collect())
}

/// Abundances `0.1, 0.2, …, 1.0`.
pub fn abundance_sweep(from_tenths: u32) -> Vec<f64> {
    (from_tenths..=10).map(|k| k as f64 / 10.0).collect()
}

/// A generated scene with its implanted targets.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub mask: Mask,
    pub target: Vec<f32>,
}

pub fn generate_scene(
    spec: &SceneSpec,
    block: usize,
    abundances: &[f64],
    target: Option<Vec<f32>>,
) -> Result<Scene> {
    let background = generate_background(spec)?;
    let target = target.unwrap_or_else(|| default_target(spec));
    let placements = diagonal_layout(spec.width, spec.height, block, abundances)?;
    let implant = ImplantSpec {
        target: target.clone(),
        placements,
    };
    let (cube, mask) = implant_targets(&background, &implant)?;
    Ok(Scene { cube, mask, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn background_is_deterministic() {
        let spec = SceneSpec {
            width: 8,
            height: 6,
            bands: 10,
            seed: 42,
            ..Default::default()
        };
        assert_eq!(generate_background(&spec).unwrap(), generate_background(&spec).unwrap());
    }

    #[test]
    fn single_noiseless_endmember_is_constant() {
        let spec = SceneSpec {
            width: 5,
            height: 5,
            bands: 12,
            endmembers: 1,
            noise_sigma: 0.0,
            seed: 9,
        };
        let cube = generate_background(&spec).unwrap();
        let member = &endmembers(&spec)[0];
        for pixel in 0..cube.pixels() {
            for (v, m) in cube.spectrum(pixel).iter().zip(member) {
                assert!((*v as f64 - m).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn band_variance_is_positive() {
        let spec = SceneSpec {
            width: 64,
            height: 64,
            bands: 40,
            endmembers: 4,
            noise_sigma: 0.01,
            seed: 1,
        };
        let cube = generate_background(&spec).unwrap();
        for b in 0..cube.bands() {
            let band = cube.band(b);
            let mean = band.iter().map(|&v| v as f64).sum::<f64>() / band.len() as f64;
            let var = band.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()
                / (band.len() - 1) as f64;
            assert!(var > 0.0, "band {b} has zero variance");
        }
        assert!(cube.data().iter().all(|&v| v >= 0.0));
    }

    fn two_band_cube() -> HsiCube {
        // every pixel s = (0, 1)
        let n = 9;
        let mut data = vec![0.0; n];
        data.extend(std::iter::repeat_n(1.0, n));
        HsiCube::new(3, 3, 2, data).unwrap()
    }

    fn one_block(abundance: f64) -> ImplantSpec {
        ImplantSpec {
            target: vec![1.0, 0.0],
            placements: vec![Placement {
                row: 1,
                col: 1,
                block_height: 1,
                block_width: 1,
                abundance,
            }],
        }
    }

    #[test]
    fn implant_mixes_linearly() {
        let (cube, mask) = implant_targets(&two_band_cube(), &one_block(0.4)).unwrap();
        let m = cube.spectrum(4);
        assert!((m[0] - 0.4).abs() < 1e-7 && (m[1] - 0.6).abs() < 1e-7);
        assert_eq!(mask.anomaly_count(), 1);
        assert!(mask.is_anomaly(4));
    }

    #[test]
    fn implant_full_abundance_copies_target() {
        let (cube, _) = implant_targets(&two_band_cube(), &one_block(1.0)).unwrap();
        assert_eq!(cube.spectrum(4), vec![1.0, 0.0]);
    }

    #[test]
    fn implant_rejects_bad_specs() {
        let cube = two_band_cube();
        assert!(matches!(implant_targets(&cube, &one_block(0.0)), Err(Error::Placement(_))));
        assert!(matches!(implant_targets(&cube, &one_block(1.5)), Err(Error::Placement(_))));

        let mut spec = one_block(0.5);
        spec.target.push(0.0);
        assert!(matches!(implant_targets(&cube, &spec), Err(Error::Shape(_))));

        let mut spec = one_block(0.5);
        spec.placements[0].row = 2;
        spec.placements[0].block_height = 2;
        assert!(matches!(implant_targets(&cube, &spec), Err(Error::Placement(_))));

        let mut spec = one_block(0.5);
        let mut other = spec.placements[0].clone();
        other.block_width = 2;
        other.col = 0;
        spec.placements.push(other);
        assert!(matches!(implant_targets(&cube, &spec), Err(Error::Placement(_))));
    }

    #[test]
    fn ten_block_layout_on_100x100() {
        let placements = diagonal_layout(100, 100, 4, &abundance_sweep(1)).unwrap();
        assert_eq!(placements.len(), 10);
        let area: usize = placements.iter().map(Placement::area).sum();
        assert_eq!(area, 160);
        for (i, p) in placements.iter().enumerate() {
            assert_eq!(p.row, p.col);
            assert!(p.row + 4 <= 100);
            assert!((p.abundance - (i + 1) as f64 / 10.0).abs() < 1e-12);
            for q in &placements[..i] {
                assert!(!p.overlaps(q));
            }
        }
        // equal gaps of 60/11 px, rounded down
        let starts: Vec<usize> = placements.iter().map(|p| p.row).collect();
        assert_eq!(starts, vec![5, 14, 24, 33, 43, 52, 62, 71, 81, 90]);
    }

    #[test]
    fn single_pixel_layout() {
        let p = diagonal_layout(3, 3, 1, &[0.5]).unwrap();
        assert_eq!((p[0].row, p[0].col), (1, 1));
    }

    #[test]
    fn layout_capacity() {
        assert!(matches!(
            diagonal_layout(100, 100, 4, &[0.5; 30]),
            Err(Error::Layout(_))
        ));
        assert!(diagonal_layout(100, 100, 4, &[0.5; 25]).is_ok());
    }

    #[test]
    fn layout_sorts_abundances() {
        let p = diagonal_layout(20, 20, 2, &[0.9, 0.1, 0.5]).unwrap();
        let a: Vec<f64> = p.iter().map(|p| p.abundance).collect();
        assert_eq!(a, vec![0.1, 0.5, 0.9]);
    }

    #[test]
    fn residual_fraction_matches_least_squares() {
        let spec = SceneSpec { bands: 12, endmembers: 3, seed: 9, ..Default::default() };
        let members = endmembers(&spec);
        let m = nalgebra::DMatrix::from_fn(12, 3, |i, j| members[j][i]);
        let mut rng = stream_rng(3, Stream::Target);
        for _ in 0..5 {
            let t = smooth_spectrum(12, &mut rng);
            let tv = nalgebra::DVector::from_vec(t.clone());
            let coef = (m.transpose() * &m).try_inverse().unwrap() * m.transpose() * &tv;
            let expected = (&tv - &m * coef).norm() / tv.norm();
            assert!((residual_fraction(&t, &members) - expected).abs() < 1e-9);
        }
        assert!(residual_fraction(&members[1], &members) < 1e-9);
        assert_eq!(residual_fraction(&[0.0, 1.0], &[vec![1.0, 0.0]]), 1.0);
    }

    #[test]
    fn default_target_is_most_distinct_candidate() {
        let spec = SceneSpec { bands: 16, seed: 4, ..Default::default() };
        let members = endmembers(&spec);
        let target: Vec<f64> = default_target(&spec).iter().map(|&v| v as f64).collect();
        let mut rng = stream_rng(4, Stream::Target);
        let candidates: Vec<Vec<f64>> = (0..TARGET_CANDIDATES).map(|_| smooth_spectrum(16, &mut rng)).collect();
        let best = candidates
            .iter()
            .map(|c| residual_fraction(c, &members))
            .fold(0.0, f64::max);
        let got = residual_fraction(&target, &members);
        assert!((got - best).abs() < 1e-6, "{got} vs {best}");
        assert_eq!(default_target(&spec), default_target(&spec));
    }

    proptest! {
        #[test]
        fn implant_invariants(seed in any::<u64>(), count in 1usize..6, block in 1usize..4) {
            let spec = SceneSpec { width: 24, height: 20, bands: 6, seed, ..Default::default() };
            let background = generate_background(&spec).unwrap();
            let abundances: Vec<f64> = (0..count).map(|i| 0.2 + 0.8 * i as f64 / count as f64).collect();
            let placements = diagonal_layout(24, 20, block, &abundances).unwrap();
            let mut implant = ImplantSpec { target: default_target(&spec), placements };
            implant.placements.last_mut().unwrap().abundance = 1.0;
            let (cube, mask) = implant_targets(&background, &implant).unwrap();

            prop_assert_eq!(mask.anomaly_count(), implant.anomaly_pixels());
            for pixel in 0..cube.pixels() {
                if !mask.is_anomaly(pixel) {
                    let a: Vec<u32> = cube.spectrum(pixel).iter().map(|v| v.to_bits()).collect();
                    let b: Vec<u32> = background.spectrum(pixel).iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(a, b);
                }
            }
            let last = implant.placements.last().unwrap();
            for r in last.row..last.row + block {
                for c in last.col..last.col + block {
                    prop_assert_eq!(cube.spectrum(r * 24 + c), implant.target.clone());
                }
            }
        }
    }
}
