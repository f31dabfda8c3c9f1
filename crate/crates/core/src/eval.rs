//! ROC curves, AUC, repeated-run aggregation and result export.

use std::fmt::Write as _;
use std::path::Path;

use crate::detect::{detect, DetectOptions, Method, ScoreMap};
use crate::error::{Error, Result};
use crate::fsutil::{fmt_sig9, write_atomic};
use crate::gan::{train, train_autoencoder, GanHyper};
use crate::hsi::{normalize_cube, Mask};
use crate::synth::{abundance_sweep, generate_scene, Scene, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Operating points for every distinct score, from the `+inf` sentinel at
/// `(0, 0)` down to the lowest score at `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

pub fn roc_curve(scores: &ScoreMap, mask: &Mask) -> Result<RocCurve> {
    if (scores.width(), scores.height()) != (mask.width(), mask.height()) {
        return Err(Error::Shape(format!(
            "score map is {}x{}, mask {}x{}",
            scores.width(),
            scores.height(),
            mask.width(),
            mask.height()
        )));
    }
    roc_from_scores(scores.scores(), &mask.iter().collect::<Vec<_>>())
}

/// ROC over raw `(score, is_anomaly)` pairs. Tied scores share one threshold.
pub fn roc_from_scores(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Evaluation(format!(
            "mask needs both classes, has {positives} anomalies and {negatives} background pixels"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let mut curve = RocCurve { points, auc: 0.0 };
    curve.auc = auc(&curve);
    Ok(curve)
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", fmt_sig9(p.threshold), fmt_sig9(p.fpr), fmt_sig9(p.tpr));
    }
    out
}

pub fn export_roc(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, roc_csv(curve).as_bytes())
}

pub fn export_map(scores: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    scores.save_pgm(path)
}

/// Scene, training and detector settings for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub block: usize,
    pub abundances: Vec<f64>,
    pub hyper: GanHyper,
    pub detect: DetectOptions,
    pub methods: Vec<Method>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            block: 4,
            abundances: abundance_sweep(3),
            hyper: GanHyper::default(),
            detect: DetectOptions::default(),
            methods: Method::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn scene(&self) -> Result<Scene> {
        generate_scene(&self.scene, self.block, &self.abundances, None)
    }
}

/// Scores a scene with one method, training a fresh model when needed.
pub fn score_scene(
    scene: &Scene,
    method: Method,
    hyper: &GanHyper,
    opts: &DetectOptions,
) -> Result<ScoreMap> {
    match method {
        Method::Rx | Method::Wrx => detect(method, &scene.cube, None, opts),
        Method::GanRx => {
            let normalized = normalize_cube(&scene.cube).0;
            let trained = train(&normalized, hyper)?;
            detect(method, &scene.cube, Some(&trained.generator), opts)
        }
        Method::Ae => {
            let normalized = normalize_cube(&scene.cube).0;
            let (generator, _) = train_autoencoder(&normalized, hyper)?;
            detect(method, &scene.cube, Some(&generator), opts)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Population standard deviation.
    pub std_auc: f64,
}

impl MethodSummary {
    pub fn from_aucs(method: Method, aucs: Vec<f64>) -> Self {
        let n = aucs.len() as f64;
        let mean = aucs.iter().sum::<f64>() / n;
        let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            method,
            aucs,
            mean_auc: mean,
            std_auc: var.sqrt(),
        }
    }

    pub fn runs(&self) -> usize {
        self.aucs.len()
    }
}

/// Repeats the pipeline on one fixed scene, once per training seed.
/// Deterministic methods run once and report a single run.
pub fn multi_run(config: &RunConfig, seeds: &[u64]) -> Result<Vec<MethodSummary>> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one run".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::Config("need at least one method".into()));
    }
    config.hyper.validate()?;
    let scene = config.scene()?;
    let mut out = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let seeds = if method.is_stochastic() { seeds } else { &seeds[..1] };
        let mut aucs = Vec::with_capacity(seeds.len());
        for (run, &seed) in seeds.iter().enumerate() {
            let hyper = GanHyper {
                seed,
                ..config.hyper.clone()
            };
            let value = score_scene(&scene, method, &hyper, &config.detect)
                .and_then(|map| roc_curve(&map, &scene.mask))
                .map_err(|e| Error::Evaluation(format!("{method} run {run} (seed {seed}): {e}")))?;
            aucs.push(value.auc);
        }
        out.push(MethodSummary::from_aucs(method, aucs));
    }
    Ok(out)
}

pub fn report_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from("method,mean_auc,std_auc,runs\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.method,
            fmt_sig9(s.mean_auc),
            fmt_sig9(s.std_auc),
            s.runs()
        );
    }
    out
}

pub fn write_report(summaries: &[MethodSummary], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, report_csv(summaries).as_bytes())
}

/// Seeds `base, base + 1, …` for `runs` repetitions.
pub fn run_seeds(base: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|i| base.wrapping_add(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `P(anomaly > background) + ½·P(tie)` over all pairs.
    fn pair_counting(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &a) in scores.iter().enumerate() {
            if !labels[i] {
                continue;
            }
            for (j, &b) in scores.iter().enumerate() {
                if labels[j] {
                    continue;
                }
                pairs += 1.0;
                if a > b {
                    wins += 1.0;
                } else if a == b {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_separation() {
        let c = roc_from_scores(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
    }

    #[test]
    fn all_ties_give_diagonal() {
        let c = roc_from_scores(&[0.5; 6], &[true, false, false, true, false, false]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.auc, 0.5);
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            roc_from_scores(&[1.0, 2.0], &[false, false]),
            Err(Error::Evaluation(_))
        ));
        assert!(matches!(
            roc_from_scores(&[1.0, 2.0], &[true, true]),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn map_and_mask_must_agree() {
        let map = ScoreMap::new(2, 2, vec![0.0; 4]).unwrap();
        let mask = Mask::new(4, 1, vec![true, false, false, false]).unwrap();
        assert!(matches!(roc_curve(&map, &mask), Err(Error::Shape(_))));
    }

    #[test]
    fn pair_counting_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(2..300);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            labels[0] = true;
            labels[1] = false;
            let c = roc_from_scores(&scores, &labels).unwrap();
            assert!((c.auc - pair_counting(&scores, &labels)).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_export() {
        let c = roc_from_scores(&[2.0, 1.0], &[true, false]).unwrap();
        assert_eq!(roc_csv(&c), "threshold,fpr,tpr\ninf,0,0\n2,0,1\n1,1,1\n");
        let s = MethodSummary::from_aucs(Method::GanRx, vec![0.75, 0.25]);
        assert_eq!(report_csv(&[s]), "method,mean_auc,std_auc,runs\ngan-rx,0.5,0.25,2\n");
    }

    #[test]
    fn summary_statistics() {
        let one = MethodSummary::from_aucs(Method::Rx, vec![0.7]);
        assert_eq!((one.mean_auc, one.std_auc, one.runs()), (0.7, 0.0, 1));
        let same = MethodSummary::from_aucs(Method::Ae, vec![0.6; 4]);
        assert_eq!(same.std_auc, 0.0);
        assert_eq!(run_seeds(5, 3), vec![5, 6, 7]);
    }

    #[test]
    fn multi_run_small_scene() {
        let config = RunConfig {
            scene: SceneSpec {
                width: 16,
                height: 16,
                bands: 8,
                ..Default::default()
            },
            block: 2,
            abundances: vec![0.5, 1.0],
            hyper: GanHyper {
                epochs: 1,
                batch_size: 32,
                ..Default::default()
            },
            methods: vec![Method::Rx, Method::GanRx],
            ..Default::default()
        };
        let a = multi_run(&config, &[3, 3]).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].runs(), 1);
        assert_eq!(a[1].runs(), 2);
        assert_eq!(a[1].std_auc, 0.0);
        assert_eq!(a, multi_run(&config, &[3, 3]).unwrap());
        assert!(matches!(multi_run(&config, &[]), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn auc_properties(raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..200)) {
            let mut raw = raw;
            raw[0].1 = true;
            raw[1].1 = false;
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let c = roc_from_scores(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&c.auc));
            prop_assert!((c.auc - pair_counting(&scores, &labels)).abs() < 1e-9);
            for w in c.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            let monotone: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp()).collect();
            prop_assert!((roc_from_scores(&monotone, &labels).unwrap().auc - c.auc).abs() < 1e-12);
            let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((roc_from_scores(&flipped, &labels).unwrap().auc - (1.0 - c.auc)).abs() < 1e-12);
        }
    }
}
