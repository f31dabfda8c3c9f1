//! Format fixtures shared by the golden tests and the acceptance suite.
#![allow(dead_code)] // each test target uses a different subset

use std::path::PathBuf;

use ganrx::cli::Config;
use ganrx::detect::{Method, ScoreMap};
use ganrx::eval::{report_csv, roc_csv, roc_from_scores, MethodSummary};
use ganrx::gan::{metrics_csv, EpochMetrics};
use ganrx::hsi::{encode_cube, encode_pgm, HsiCube, Mask};
use ganrx::nn::{encode_network, init_network, LayerSpec, Mode, Network, Shape};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn hand_network() -> Network<f32> {
    let specs = [
        LayerSpec::conv1d(1, 2, 3, 1, 1),
        LayerSpec::batchnorm(2),
        LayerSpec::leaky_relu(0.2),
        LayerSpec::global_avg_pool(),
        LayerSpec::affine(2, 1),
        LayerSpec::sigmoid(),
    ];
    let mut net: Network<f32> = init_network(&specs, Shape::seq(1, 8), 0).unwrap();
    let mut k = 0;
    for layer in 0..specs.len() {
        for p in net.layer_params_mut(layer) {
            for v in p.data_mut() {
                *v = (k % 7) as f32 * 0.125 - 0.25;
                k += 1;
            }
        }
    }
    net.set_mode(Mode::Eval);
    net
}

/// Every fixture file name with the bytes the current code produces for it.
pub fn cases() -> Vec<(&'static str, Vec<u8>)> {
    let cube = HsiCube::new(3, 2, 2, (0..12).map(|i| i as f32 * 0.25 - 1.0).collect()).unwrap();
    let map = ScoreMap::new(3, 2, vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0]).unwrap();
    let mask = Mask::new(4, 3, (0..12).map(|i| i % 5 == 0).collect()).unwrap();
    let mask_pixels: Vec<u8> = mask.iter().map(|a| if a { 255 } else { 0 }).collect();
    let curve = roc_from_scores(&[0.9, 0.3, 0.3, 0.1, 2.5e-7], &[true, false, true, false, false]).unwrap();
    let metrics: Vec<EpochMetrics> = (0..3)
        .map(|e| EpochMetrics {
            epoch: e,
            d_loss: 1.3862943611198906 - e as f64 * 0.01,
            g_adv: 0.6931471805599453,
            l1: 0.1 / (e + 1) as f64,
            total: 0.6931471805599453 + 1.0 / (e + 1) as f64,
        })
        .collect();
    let rows = [
        MethodSummary::from_aucs(Method::Rx, vec![0.4012]),
        MethodSummary::from_aucs(Method::GanRx, vec![0.981, 0.987, 0.9925]),
    ];
    vec![
        ("cube.hsc", encode_cube(&cube)),
        ("scores.hsc", encode_cube(&map.to_cube())),
        ("scores.pgm", map.to_pgm()),
        ("mask.pgm", encode_pgm(mask.width(), mask.height(), &mask_pixels)),
        ("model.nn", encode_network(&hand_network())),
        ("roc.csv", roc_csv(&curve).into_bytes()),
        ("metrics.csv", metrics_csv(&metrics).into_bytes()),
        ("report.csv", report_csv(&rows).into_bytes()),
        ("default.cfg", Config::default().to_text().into_bytes()),
    ]
}

/// Writes the fixtures when `GANRX_BLESS` is set.
pub fn bless_if_requested() -> bool {
    if std::env::var_os("GANRX_BLESS").is_none() {
        return false;
    }
    for (name, bytes) in cases() {
        std::fs::write(fixture_path(name), bytes).unwrap();
    }
    true
}
