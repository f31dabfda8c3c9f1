//! Byte-for-byte format fixtures. Set `GANRX_BLESS=1` to rewrite them after
//! an intentional format change.

mod common;

use ganrx::hsi::decode_cube;
use ganrx::nn::{decode_network, Network};

fn check(name: &str) {
    if common::bless_if_requested() {
        return;
    }
    let (_, bytes) = common::cases().into_iter().find(|(n, _)| *n == name).unwrap();
    let path = common::fixture_path(name);
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == bytes, "{name} differs from its fixture");
}

#[test]
fn hsc1_cube() {
    check("cube.hsc");
    let bytes = std::fs::read(common::fixture_path("cube.hsc")).unwrap();
    assert_eq!(decode_cube(&bytes).unwrap().data()[11], 1.75);
}

#[test]
fn score_cube_and_map() {
    check("scores.hsc");
    check("scores.pgm");
}

#[test]
fn pgm_mask() {
    check("mask.pgm");
}

#[test]
fn ganrx_nn1_model() {
    check("model.nn");
    let bytes = std::fs::read(common::fixture_path("model.nn")).unwrap();
    let back: Network<f32> = decode_network(&bytes).unwrap();
    assert_eq!(back, common::hand_network());
}

#[test]
fn csv_outputs() {
    check("roc.csv");
    check("metrics.csv");
    check("report.csv");
}

#[test]
fn default_config_text() {
    check("default.cfg");
}

#[test]
fn every_fixture_is_covered() {
    let mut on_disk: Vec<String> = std::fs::read_dir(common::fixture_path(""))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    on_disk.sort();
    let mut known: Vec<String> = common::cases().into_iter().map(|(n, _)| n.to_string()).collect();
    known.sort();
    assert_eq!(on_disk, known);
}
