mod support;

use cxr_core::weights::{self, export_manifest, import_manifest, init_random_base};
use cxr_core::{ArchitectureConfig, DepthPreset, Family, WeightsError};
use proptest::prelude::*;
use support::criteria;

fn desk(family: Family) -> ArchitectureConfig {
    ArchitectureConfig::new(family, DepthPreset::Desk)
}

#[test]
fn round_trip_and_corrupted_fixtures() {
    eprintln!("{}", criteria::persistence().unwrap_or_else(|e| panic!("{e}")));
}

#[test]
fn shape_conflict_names_the_layer() {
    let bundle = init_random_base(&desk(Family::Vgg16), 1).unwrap();
    let mut bytes = weights::to_bytes(&bundle).unwrap();
    let (at, name, dims) = criteria::first_tensor_dims(&bytes);
    bytes[at..at + 4].copy_from_slice(&dims[1].to_le_bytes());
    bytes[at + 4..at + 8].copy_from_slice(&dims[0].to_le_bytes());
    let body = bytes.len() - 4;
    let crc = criteria::crc32(&bytes[..body]);
    bytes[body..].copy_from_slice(&crc.to_le_bytes());
    match weights::from_bytes(&bytes) {
        Err(e @ WeightsError::ShapeMismatch { .. }) => {
            let layer = name.split('.').next().unwrap();
            assert!(e.to_string().contains(layer), "{e}");
        }
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn every_truncation_point_is_reported_as_truncation() {
    let bytes = weights::to_bytes(&init_random_base(&desk(Family::InceptionV3), 2).unwrap()).unwrap();
    let step = (bytes.len() / 97).max(1);
    for cut in (0..bytes.len()).step_by(step) {
        match weights::from_bytes(&bytes[..cut]) {
            Err(WeightsError::Truncated { .. }) => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
}

#[test]
fn file_size_is_header_plus_tensor_records() {
    for family in Family::ALL {
        let b = init_random_base(&desk(family), 3).unwrap();
        let blocks = [b.architecture.to_text(), b.preprocessing.to_text(), b.class_labels.iter().map(|l| format!("{l}\n")).collect()];
        let mut expected = 4 + 4 + 4 + blocks.iter().map(|t| 4 + t.len()).sum::<usize>() + 4;
        for (layer, params) in &b.tensors {
            for (param, arr) in params {
                expected += 2 + layer.len() + 1 + param.len() + 1 + 4 * arr.shape.len() + 4 * arr.numel();
            }
        }
        assert_eq!(weights::to_bytes(&b).unwrap().len(), expected, "{family}");
    }
}

#[test]
fn random_weights_are_seeded_and_bounded() {
    let cfg = desk(Family::Resnet50);
    let a = init_random_base(&cfg, 7).unwrap();
    assert_eq!(a, init_random_base(&cfg, 7).unwrap());
    assert_ne!(a, init_random_base(&cfg, 8).unwrap());
    for (layer, params) in &a.tensors {
        for (param, arr) in params {
            assert!(arr.data.iter().all(|v| v.is_finite()));
            if param == "weight" {
                let (fan_in, fan_out) = match arr.shape[..] {
                    [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
                    [f, k] => (f, k),
                    _ => unreachable!(),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                assert!(arr.data.iter().all(|v| f64::from(v.abs()) <= bound + 1e-7), "{layer}");
            }
        }
    }
}

#[test]
fn empty_tensors_are_rejected_before_writing() {
    let mut b = init_random_base(&desk(Family::Vgg16), 4).unwrap();
    let first = b.tensors.values_mut().next().unwrap().values_mut().next().unwrap();
    first.shape = vec![0];
    first.data.clear();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.xrtb");
    assert!(weights::save(&b, &path).is_err());
    assert!(!path.exists());
}

#[test]
fn manifest_export_import_round_trips() {
    let b = init_random_base(&desk(Family::InceptionV3), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = export_manifest(&b, dir.path()).unwrap();
    assert_eq!(import_manifest(manifest).unwrap(), b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn save_load_is_identity(seed in any::<u64>(), family in 0usize..3, flip in any::<prop::sample::Index>()) {
        let b = init_random_base(&desk(Family::ALL[family]), seed).unwrap();
        let bytes = weights::to_bytes(&b).unwrap();
        prop_assert_eq!(&weights::from_bytes(&bytes).unwrap(), &b);
        prop_assert_eq!(&weights::to_bytes(&b).unwrap(), &bytes);
        let mut corrupt = bytes.clone();
        let i = flip.index(corrupt.len());
        corrupt[i] ^= 0x01;
        prop_assert!(weights::from_bytes(&corrupt).is_err());
    }
}
