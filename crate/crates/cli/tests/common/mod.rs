#![allow(dead_code)]

use cxr_core::data::{encode_png, stratified_split, synth_dataset, AugmentationPolicy, Fraction, Label, PixelGrid, SynthConfig};
use cxr_core::train::{fine_tune, TrainConfig};
use cxr_core::weights::{init_random_base, ModelBundle};
use cxr_core::{ArchitectureConfig, DepthPreset, Family, FeatureShape};

pub const SIDE: usize = 32;

/// A small vgg16 desk model fitted to synthetic 32×32 images.
pub fn trained_bundle() -> ModelBundle {
    let cfg = ArchitectureConfig::new(Family::Vgg16, DepthPreset::Desk).with_input_size(FeatureShape::new(3, SIDE, SIDE));
    let base = init_random_base(&cfg, 42).unwrap();
    let data = synth_dataset(&SynthConfig::new(30, SIDE, 42)).unwrap();
    let split = stratified_split(&data, Fraction::FOUR_FIFTHS, 42).unwrap();
    let config = TrainConfig {
        epochs: 10,
        augmentation: AugmentationPolicy::identity(),
        ..TrainConfig::default()
    };
    let (bundle, history) = fine_tune(&base, &data, &split, &config, None).unwrap();
    assert_eq!(history.final_test_accuracy(), Some(1.0), "fixture model should separate the classes");
    bundle
}

/// Unseen synthetic images, one per class.
pub fn held_out(label: Label) -> PixelGrid {
    let data = synth_dataset(&SynthConfig::new(1, SIDE, 4242)).unwrap();
    data.records().iter().find(|r| r.label == label).unwrap().pixels.clone()
}

pub fn png(label: Label) -> Vec<u8> {
    encode_png(&held_out(label)).unwrap()
}

pub const BOUNDARY: &str = "cxr-test-boundary-7f3a";

/// `(name, filename, bytes)` parts as a multipart/form-data body.
pub fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, filename, bytes) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: application/octet-stream\r\n\r\n")
                    .as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn content_type() -> String {
    format!("multipart/form-data; boundary={BOUNDARY}")
}
