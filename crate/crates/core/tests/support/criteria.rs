//! Each check returns a one-line summary on success and the first violation on failure.

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cxr_core::arch::{GraphBuilder, LayerKind};
use cxr_core::data::{stratified_split, Fraction, ImageRecord, Label, LabeledDataset, PixelGrid};
use cxr_core::eval::{auc, report, roc, ConfusionMatrix};
use cxr_core::head::{dense_forward, head_backward, one_hot};
use cxr_core::ops::{
    batchnorm_inference, conv2d_forward, global_avg_pool, pool2d_forward, BatchNormParams, ConvParams, PoolKind, PoolParams,
};
use cxr_core::weights::{self, init_random_base};
use cxr_core::{build, ArchitectureConfig, DepthPreset, Family, FeatureShape, Matrix, Network, Tensor, WeightsError};

use super::oracles::{self, Dims};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------

pub const KERNEL_CONFIGS: usize = 200;
pub const KERNEL_TOLERANCE: f64 = 1e-6;

/// Every configuration runs conv, max and average pooling, global average
/// pooling, dense and batchnorm against the naive loops.
pub fn kernel_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut worst_rel = 0.0f64;
    for case in 0..KERNEL_CONFIGS {
        let d = Dims {
            n: rng.gen_range(1..=2),
            c: rng.gen_range(1..=8),
            h: rng.gen_range(1..=16),
            w: rng.gen_range(1..=16),
        };
        let x = uniform(&mut rng, d.n * d.c * d.h * d.w, -10.0, 10.0);
        let input = Tensor::new([d.n, d.c, d.h, d.w], x.clone()).map_err(|e| e.to_string())?;

        // convolution
        let c_out = rng.gen_range(1..=8);
        let pad = (rng.gen_range(0..=2), rng.gen_range(0..=2));
        let k = (rng.gen_range(1..=(d.h + 2 * pad.0).min(5)), rng.gen_range(1..=(d.w + 2 * pad.1).min(5)));
        let stride = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let w = uniform(&mut rng, c_out * d.c * k.0 * k.1, -1.0, 1.0);
        let b = uniform(&mut rng, c_out, -1.0, 1.0);
        let params = ConvParams::new(
            Tensor::new([c_out, d.c, k.0, k.1], w.clone()).map_err(|e| e.to_string())?,
            b.clone(),
            stride,
            pad,
        )
        .map_err(|e| e.to_string())?;
        let got = conv2d_forward(&input, &params).map_err(|e| format!("case {case}: conv: {e}"))?;
        let (want, od) = oracles::conv_f32(&x, d, &w, c_out, k, &b, stride, pad);
        ensure!(got.shape() == [od.n, od.c, od.h, od.w], "case {case}: conv shape {:?}", got.shape());
        let diff = max_abs_diff(got.data(), &want);
        ensure!(diff <= KERNEL_TOLERANCE, "case {case}: conv differs by {diff:e}");
        worst = worst.max(diff);
        let (exact, mag) = oracles::conv_f64(&x, d, &w, c_out, k, &b, stride, pad);
        let terms = (d.c * k.0 * k.1 + 1) as f64;
        let u = f64::from(f32::EPSILON) / 2.0;
        let gamma = terms * u / (1.0 - terms * u);
        for ((g, e), m) in got.data().iter().zip(&exact).zip(&mag) {
            let err = (f64::from(*g) - e).abs();
            ensure!(err <= gamma * m + f64::from(f32::MIN_POSITIVE), "case {case}: conv strays {err:e} from the exact sum");
            if *m > 0.0 {
                worst_rel = worst_rel.max(err / m);
            }
        }

        // pooling
        for max in [true, false] {
            let k = (rng.gen_range(1..=d.h.min(4)), rng.gen_range(1..=d.w.min(4)));
            let stride = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let pad = if rng.gen_bool(0.5) {
                (0, 0)
            } else {
                (rng.gen_range(0..k.0), rng.gen_range(0..k.1))
            };
            let kind = if max { PoolKind::Max } else { PoolKind::Avg };
            let got = pool2d_forward(&input, PoolParams::new(kind, k, stride).with_padding(pad))
                .map_err(|e| format!("case {case}: pool: {e}"))?;
            let (want, od) = oracles::pool_f32(&x, d, max, k, stride, pad);
            ensure!(got.shape() == [od.n, od.c, od.h, od.w], "case {case}: pool shape {:?}", got.shape());
            let diff = max_abs_diff(got.data(), &want);
            ensure!(diff <= KERNEL_TOLERANCE, "case {case}: {kind:?} pool differs by {diff:e}");
            worst = worst.max(diff);
        }

        // global average pooling
        let got = global_avg_pool(&input).map_err(|e| e.to_string())?;
        let diff = max_abs_diff(got.data(), &oracles::gap_f32(&x, d));
        ensure!(diff <= KERNEL_TOLERANCE, "case {case}: gap differs by {diff:e}");
        worst = worst.max(diff);

        // dense on the flattened input
        let f = d.c * d.h * d.w;
        let kk = rng.gen_range(1..=4);
        let wd = uniform(&mut rng, f * kk, -1.0, 1.0);
        let bd = uniform(&mut rng, kk, -1.0, 1.0);
        let got = dense_forward(&input, &Matrix::new(f, kk, wd.clone()).map_err(|e| e.to_string())?, &bd).map_err(|e| e.to_string())?;
        let diff = max_abs_diff(got.data(), &oracles::dense_f32(&x, d.n, f, &wd, kk, &bd));
        ensure!(diff <= KERNEL_TOLERANCE, "case {case}: dense differs by {diff:e}");
        worst = worst.max(diff);

        // batchnorm
        let bn = BatchNormParams {
            mean: uniform(&mut rng, d.c, -2.0, 2.0),
            var: uniform(&mut rng, d.c, 0.0, 4.0),
            gamma: uniform(&mut rng, d.c, -2.0, 2.0),
            beta: uniform(&mut rng, d.c, -2.0, 2.0),
            eps: 1e-5,
        };
        let got = batchnorm_inference(&input, &bn).map_err(|e| e.to_string())?;
        let want = oracles::batchnorm_f32(&x, d, &bn.mean, &bn.var, &bn.gamma, &bn.beta, bn.eps);
        let diff = max_abs_diff(got.data(), &want);
        ensure!(diff <= KERNEL_TOLERANCE, "case {case}: batchnorm differs by {diff:e}");
        worst = worst.max(diff);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!(
        "{KERNEL_CONFIGS} configs, max abs diff {worst:e}, max conv error vs exact {worst_rel:.1e} of |terms|, {secs:.2} s"
    ))
}

// ---------------------------------------------------------------------------

pub const GRADIENT_INSTANCES: usize = 20;
pub const GRADIENT_STEP: f64 = 1e-3;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

/// Relative error `|a − b| / max(|a|, |b|, 1e-6)` of every weight and bias gradient.
pub fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let k = 2;
    for case in 0..GRADIENT_INSTANCES {
        let n = rng.gen_range(1..=8);
        let f = rng.gen_range(1..=16);
        let x = uniform(&mut rng, n * f, -1.0, 1.0);
        let w = uniform(&mut rng, f * k, -0.5, 0.5);
        let b = uniform(&mut rng, k, -0.5, 0.5);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let grads = head_backward(
            &Matrix::new(n, f, x.clone()).map_err(|e| e.to_string())?,
            &one_hot(&labels, k).map_err(|e| e.to_string())?,
            &Matrix::new(f, k, w.clone()).map_err(|e| e.to_string())?,
            &b,
        )
        .map_err(|e| e.to_string())?;

        let x64: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let w64: Vec<f64> = w.iter().map(|&v| f64::from(v)).collect();
        let b64: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
        let loss = |w: &[f64], b: &[f64]| oracles::head_loss_f64(&x64, n, f, w, k, b, &labels);
        let central = |i: usize, bias: bool| {
            let (mut wp, mut bp) = (w64.clone(), b64.clone());
            let (mut wm, mut bm) = (w64.clone(), b64.clone());
            if bias {
                bp[i] += GRADIENT_STEP;
                bm[i] -= GRADIENT_STEP;
            } else {
                wp[i] += GRADIENT_STEP;
                wm[i] -= GRADIENT_STEP;
            }
            (loss(&wp, &bp) - loss(&wm, &bm)) / (2.0 * GRADIENT_STEP)
        };
        let analytic = grads.d_weights.data().iter().map(|&g| (g, false)).chain(grads.d_bias.iter().map(|&g| (g, true)));
        for (i, (g, bias)) in analytic.enumerate() {
            let idx = if bias { i - f * k } else { i };
            let (a, fd) = (f64::from(g), central(idx, bias));
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            ensure!(
                rel <= GRADIENT_TOLERANCE,
                "instance {case}: {} {idx}: analytic {a:e} vs numeric {fd:e} (rel {rel:e})",
                if bias { "bias" } else { "weight" }
            );
            worst = worst.max(rel);
        }
        ensure!(
            (grads.loss - loss(&w64, &b64)).abs() <= 1e-9,
            "instance {case}: loss {} vs {}",
            grads.loss,
            loss(&w64, &b64)
        );
    }
    Ok(format!("{GRADIENT_INSTANCES} instances, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------

/// Shapes of every family at both presets; desk graphs additionally run a forward pass.
pub fn architecture_shapes() -> Outcome {
    let mut notes = Vec::new();
    for family in Family::ALL {
        for preset in [DepthPreset::Full, DepthPreset::Desk] {
            let config = ArchitectureConfig::new(family, preset);
            let graph = build(&config).map_err(|e| format!("{family} {preset:?}: {e}"))?;
            let out = graph.output_shape().ok_or("unvalidated graph")?;
            ensure!(out == FeatureShape::new(2, 1, 1), "{family} {preset:?}: output {out}");
            let gap = graph.layer("head_gap").ok_or("missing head")?;
            let pre_head = graph.shape_of(&gap.inputs[0]).ok_or("missing shape")?;
            if family == Family::Vgg16 && preset == DepthPreset::Full {
                ensure!(pre_head == FeatureShape::new(512, 7, 7), "vgg16 pre-head map is {pre_head}");
            }
            let layers = graph.layers();
            match family {
                Family::Resnet50 => ensure!(
                    layers.iter().any(|l| l.kind == LayerKind::Add),
                    "{family} {preset:?} has no residual add"
                ),
                Family::InceptionV3 => ensure!(
                    layers.iter().any(|l| l.kind == LayerKind::Concat && l.inputs.len() == 4),
                    "{family} {preset:?} has no 4-branch concat"
                ),
                Family::Vgg16 => {}
            }
            if preset == DepthPreset::Desk {
                ensure!(graph.weighted_layer_count() <= 12, "{family} desk has {} weighted layers", graph.weighted_layer_count());
                let bundle = init_random_base(&config, 42).map_err(|e| e.to_string())?;
                let net = Network::from_bundle(&bundle).map_err(|e| e.to_string())?;
                let s = config.input_size;
                let y = net.forward(&Tensor::full([1, s.c, s.h, s.w], 0.25)).map_err(|e| e.to_string())?;
                let total: f32 = y.data().iter().sum();
                ensure!(y.shape() == [1, 2, 1, 1] && (total - 1.0).abs() < 1e-5, "{family} desk forward gave {:?}", y.data());
            }
            notes.push(format!("{family}/{}:{pre_head}", preset.as_str()));
        }
    }
    Ok(notes.join(" "))
}

// ---------------------------------------------------------------------------

pub const VGG16_BODY_PARAMETERS: usize = 14_714_688;
pub const RANDOM_GRAPHS: usize = 200;

pub fn parameter_counts() -> Outcome {
    ensure!(
        oracles::vgg16_body_parameters() == VGG16_BODY_PARAMETERS,
        "oracle sums to {}",
        oracles::vgg16_body_parameters()
    );
    let vgg = build(&ArchitectureConfig::new(Family::Vgg16, DepthPreset::Full)).map_err(|e| e.to_string())?;
    let counts = vgg.count_parameters().map_err(|e| e.to_string())?;
    let head_start = vgg.head_start().ok_or("no head")?;
    let body: usize = counts.per_layer.values().take(head_start).sum();
    let convs = vgg.layers()[..head_start].iter().filter(|l| matches!(l.kind, LayerKind::Conv { .. })).count();
    ensure!(body == VGG16_BODY_PARAMETERS, "vgg16 body counts {body}");
    ensure!(convs == 13, "vgg16 body has {convs} convs");

    for family in Family::ALL {
        for preset in [DepthPreset::Full, DepthPreset::Desk] {
            let config = ArchitectureConfig::new(family, preset);
            let g = build(&config).map_err(|e| e.to_string())?;
            compare_counts(&g, (config.input_size.c, config.input_size.h, config.input_size.w))
                .map_err(|e| format!("{family} {preset:?}: {e}"))?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..RANDOM_GRAPHS {
        let (g, input) = random_graph(&mut rng);
        compare_counts(&g, input).map_err(|e| format!("random graph {case}: {e}"))?;
    }
    Ok(format!("vgg16 body {body} over {convs} convs; 6 presets and {RANDOM_GRAPHS} random graphs match per layer"))
}

fn compare_counts(g: &cxr_core::LayerGraph, input: (usize, usize, usize)) -> Result<(), String> {
    let counts = g.count_parameters().map_err(|e| e.to_string())?;
    let want = oracles::parameter_oracle(g.layers(), input);
    ensure!(counts.per_layer.len() == want.len(), "layer count {} vs {}", counts.per_layer.len(), want.len());
    for ((id, got), (wid, w)) in counts.per_layer.iter().zip(&want) {
        ensure!(id == wid && got == w, "layer {id}: {got} vs oracle {w}");
    }
    let total: usize = want.iter().map(|(_, n)| n).sum();
    ensure!(counts.total == total, "total {} vs oracle {total}", counts.total);
    Ok(())
}

/// A validated chain of random conv/batchnorm/relu/pool steps with
/// occasional two-branch add or concat merges, ending in the standard head.
pub fn random_graph(rng: &mut ChaCha8Rng) -> (cxr_core::LayerGraph, (usize, usize, usize)) {
    let input = (rng.gen_range(1..=4), rng.gen_range(6..=20), rng.gen_range(6..=20));
    let mut b = GraphBuilder::new();
    let mut x = b.input_id();
    let (mut h, mut w) = (input.1, input.2);
    let steps = rng.gen_range(1..=10);
    for i in 0..steps {
        match rng.gen_range(0..6) {
            0 | 1 => {
                let k = rng.gen_range(1..=3usize);
                let s = rng.gen_range(1..=2usize);
                let p = rng.gen_range(0..=k / 2 + 1);
                if h + 2 * p < k || w + 2 * p < k {
                    continue;
                }
                x = b.conv(&format!("conv{i}"), &x, rng.gen_range(1..=12), (k, k), (s, s), (p, p));
                h = (h + 2 * p - k) / s + 1;
                w = (w + 2 * p - k) / s + 1;
            }
            2 => x = b.batchnorm(&format!("bn{i}"), &x, 1e-5),
            3 if h >= 2 && w >= 2 => {
                x = b.max_pool(&format!("pool{i}"), &x, (2, 2), (2, 2), (0, 0));
                h /= 2;
                w /= 2;
            }
            4 => {
                let c = rng.gen_range(1..=8);
                let a = b.conv(&format!("res{i}_a"), &x, c, (3, 3), (1, 1), (1, 1));
                let s = b.conv(&format!("res{i}_b"), &x, c, (1, 1), (1, 1), (0, 0));
                x = b.add(&format!("res{i}_add"), &[&a, &s]);
            }
            5 => {
                let branches: Vec<String> = (0..rng.gen_range(2..=4))
                    .map(|j| b.conv(&format!("mix{i}_{j}"), &x, rng.gen_range(1..=6), (1, 1), (1, 1), (0, 0)))
                    .collect();
                let refs: Vec<&str> = branches.iter().map(String::as_str).collect();
                x = b.concat(&format!("mix{i}_cat"), &refs);
            }
            _ => x = b.relu(&format!("relu{i}"), &x),
        }
    }
    let k = rng.gen_range(2..=5);
    let g = b
        .finish_with_head(&x, k)
        .and_then(|g| g.validate_shapes(FeatureShape::new(input.0, input.1, input.2)))
        .expect("generator only emits valid graphs");
    (g, input)
}

// ---------------------------------------------------------------------------

pub fn metric_reproduction() -> Outcome {
    let mut notes = Vec::new();
    for t in &oracles::PUBLISHED_REPORTS {
        let cm = ConfusionMatrix::from_counts(t.matrix.iter().map(|r| r.to_vec()).collect(), vec!["0".into(), "1".into()])
            .map_err(|e| e.to_string())?;
        let r = report(&cm).map_err(|e| e.to_string())?;
        ensure!(oracles::report_matches(&r, t), "{}: {:?} does not reproduce the table:\n{}", t.name, t.matrix, r.to_text());
        let found = oracles::search_matrices(t);
        ensure!(found.contains(&t.matrix), "{}: integer search did not find {:?}", t.name, t.matrix);
        notes.push(format!("{} {:?} ({} matching matrices)", t.name, t.matrix, found.len()));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------

pub const ROC_INSTANCES: usize = 100;
pub const ROC_TOLERANCE: f64 = 1e-9;

pub fn roc_auc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let auc_of = |s: &[f64], l: &[usize], p: usize| roc(s, l, p).map(|c| auc(&c)).map_err(|e| e.to_string());
    let mut worst = 0.0f64;
    for case in 0..ROC_INSTANCES {
        let n = rng.gen_range(2..=60);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // coarse grids produce ties
        let levels = [4.0, 10.0, 1000.0, 0.0][case % 4];
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.gen_range(0.0..=1.0);
                if levels > 0.0 {
                    (s * levels).round() / levels
                } else {
                    s
                }
            })
            .collect();
        let a = auc_of(&scores, &labels, 0)?;
        let oracle = oracles::concordance(&scores, &labels, 0);
        ensure!((a - oracle).abs() <= ROC_TOLERANCE, "instance {case}: auc {a} vs concordance {oracle}");
        worst = worst.max((a - oracle).abs());

        let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let a_flip = auc_of(&flipped, &labels, 0)?;
        let a_swap = auc_of(&scores, &labels, 1)?;
        let a_both = auc_of(&flipped, &labels, 1)?;
        ensure!((a + a_flip - 1.0).abs() <= ROC_TOLERANCE, "instance {case}: auc(s) + auc(1-s) = {}", a + a_flip);
        ensure!((a + a_swap - 1.0).abs() <= ROC_TOLERANCE, "instance {case}: auc(pos) + auc(neg) = {}", a + a_swap);
        ensure!((a - a_both).abs() <= ROC_TOLERANCE, "instance {case}: double flip changed auc {a} -> {a_both}");
    }
    let labels = [0, 0, 0, 1, 1, 1];
    let perfect = auc_of(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1], &labels, 0)?;
    ensure!(perfect == 1.0, "perfect ranking gave {perfect}");
    let constant = auc_of(&[0.5; 6], &labels, 0)?;
    ensure!(constant == 0.5, "constant scores gave {constant}");
    Ok(format!("{ROC_INSTANCES} instances, max |auc - concordance| {worst:e}; perfect 1.0; constant 0.5"))
}

// ---------------------------------------------------------------------------

pub const SPLIT_DATASETS: usize = 1000;

pub fn labeled_dataset(covid: usize, normal: usize) -> LabeledDataset {
    let px = PixelGrid::filled(1, 1, 1, 0).expect("1x1 grid");
    let rec = |label: Label, i: usize| ImageRecord {
        id: format!("{label}/{label}_{i:05}.png"),
        pixels: px.clone(),
        label,
    };
    LabeledDataset::new(
        (0..covid)
            .map(|i| rec(Label::Covid, i))
            .chain((0..normal).map(|i| rec(Label::Normal, i)))
            .collect(),
    )
    .expect("unique ids")
}

/// Disjoint, exhaustive, per-class train size within 1 of 80 %, same seed same plan.
pub fn check_split(dataset: &LabeledDataset, seed: u64) -> Result<(usize, usize), String> {
    let plan = stratified_split(dataset, Fraction::FOUR_FIFTHS, seed).map_err(|e| e.to_string())?;
    let train: HashSet<&str> = plan.train_ids.iter().map(String::as_str).collect();
    let test: HashSet<&str> = plan.test_ids.iter().map(String::as_str).collect();
    ensure!(train.len() == plan.train_ids.len() && test.len() == plan.test_ids.len(), "duplicate ids");
    ensure!(train.is_disjoint(&test), "partitions overlap");
    let all: HashSet<&str> = dataset.records().iter().map(|r| r.id.as_str()).collect();
    ensure!(train.union(&test).copied().collect::<HashSet<_>>() == all, "partitions are not exhaustive");
    for label in Label::ALL {
        let n = dataset.count(label) as f64;
        let in_train = plan.train_ids.iter().filter(|id| dataset.get(id).unwrap().label == label).count() as f64;
        ensure!((in_train - 0.8 * n).abs() <= 1.0, "{label}: {in_train} of {n} in train");
    }
    let again = stratified_split(dataset, Fraction::FOUR_FIFTHS, seed).map_err(|e| e.to_string())?;
    ensure!(again == plan, "same seed produced a different plan");
    Ok((plan.train_ids.len(), plan.test_ids.len()))
}

pub fn split_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..SPLIT_DATASETS {
        let d = labeled_dataset(rng.gen_range(1..=80), rng.gen_range(1..=80));
        check_split(&d, rng.gen()).map_err(|e| format!("dataset {case}: {e}"))?;
    }
    let mut sizes = Vec::new();
    for covid in [1000, 999, 1003, 1500, 250] {
        let got = check_split(&labeled_dataset(covid, 2000 - covid), 42)?;
        ensure!(got == (1600, 400), "{covid}/{} gave {got:?}", 2000 - covid);
        sizes.push(format!("{covid}/{}", 2000 - covid));
    }
    Ok(format!("{SPLIT_DATASETS} random datasets hold; 2000 images ({}) -> 1600/400", sizes.join(", ")))
}

// ---------------------------------------------------------------------------

/// Standard reflected CRC-32 (polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

/// Offset of the dims of the first tensor, found by walking the header by hand.
pub fn first_tensor_dims(bytes: &[u8]) -> (usize, String, Vec<u32>) {
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
    let mut pos = 12;
    for _ in 0..3 {
        pos += 4 + u32_at(pos) as usize;
    }
    let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
    let name = String::from_utf8(bytes[pos + 2..pos + 2 + name_len].to_vec()).unwrap();
    pos += 2 + name_len;
    let rank = bytes[pos] as usize;
    let dims = (0..rank).map(|i| u32_at(pos + 1 + 4 * i)).collect();
    (pos + 1, name, dims)
}

pub fn persistence() -> Outcome {
    let config = ArchitectureConfig::new(Family::Vgg16, DepthPreset::Desk);
    let bundle = init_random_base(&config, 42).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.xrtb");
    weights::save(&bundle, &path).map_err(|e| e.to_string())?;
    let loaded = weights::load(&path).map_err(|e| e.to_string())?;
    ensure!(loaded == bundle, "loaded bundle differs");
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    ensure!(weights::to_bytes(&loaded).map_err(|e| e.to_string())? == bytes, "re-saved bytes differ");
    for (layer, params) in &bundle.tensors {
        for (param, arr) in params {
            let other = loaded.get(layer, param).ok_or("tensor lost")?;
            ensure!(
                arr.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits()),
                "{layer}.{param} not bitwise equal"
            );
        }
    }
    ensure!(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()) == crc32(&bytes[..bytes.len() - 4]), "stored CRC");

    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"PK\x03\x04");
    let truncated = &bytes[..bytes.len() / 2];
    let mut flipped = bytes.clone();
    let at = bytes.len() - 10;
    flipped[at] ^= 0x40;
    let mut conflict = bytes.clone();
    let (dims_at, name, dims) = first_tensor_dims(&bytes);
    ensure!(dims.len() == 4 && dims[0] != dims[1], "unexpected first tensor {name} {dims:?}");
    conflict[dims_at..dims_at + 4].copy_from_slice(&dims[1].to_le_bytes());
    conflict[dims_at + 4..dims_at + 8].copy_from_slice(&dims[0].to_le_bytes());
    let body = conflict.len() - 4;
    let crc = crc32(&conflict[..body]);
    conflict[body..].copy_from_slice(&crc.to_le_bytes());

    let cases: [(&str, &[u8], fn(&WeightsError) -> bool); 4] = [
        ("bad magic", &bad_magic, |e| matches!(e, WeightsError::BadMagic(_))),
        ("truncation", truncated, |e| matches!(e, WeightsError::Truncated { .. })),
        ("crc mismatch", &flipped, |e| matches!(e, WeightsError::ChecksumMismatch { .. })),
        ("shape conflict", &conflict, |e| matches!(e, WeightsError::ShapeMismatch { .. })),
    ];
    let mut seen = Vec::new();
    for (what, data, expected) in cases {
        let fixture = dir.path().join(what.replace(' ', "_"));
        std::fs::write(&fixture, data).map_err(|e| e.to_string())?;
        match weights::load(&fixture) {
            Ok(_) => return Err(format!("{what}: fixture loaded")),
            Err(e) if expected(&e) => seen.push(std::mem::discriminant(&e)),
            Err(e) => return Err(format!("{what}: wrong error `{e}`")),
        }
    }
    ensure!(seen.iter().collect::<HashSet<_>>().len() == 4, "errors are not distinct");
    Ok(format!(
        "{} tensors, {} bytes round trip bitwise; 4 fixtures give 4 distinct errors",
        bundle.tensor_count(),
        bytes.len()
    ))
}
