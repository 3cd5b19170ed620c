//! Transfer learning: frozen-base feature extraction and SGD training of the
//! dense head.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{augment, decode_any, preprocess, AugmentationPolicy, DataError, ImageRecord, LabeledDataset, Partition, PixelGrid, SplitPlan};
use crate::head::{argmax, cross_entropy, head_backward, one_hot, softmax};
use crate::network::{head_probabilities, Network, NetworkError};
use crate::tensor::{Matrix, TensorError};
use crate::weights::{glorot_bound, ModelBundle, Preprocessing, WeightArray, WeightsError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub seed: u64,
    pub augmentation: AugmentationPolicy,
    /// Reuse extracted features across epochs. Honoured only when the
    /// augmentation policy is the identity.
    pub feature_cache: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 42,
            augmentation: AugmentationPolicy::default(),
            feature_cache: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        self.augmentation.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainHistory {
    /// Exponential moving average of the train loss over a window of `w`
    /// epochs (`alpha = 2/(w+1)`), seeded with the first epoch's loss.
    pub fn loss_ema(&self, window: usize) -> Vec<f64> {
        let alpha = 2.0 / (window as f64 + 1.0);
        let mut out = Vec::with_capacity(self.epochs.len());
        for e in &self.epochs {
            let next = match out.last() {
                None => e.train_loss,
                Some(prev) => alpha * e.train_loss + (1.0 - alpha) * prev,
            };
            out.push(next);
        }
        out
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_accuracy)
    }

    /// `epoch,train_loss,train_acc,test_loss,test_acc`; absent test metrics are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("epoch,train_loss,train_acc,test_loss,test_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                opt(e.test_loss),
                opt(e.test_accuracy)
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Dense head parameters: weights `(f, k)` and bias `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub weights: Matrix,
    pub bias: Vec<f32>,
}

impl HeadWeights {
    /// Uniform in `±sqrt(6/(f + k))`, zero bias.
    pub fn glorot(f: usize, k: usize, seed: u64) -> Self {
        let bound = glorot_bound(&[f, k]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..f * k).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            weights: Matrix::new(f, k, data).expect("sized"),
            bias: vec![0.0; k],
        }
    }

    pub fn probabilities(&self, features: &Matrix) -> Result<Matrix, TensorError> {
        head_probabilities(features, &self.weights, &self.bias)
    }

    /// Mean cross-entropy and accuracy on labelled features.
    pub fn evaluate(&self, features: &Matrix, labels: &[usize]) -> Result<(f64, f64), TensorError> {
        let probs = self.probabilities(features)?;
        let loss = cross_entropy(&probs, &one_hot(labels, self.bias.len())?)?;
        let correct = (0..probs.rows()).filter(|&r| argmax(probs.row(r)) == labels[r]).count();
        Ok((loss, correct as f64 / labels.len().max(1) as f64))
    }
}

/// Pooled base features for each record, one row per record.
pub fn extract_features(net: &Network, prep: &Preprocessing, records: &[&ImageRecord]) -> Result<Matrix, TrainError> {
    let rows: Vec<Vec<f32>> = records
        .par_iter()
        .map(|r| -> Result<Vec<f32>, TrainError> {
            let x = preprocess(&r.pixels, prep)?;
            Ok(net.features(&x)?.into_data())
        })
        .collect::<Result<_, _>>()?;
    if rows.is_empty() {
        let f = net.graph().head_start().and_then(|h| net.graph().shapes().map(|s| s[h].c)).unwrap_or(0);
        return Ok(Matrix::zeros(0, f));
    }
    Ok(Matrix::from_rows(&rows)?)
}

fn check_labels(labels: &[usize], k: usize) -> Result<(), TrainError> {
    for c in 0..k {
        if !labels.contains(&c) {
            return Err(TrainError::Degenerate(format!("class {c} has no training samples")));
        }
    }
    Ok(())
}

/// Per-feature affine map `z = (x − mean)/scale` used to precondition SGD.
#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &Matrix) -> Self {
        let (n, f) = (x.rows() as f64, x.cols());
        let mut mean = vec![0.0f64; f];
        for r in 0..x.rows() {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; f];
        for r in 0..x.rows() {
            for ((s, &v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (f64::from(v) - m).powi(2);
            }
        }
        let scale = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let f = x.cols();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(f.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = ((f64::from(*v) - m) / s) as f32;
            }
        }
        out
    }

    /// Head on raw features → equivalent head on standardized features.
    fn to_standard(&self, head: &HeadWeights) -> HeadWeights {
        let f = head.weights.rows();
        let mut w = head.weights.clone();
        let mut b: Vec<f64> = head.bias.iter().map(|&v| f64::from(v)).collect();
        for i in 0..f {
            for (j, bj) in b.iter_mut().enumerate() {
                let wij = f64::from(head.weights.get(i, j));
                *bj += self.mean[i] * wij;
                w.set(i, j, (wij * self.scale[i]) as f32);
            }
        }
        HeadWeights {
            weights: w,
            bias: b.into_iter().map(|v| v as f32).collect(),
        }
    }

    /// Inverse of [`Standardizer::to_standard`].
    fn to_raw(&self, head: &HeadWeights) -> HeadWeights {
        let f = head.weights.rows();
        let mut w = head.weights.clone();
        let mut b: Vec<f64> = head.bias.iter().map(|&v| f64::from(v)).collect();
        for i in 0..f {
            for (j, bj) in b.iter_mut().enumerate() {
                let wij = f64::from(head.weights.get(i, j)) / self.scale[i];
                *bj -= self.mean[i] * wij;
                w.set(i, j, wij as f32);
            }
        }
        HeadWeights {
            weights: w,
            bias: b.into_iter().map(|v| v as f32).collect(),
        }
    }
}

/// Mini-batch SGD with momentum on the mean cross-entropy, starting from `init`.
///
/// `features_for(epoch)` supplies the training features for each epoch, so
/// online augmentation can change them while labels stay fixed. Updates are
/// taken on standardized features; the returned head is folded back to act on
/// raw features. After every epoch the train loss/accuracy are measured with
/// the updated head on `train_eval` (the un-augmented train features) when
/// given, else on that epoch's features; test metrics likewise on `test`.
pub fn sgd_train(
    mut features_for: impl FnMut(usize) -> Result<Matrix, TrainError>,
    labels: &[usize],
    train_eval: Option<&Matrix>,
    test: Option<(&Matrix, &[usize])>,
    init: HeadWeights,
    config: &TrainConfig,
) -> Result<(HeadWeights, TrainHistory), TrainError> {
    config.validate()?;
    let k = init.bias.len();
    check_labels(labels, k)?;
    let mut standardizer: Option<Standardizer> = None;
    let mut head = init.clone();
    let mut raw = init;
    let mut vel_w = vec![0.0f32; head.weights.data().len()];
    let mut vel_b = vec![0.0f32; k];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut history = TrainHistory::default();
    let (lr, mu) = (config.learning_rate, config.momentum);
    for epoch in 0..config.epochs {
        let feats = features_for(epoch)?;
        if feats.rows() != labels.len() {
            return Err(TrainError::Degenerate(format!("{} feature rows for {} labels", feats.rows(), labels.len())));
        }
        if !feats.data().iter().all(|v| v.is_finite()) {
            return Err(TrainError::Degenerate("non-finite features".into()));
        }
        let std = standardizer.get_or_insert_with(|| {
            let s = Standardizer::fit(train_eval.unwrap_or(&feats));
            head = s.to_standard(&raw);
            s
        });
        let z = std.apply(&feats);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x = z.select_rows(batch);
            let y = one_hot(&batch.iter().map(|&i| labels[i]).collect::<Vec<_>>(), k)?;
            let g = head_backward(&x, &y, &head.weights, &head.bias)?;
            for ((w, v), d) in head.weights.data_mut().iter_mut().zip(&mut vel_w).zip(g.d_weights.data()) {
                *v = mu * *v + d;
                *w -= lr * *v;
            }
            for ((b, v), d) in head.bias.iter_mut().zip(&mut vel_b).zip(&g.d_bias) {
                *v = mu * *v + d;
                *b -= lr * *v;
            }
        }
        raw = std.to_raw(&head);
        let (train_loss, train_accuracy) = raw.evaluate(train_eval.unwrap_or(&feats), labels)?;
        let (test_loss, test_accuracy) = match test {
            Some((tf, tl)) if !tl.is_empty() => {
                let (l, a) = raw.evaluate(tf, tl)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        history.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            train_accuracy,
            test_loss,
            test_accuracy,
        });
    }
    Ok((raw, history))
}

/// Trains a fresh `k`-class head on fixed features. The initial weights are
/// drawn from `config.seed`.
pub fn train_head(features: &Matrix, labels: &[usize], k: usize, config: &TrainConfig) -> Result<(HeadWeights, TrainHistory), TrainError> {
    if k < 2 {
        return Err(TrainError::Degenerate("need at least two classes".into()));
    }
    let init = HeadWeights::glorot(features.cols(), k, config.seed);
    sgd_train(|_| Ok(features.clone()), labels, None, None, init, config)
}

/// Receives the ids of every set of records whose features are extracted.
pub type ExtractionHook<'a> = &'a mut dyn FnMut(Partition, &[String]);

/// Fits the bundle's head on the train partition of `split` with the base
/// frozen. Test features are only used to report per-epoch metrics.
pub fn fine_tune(
    bundle: &ModelBundle,
    dataset: &LabeledDataset,
    split: &SplitPlan,
    config: &TrainConfig,
    mut hook: Option<ExtractionHook<'_>>,
) -> Result<(ModelBundle, TrainHistory), TrainError> {
    config.validate()?;
    let net = Network::from_bundle(bundle)?;
    let (head_w, head_b) = net
        .head()
        .ok_or_else(|| TrainError::Degenerate("architecture has no trainable head".into()))?;
    let init = HeadWeights {
        weights: head_w.clone(),
        bias: head_b.to_vec(),
    };
    let head_id = net.graph().layers()[net.graph().head_start().expect("head present") + 1].id.clone();
    let label_index = |r: &ImageRecord| {
        bundle
            .class_index(r.label.as_str())
            .ok_or_else(|| TrainError::Degenerate(format!("label `{}` is not a class of this model", r.label)))
    };

    let train = dataset.select(&split.train_ids)?;
    let test = dataset.select(&split.test_ids)?;
    let train_labels: Vec<usize> = train.iter().map(|r| label_index(r)).collect::<Result<_, _>>()?;
    let test_labels: Vec<usize> = test.iter().map(|r| label_index(r)).collect::<Result<_, _>>()?;
    let prep = &bundle.preprocessing;

    let mut notify = |part: Partition, recs: &[&ImageRecord]| {
        if let Some(h) = hook.as_mut() {
            h(part, &recs.iter().map(|r| r.id.clone()).collect::<Vec<_>>());
        }
    };

    let test_features = if test.is_empty() {
        None
    } else {
        notify(Partition::Test, &test);
        Some(extract_features(&net, prep, &test)?)
    };

    let policy = config.augmentation;
    let cache = config.feature_cache && policy.is_identity();
    let mut cached: Option<Matrix> = None;
    let clean_train = if policy.is_identity() {
        None
    } else {
        notify(Partition::Train, &train);
        Some(extract_features(&net, prep, &train)?)
    };
    let n = train.len() as u64;
    let features_for = |epoch: usize| -> Result<Matrix, TrainError> {
        if let Some(f) = &cached {
            return Ok(f.clone());
        }
        notify(Partition::Train, &train);
        let f = if policy.is_identity() {
            extract_features(&net, prep, &train)?
        } else {
            let augmented: Vec<ImageRecord> = train
                .par_iter()
                .enumerate()
                .map(|(i, r)| augment(r, &policy, epoch as u64 * n + i as u64))
                .collect();
            extract_features(&net, prep, &augmented.iter().collect::<Vec<_>>())?
        };
        if cache {
            cached = Some(f.clone());
        }
        Ok(f)
    };
    let test_pair = test_features.as_ref().map(|f| (f, test_labels.as_slice()));
    let (head, history) = sgd_train(features_for, &train_labels, clean_train.as_ref(), test_pair, init, config)?;

    let mut out = bundle.clone();
    let layer = out.tensors.get_mut(&head_id).expect("head weights present");
    layer.insert(
        "weight".into(),
        WeightArray::new(vec![head.weights.rows(), head.weights.cols()], head.weights.into_data())?,
    );
    layer.insert("bias".into(), WeightArray::new(vec![head.bias.len()], head.bias)?);
    Ok((out, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub label: String,
    pub probabilities: Vec<f32>,
}

impl Prediction {
    /// Probability of class 0, the positive class.
    pub fn positive_probability(&self) -> f32 {
        self.probabilities[0]
    }
}

/// A loaded model ready to classify images. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct Classifier {
    net: Network,
    preprocessing: Preprocessing,
    labels: Vec<String>,
}

impl Classifier {
    pub fn new(bundle: &ModelBundle) -> Result<Self, TrainError> {
        let net = Network::from_bundle(bundle)?;
        if net.head().is_none() {
            return Err(TrainError::Degenerate("architecture has no classification head".into()));
        }
        Ok(Self {
            net,
            preprocessing: bundle.preprocessing.clone(),
            labels: bundle.class_labels.clone(),
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Label = argmax of the probabilities, ties toward the lowest index.
    pub fn predict(&self, pixels: &PixelGrid) -> Result<Prediction, TrainError> {
        self.predict_with_threshold(pixels, None)
    }

    /// With a threshold, class 0 is chosen when its probability reaches the
    /// threshold; otherwise the argmax of the remaining classes.
    pub fn predict_with_threshold(&self, pixels: &PixelGrid, threshold: Option<f32>) -> Result<Prediction, TrainError> {
        let x = preprocess(pixels, &self.preprocessing)?;
        let feats = self.net.features(&x)?;
        let (w, b) = self.net.head().expect("checked at construction");
        let probs = softmax(&crate::head::dense_matrix(&feats, w, b)?).into_data();
        let class_index = match threshold {
            None => argmax(&probs),
            Some(t) if probs[0] >= t => 0,
            Some(_) => 1 + argmax(&probs[1..]),
        };
        Ok(Prediction {
            class_index,
            label: self.labels[class_index].clone(),
            probabilities: probs,
        })
    }

    /// Decodes PGM, PPM or PNG bytes, then predicts.
    pub fn predict_bytes(&self, bytes: &[u8], threshold: Option<f32>) -> Result<Prediction, TrainError> {
        self.predict_with_threshold(&decode_any(bytes)?, threshold)
    }
}
