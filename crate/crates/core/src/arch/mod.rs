//! Layer graphs for the three supported CNN families.
//!
//! A [`LayerGraph`] is a list of [`LayerSpec`]s in topological order: every
//! layer may only consume layers declared before it, which makes the graph
//! acyclic by construction. The canonical head (global average pool → dense
//! → softmax) is the trailing three layers; everything before it is the frozen
//! base.

mod config;
mod families;

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

pub use config::{parse_shape, ArchitectureConfig, DepthPreset, Family, WidthScale};
pub use families::{build, input_floor};

use crate::ops::{window_out, Pair};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArchError {
    #[error("duplicate layer id `{0}`")]
    DuplicateId(String),
    #[error("invalid layer id `{0}` (use ASCII letters, digits and `_`)")]
    InvalidId(String),
    #[error("layer `{layer}` references unknown or later layer `{input}`")]
    UnknownInput { layer: String, input: String },
    #[error("layer `{layer}` expects {expected} input(s), got {got}")]
    Arity { layer: String, expected: String, got: usize },
    #[error("graph must start with exactly one input layer")]
    InputLayer,
    #[error("shape conflict at layer `{layer}`: {detail}")]
    ShapeConflict { layer: String, detail: String },
    #[error("{family} needs input of at least {min}x{min} pixels, got {h}x{w}")]
    InputTooSmall { family: Family, h: usize, w: usize, min: usize },
    #[error("graph has not been shape-validated")]
    NotValidated,
    #[error("graph does not end in the canonical gap -> dense -> softmax head")]
    NoCanonicalHead,
    #[error("invalid architecture config: {0}")]
    Config(String),
}

/// Per-sample feature-map shape `(c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatureShape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input,
    Conv {
        out_channels: usize,
        kernel: Pair,
        stride: Pair,
        padding: Pair,
    },
    MaxPool {
        kernel: Pair,
        stride: Pair,
        padding: Pair,
    },
    AvgPool {
        kernel: Pair,
        stride: Pair,
        padding: Pair,
    },
    GlobalAvgPool,
    BatchNorm {
        eps: f32,
    },
    Relu,
    Dense {
        out_features: usize,
    },
    Softmax,
    Add,
    Concat,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Softmax => "softmax",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
        }
    }

    /// Conv and dense layers; these are what "N weighted layers" counts.
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Dense { .. })
    }

    fn arity(&self) -> (usize, Option<usize>) {
        match self {
            LayerKind::Input => (0, Some(0)),
            LayerKind::Add | LayerKind::Concat => (2, None),
            _ => (1, Some(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

/// Parameter counts for one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    /// Parameters updated during fine-tuning (head layers only).
    pub trainable: usize,
    /// Every layer in graph order; parameter-free layers map to 0.
    pub per_layer: IndexMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    layers: Vec<LayerSpec>,
    head_start: Option<usize>,
    shapes: Option<Vec<FeatureShape>>,
}

impl LayerGraph {
    /// Checks ids, references and arity. Shapes are not inferred here; see
    /// [`LayerGraph::validate_shapes`].
    pub fn from_layers(layers: Vec<LayerSpec>) -> Result<Self, ArchError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, l) in layers.iter().enumerate() {
            if l.id.is_empty() || !l.id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                return Err(ArchError::InvalidId(l.id.clone()));
            }
            if seen.insert(&l.id, i).is_some() {
                return Err(ArchError::DuplicateId(l.id.clone()));
            }
            let is_input = matches!(l.kind, LayerKind::Input);
            if is_input != (i == 0) {
                return Err(ArchError::InputLayer);
            }
            let (min, max) = l.kind.arity();
            let got = l.inputs.len();
            if got < min || max.is_some_and(|m| got > m) {
                let expected = match max {
                    Some(m) if m == min => m.to_string(),
                    Some(m) => format!("{min}..={m}"),
                    None => format!("at least {min}"),
                };
                return Err(ArchError::Arity {
                    layer: l.id.clone(),
                    expected,
                    got,
                });
            }
            for input in &l.inputs {
                match seen.get(input.as_str()) {
                    Some(&j) if j < i => {}
                    _ => {
                        return Err(ArchError::UnknownInput {
                            layer: l.id.clone(),
                            input: input.clone(),
                        })
                    }
                }
            }
        }
        if layers.is_empty() {
            return Err(ArchError::InputLayer);
        }
        let head_start = detect_head(&layers);
        Ok(Self {
            layers,
            head_start,
            shapes: None,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Index of the first head layer, if the graph ends in the canonical head.
    pub fn head_start(&self) -> Option<usize> {
        self.head_start
    }

    pub fn is_head_layer(&self, index: usize) -> bool {
        self.head_start.is_some_and(|h| index >= h)
    }

    pub fn shapes(&self) -> Option<&[FeatureShape]> {
        self.shapes.as_deref()
    }

    pub fn shape_of(&self, id: &str) -> Option<FeatureShape> {
        let i = self.position(id)?;
        self.shapes.as_ref().map(|s| s[i])
    }

    pub fn input_shape(&self) -> Option<FeatureShape> {
        self.shapes.as_ref().map(|s| s[0])
    }

    pub fn output_shape(&self) -> Option<FeatureShape> {
        self.shapes.as_ref().and_then(|s| s.last().copied())
    }

    pub fn weighted_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_weighted()).count()
    }

    /// Infers every layer's output shape for a given input.
    pub fn validate_shapes(&self, input: FeatureShape) -> Result<LayerGraph, ArchError> {
        let mut shapes: Vec<FeatureShape> = Vec::with_capacity(self.layers.len());
        let index: HashMap<&str, usize> = self.layers.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();
        for l in &self.layers {
            let ins: Vec<FeatureShape> = l.inputs.iter().map(|id| shapes[index[id.as_str()]]).collect();
            let conflict = |detail: String| ArchError::ShapeConflict {
                layer: l.id.clone(),
                detail,
            };
            let out = match &l.kind {
                LayerKind::Input => {
                    if input.numel() == 0 {
                        return Err(conflict(format!("empty input {input}")));
                    }
                    input
                }
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if *out_channels == 0 {
                        return Err(conflict("zero output channels".into()));
                    }
                    let (h, w) = window(ins[0], *kernel, *stride, *padding).map_err(conflict)?;
                    FeatureShape::new(*out_channels, h, w)
                }
                LayerKind::MaxPool { kernel, stride, padding } | LayerKind::AvgPool { kernel, stride, padding } => {
                    if padding.0 >= kernel.0 || padding.1 >= kernel.1 {
                        return Err(conflict("pool padding must be smaller than the kernel".into()));
                    }
                    let (h, w) = window(ins[0], *kernel, *stride, *padding).map_err(conflict)?;
                    FeatureShape::new(ins[0].c, h, w)
                }
                LayerKind::GlobalAvgPool => {
                    if ins[0].h == 0 || ins[0].w == 0 {
                        return Err(conflict("empty spatial extent".into()));
                    }
                    FeatureShape::new(ins[0].c, 1, 1)
                }
                LayerKind::BatchNorm { eps } => {
                    if !(*eps > 0.0) {
                        return Err(conflict(format!("batchnorm eps must be positive, got {eps}")));
                    }
                    ins[0]
                }
                LayerKind::Relu | LayerKind::Softmax => ins[0],
                LayerKind::Dense { out_features } => {
                    if *out_features == 0 {
                        return Err(conflict("zero output features".into()));
                    }
                    FeatureShape::new(*out_features, 1, 1)
                }
                LayerKind::Add => {
                    if let Some(bad) = ins.iter().find(|s| **s != ins[0]) {
                        return Err(conflict(format!("add inputs differ: {} vs {}", ins[0], bad)));
                    }
                    ins[0]
                }
                LayerKind::Concat => {
                    if let Some(bad) = ins.iter().find(|s| (s.h, s.w) != (ins[0].h, ins[0].w)) {
                        return Err(conflict(format!("concat spatial extents differ: {} vs {}", ins[0], bad)));
                    }
                    FeatureShape::new(ins.iter().map(|s| s.c).sum(), ins[0].h, ins[0].w)
                }
            };
            shapes.push(out);
        }
        Ok(LayerGraph {
            layers: self.layers.clone(),
            head_start: self.head_start,
            shapes: Some(shapes),
        })
    }

    /// Named parameter arrays and their shapes, per weighted layer, in graph order.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Vec<(&'static str, Vec<usize>)>)>, ArchError> {
        let shapes = self.shapes.as_ref().ok_or(ArchError::NotValidated)?;
        let mut out = Vec::new();
        for l in &self.layers {
            let input = |k: usize| shapes[self.position(&l.inputs[k]).expect("validated")];
            let params = match &l.kind {
                LayerKind::Conv {
                    out_channels, kernel, ..
                } => vec![
                    ("weight", vec![*out_channels, input(0).c, kernel.0, kernel.1]),
                    ("bias", vec![*out_channels]),
                ],
                LayerKind::Dense { out_features } => vec![
                    ("weight", vec![input(0).numel(), *out_features]),
                    ("bias", vec![*out_features]),
                ],
                LayerKind::BatchNorm { .. } => {
                    let c = input(0).c;
                    vec![
                        ("gamma", vec![c]),
                        ("beta", vec![c]),
                        ("running_mean", vec![c]),
                        ("running_var", vec![c]),
                    ]
                }
                _ => continue,
            };
            out.push((l.id.clone(), params));
        }
        Ok(out)
    }

    /// Conv: `(k_h·k_w·c_in + 1)·c_out`; dense: `(f + 1)·k`; batchnorm: `4·c`
    /// (gamma, beta and the two running statistics). Only head layers are
    /// counted as trainable.
    pub fn count_parameters(&self) -> Result<ParamCount, ArchError> {
        let per_array = self.parameter_shapes()?;
        let mut by_layer: HashMap<String, usize> = per_array
            .into_iter()
            .map(|(id, arrays)| (id, arrays.iter().map(|(_, s)| s.iter().product::<usize>()).sum()))
            .collect();
        let mut per_layer = IndexMap::with_capacity(self.layers.len());
        let mut total = 0;
        let mut trainable = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let n = by_layer.remove(&l.id).unwrap_or(0);
            total += n;
            if self.is_head_layer(i) {
                trainable += n;
            }
            per_layer.insert(l.id.clone(), n);
        }
        Ok(ParamCount {
            total,
            trainable,
            per_layer,
        })
    }

    /// Splits off the canonical head. The base keeps the shape annotations of
    /// its layers; the head is returned as the trailing layer specs.
    pub fn split_base_head(&self) -> Result<(LayerGraph, Vec<LayerSpec>), ArchError> {
        if self.shapes.is_none() {
            return Err(ArchError::NotValidated);
        }
        let h = self.head_start.ok_or(ArchError::NoCanonicalHead)?;
        let base = LayerGraph {
            layers: self.layers[..h].to_vec(),
            head_start: None,
            shapes: self.shapes.as_ref().map(|s| s[..h].to_vec()),
        };
        Ok((base, self.layers[h..].to_vec()))
    }

    /// Inverse of [`LayerGraph::split_base_head`].
    pub fn join(base: &LayerGraph, head: &[LayerSpec]) -> Result<LayerGraph, ArchError> {
        let mut layers = base.layers.clone();
        layers.extend_from_slice(head);
        let g = LayerGraph::from_layers(layers)?;
        match base.input_shape() {
            Some(input) => g.validate_shapes(input),
            None => Ok(g),
        }
    }

    /// Multi-line human-readable summary: id, kind, output shape, parameters.
    pub fn summary(&self) -> Result<String, ArchError> {
        let counts = self.count_parameters()?;
        let shapes = self.shapes.as_ref().ok_or(ArchError::NotValidated)?;
        let mut s = String::new();
        for (i, l) in self.layers.iter().enumerate() {
            let marker = if self.is_head_layer(i) { "*" } else { " " };
            s.push_str(&format!(
                "{marker} {:<28} {:<10} {:>14} {:>12}\n",
                l.id,
                l.kind.name(),
                shapes[i].to_string(),
                counts.per_layer[&l.id]
            ));
        }
        s.push_str(&format!(
            "total parameters: {}\ntrainable (head): {}\nweighted layers: {}\n",
            counts.total,
            counts.trainable,
            self.weighted_layer_count()
        ));
        Ok(s)
    }
}

fn window(input: FeatureShape, kernel: Pair, stride: Pair, padding: Pair) -> Result<(usize, usize), String> {
    if stride.0 == 0 || stride.1 == 0 {
        return Err("stride must be >= 1".into());
    }
    let h = window_out(input.h, kernel.0, stride.0, padding.0);
    let w = window_out(input.w, kernel.1, stride.1, padding.1);
    match (h, w) {
        (Some(h), Some(w)) => Ok((h, w)),
        _ => Err(format!(
            "kernel {}x{} (padding {}x{}) does not fit input {}",
            kernel.0, kernel.1, padding.0, padding.1, input
        )),
    }
}

fn detect_head(layers: &[LayerSpec]) -> Option<usize> {
    let n = layers.len();
    if n < 4 {
        return None;
    }
    let (gap, dense, soft) = (&layers[n - 3], &layers[n - 2], &layers[n - 1]);
    let chained = matches!(gap.kind, LayerKind::GlobalAvgPool)
        && matches!(dense.kind, LayerKind::Dense { .. })
        && matches!(soft.kind, LayerKind::Softmax)
        && dense.inputs == [gap.id.clone()]
        && soft.inputs == [dense.id.clone()];
    // nothing in the base may consume head outputs
    let escapes = layers[..n - 3]
        .iter()
        .any(|l| l.inputs.iter().any(|i| *i == gap.id || *i == dense.id));
    (chained && !escapes).then_some(n - 3)
}

/// Incremental graph construction; each call returns the new layer's id.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    layers: Vec<LayerSpec>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        let mut b = Self::default();
        b.layers.push(LayerSpec {
            id: "input".into(),
            kind: LayerKind::Input,
            inputs: vec![],
        });
        b
    }

    pub fn input_id(&self) -> String {
        self.layers[0].id.clone()
    }

    pub fn push(&mut self, id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> String {
        let id = id.into();
        self.layers.push(LayerSpec {
            id: id.clone(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        id
    }

    pub fn conv(&mut self, id: &str, input: &str, out_channels: usize, kernel: Pair, stride: Pair, padding: Pair) -> String {
        self.push(
            id,
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            },
            &[input],
        )
    }

    pub fn relu(&mut self, id: &str, input: &str) -> String {
        self.push(id, LayerKind::Relu, &[input])
    }

    pub fn batchnorm(&mut self, id: &str, input: &str, eps: f32) -> String {
        self.push(id, LayerKind::BatchNorm { eps }, &[input])
    }

    pub fn max_pool(&mut self, id: &str, input: &str, kernel: Pair, stride: Pair, padding: Pair) -> String {
        self.push(id, LayerKind::MaxPool { kernel, stride, padding }, &[input])
    }

    pub fn avg_pool(&mut self, id: &str, input: &str, kernel: Pair, stride: Pair, padding: Pair) -> String {
        self.push(id, LayerKind::AvgPool { kernel, stride, padding }, &[input])
    }

    pub fn add(&mut self, id: &str, inputs: &[&str]) -> String {
        self.push(id, LayerKind::Add, inputs)
    }

    pub fn concat(&mut self, id: &str, inputs: &[&str]) -> String {
        self.push(id, LayerKind::Concat, inputs)
    }

    /// Appends gap → dense → softmax and finalizes the graph.
    pub fn finish_with_head(mut self, body_out: &str, num_classes: usize) -> Result<LayerGraph, ArchError> {
        let gap = self.push("head_gap", LayerKind::GlobalAvgPool, &[body_out]);
        let dense = self.push(
            "head_dense",
            LayerKind::Dense {
                out_features: num_classes,
            },
            &[&gap],
        );
        self.push("head_softmax", LayerKind::Softmax, &[&dense]);
        self.finish()
    }

    pub fn finish(self) -> Result<LayerGraph, ArchError> {
        LayerGraph::from_layers(self.layers)
    }
}
