//! Executes a validated [`LayerGraph`] with concrete weights.

use indexmap::IndexMap;
use thiserror::Error;

use crate::arch::{ArchError, LayerGraph, LayerKind};
use crate::head::{dense_matrix, softmax};
use crate::ops::{
    batchnorm_inference, conv2d_forward, global_avg_pool, merge, pool2d_forward, relu_in_place, BatchNormParams, ConvParams, MergeKind,
    PoolKind, PoolParams,
};
use crate::tensor::{Matrix, Tensor, TensorError};
use crate::weights::{LayerWeights, ModelBundle, WeightArray, WeightsError};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: TensorError,
    },
    #[error("missing weights `{layer}.{param}`")]
    MissingWeights { layer: String, param: String },
    #[error("weights `{layer}.{param}` have shape {got:?}, expected {expected:?}")]
    WeightShape {
        layer: String,
        param: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("input has shape {got:?}, network expects (n, {c}, {h}, {w})", c = expected.0, h = expected.1, w = expected.2)]
    Input { expected: (usize, usize, usize), got: [usize; 4] },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Conv(ConvParams),
    Pool(PoolParams),
    Gap,
    BatchNorm(BatchNormParams),
    Relu,
    Dense { weights: Matrix, bias: Vec<f32> },
    Softmax,
    Merge(MergeKind),
}

/// A graph bound to its weights, ready for inference.
#[derive(Debug, Clone)]
pub struct Network {
    graph: LayerGraph,
    ops: Vec<Op>,
    inputs: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(graph: &LayerGraph, tensors: &IndexMap<String, LayerWeights>) -> Result<Self, NetworkError> {
        if graph.shapes().is_none() {
            return Err(ArchError::NotValidated.into());
        }
        let expected: IndexMap<String, Vec<(&'static str, Vec<usize>)>> = graph.parameter_shapes()?.into_iter().collect();
        let mut ops = Vec::with_capacity(graph.len());
        let mut inputs = Vec::with_capacity(graph.len());
        for l in graph.layers() {
            inputs.push(l.inputs.iter().map(|i| graph.position(i).expect("validated graph")).collect());
            let fetch = |param: &str| -> Result<&WeightArray, NetworkError> {
                let shape = &expected[&l.id].iter().find(|(p, _)| *p == param).expect("known parameter").1;
                let arr = tensors
                    .get(&l.id)
                    .and_then(|m| m.get(param))
                    .ok_or_else(|| NetworkError::MissingWeights {
                        layer: l.id.clone(),
                        param: param.into(),
                    })?;
                if &arr.shape != shape {
                    return Err(NetworkError::WeightShape {
                        layer: l.id.clone(),
                        param: param.into(),
                        expected: shape.clone(),
                        got: arr.shape.clone(),
                    });
                }
                Ok(arr)
            };
            let wrap = |source| NetworkError::Layer {
                layer: l.id.clone(),
                source,
            };
            let op = match l.kind {
                LayerKind::Input => Op::Input,
                LayerKind::Conv { stride, padding, .. } => {
                    let w = fetch("weight")?;
                    let s = &w.shape;
                    let weights = Tensor::new([s[0], s[1], s[2], s[3]], w.data.clone()).map_err(wrap)?;
                    Op::Conv(ConvParams::new(weights, fetch("bias")?.data.clone(), stride, padding).map_err(wrap)?)
                }
                LayerKind::MaxPool { kernel, stride, padding } => {
                    Op::Pool(PoolParams::new(PoolKind::Max, kernel, stride).with_padding(padding))
                }
                LayerKind::AvgPool { kernel, stride, padding } => {
                    Op::Pool(PoolParams::new(PoolKind::Avg, kernel, stride).with_padding(padding))
                }
                LayerKind::GlobalAvgPool => Op::Gap,
                LayerKind::BatchNorm { eps } => Op::BatchNorm(BatchNormParams {
                    gamma: fetch("gamma")?.data.clone(),
                    beta: fetch("beta")?.data.clone(),
                    mean: fetch("running_mean")?.data.clone(),
                    var: fetch("running_var")?.data.clone(),
                    eps,
                }),
                LayerKind::Relu => Op::Relu,
                LayerKind::Dense { .. } => {
                    let w = fetch("weight")?;
                    Op::Dense {
                        weights: Matrix::new(w.shape[0], w.shape[1], w.data.clone()).map_err(wrap)?,
                        bias: fetch("bias")?.data.clone(),
                    }
                }
                LayerKind::Softmax => Op::Softmax,
                LayerKind::Add => Op::Merge(MergeKind::Add),
                LayerKind::Concat => Op::Merge(MergeKind::ConcatChannels),
            };
            ops.push(op);
        }
        Ok(Self {
            graph: graph.clone(),
            ops,
            inputs,
        })
    }

    /// Validates the bundle and binds the full graph, head included.
    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self, NetworkError> {
        let graph = bundle.validate()?;
        Network::new(&graph, &bundle.tensors)
    }

    pub fn graph(&self) -> &LayerGraph {
        &self.graph
    }

    /// Output of the last layer.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NetworkError> {
        self.run(input, self.ops.len())
    }

    /// Output of layer `end - 1`, evaluating only layers `0..end`.
    pub fn run(&self, input: &Tensor, end: usize) -> Result<Tensor, NetworkError> {
        let want = self.graph.input_shape().expect("validated graph");
        let s = input.shape();
        if s[1] != want.c || s[2] != want.h || s[3] != want.w || s[0] == 0 {
            return Err(NetworkError::Input {
                expected: (want.c, want.h, want.w),
                got: s,
            });
        }
        let end = end.clamp(1, self.ops.len());
        let mut remaining = vec![0usize; end];
        for ins in &self.inputs[..end] {
            for &j in ins {
                remaining[j] += 1;
            }
        }
        remaining[end - 1] += 1;
        let mut values: Vec<Option<Tensor>> = vec![None; end];
        for i in 0..end {
            let id = &self.graph.layers()[i].id;
            let wrap = |source| NetworkError::Layer { layer: id.clone(), source };
            let ins = &self.inputs[i];
            // Single-input layers take ownership of their input once no other
            // consumer needs it.
            let mut take = |j: usize, values: &mut Vec<Option<Tensor>>| -> Tensor {
                remaining[j] -= 1;
                if remaining[j] == 0 {
                    values[j].take().expect("value computed")
                } else {
                    values[j].clone().expect("value computed")
                }
            };
            let out = match &self.ops[i] {
                Op::Input => input.clone(),
                Op::Relu => {
                    let mut t = take(ins[0], &mut values);
                    relu_in_place(&mut t);
                    t
                }
                Op::Conv(p) => conv2d_forward(&take(ins[0], &mut values), p).map_err(wrap)?,
                Op::Pool(p) => pool2d_forward(&take(ins[0], &mut values), *p).map_err(wrap)?,
                Op::Gap => global_avg_pool(&take(ins[0], &mut values)).map_err(wrap)?,
                Op::BatchNorm(p) => batchnorm_inference(&take(ins[0], &mut values), p).map_err(wrap)?,
                Op::Dense { weights, bias } => dense_matrix(&take(ins[0], &mut values).flatten(), weights, bias)
                    .map_err(wrap)?
                    .into_tensor(),
                Op::Softmax => softmax(&take(ins[0], &mut values).flatten()).into_tensor(),
                Op::Merge(kind) => {
                    let parts: Vec<Tensor> = ins.iter().map(|&j| take(j, &mut values)).collect();
                    let refs: Vec<&Tensor> = parts.iter().collect();
                    merge(&refs, *kind).map_err(wrap)?
                }
            };
            values[i] = Some(out);
        }
        Ok(values[end - 1].take().expect("final value"))
    }

    /// Pooled features `(n, f)`: the output of the head's global average pool,
    /// or the global average of the last layer when there is no head.
    pub fn features(&self, input: &Tensor) -> Result<Matrix, NetworkError> {
        match self.graph.head_start() {
            Some(h) => Ok(self.run(input, h + 1)?.flatten()),
            None => {
                let out = self.forward(input)?;
                let id = self.graph.layers().last().map(|l| l.id.clone()).unwrap_or_default();
                Ok(global_avg_pool(&out)
                    .map_err(|source| NetworkError::Layer { layer: id, source })?
                    .flatten())
            }
        }
    }

    /// Head dense weights and bias, if the graph has a canonical head.
    pub fn head(&self) -> Option<(&Matrix, &[f32])> {
        let h = self.graph.head_start()?;
        match &self.ops[h + 1] {
            Op::Dense { weights, bias } => Some((weights, bias)),
            _ => None,
        }
    }

    /// Replaces the head dense parameters; shapes must match.
    pub fn set_head(&mut self, weights: Matrix, bias: Vec<f32>) -> Result<(), NetworkError> {
        let h = self.graph.head_start().ok_or(ArchError::NoCanonicalHead)?;
        let id = self.graph.layers()[h + 1].id.clone();
        match &mut self.ops[h + 1] {
            Op::Dense { weights: w, bias: b } => {
                if w.rows() != weights.rows() || w.cols() != weights.cols() || b.len() != bias.len() {
                    return Err(NetworkError::WeightShape {
                        layer: id,
                        param: "weight".into(),
                        expected: vec![w.rows(), w.cols()],
                        got: vec![weights.rows(), weights.cols()],
                    });
                }
                *w = weights;
                *b = bias;
                Ok(())
            }
            _ => Err(ArchError::NoCanonicalHead.into()),
        }
    }
}

/// Probabilities from pooled features through a dense + softmax head.
pub fn head_probabilities(features: &Matrix, weights: &Matrix, bias: &[f32]) -> Result<Matrix, TensorError> {
    Ok(softmax(&dense_matrix(features, weights, bias)?))
}
