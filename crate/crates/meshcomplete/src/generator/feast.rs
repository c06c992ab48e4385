//! Graph convolution with data-dependent soft assignment of neighbors to
//! learned weight matrices (translation-invariant attention on feature
//! differences).
//!
//! For vertex i with neighborhood N(i) (self included):
//! `y_i = b + (1/|N(i)|) sum_{j in N(i)} sum_m q_m(i,j) * W_m^T x_j` where
//! `q(i,j) = softmax_m(u_m^T (x_j - x_i) + c_m)`.

use crate::autodiff::{AutodiffError, EdgeSet, ParamId, ParamSet, SparseMat, Tensor, Value};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::sync::Arc;

/// Fixed per-level structure: directed edge list with self loops and the
/// sparse edge-difference operator `(B x)_e = x_src(e) - x_dst(e)`.
#[derive(Debug, Clone)]
pub struct LevelGraph {
    pub edges: Arc<EdgeSet>,
    pub diff: Arc<SparseMat>,
}

impl LevelGraph {
    pub fn from_adjacency(adjacency: &[Vec<u32>]) -> LevelGraph {
        let edges = Arc::new(EdgeSet::from_adjacency(adjacency));
        let n = adjacency.len();
        let mut triplets = Vec::new();
        for (e, &(dst, src)) in edges.edges.iter().enumerate() {
            if dst != src {
                triplets.push((e as u32, src, 1.0));
                triplets.push((e as u32, dst, -1.0));
            }
            // Self-loop rows are identically zero.
        }
        let diff = Arc::new(
            SparseMat::new(edges.edge_count(), n, triplets).expect("edge-difference operator"),
        );
        LevelGraph { edges, diff }
    }
}

/// Parameter handles for one convolution layer.
#[derive(Debug, Clone)]
pub struct FeastLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub heads: usize,
    /// Per-head weight matrices, each (in x out).
    pub weights: Vec<ParamId>,
    /// Attention vectors as one (in x heads) matrix.
    pub attention: ParamId,
    /// Attention biases (1 x heads).
    pub attention_bias: ParamId,
    /// Output bias (1 x out).
    pub bias: ParamId,
}

fn glorot(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

impl FeastLayer {
    /// Allocates layer parameters into `params` under `name.*`.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        heads: usize,
        rng: &mut ChaCha12Rng,
    ) -> FeastLayer {
        let weights = (0..heads)
            .map(|m| {
                params.add(
                    format!("{name}.w{m}"),
                    glorot(in_channels, out_channels, in_channels, out_channels, rng),
                )
            })
            .collect();
        let attention = params.add(
            format!("{name}.u"),
            glorot(in_channels, heads, in_channels, heads, rng),
        );
        let attention_bias = params.add(format!("{name}.c"), Tensor::zeros(1, heads));
        let bias = params.add(format!("{name}.b"), Tensor::zeros(1, out_channels));
        FeastLayer {
            in_channels,
            out_channels,
            heads,
            weights,
            attention,
            attention_bias,
            bias,
        }
    }

    /// Zero-initialized layer (used as the final decoder layer so training
    /// starts from the base shape).
    pub fn new_zeroed(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        heads: usize,
    ) -> FeastLayer {
        let weights = (0..heads)
            .map(|m| params.add(format!("{name}.w{m}"), Tensor::zeros(in_channels, out_channels)))
            .collect();
        let attention = params.add(format!("{name}.u"), Tensor::zeros(in_channels, heads));
        let attention_bias = params.add(format!("{name}.c"), Tensor::zeros(1, heads));
        let bias = params.add(format!("{name}.b"), Tensor::zeros(1, out_channels));
        FeastLayer {
            in_channels,
            out_channels,
            heads,
            weights,
            attention,
            attention_bias,
            bias,
        }
    }

    pub fn param_count(in_channels: usize, out_channels: usize, heads: usize) -> usize {
        heads * in_channels * out_channels + in_channels * heads + heads + out_channels
    }

    /// Applies the convolution. `leaves` are the tape handles of the whole
    /// parameter set, aligned with [`ParamSet`] indices.
    pub fn forward(
        &self,
        features: &Value,
        graph: &LevelGraph,
        leaves: &[Value],
    ) -> Result<Value, AutodiffError> {
        let diff = features.spmm(&graph.diff)?; // (E x in)
        let logits = diff
            .matmul(&leaves[self.attention.0])?
            .add_rowvec(&leaves[self.attention_bias.0])?; // (E x heads)
        let q = logits.softmax_rows();
        let projected: Vec<Value> = self
            .weights
            .iter()
            .map(|w| features.matmul(&leaves[w.0]))
            .collect::<Result<_, _>>()?; // heads x (N x out)
        let aggregated = Value::edge_aggregate(&q, &projected, &graph.edges)?;
        aggregated.add_rowvec(&leaves[self.bias.0])
    }
}

/// Convenience for tests: run a layer on raw features with fresh params.
#[cfg(test)]
pub(crate) fn run_layer(
    layer: &FeastLayer,
    params: &ParamSet,
    tape: &crate::autodiff::Tape,
    features: Tensor,
    graph: &LevelGraph,
) -> Value {
    let leaves = params.leaves(tape);
    let x = tape.leaf(features, true);
    layer.forward(&x, graph, &leaves).unwrap()
}
