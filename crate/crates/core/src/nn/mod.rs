//! Dense network stack with rank-bottleneck layers.
//!
//! Batches are row-major `batch x features` matrices. A dense layer computes
//! `act(x W + b)` with `W: in x out`; a bottleneck layer computes
//! `act(x W1 W2 + b)` with no bias or activation between the two factors,
//! so its realized weight `W1 W2` has rank at most `W1.cols()`.

mod adam;
mod schedule;

pub use adam::AdamState;
pub use schedule::{LrSchedule, ScheduleClock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::{
    decide_rank, factorize_bottleneck, factorize_from_svd, thin_svd, Matrix, RankCriterion,
    RankDecision, RankGate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, m: &mut Matrix) {
        match self {
            Activation::Relu => m.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => m.as_mut_slice().iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Identity => {}
        }
    }

    /// Multiply `grad` by the derivative, expressed through the layer output.
    fn backprop(self, output: &Matrix, grad: &mut Matrix) {
        let g = grad.as_mut_slice();
        let y = output.as_slice();
        match self {
            Activation::Relu => g.iter_mut().zip(y).for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => g.iter_mut().zip(y).for_each(|(g, &y)| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckLayer {
    pub w1: Matrix,
    pub w2: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl BottleneckLayer {
    /// Factor a dense layer at rank `r`.
    pub fn from_dense(dense: &DenseLayer, r: usize) -> Result<Self> {
        let (w1, w2) = factorize_bottleneck(&dense.weight, r)?;
        Ok(Self {
            w1,
            w2,
            bias: dense.bias.clone(),
            activation: dense.activation,
        })
    }

    pub fn rank(&self) -> usize {
        self.w1.cols()
    }

    pub fn product(&self) -> Matrix {
        self.w1.matmul(&self.w2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Dense(DenseLayer),
    Bottleneck(BottleneckLayer),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Dense(l) => l.weight.rows(),
            Layer::Bottleneck(l) => l.w1.rows(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Dense(l) => l.weight.cols(),
            Layer::Bottleneck(l) => l.w2.cols(),
        }
    }

    /// `W` or `W1 W2`.
    pub fn effective_weight(&self) -> Matrix {
        match self {
            Layer::Dense(l) => l.weight.clone(),
            Layer::Bottleneck(l) => l.product(),
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(l) => vec![l.weight.as_slice(), &l.bias],
            Layer::Bottleneck(l) => vec![l.w1.as_slice(), l.w2.as_slice(), &l.bias],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(l) => vec![l.weight.as_mut_slice(), &mut l.bias],
            Layer::Bottleneck(l) => vec![l.w1.as_mut_slice(), l.w2.as_mut_slice(), &mut l.bias],
        }
    }
}

/// Layer kind requested when building a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    /// Bottleneck starting at full rank `min(in, out)`.
    Bottleneck,
}

/// Feed-forward stack of dense and bottleneck layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs and outputs recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    /// `x W1` for bottleneck layers.
    hidden: Vec<Option<Matrix>>,
    outputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("network has at least one layer")
    }
}

/// Gradients in the same flat order as [`Mlp::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn as_slices(&self) -> Vec<&[f64]> {
        self.tensors.iter().map(Vec::as_slice).collect()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl Mlp {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialization for weights and
    /// biases; bottleneck layers are the exact full-rank factorization of
    /// such a dense draw.
    pub fn new(
        sizes: &[usize],
        kinds: &[LayerKind],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || kinds.len() != sizes.len() - 1 {
            return Err(Error::Config(
                "need one layer kind per consecutive size pair".into(),
            ));
        }
        let mut layers = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            let (n_in, n_out) = (sizes[i], sizes[i + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let weight = Matrix::new(
                n_in,
                n_out,
                (0..n_in * n_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            )?;
            let bias = (0..n_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let activation = if i + 1 == kinds.len() {
                output_activation
            } else {
                hidden_activation
            };
            let dense = DenseLayer {
                weight,
                bias,
                activation,
            };
            layers.push(match kind {
                LayerKind::Dense => Layer::Dense(dense),
                LayerKind::Bottleneck => {
                    Layer::Bottleneck(BottleneckLayer::from_dense(&dense, n_in.min(n_out))?)
                }
            });
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.param_shapes().iter().sum()
    }

    /// Ranks of the bottleneck layers, in layer order.
    pub fn bottleneck_ranks(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Bottleneck(b) => Some(b.rank()),
                Layer::Dense(_) => None,
            })
            .collect()
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            hidden: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut cur = x.clone();
        for layer in &self.layers {
            let (mut out, hidden, bias, act) = match layer {
                Layer::Dense(l) => (cur.matmul(&l.weight), None, &l.bias, l.activation),
                Layer::Bottleneck(l) => {
                    let h = cur.matmul(&l.w1);
                    (h.matmul(&l.w2), Some(h), &l.bias, l.activation)
                }
            };
            for i in 0..out.rows() {
                out.row_mut(i)
                    .iter_mut()
                    .zip(bias)
                    .for_each(|(o, b)| *o += b);
            }
            act.apply(&mut out);
            cache.inputs.push(cur);
            cache.hidden.push(hidden);
            cache.outputs.push(out.clone());
            cur = out;
        }
        Ok(cache)
    }

    /// Output only.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut cache = self.forward(x)?;
        Ok(cache.outputs.pop().expect("non-empty network"))
    }

    /// Parameter gradients and the gradient with respect to the input,
    /// given `d loss / d output`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        self.backward_impl(cache, grad_output, true)
    }

    /// Gradient with respect to the input only.
    pub fn input_gradient(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<Matrix> {
        Ok(self.backward_impl(cache, grad_output, false)?.1)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad_output: &Matrix,
        with_params: bool,
    ) -> Result<(Gradients, Matrix)> {
        if cache.outputs.len() != self.layers.len() {
            return Err(Error::MissingCache);
        }
        if grad_output.shape() != cache.output().shape() {
            return Err(Error::Dimension("upstream gradient shape".into()));
        }
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut grad = grad_output.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[idx];
            match layer {
                Layer::Dense(l) => {
                    l.activation.backprop(&cache.outputs[idx], &mut grad);
                    if with_params {
                        per_layer.push(vec![input.matmul_tn(&grad).into_vec(), column_sums(&grad)]);
                    }
                    grad = grad.matmul_nt(&l.weight);
                }
                Layer::Bottleneck(l) => {
                    l.activation.backprop(&cache.outputs[idx], &mut grad);
                    let h = cache.hidden[idx].as_ref().ok_or(Error::MissingCache)?;
                    let dh = grad.matmul_nt(&l.w2);
                    if with_params {
                        let dw2 = h.matmul_tn(&grad);
                        per_layer.push(vec![
                            input.matmul_tn(&dh).into_vec(),
                            dw2.into_vec(),
                            column_sums(&grad),
                        ]);
                    }
                    grad = dh.matmul_nt(&l.w1);
                }
            }
        }
        per_layer.reverse();
        Ok((
            Gradients {
                tensors: per_layer.into_iter().flatten().collect(),
            },
            grad,
        ))
    }

    /// Polyak averaging `self <- (1 - tau) self + tau source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            dst.iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d = (1.0 - tau) * *d + tau * s);
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        out.iter_mut().zip(m.row(i)).for_each(|(o, x)| *o += x);
    }
    out
}

/// Rank-adaptation settings shared by every bottleneck in a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankRule {
    pub criterion: RankCriterion,
    pub beta: f64,
    pub gate: RankGate,
}

/// Re-select the rank of every bottleneck layer.
///
/// For each bottleneck the product `W1 W2` is decomposed, a rank is chosen
/// by [`decide_rank`] (never above the current one), and the layer is
/// refactored at that rank. Layers whose rank is retained keep their
/// weights untouched. Biases are preserved.
pub fn rerank_network(net: &mut Mlp, rule: RerankRule) -> Result<Vec<RankDecision>> {
    let mut decisions = Vec::new();
    for layer in &mut net.layers {
        let Layer::Bottleneck(b) = layer else {
            continue;
        };
        let product = b.product();
        let f = thin_svd(&product)?;
        let current = b.rank();
        if f.rank() == 0 {
            decisions.push(RankDecision {
                chosen_rank: current,
                proposed_rank: current,
                criterion: rule.criterion,
                beta: rule.beta,
                spectrum: Vec::new(),
                previous_rank: current,
            });
            continue;
        }
        let decision = decide_rank(&f.sigma, current, rule.criterion, rule.beta, rule.gate)?;
        if decision.chosen_rank < current {
            let (w1, w2) = factorize_from_svd(&f, product.shape(), decision.chosen_rank);
            b.w1 = w1;
            b.w2 = w2;
        }
        decisions.push(decision);
    }
    Ok(decisions)
}

/// Versioned JSON checkpoint of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub version: u32,
    pub network: Mlp,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl NetworkCheckpoint {
    pub fn new(network: Mlp) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            network,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("checkpoint: {e}")))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        Ok(c)
    }
}
