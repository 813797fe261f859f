//! Heterogeneous graph transformer mapping large-scale fading to power
//! coefficients.
//!
//! Every hidden layer computes, per node `i`,
//!
//! ```text
//! h_i(t+1) = Norm(ReLU(f_AP(i) + f_UE(i)))
//! f_type(i) = concat_c [ L1(h_i) + sum_{j in N_type(i)} a_ij L2(h_j) ]
//! a_ij      = softmax_j( L3(h_i) . L4(h_j) / sqrt(d) )
//! ```
//!
//! followed by a linear read-out. All trainable parameters live in one flat
//! vector; [`ParamLayout`] names and locates each tensor.

mod backward;
pub mod checkpoint;
mod forward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::FadingMatrix;
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::graph::{EdgeType, HeteroGraph};

pub use checkpoint::{AdamState, Checkpoint, TensorRecord};
pub use forward::{attention_coeffs, denormalize_powers, project_powers, renormalize_rows, ForwardCache};

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    /// Feature sizes from the scalar input to the scalar output.
    pub widths: Vec<usize>,
    pub heads: usize,
}

impl Default for LayerPlan {
    fn default() -> Self {
        Self {
            widths: vec![1, 8, 8, 16, 16, 32, 16, 16, 8, 8, 1],
            heads: 2,
        }
    }
}

impl LayerPlan {
    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 3 || w[0] != 1 || w[w.len() - 1] != 1 {
            return Err(Error::Config(format!(
                "layer widths must start and end at 1 with at least one hidden layer, got {w:?}"
            )));
        }
        if self.heads == 0 {
            return Err(Error::Config("need at least one attention head".into()));
        }
        for &h in &w[1..w.len() - 1] {
            if h == 0 || h % self.heads != 0 {
                return Err(Error::Config(format!(
                    "hidden width {h} is not a positive multiple of {} heads",
                    self.heads
                )));
            }
        }
        Ok(())
    }

    /// Number of transitions `T`.
    pub fn transitions(&self) -> usize {
        self.widths.len() - 1
    }

    /// Number of attention layers, `T - 1`.
    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn head_dim(&self, layer: usize) -> usize {
        self.widths[layer + 1] / self.heads
    }
}

/// Weight and bias offsets of one linear map `d_in -> d_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LinearIndex {
    pub w: usize,
    pub b: usize,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerIndex {
    pub d_in: usize,
    pub width: usize,
    pub head_dim: usize,
    /// `maps[(ty * heads + c) * 4 + l]` is `L{l+1}` for edge type `ty`
    /// (0 = AP, 1 = UE) and head `c`.
    pub maps: Vec<LinearIndex>,
    pub gain: usize,
    pub bias: usize,
}

impl LayerIndex {
    #[inline]
    pub fn map(&self, ty: usize, head: usize, heads: usize, l: usize) -> LinearIndex {
        self.maps[(ty * heads + head) * 4 + l]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter class such as `l2.weight`, `norm.gain` or `out.bias`.
    pub fn class(&self) -> &str {
        match self.name.match_indices('.').nth_back(1) {
            Some((i, _)) => &self.name[i + 1..],
            None => &self.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub(crate) blocks: Vec<ParamBlock>,
    pub(crate) layers: Vec<LayerIndex>,
    pub(crate) out: LinearIndex,
    pub(crate) len: usize,
}

impl ParamLayout {
    pub fn new(plan: &LayerPlan) -> Result<Self> {
        plan.validate()?;
        let mut blocks = Vec::new();
        let mut len = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = len;
            len += shape.iter().product::<usize>();
            blocks.push(ParamBlock { name, shape, offset });
            offset
        };
        let mut layers = Vec::with_capacity(plan.hidden_layers());
        for t in 0..plan.hidden_layers() {
            let (d_in, width) = (plan.widths[t], plan.widths[t + 1]);
            let d = plan.head_dim(t);
            let mut maps = Vec::with_capacity(8 * plan.heads);
            for ty in EdgeType::BOTH {
                for c in 0..plan.heads {
                    for l in 1..=4 {
                        let prefix = format!("layer{t}.{}.head{c}.l{l}", ty.as_str());
                        let w = push(format!("{prefix}.weight"), vec![d, d_in]);
                        let b = push(format!("{prefix}.bias"), vec![d]);
                        maps.push(LinearIndex { w, b, d_in, d_out: d });
                    }
                }
            }
            let gain = push(format!("layer{t}.norm.gain"), vec![width]);
            let bias = push(format!("layer{t}.norm.bias"), vec![width]);
            layers.push(LayerIndex {
                d_in,
                width,
                head_dim: d,
                maps,
                gain,
                bias,
            });
        }
        let last = plan.widths[plan.transitions() - 1];
        let w = push("out.weight".into(), vec![1, last]);
        let b = push("out.bias".into(), vec![1]);
        let out = LinearIndex {
            w,
            b,
            d_in: last,
            d_out: 1,
        };
        Ok(Self {
            blocks,
            layers,
            out,
            len,
        })
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Block containing flat parameter index `i`.
    pub fn block_of(&self, i: usize) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| (b.offset..b.offset + b.len()).contains(&i))
    }
}

/// Standardization of `log2(beta)` inputs and `log2(eta)` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: f64,
    pub input_std: f64,
    pub output_mean: f64,
    pub output_std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            input_mean: 0.0,
            input_std: 1.0,
            output_mean: 0.0,
            output_std: 1.0,
        }
    }
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        let all = [self.input_mean, self.input_std, self.output_mean, self.output_std];
        if all.iter().any(|v| !v.is_finite()) || !(self.input_std > 0.0 && self.output_std > 0.0) {
            return Err(Error::Config(format!("invalid normalization statistics {self:?}")));
        }
        Ok(())
    }

    pub fn normalize_input(&self, beta: f64) -> f64 {
        (beta.log2() - self.input_mean) / self.input_std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    plan: LayerPlan,
    layout: ParamLayout,
    params: Vec<f64>,
    pub norm: NormStats,
}

impl GnnModel {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn new(plan: LayerPlan, seed: u64) -> Result<Self> {
        let layout = ParamLayout::new(&plan)?;
        let mut params = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in &layout.blocks {
            let slice = &mut params[block.offset..block.offset + block.len()];
            if block.name.ends_with(".weight") {
                let (fan_out, fan_in) = (block.shape[0], block.shape[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in slice {
                    *v = rng.random_range(-limit..=limit);
                }
            } else if block.name.ends_with(".gain") {
                slice.fill(1.0);
            }
        }
        Ok(Self {
            plan,
            layout,
            params,
            norm: NormStats::default(),
        })
    }

    pub fn from_params(plan: LayerPlan, params: Vec<f64>, norm: NormStats) -> Result<Self> {
        let layout = ParamLayout::new(&plan)?;
        if params.len() != layout.len() {
            return Err(Error::Shape(format!(
                "plan needs {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        norm.validate()?;
        Ok(Self {
            plan,
            layout,
            params,
            norm,
        })
    }

    pub fn plan(&self) -> &LayerPlan {
        &self.plan
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let b = self.layout.block(name)?;
        Some(&self.params[b.offset..b.offset + b.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let b = self.layout.block(name)?.clone();
        Some(&mut self.params[b.offset..b.offset + b.len()])
    }

    /// Standardized `log2(beta)` node features in node order.
    pub fn input_features(&self, b: &FadingMatrix) -> Vec<f64> {
        b.matrix().as_slice().iter().map(|&v| self.norm.normalize_input(v)).collect()
    }

    /// Preprocess, forward and project onto the per-AP budgets.
    pub fn predict(&self, b: &FadingMatrix) -> Result<crate::sinr::PowerControl> {
        self.predict_counted(b, &mut FlopCounter::new())
    }

    /// [`predict`](Self::predict) tallying forward and projection FLOPs.
    pub fn predict_counted(&self, b: &FadingMatrix, flops: &mut FlopCounter) -> Result<crate::sinr::PowerControl> {
        let graph = HeteroGraph::cached(b.num_aps(), b.num_ues())?;
        let raw = self.forward_counted(&graph, &self.input_features(b), flops)?;
        project_powers(&raw, b.num_aps(), b.num_ues(), &self.norm, flops)
    }

    /// Closed-form FLOP count of [`predict_counted`](Self::predict_counted)
    /// on an `M x K` instance, assuming every AP row gets renormalized.
    pub fn analytic_flops(&self, num_aps: usize, num_ues: usize) -> FlopCounter {
        let n = num_aps * num_ues;
        let mut f = FlopCounter::new();
        for layer in &self.layout.layers {
            let (d, w, d_in) = (layer.head_dim, layer.width, layer.d_in);
            for deg in [num_ues - 1, num_aps - 1] {
                let maps = if deg == 0 { 1 } else { 4 };
                let edges = n * deg;
                for _ in 0..self.plan.heads {
                    f.affine(n * maps * d, d_in);
                    if deg > 0 {
                        f.mul(2 * edges * d + 3 * edges);
                        f.add(2 * edges * d + edges - n);
                    }
                }
            }
            f.add(n * w);
            f.add(n * (4 * w - 1));
            f.mul(n * (3 * w + 4));
        }
        f.affine(n, self.layout.out.d_in);
        f.mul(3 * n);
        f.add(n + num_aps * (num_ues - 1));
        f
    }
}
