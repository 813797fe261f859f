use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::graph::{EdgeType, HeteroGraph};
use crate::matrix::Matrix;
use crate::sinr::PowerControl;

use super::{GnnModel, LayerIndex, LinearIndex, NormStats, LN_EPS};

/// Per-head intermediates of one edge type. Empty when the type has no
/// edges.
#[derive(Debug, Clone, Default)]
pub(crate) struct HeadCache {
    pub a2: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    /// Attention weights in the adjacency's flat edge order.
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub x: Vec<f64>,
    /// Indexed `ty * heads + c`.
    pub heads: Vec<HeadCache>,
    pub pre: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Intermediates of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) last: Vec<f64>,
    pub(crate) output: Vec<f64>,
    pub(crate) heads: usize,
}

impl ForwardCache {
    /// Raw per-node outputs.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Attention weights of `node` over its `ty`-neighbors, in the order of
    /// [`HeteroGraph::neighbors`]. Empty when the neighborhood is empty.
    pub fn attention(&self, graph: &HeteroGraph, layer: usize, ty: EdgeType, head: usize, node: usize) -> &[f64] {
        let h = &self.layers[layer].heads[ty_index(ty) * self.heads + head];
        if h.alpha.is_empty() {
            return &[];
        }
        &h.alpha[graph.adjacency(ty).edge_range(node)]
    }
}

#[inline]
pub(crate) fn ty_index(ty: EdgeType) -> usize {
    match ty {
        EdgeType::Ap => 0,
        EdgeType::Ue => 1,
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[i] = W x[i] + b` for every node row.
pub(crate) fn linear(params: &[f64], map: LinearIndex, x: &[f64], n: usize, out: &mut [f64], flops: &mut FlopCounter) {
    let (d_in, d_out) = (map.d_in, map.d_out);
    let w = &params[map.w..map.w + d_in * d_out];
    let b = &params[map.b..map.b + d_out];
    for i in 0..n {
        let xi = &x[i * d_in..(i + 1) * d_in];
        let oi = &mut out[i * d_out..(i + 1) * d_out];
        for r in 0..d_out {
            oi[r] = b[r] + dot(&w[r * d_in..(r + 1) * d_in], xi);
        }
    }
    flops.mul(n * d_in * d_out);
    flops.add(n * d_in * d_out);
}

/// Max-shifted softmax in place.
fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Attention of a projected query `L3(h_i)` over projected keys `L4(h_j)`
/// of per-head size `query.len()`.
pub fn attention_coeffs(query: &[f64], keys: &[&[f64]]) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::Empty("attention over an empty neighborhood".into()));
    }
    let scale = 1.0 / (query.len() as f64).sqrt();
    let mut logits = keys
        .iter()
        .map(|k| {
            if k.len() != query.len() {
                return Err(Error::Shape(format!("key of size {} vs query {}", k.len(), query.len())));
            }
            Ok(dot(query, k) * scale)
        })
        .collect::<Result<Vec<f64>>>()?;
    softmax_in_place(&mut logits);
    Ok(logits)
}

struct LayerOut {
    y: Vec<f64>,
    cache: Option<LayerCache>,
}

impl GnnModel {
    /// Sum over edge types of the concatenated head outputs, before ReLU.
    fn aggregate(
        &self,
        graph: &HeteroGraph,
        layer: &LayerIndex,
        types: &[EdgeType],
        x: &[f64],
        flops: &mut FlopCounter,
        keep: bool,
    ) -> (Vec<f64>, Vec<HeadCache>) {
        let n = graph.num_nodes();
        let heads = self.plan.heads;
        let (d, w) = (layer.head_dim, layer.width);
        let scale = 1.0 / (d as f64).sqrt();
        let mut pre = vec![0.0; n * w];
        let mut caches = Vec::new();
        let mut a1 = vec![0.0; n * d];
        for (ti, &ty) in types.iter().enumerate() {
            let adj = graph.adjacency(ty);
            let has_edges = adj.num_edges() > 0;
            for c in 0..heads {
                let map = |l| layer.map(ty_index(ty), c, heads, l);
                linear(&self.params, map(0), x, n, &mut a1, flops);
                let mut hc = HeadCache::default();
                if has_edges {
                    hc.a2 = vec![0.0; n * d];
                    hc.q = vec![0.0; n * d];
                    hc.k = vec![0.0; n * d];
                    hc.alpha = vec![0.0; adj.num_edges()];
                    linear(&self.params, map(1), x, n, &mut hc.a2, flops);
                    linear(&self.params, map(2), x, n, &mut hc.q, flops);
                    linear(&self.params, map(3), x, n, &mut hc.k, flops);
                    for i in 0..n {
                        let nbrs = adj.neighbors(i);
                        let alpha = &mut hc.alpha[adj.edge_range(i)];
                        let qi = &hc.q[i * d..(i + 1) * d];
                        for (e, &j) in nbrs.iter().enumerate() {
                            alpha[e] = dot(qi, &hc.k[j * d..(j + 1) * d]) * scale;
                        }
                        softmax_in_place(alpha);
                        let acc = &mut a1[i * d..(i + 1) * d];
                        for (e, &j) in nbrs.iter().enumerate() {
                            let aj = alpha[e];
                            for (o, v) in acc.iter_mut().zip(&hc.a2[j * d..(j + 1) * d]) {
                                *o += aj * v;
                            }
                        }
                    }
                    let edges = adj.num_edges();
                    // logits, scale, exp, divide, weighted sum
                    flops.mul(edges * d + 3 * edges + edges * d);
                    // logits, max shift, sum, weighted sum
                    flops.add(edges * (d - 1) + edges + (edges - n) + edges * d);
                }
                for i in 0..n {
                    let dst = &mut pre[i * w + c * d..i * w + (c + 1) * d];
                    let src = &a1[i * d..(i + 1) * d];
                    if ti == 0 {
                        dst.copy_from_slice(src);
                    } else {
                        for (o, v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                }
                if keep {
                    caches.push(hc);
                }
            }
            if ti > 0 {
                flops.add(n * w);
            }
        }
        (pre, caches)
    }

    fn hidden_layer(&self, graph: &HeteroGraph, t: usize, x: &[f64], flops: &mut FlopCounter, keep: bool) -> LayerOut {
        let layer = &self.layout.layers[t];
        let n = graph.num_nodes();
        let w = layer.width;
        let (pre, heads) = self.aggregate(graph, layer, &EdgeType::BOTH, x, flops, keep);
        let gain = &self.params[layer.gain..layer.gain + w];
        let bias = &self.params[layer.bias..layer.bias + w];
        let mut y = vec![0.0; n * w];
        let mut xhat = if keep { vec![0.0; n * w] } else { Vec::new() };
        let mut inv_std = if keep { vec![0.0; n] } else { Vec::new() };
        let mut centered = vec![0.0; w];
        for i in 0..n {
            let p = &pre[i * w..(i + 1) * w];
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for (c, &v) in centered.iter_mut().zip(p) {
                *c = v.max(0.0);
                sum += *c;
                lo = lo.min(*c);
                hi = hi.max(*c);
            }
            let mean = sum / w as f64;
            let mut var = 0.0;
            for c in centered.iter_mut() {
                *c -= mean;
                var += *c * *c;
            }
            var /= w as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            if lo == hi {
                centered.fill(0.0);
            }
            let yi = &mut y[i * w..(i + 1) * w];
            for r in 0..w {
                let xh = centered[r] * inv;
                yi[r] = gain[r] * xh + bias[r];
                if keep {
                    xhat[i * w + r] = xh;
                }
            }
            if keep {
                inv_std[i] = inv;
            }
        }
        flops.add(n * (4 * w - 1));
        flops.mul(n * (3 * w + 4));
        let cache = keep.then(|| LayerCache {
            x: x.to_vec(),
            heads,
            pre,
            xhat,
            inv_std,
        });
        LayerOut { y, cache }
    }

    fn run(&self, graph: &HeteroGraph, x0: &[f64], flops: &mut FlopCounter, keep: bool) -> Result<(Vec<f64>, Option<ForwardCache>)> {
        let n = graph.num_nodes();
        if x0.len() != n {
            return Err(Error::Shape(format!("{} input features for a graph of {n} nodes", x0.len())));
        }
        let mut h = x0.to_vec();
        let mut layers = Vec::new();
        for t in 0..self.plan.hidden_layers() {
            let out = self.hidden_layer(graph, t, &h, flops, keep);
            if let Some(c) = out.cache {
                layers.push(c);
            }
            h = out.y;
        }
        let mut output = vec![0.0; n];
        linear(&self.params, self.layout.out, &h, n, &mut output, flops);
        let cache = keep.then(|| ForwardCache {
            layers,
            last: h,
            output: output.clone(),
            heads: self.plan.heads,
        });
        Ok((output, cache))
    }

    /// Raw normalized log-power per node, `x0` being the standardized
    /// `log2(beta)` features in node order.
    pub fn forward(&self, graph: &HeteroGraph, x0: &[f64]) -> Result<Vec<f64>> {
        self.forward_counted(graph, x0, &mut FlopCounter::new())
    }

    pub fn forward_counted(&self, graph: &HeteroGraph, x0: &[f64], flops: &mut FlopCounter) -> Result<Vec<f64>> {
        Ok(self.run(graph, x0, flops, false)?.0)
    }

    /// Forward pass keeping the intermediates needed by the backward pass.
    pub fn forward_cached(&self, graph: &HeteroGraph, x0: &[f64]) -> Result<ForwardCache> {
        let (_, cache) = self.run(graph, x0, &mut FlopCounter::new(), true)?;
        Ok(cache.expect("cache requested"))
    }

    fn check_layer_input(&self, graph: &HeteroGraph, t: usize, x: &Matrix) -> Result<&LayerIndex> {
        let layer = self.layout.layers.get(t).ok_or_else(|| {
            Error::OutOfRange(format!("layer {t} of {}", self.plan.hidden_layers()))
        })?;
        x.ensure_shape(graph.num_nodes(), layer.d_in, "layer input")?;
        Ok(layer)
    }

    /// `f_ty(i)` for every node of attention layer `t`, as an `N x width`
    /// matrix.
    pub fn typed_aggregate(&self, graph: &HeteroGraph, t: usize, ty: EdgeType, x: &Matrix) -> Result<Matrix> {
        let layer = self.check_layer_input(graph, t, x)?;
        let (pre, _) = self.aggregate(graph, layer, &[ty], x.as_slice(), &mut FlopCounter::new(), false);
        Matrix::from_vec(graph.num_nodes(), layer.width, pre)
    }

    /// One attention layer: `Norm(ReLU(f_AP + f_UE))`.
    pub fn layer_forward(&self, graph: &HeteroGraph, t: usize, x: &Matrix) -> Result<Matrix> {
        let layer = self.check_layer_input(graph, t, x)?;
        let out = self.hidden_layer(graph, t, x.as_slice(), &mut FlopCounter::new(), false);
        Matrix::from_vec(graph.num_nodes(), layer.width, out.y)
    }
}

/// `eta = 2^(x * std + mean)` without the budget projection.
pub fn denormalize_powers(raw: &[f64], num_aps: usize, num_ues: usize, norm: &NormStats) -> Result<Matrix> {
    if raw.len() != num_aps * num_ues {
        return Err(Error::Shape(format!("{} outputs for {num_aps}x{num_ues}", raw.len())));
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite network output {bad}")));
    }
    let values = raw.iter().map(|x| (x * norm.output_std + norm.output_mean).exp2()).collect();
    Matrix::from_vec(num_aps, num_ues, values)
}

/// Clamp to `>= 0` and divide every over-budget AP row by its sum. The
/// result satisfies the budgets with no tolerance, and feasible input is
/// returned unchanged.
pub fn renormalize_rows(eta: &Matrix, flops: &mut FlopCounter) -> PowerControl {
    let mut out = eta.map(|v| v.max(0.0));
    let k = out.cols();
    for m in 0..out.rows() {
        let row = out.row_mut(m);
        let sum: f64 = row.iter().sum();
        flops.add(k.saturating_sub(1));
        if sum > 1.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
            flops.mul(k);
            while row.iter().sum::<f64>() > 1.0 {
                for v in row.iter_mut() {
                    *v *= 1.0 - f64::EPSILON;
                }
            }
        }
    }
    PowerControl::new(out)
}

/// Denormalize raw outputs and project them onto the per-AP budgets.
pub fn project_powers(
    raw: &[f64],
    num_aps: usize,
    num_ues: usize,
    norm: &NormStats,
    flops: &mut FlopCounter,
) -> Result<PowerControl> {
    let eta = denormalize_powers(raw, num_aps, num_ues, norm)?;
    flops.mul(2 * raw.len());
    flops.add(raw.len());
    Ok(renormalize_rows(&eta, flops))
}
