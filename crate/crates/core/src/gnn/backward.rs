use crate::error::{Error, Result};
use crate::graph::{EdgeType, HeteroGraph};

use super::forward::{dot, ty_index, ForwardCache, LayerCache};
use super::{GnnModel, LayerIndex, LinearIndex};

/// Accumulates `dL/dW`, `dL/db` and, when requested, `dL/dx` of
/// `a = W x + b` given `dL/da`.
fn linear_backward(
    params: &[f64],
    map: LinearIndex,
    x: &[f64],
    n: usize,
    d_a: &[f64],
    grad: &mut [f64],
    mut d_x: Option<&mut [f64]>,
) {
    let (d_in, d_out) = (map.d_in, map.d_out);
    let w = &params[map.w..map.w + d_in * d_out];
    for i in 0..n {
        let xi = &x[i * d_in..(i + 1) * d_in];
        for r in 0..d_out {
            let g = d_a[i * d_out + r];
            if g == 0.0 {
                continue;
            }
            grad[map.b + r] += g;
            let gw = &mut grad[map.w + r * d_in..map.w + (r + 1) * d_in];
            for (o, v) in gw.iter_mut().zip(xi) {
                *o += g * v;
            }
            if let Some(dx) = d_x.as_deref_mut() {
                let wr = &w[r * d_in..(r + 1) * d_in];
                for (o, v) in dx[i * d_in..(i + 1) * d_in].iter_mut().zip(wr) {
                    *o += g * v;
                }
            }
        }
    }
}

impl GnnModel {
    /// Adds the gradient of a scalar loss to `grad`, given `d_out = dL/d(raw
    /// output)` for the pass recorded in `cache`.
    pub fn backward(&self, graph: &HeteroGraph, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) -> Result<()> {
        let n = graph.num_nodes();
        if d_out.len() != n || grad.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "backward got {} output grads for {n} nodes and {} slots for {} params",
                d_out.len(),
                grad.len(),
                self.params.len()
            )));
        }
        if cache.output.len() != n || cache.layers.len() != self.layout.layers.len() {
            return Err(Error::Shape("forward cache does not match model and graph".into()));
        }
        let out = self.layout.out;
        let last_w = out.d_in;
        let mut dy = vec![0.0; n * last_w];
        let w_out = &self.params[out.w..out.w + last_w];
        for i in 0..n {
            let g = d_out[i];
            grad[out.b] += g;
            for c in 0..last_w {
                grad[out.w + c] += g * cache.last[i * last_w + c];
                dy[i * last_w + c] = g * w_out[c];
            }
        }
        for t in (0..self.layout.layers.len()).rev() {
            let need_dx = t > 0;
            dy = self.layer_backward(graph, &self.layout.layers[t], &cache.layers[t], &dy, grad, need_dx);
        }
        Ok(())
    }

    fn layer_backward(
        &self,
        graph: &HeteroGraph,
        layer: &LayerIndex,
        lc: &LayerCache,
        dy: &[f64],
        grad: &mut [f64],
        need_dx: bool,
    ) -> Vec<f64> {
        let n = graph.num_nodes();
        let (d, w, d_in) = (layer.head_dim, layer.width, layer.d_in);
        let heads = self.plan.heads;
        let gain = &self.params[layer.gain..layer.gain + w];

        let mut d_pre = vec![0.0; n * w];
        let mut dxh = vec![0.0; w];
        for i in 0..n {
            let xh = &lc.xhat[i * w..(i + 1) * w];
            let g = &dy[i * w..(i + 1) * w];
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for r in 0..w {
                grad[layer.gain + r] += g[r] * xh[r];
                grad[layer.bias + r] += g[r];
                dxh[r] = g[r] * gain[r];
                m1 += dxh[r];
                m2 += dxh[r] * xh[r];
            }
            m1 /= w as f64;
            m2 /= w as f64;
            let inv = lc.inv_std[i];
            for r in 0..w {
                if lc.pre[i * w + r] > 0.0 {
                    d_pre[i * w + r] = inv * (dxh[r] - m1 - xh[r] * m2);
                }
            }
        }

        let mut dx = if need_dx { vec![0.0; n * d_in] } else { Vec::new() };
        let scale = 1.0 / (d as f64).sqrt();
        let mut g_head = vec![0.0; n * d];
        for ty in EdgeType::BOTH {
            let adj = graph.adjacency(ty);
            let ti = ty_index(ty);
            for c in 0..heads {
                for i in 0..n {
                    g_head[i * d..(i + 1) * d].copy_from_slice(&d_pre[i * w + c * d..i * w + (c + 1) * d]);
                }
                let map = |l| layer.map(ti, c, heads, l);
                let dxo = if need_dx { Some(dx.as_mut_slice()) } else { None };
                linear_backward(&self.params, map(0), &lc.x, n, &g_head, grad, dxo);
                let hc = &lc.heads[ti * heads + c];
                if hc.alpha.is_empty() {
                    continue;
                }
                let mut d_a2 = vec![0.0; n * d];
                let mut d_q = vec![0.0; n * d];
                let mut d_k = vec![0.0; n * d];
                let mut d_alpha = Vec::new();
                for i in 0..n {
                    let gi = &g_head[i * d..(i + 1) * d];
                    let nbrs = adj.neighbors(i);
                    let alpha = &hc.alpha[adj.edge_range(i)];
                    d_alpha.clear();
                    let mut s = 0.0;
                    for (e, &j) in nbrs.iter().enumerate() {
                        let da = dot(gi, &hc.a2[j * d..(j + 1) * d]);
                        s += alpha[e] * da;
                        d_alpha.push(da);
                        for (o, v) in d_a2[j * d..(j + 1) * d].iter_mut().zip(gi) {
                            *o += alpha[e] * v;
                        }
                    }
                    let qi = &hc.q[i * d..(i + 1) * d];
                    for (e, &j) in nbrs.iter().enumerate() {
                        let ds = alpha[e] * (d_alpha[e] - s) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &hc.k[j * d..(j + 1) * d];
                        for r in 0..d {
                            d_q[i * d + r] += ds * kj[r];
                            d_k[j * d + r] += ds * qi[r];
                        }
                    }
                }
                for (l, da) in [(1, &d_a2), (2, &d_q), (3, &d_k)] {
                    let dxo = if need_dx { Some(dx.as_mut_slice()) } else { None };
                    linear_backward(&self.params, map(l), &lc.x, n, da, grad, dxo);
                }
            }
        }
        dx
    }
}
