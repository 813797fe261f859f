use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{AdamState, GnnModel, NormStats};
use crate::graph::HeteroGraph;
use crate::sinr::AlphaMatrix;

use super::data::Sample;

/// Floor applied to optimal powers before `log2`.
pub const ETA_FLOOR: f64 = 1e-12;
/// Floor applied to the standardization spreads.
pub const STD_FLOOR: f64 = 1e-8;

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

/// Statistics of `log2(beta)` and `log2(max(eta_opt, 1e-12))` over every
/// entry of every sample.
pub fn compute_norm_stats(samples: &[Sample]) -> Result<NormStats> {
    if samples.is_empty() {
        return Err(Error::Empty("normalization statistics need at least one sample".into()));
    }
    let (input_mean, input_std) = mean_std(samples.iter().flat_map(|s| s.beta.matrix().as_slice().iter().map(|b| b.log2())));
    let (output_mean, output_std) = mean_std(
        samples
            .iter()
            .flat_map(|s| s.eta_opt.matrix().as_slice().iter().map(|e| e.max(ETA_FLOOR).log2())),
    );
    Ok(NormStats {
        input_mean,
        input_std,
        output_mean,
        output_std,
    })
}

/// Standardized `log2(eta_opt)` targets of one sample.
pub fn normalize_targets(sample: &Sample, norm: &NormStats) -> Vec<f64> {
    sample
        .eta_opt
        .matrix()
        .as_slice()
        .iter()
        .map(|e| (e.max(ETA_FLOOR).log2() - norm.output_mean) / norm.output_std)
        .collect()
}

/// Network inputs of every sample, plus the statistics they were
/// standardized with.
pub fn preprocess(samples: &[Sample]) -> Result<(Vec<Vec<f64>>, NormStats)> {
    let norm = compute_norm_stats(samples)?;
    let feats = samples
        .iter()
        .map(|s| s.beta.matrix().as_slice().iter().map(|&b| norm.normalize_input(b)).collect())
        .collect();
    Ok((feats, norm))
}

/// `(1/K) sum_k (opt_k - pred_k)^2`.
pub fn sinr_mse_loss(sinr_opt: &[f64], sinr_pred: &[f64]) -> Result<f64> {
    if sinr_opt.len() != sinr_pred.len() || sinr_opt.is_empty() {
        return Err(Error::Shape(format!(
            "SINR vectors of length {} and {}",
            sinr_opt.len(),
            sinr_pred.len()
        )));
    }
    let k = sinr_opt.len() as f64;
    Ok(sinr_opt.iter().zip(sinr_pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k)
}

/// SINR loss of the raw outputs `raw` and its gradient with respect to
/// them. With `project`, over-budget AP rows are renormalized before the
/// SINR is evaluated.
pub fn loss_and_output_grad(
    raw: &[f64],
    sample: &Sample,
    alpha: &AlphaMatrix,
    norm: &NormStats,
    rho_d: f64,
    project: bool,
) -> Result<(f64, Vec<f64>)> {
    let (mm, kk) = (sample.beta.num_aps(), sample.beta.num_ues());
    let eta = crate::gnn::denormalize_powers(raw, mm, kk, norm)?;
    let mut used = eta.clone();
    let mut row_scale = vec![1.0; mm];
    if project {
        for m in 0..mm {
            let s: f64 = eta.row(m).iter().sum();
            if s > 1.0 {
                row_scale[m] = s;
                for v in used.row_mut(m) {
                    *v /= s;
                }
            }
        }
    }
    let b = sample.beta.matrix();
    let power: Vec<f64> = used.row_sums();
    let mut signal = vec![0.0; kk];
    let mut denom = vec![1.0; kk];
    for m in 0..mm {
        for k in 0..kk {
            signal[k] += (alpha.get(m, k) * used.get(m, k)).sqrt();
            denom[k] += rho_d * b.get(m, k) * power[m];
        }
    }
    let sinr: Vec<f64> = (0..kk).map(|k| rho_d * signal[k] * signal[k] / denom[k]).collect();
    let opt = sample.sinr_opt.as_slice();
    let loss = sinr_mse_loss(opt, &sinr)?;

    // g_k = dL/dSINR_k
    let g: Vec<f64> = (0..kk).map(|k| -2.0 / kk as f64 * (opt[k] - sinr[k])).collect();
    // Interference sensitivity of AP m's total power.
    let c: Vec<f64> = (0..mm)
        .map(|m| (0..kk).map(|k| g[k] * sinr[k] * rho_d * b.get(m, k) / denom[k]).sum())
        .collect();
    let dlog = std::f64::consts::LN_2 * norm.output_std;
    let mut grad = vec![0.0; mm * kk];
    for m in 0..mm {
        // t_mk = eta'_mk * dL/deta'_mk
        let t: Vec<f64> = (0..kk)
            .map(|k| {
                let e = used.get(m, k);
                g[k] * rho_d * signal[k] * (alpha.get(m, k) * e).sqrt() / denom[k] - c[m] * e
            })
            .collect();
        let renorm = row_scale[m] != 1.0;
        let total: f64 = if renorm { t.iter().sum() } else { 0.0 };
        for k in 0..kk {
            let own = if renorm { t[k] - used.get(m, k) * total } else { t[k] };
            grad[m * kk + k] = own * dlog;
        }
    }
    Ok((loss, grad))
}

/// Loss of one sample and its gradient with respect to every parameter.
pub fn sample_loss_and_grad(
    model: &GnnModel,
    graph: &HeteroGraph,
    sample: &Sample,
    features: &[f64],
    alpha: &AlphaMatrix,
    rho_d: f64,
    project: bool,
) -> Result<(f64, Vec<f64>)> {
    let cache = model.forward_cached(graph, features)?;
    let (loss, d_out) = loss_and_output_grad(cache.output(), sample, alpha, &model.norm, rho_d, project)?;
    let mut grad = vec![0.0; model.num_params()];
    model.backward(graph, &cache, &d_out, &mut grad)?;
    Ok((loss, grad))
}

pub fn sample_loss(
    model: &GnnModel,
    graph: &HeteroGraph,
    sample: &Sample,
    features: &[f64],
    alpha: &AlphaMatrix,
    rho_d: f64,
    project: bool,
) -> Result<f64> {
    let raw = model.forward(graph, features)?;
    Ok(loss_and_output_grad(&raw, sample, alpha, &model.norm, rho_d, project)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; advances `state.step`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "Adam got {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
