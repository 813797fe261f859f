//! Dataset generation, preprocessing, the SINR loss, Adam and the training
//! loop.

pub mod data;
pub mod loss;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::LinkBudget;
use crate::error::{Error, Result};
use crate::gnn::{AdamState, Checkpoint, GnnModel, LayerPlan};
use crate::graph::HeteroGraph;
use crate::sinr::{compute_alpha, AlphaMatrix};

pub use crate::gnn::NormStats;
pub use data::{
    draw_realizations, generate_dataset, label, label_all, parse_scenarios, read_realizations, read_samples,
    split_train_val, write_realizations, write_samples, Labeled, Realization, Sample, ScenarioTag,
};
pub use loss::{
    adam_step, compute_norm_stats, loss_and_output_grad, preprocess, sample_loss, sample_loss_and_grad,
    sinr_mse_loss, AdamConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Scenarios to train on, as `"<M>x<K>:<morphology>"`; empty means all.
    pub scenarios: Vec<String>,
    pub val_fraction: f64,
    /// Evaluate the loss on row-renormalized powers instead of raw ones.
    pub loss_on_projected: bool,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    pub widths: Vec<usize>,
    pub heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let plan = LayerPlan::default();
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            batch_size: 64,
            epochs: 100,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            scenarios: Vec::new(),
            val_fraction: 0.1,
            loss_on_projected: false,
            weight_decay: 0.0,
            grad_clip: 0.0,
            widths: plan.widths,
            heads: plan.heads,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::config::load_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        if !(self.weight_decay >= 0.0 && self.grad_clip >= 0.0) {
            return Err(Error::Config("weight_decay and grad_clip must be >= 0".into()));
        }
        self.scenario_tags()?;
        self.plan().validate()
    }

    pub fn plan(&self) -> LayerPlan {
        LayerPlan {
            widths: self.widths.clone(),
            heads: self.heads,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn scenario_tags(&self) -> Result<Vec<ScenarioTag>> {
        self.scenarios.iter().map(|s| s.parse()).collect()
    }

    /// SHA-256 over every field except `epochs`, so that a run can be
    /// extended from its last checkpoint.
    pub fn fingerprint(&self) -> String {
        let canonical = Self { epochs: 0, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

/// Where a run writes its files, all derived from the final checkpoint path
/// `P`: `P.epochs/epoch_NNNN.json`, `P.best.json`, `P.metrics.csv` and, on
/// divergence, `P.nonfinite.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub checkpoint: PathBuf,
    pub epoch_dir: PathBuf,
    pub best: PathBuf,
    pub metrics: PathBuf,
    pub dump: PathBuf,
}

impl RunPaths {
    pub fn for_checkpoint(path: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = path.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self {
            checkpoint: path.to_path_buf(),
            epoch_dir: with(".epochs"),
            best: with(".best.json"),
            metrics: with(".metrics.csv"),
            dump: with(".nonfinite.json"),
        }
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.epoch_dir.join(format!("epoch_{epoch:04}.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: GnnModel,
    pub adam: AdamState,
    pub metrics: Vec<EpochMetrics>,
    pub best_val_loss: Option<f64>,
}

struct Prepared {
    features: Vec<f64>,
    alpha: AlphaMatrix,
    graph: Arc<HeteroGraph>,
    rho_d: f64,
}

fn prepare(samples: &[Sample], model: &GnnModel) -> Result<Vec<Prepared>> {
    let budget = LinkBudget::default();
    samples
        .iter()
        .map(|s| {
            let (m, k) = (s.beta.num_aps(), s.beta.num_ues());
            Ok(Prepared {
                features: model.input_features(&s.beta),
                alpha: compute_alpha(&s.beta, budget.rho_u(), k)?,
                graph: HeteroGraph::cached(m, k)?,
                rho_d: budget.rho_d(),
            })
        })
        .collect()
}

/// Mini-batches of equal-size graphs, shuffled within and across sizes by
/// a generator seeded from `(seed, epoch)`.
pub fn epoch_batches(samples: &[Sample], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut sizes: Vec<(usize, usize)> = Vec::new();
    for s in samples {
        let key = (s.beta.num_aps(), s.beta.num_ues());
        if !sizes.contains(&key) {
            sizes.push(key);
        }
    }
    let mut batches = Vec::new();
    for key in sizes {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| (samples[i].beta.num_aps(), samples[i].beta.num_ues()) == key)
            .collect();
        idx.shuffle(&mut rng);
        batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

fn mean_loss(model: &GnnModel, samples: &[Sample], prep: &[Prepared], project: bool) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .zip(prep)
        .map(|(s, p)| loss::sample_loss(model, &p.graph, s, &p.features, &p.alpha, p.rho_d, project))
        .collect::<Result<_>>()?;
    Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
}

#[derive(Serialize)]
struct Dump<'a> {
    epoch: usize,
    batch: usize,
    sample_seeds: Vec<u64>,
    losses: Vec<f64>,
    checkpoint: &'a Checkpoint,
}

pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn write_metrics_row(w: &mut csv::Writer<fs::File>, m: &EpochMetrics) -> Result<()> {
    w.write_record([
        m.epoch.to_string(),
        fmt_float(m.train_loss),
        m.val_loss.map(fmt_float).unwrap_or_default(),
        m.wall_ms.to_string(),
    ])
    .and_then(|_| w.flush().map_err(Into::into))
    .map_err(Error::from)
}

/// Trains from scratch, or from `resume` (a checkpoint written by an
/// earlier call with the same configuration). Normalization statistics come
/// from `train_set` only and are frozen into every checkpoint.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    paths: Option<&RunPaths>,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let tags = cfg.scenario_tags()?;
    let keep = |s: &Sample| tags.is_empty() || tags.contains(&s.tag);
    let train_set: Vec<Sample> = train_set.iter().filter(|s| keep(s)).cloned().collect();
    let val_set: Vec<Sample> = val_set.iter().filter(|s| keep(s)).cloned().collect();
    if train_set.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    let fingerprint = cfg.fingerprint();
    let init = format!("glorot_uniform seed={}", cfg.seed);

    let (mut model, mut adam, start, mut best) = match resume {
        Some(ck) => {
            if ck.config_fingerprint != fingerprint {
                return Err(Error::Config(
                    "checkpoint was written under a different training configuration".into(),
                ));
            }
            let model = ck.to_model()?;
            let adam = ck.adam.clone().unwrap_or_else(|| AdamState::new(model.num_params()));
            (model, adam, ck.epoch.unwrap_or(0) + 1, ck.best_val_loss)
        }
        None => {
            let mut model = GnnModel::new(cfg.plan(), cfg.seed)?;
            model.norm = compute_norm_stats(&train_set)?;
            let adam = AdamState::new(model.num_params());
            (model, adam, 1, None)
        }
    };
    let prep_train = prepare(&train_set, &model)?;
    let prep_val = prepare(&val_set, &model)?;
    let adam_cfg = cfg.adam();
    let project = cfg.loss_on_projected;

    let mut metrics_writer = match paths {
        Some(p) => {
            fs::create_dir_all(&p.epoch_dir).map_err(|e| Error::io(&p.epoch_dir, e))?;
            let append = resume.is_some() && p.metrics.exists();
            let file = fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(&p.metrics)
                .map_err(|e| Error::io(&p.metrics, e))?;
            let mut w = csv::Writer::from_writer(file);
            if !append {
                w.write_record(["epoch", "train_loss", "val_loss", "wall_ms"])
                    .map_err(|e| Error::Domain(format!("writing metrics: {e}")))?;
            }
            Some(w)
        }
        None => None,
    };

    let mut metrics = Vec::new();
    for epoch in start..=cfg.epochs {
        let clock = Instant::now();
        let mut loss_sum = 0.0;
        for (bi, batch) in epoch_batches(&train_set, cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let p = &prep_train[i];
                    loss::sample_loss_and_grad(&model, &p.graph, &train_set[i], &p.features, &p.alpha, p.rho_d, project)
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; model.num_params()];
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let dump = paths.map(|p| p.dump.clone());
                if let Some(path) = &dump {
                    let ck = Checkpoint::from_model(&model, &fingerprint, &init);
                    let d = Dump {
                        epoch,
                        batch: bi,
                        sample_seeds: batch.iter().map(|&i| train_set[i].seed).collect(),
                        losses: results.iter().map(|r| r.0).collect(),
                        checkpoint: &ck,
                    };
                    let text = serde_json::to_string(&d).unwrap_or_default();
                    fs::write(path, text).map_err(|e| Error::io(path, e))?;
                }
                return Err(Error::NonFiniteLoss { epoch, batch: bi, dump });
            }
            loss_sum += batch_loss;
            if cfg.weight_decay > 0.0 {
                for (g, p) in grad.iter_mut().zip(model.params()) {
                    *g += cfg.weight_decay * p;
                }
            }
            if cfg.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam_step(model.params_mut(), &grad, &mut adam, &adam_cfg)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = mean_loss(&model, &val_set, &prep_val, project)?;
        let improved = match (val_loss, best) {
            (Some(v), Some(b)) => v < b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            best = val_loss;
        }
        let m = EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            wall_ms: clock.elapsed().as_millis(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.6e} val {}",
            val_loss.map(fmt_float).unwrap_or_else(|| "-".into())
        );
        if let Some(p) = paths {
            let mut ck = Checkpoint::from_model(&model, &fingerprint, &init);
            ck.epoch = Some(epoch);
            ck.best_val_loss = best;
            ck.adam = Some(adam.clone());
            ck.save(&p.epoch_checkpoint(epoch))?;
            if improved {
                ck.save(&p.best)?;
            }
            ck.save(&p.checkpoint)?;
            if let Some(w) = metrics_writer.as_mut() {
                write_metrics_row(w, &m)?;
            }
        }
        metrics.push(m);
    }
    Ok(TrainOutput {
        model,
        adam,
        metrics,
        best_val_loss: best,
    })
}
