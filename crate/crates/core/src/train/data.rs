//! Labeled samples, JSON Lines I/O and dataset generation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{derive_seed, generate_scenario, FadingMatrix, MorphologyKind, MorphologyTable, ScenarioConfig};
use crate::error::{Error, Result};
use crate::maxmin::{solve_maxmin, BisectionConfig};
use crate::sinr::{compute_alpha, compute_sinr, PowerControl, SinrVector};

/// `(M, K, morphology)` triple, written `"<M>x<K>:<morphology>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioTag {
    pub num_aps: usize,
    pub num_ues: usize,
    pub morphology: MorphologyKind,
}

impl ScenarioTag {
    pub fn new(num_aps: usize, num_ues: usize, morphology: MorphologyKind) -> Self {
        Self {
            num_aps,
            num_ues,
            morphology,
        }
    }

    pub fn config(&self, table: &MorphologyTable, seed: u64) -> Result<ScenarioConfig> {
        ScenarioConfig::new(self.num_aps, self.num_ues, table.get(self.morphology), seed)
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}:{}", self.num_aps, self.num_ues, self.morphology)
    }
}

impl FromStr for ScenarioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            location: format!("scenario {s:?}"),
            message: msg.to_string(),
        };
        let (size, morph) = s.trim().split_once(':').ok_or_else(|| bad("expected <M>x<K>:<morphology>"))?;
        let (m, k) = size.split_once(['x', 'X']).ok_or_else(|| bad("expected <M>x<K>"))?;
        let num_aps: usize = m.trim().parse().map_err(|_| bad("M is not a positive integer"))?;
        let num_ues: usize = k.trim().parse().map_err(|_| bad("K is not a positive integer"))?;
        if num_aps == 0 || num_ues == 0 {
            return Err(bad("M and K must be at least 1"));
        }
        let morphology = morph.parse().map_err(|_| bad("morphology must be urban, suburban or rural"))?;
        Ok(Self::new(num_aps, num_ues, morphology))
    }
}

/// Comma-separated list of scenario tags.
pub fn parse_scenarios(spec: &str) -> Result<Vec<ScenarioTag>> {
    let tags: Vec<ScenarioTag> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if tags.is_empty() {
        return Err(Error::Parse {
            location: "scenario list".into(),
            message: "no scenarios given".into(),
        });
    }
    Ok(tags)
}

/// A fading realization, optionally with its optimal power control.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tag: ScenarioTag,
    pub seed: u64,
    pub beta: FadingMatrix,
    pub eta_opt: PowerControl,
    pub sinr_opt: SinrVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "K")]
    k: usize,
    morphology: MorphologyKind,
    seed: u64,
    beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta_opt: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sinr_opt: Option<Vec<f64>>,
}

/// Unlabeled fading realization, as read by the labeling step.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub tag: ScenarioTag,
    pub seed: u64,
    pub beta: FadingMatrix,
}

impl Sample {
    /// Relative mismatch between the stored SINRs and a recomputation.
    pub fn sinr_mismatch(&self, cfg: &ScenarioConfig) -> Result<f64> {
        let a = compute_alpha(&self.beta, cfg.rho_u, cfg.tau)?;
        let s = compute_sinr(&self.beta, &a, &self.eta_opt, cfg.rho_d)?;
        Ok(s.as_slice()
            .iter()
            .zip(self.sinr_opt.as_slice())
            .map(|(x, y)| (x - y).abs() / x.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max))
    }

    pub fn realization(&self) -> Realization {
        Realization {
            tag: self.tag,
            seed: self.seed,
            beta: self.beta.clone(),
        }
    }

    fn to_record(&self) -> Record {
        Record {
            m: self.tag.num_aps,
            k: self.tag.num_ues,
            morphology: self.tag.morphology,
            seed: self.seed,
            beta: self.beta.matrix().as_slice().to_vec(),
            eta_opt: Some(self.eta_opt.matrix().as_slice().to_vec()),
            sinr_opt: Some(self.sinr_opt.as_slice().to_vec()),
        }
    }
}

fn record_realization(r: &Record) -> Result<Realization> {
    Ok(Realization {
        tag: ScenarioTag::new(r.m, r.k, r.morphology),
        seed: r.seed,
        beta: FadingMatrix::from_vec(r.m, r.k, r.beta.clone())?,
    })
}

fn record_sample(r: Record) -> Result<Sample> {
    let real = record_realization(&r)?;
    let (Some(eta), Some(sinr)) = (r.eta_opt, r.sinr_opt) else {
        return Err(Error::Config("sample has no eta_opt / sinr_opt labels".into()));
    };
    if sinr.len() != r.k {
        return Err(Error::Shape(format!("sinr_opt has {} entries for K = {}", sinr.len(), r.k)));
    }
    Ok(Sample {
        tag: real.tag,
        seed: real.seed,
        beta: real.beta,
        eta_opt: PowerControl::from_vec(r.m, r.k, eta)?,
        sinr_opt: SinrVector::new(sinr)?,
    })
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn located(path: &Path, line: usize, e: Error) -> Error {
    Error::Parse {
        location: format!("{}:{line}", path.display()),
        message: e.to_string(),
    }
}

/// Reads labeled samples, checking each against `sinr_mismatch <= 1e-6`.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let table = MorphologyTable::default();
    read_records(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let s = record_sample(r).map_err(|e| located(path, i + 1, e))?;
            let cfg = s.tag.config(&table, s.seed)?;
            let err = s.sinr_mismatch(&cfg)?;
            if !(err <= 1e-6) {
                return Err(located(
                    path,
                    i + 1,
                    Error::Domain(format!("stored sinr_opt disagrees with eta_opt (relative error {err:e})")),
                ));
            }
            Ok(s)
        })
        .collect()
}

/// Reads fading realizations, ignoring any labels.
pub fn read_realizations(path: &Path) -> Result<Vec<Realization>> {
    read_records(path)?
        .iter()
        .enumerate()
        .map(|(i, r)| record_realization(r).map_err(|e| located(path, i + 1, e)))
        .collect()
}

fn write_records(path: &Path, records: impl Iterator<Item = Record>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    write_records(path, samples.iter().map(Sample::to_record))
}

/// Writes unlabeled records (no `eta_opt` / `sinr_opt`).
pub fn write_realizations(path: &Path, reals: &[Realization]) -> Result<()> {
    write_records(
        path,
        reals.iter().map(|r| Record {
            m: r.tag.num_aps,
            k: r.tag.num_ues,
            morphology: r.tag.morphology,
            seed: r.seed,
            beta: r.beta.matrix().as_slice().to_vec(),
            eta_opt: None,
            sinr_opt: None,
        }),
    )
}

/// Draws the fading of realization `index` (seed `seed ^ index`).
pub fn draw_realization(tag: ScenarioTag, table: &MorphologyTable, seed: u64, index: u64) -> Result<Realization> {
    let sample_seed = derive_seed(seed, index);
    let cfg = tag.config(table, sample_seed)?;
    let (_, beta) = generate_scenario(&cfg)?;
    Ok(Realization {
        tag,
        seed: sample_seed,
        beta,
    })
}

/// Solves the max-min problem for one realization.
pub fn label(real: &Realization, table: &MorphologyTable, bis: &BisectionConfig) -> Result<Sample> {
    let cfg = real.tag.config(table, real.seed)?;
    let sol = solve_maxmin(&real.beta, &cfg, bis)?;
    let a = compute_alpha(&real.beta, cfg.rho_u, cfg.tau)?;
    let sinr_opt = compute_sinr(&real.beta, &a, &sol.eta, cfg.rho_d)?;
    Ok(Sample {
        tag: real.tag,
        seed: real.seed,
        beta: real.beta.clone(),
        eta_opt: sol.eta,
        sinr_opt,
    })
}

#[derive(Debug, Clone)]
pub struct Labeled {
    pub samples: Vec<Sample>,
    /// Input position and error of every realization the solver failed on.
    pub skipped: Vec<(usize, String)>,
}

/// Labels realizations in parallel. Failures are logged and skipped, and
/// the output keeps the input order.
pub fn label_all(reals: &[Realization], table: &MorphologyTable, bis: &BisectionConfig) -> Labeled {
    let results: Vec<Result<Sample>> = reals.par_iter().map(|r| label(r, table, bis)).collect();
    let mut samples = Vec::with_capacity(reals.len());
    let mut skipped = Vec::new();
    for (i, (r, res)) in reals.iter().zip(results).enumerate() {
        match res {
            Ok(s) => samples.push(s),
            Err(e) => {
                log::warn!("skipping realization {i} ({} seed {}): {e}", r.tag, r.seed);
                skipped.push((i, e.to_string()));
            }
        }
    }
    Labeled { samples, skipped }
}

/// `count` realizations per scenario. Realization `i` over the whole list
/// (scenario-major) uses seed `seed ^ i`.
pub fn draw_realizations(
    scenarios: &[ScenarioTag],
    count: usize,
    table: &MorphologyTable,
    seed: u64,
) -> Result<Vec<Realization>> {
    let mut reals = Vec::with_capacity(scenarios.len() * count);
    for (s, tag) in scenarios.iter().enumerate() {
        for j in 0..count {
            reals.push(draw_realization(*tag, table, seed, (s * count + j) as u64)?);
        }
    }
    Ok(reals)
}

/// [`draw_realizations`] followed by [`label_all`].
pub fn generate_dataset(
    scenarios: &[ScenarioTag],
    count: usize,
    table: &MorphologyTable,
    bis: &BisectionConfig,
    seed: u64,
) -> Result<Labeled> {
    let reals = draw_realizations(scenarios, count, table, seed)?;
    Ok(label_all(&reals, table, bis))
}

/// Seeded split into `(train, validation)`, holding out
/// `round(val_fraction * n)` samples of every scenario.
pub fn split_train_val(samples: &[Sample], val_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("validation fraction must lie in [0, 1), got {val_fraction}")));
    }
    let mut tags: Vec<ScenarioTag> = Vec::new();
    for s in samples {
        if !tags.contains(&s.tag) {
            tags.push(s.tag);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; samples.len()];
    for tag in tags {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].tag == tag).collect();
        idx.shuffle(&mut rng);
        let n_val = (val_fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..n_val] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<_>, Vec<_>) = samples.iter().cloned().zip(is_val).partition(|(_, v)| *v);
    Ok((train.into_iter().map(|p| p.0).collect(), val.into_iter().map(|p| p.0).collect()))
}
