//! Spectral-efficiency CDFs, percentile losses and FLOP comparisons.
//!
//! CDFs pool every user of every realization. Percentiles interpolate
//! linearly between order statistics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{LinkBudget, MorphologyTable};
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::gnn::GnnModel;
use crate::maxmin::{bisect, equal_power, BisectionConfig};
use crate::sinr::{compute_alpha, compute_sinr, min_sinr, spectral_efficiency};
use crate::train::data::{draw_realization, Sample, ScenarioTag};
use crate::train::fmt_float;

pub const METHODS: [&str; 3] = ["gnn", "optimal", "equal_power"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub num_samples: usize,
    /// Sorted per-user spectral efficiencies (bit/s/Hz).
    pub gnn: Vec<f64>,
    pub optimal: Vec<f64>,
    pub equal_power: Vec<f64>,
    /// Percent loss of the GNN median SE relative to the optimum.
    pub loss_at_median: f64,
    /// Percent loss at the 5th percentile.
    pub likely95_loss: f64,
    pub equal_loss_at_median: f64,
    pub equal_likely95_loss: f64,
    /// Mean instrumented FLOPs of one inference.
    pub gnn_flops: u64,
    /// FLOPs of one full bisection solve on the first sample.
    pub solver_flops: u64,
    /// Largest `(min SINR_gnn - t_star) / t_star` over the samples.
    pub max_excess: f64,
}

impl EvalReport {
    pub fn cdf(&self, method: &str) -> Option<&[f64]> {
        match method {
            "gnn" => Some(&self.gnn),
            "optimal" => Some(&self.optimal),
            "equal_power" => Some(&self.equal_power),
            _ => None,
        }
    }
}

/// Linear-interpolation percentile of ascending `sorted`, `p` in `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("percentile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("percentile level {p} outside [0, 1]")));
    }
    let h = p * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    Ok(sorted[i] + (h - i as f64) * (sorted[j] - sorted[i]))
}

/// `(reference - value) / reference` in percent at level `p`.
pub fn percent_loss(reference: &[f64], value: &[f64], p: f64) -> Result<f64> {
    let r = percentile(reference, p)?;
    let v = percentile(value, p)?;
    if !(r > 0.0) {
        return Err(Error::Domain(format!("reference percentile {r} is not positive")));
    }
    Ok((r - v) / r * 100.0)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

struct SampleEval {
    gnn: Vec<f64>,
    optimal: Vec<f64>,
    equal: Vec<f64>,
    flops: u64,
    excess: f64,
}

fn evaluate_one(model: &GnnModel, s: &Sample, budget: &LinkBudget) -> Result<SampleEval> {
    let (mm, kk) = (s.beta.num_aps(), s.beta.num_ues());
    let alpha = compute_alpha(&s.beta, budget.rho_u(), kk)?;
    let mut flops = FlopCounter::new();
    let eta = model.predict_counted(&s.beta, &mut flops)?;
    let sinr = compute_sinr(&s.beta, &alpha, &eta, budget.rho_d())?;
    let equal = compute_sinr(&s.beta, &alpha, &equal_power(mm, kk), budget.rho_d())?;
    let t_star = min_sinr(&s.sinr_opt);
    Ok(SampleEval {
        gnn: spectral_efficiency(&sinr),
        optimal: spectral_efficiency(&s.sinr_opt),
        equal: spectral_efficiency(&equal),
        flops: flops.total(),
        excess: (min_sinr(&sinr) - t_star) / t_star,
    })
}

/// Evaluates `model` on samples of a single scenario.
pub fn evaluate(model: &GnnModel, samples: &[Sample], budget: &LinkBudget, bis: &BisectionConfig) -> Result<EvalReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Empty("evaluation set has no samples".into()))?;
    if let Some(other) = samples.iter().find(|s| s.tag != first.tag) {
        return Err(Error::Config(format!(
            "evaluate takes one scenario, got {} and {}",
            first.tag, other.tag
        )));
    }
    let per: Vec<SampleEval> = samples
        .par_iter()
        .map(|s| evaluate_one(model, s, budget))
        .collect::<Result<_>>()?;

    let mut solver = FlopCounter::new();
    let alpha = compute_alpha(&first.beta, budget.rho_u(), first.tag.num_ues)?;
    solver.mul(4 * first.beta.num_aps() * first.beta.num_ues());
    solver.add(first.beta.num_aps() * first.beta.num_ues());
    bisect(&first.beta, &alpha, budget.rho_d(), bis, &mut solver)?;

    let gnn = sorted(per.iter().flat_map(|p| p.gnn.iter().copied()).collect());
    let optimal = sorted(per.iter().flat_map(|p| p.optimal.iter().copied()).collect());
    let equal = sorted(per.iter().flat_map(|p| p.equal.iter().copied()).collect());
    let report = EvalReport {
        scenario: first.tag.to_string(),
        num_samples: samples.len(),
        loss_at_median: percent_loss(&optimal, &gnn, 0.5)?,
        likely95_loss: percent_loss(&optimal, &gnn, 0.05)?,
        equal_loss_at_median: percent_loss(&optimal, &equal, 0.5)?,
        equal_likely95_loss: percent_loss(&optimal, &equal, 0.05)?,
        gnn_flops: per.iter().map(|p| p.flops).sum::<u64>() / per.len() as u64,
        solver_flops: solver.total(),
        max_excess: per.iter().map(|p| p.excess).fold(f64::NEG_INFINITY, f64::max),
        gnn,
        optimal,
        equal_power: equal,
    };
    if ![report.loss_at_median, report.likely95_loss, report.max_excess]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::Domain(format!("non-finite metrics for {}", report.scenario)));
    }
    Ok(report)
}

/// One report per scenario, in order of first appearance.
pub fn evaluate_by_scenario(
    model: &GnnModel,
    samples: &[Sample],
    budget: &LinkBudget,
    bis: &BisectionConfig,
) -> Result<Vec<EvalReport>> {
    let mut tags: Vec<ScenarioTag> = Vec::new();
    for s in samples {
        if !tags.contains(&s.tag) {
            tags.push(s.tag);
        }
    }
    if tags.is_empty() {
        return Err(Error::Empty("evaluation set has no samples".into()));
    }
    tags.iter()
        .map(|tag| {
            let group: Vec<Sample> = samples.iter().filter(|s| s.tag == *tag).cloned().collect();
            evaluate(model, &group, budget, bis)
        })
        .collect()
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Columns `se_bits_per_s_hz,cdf,method`; row `i` of a method with `n`
/// entries has `cdf = (i + 1) / n`.
pub fn export_cdf_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["se_bits_per_s_hz", "cdf", "method"])?;
    for method in METHODS {
        let se = report.cdf(method).unwrap_or_default();
        let n = se.len() as f64;
        for (i, v) in se.iter().enumerate() {
            w.write_record([fmt_float(*v), fmt_float((i + 1) as f64 / n), method.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `scenario,gnn_flops,solver_flops,loss_median_pct,likely95_loss_pct`.
pub fn export_summary_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["scenario", "gnn_flops", "solver_flops", "loss_median_pct", "likely95_loss_pct"])?;
    for r in reports {
        w.write_record([
            r.scenario.clone(),
            r.gnn_flops.to_string(),
            r.solver_flops.to_string(),
            fmt_float(r.loss_at_median),
            fmt_float(r.likely95_loss),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopComparison {
    pub num_aps: usize,
    pub num_ues: usize,
    pub gnn: u64,
    pub solver: Option<u64>,
}

impl FlopComparison {
    /// `MK(M + K)`.
    pub fn complexity(&self) -> f64 {
        let (m, k) = (self.num_aps as f64, self.num_ues as f64);
        m * k * (m + k)
    }

    pub fn ratio(&self) -> Option<f64> {
        self.solver.map(|s| s as f64 / self.gnn as f64)
    }
}

/// Instrumented inference and (optionally) solver FLOPs on realization 0 of
/// `tag` drawn with `seed`.
pub fn flop_comparison(
    model: &GnnModel,
    tag: ScenarioTag,
    table: &MorphologyTable,
    bis: Option<&BisectionConfig>,
    seed: u64,
) -> Result<FlopComparison> {
    let real = draw_realization(tag, table, seed, 0)?;
    let mut gnn = FlopCounter::new();
    model.predict_counted(&real.beta, &mut gnn)?;
    let solver = match bis {
        Some(bis) => {
            let cfg = tag.config(table, seed)?;
            let mut f = FlopCounter::new();
            crate::maxmin::solve_maxmin_counted(&real.beta, &cfg, bis, &mut f)?;
            Some(f.total())
        }
        None => None,
    };
    Ok(FlopComparison {
        num_aps: tag.num_aps,
        num_ues: tag.num_ues,
        gnn: gnn.total(),
        solver,
    })
}

/// Least-squares fit `y = a x + b`; returns `(a, b, R^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!("fit needs two equal series of length >= 2, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("fit abscissae are all equal".into()));
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((a, b, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MorphologyKind;
    use crate::gnn::LayerPlan;
    use crate::train::{compute_norm_stats, generate_dataset};
    use proptest::prelude::*;

    fn setup(m: usize, k: usize, n: usize) -> (GnnModel, Vec<Sample>) {
        let tag = ScenarioTag::new(m, k, MorphologyKind::Urban);
        let data = generate_dataset(&[tag], n, &MorphologyTable::default(), &BisectionConfig::default(), 11).unwrap();
        let mut model = GnnModel::new(LayerPlan::default(), 3).unwrap();
        model.norm = compute_norm_stats(&data.samples).unwrap();
        (model, data.samples)
    }

    #[test]
    fn percentile_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5).unwrap(), 3.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 1.0).unwrap(), 5.0);
        assert!((percentile(&v, 0.05).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(percentile(&[2.0, 4.0], 0.5).unwrap(), 3.0);
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&v, 1.5).is_err());
        assert_eq!(percent_loss(&[2.0], &[1.5], 0.5).unwrap(), 25.0);
    }

    #[test]
    fn report_and_exports() {
        let (model, samples) = setup(4, 3, 20);
        let budget = LinkBudget::default();
        let r = evaluate(&model, &samples, &budget, &BisectionConfig::default()).unwrap();
        assert_eq!(r.gnn.len(), 60);
        for m in METHODS {
            assert!(r.cdf(m).unwrap().windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(r.max_excess <= 1e-4);
        assert!(r.gnn_flops > 0 && r.solver_flops > r.gnn_flops);
        assert_eq!(r, evaluate(&model, &samples, &budget, &BisectionConfig::default()).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cdf.csv");
        let single = evaluate(&model, &samples[..1], &budget, &BisectionConfig::default()).unwrap();
        export_cdf_csv(&single, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "se_bits_per_s_hz,cdf,method");
        assert_eq!(lines.len(), 1 + 3 * 3);
        let cdf: Vec<f64> = lines[1..4].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!((cdf[0] - 1.0 / 3.0).abs() < 1e-8 && (cdf[1] - 2.0 / 3.0).abs() < 1e-8 && cdf[2] == 1.0);
        assert!(lines[1].ends_with(",gnn") && lines[9].ends_with(",equal_power"));

        let summary = dir.path().join("summary.csv");
        export_summary_csv(&[r.clone(), single], &summary).unwrap();
        let text = std::fs::read_to_string(&summary).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("scenario,gnn_flops,solver_flops,loss_median_pct,likely95_loss_pct\n4x3:urban,"));
        assert!(export_summary_csv(&[r], &dir.path().join("missing/summary.csv")).is_err());
    }

    #[test]
    fn equal_power_loses_at_median() {
        let (model, samples) = setup(8, 3, 100);
        let r = evaluate(&model, &samples, &LinkBudget::default(), &BisectionConfig::default()).unwrap();
        assert!(r.equal_loss_at_median > 0.0, "{}", r.equal_loss_at_median);
        let budget = LinkBudget::default();
        for s in &samples {
            let a = compute_alpha(&s.beta, budget.rho_u(), 3).unwrap();
            let eq = compute_sinr(&s.beta, &a, &equal_power(8, 3), budget.rho_d()).unwrap();
            assert!(min_sinr(&s.sinr_opt) >= min_sinr(&eq));
        }
    }

    #[test]
    fn optimum_against_itself_is_lossless() {
        let (_, samples) = setup(3, 2, 10);
        let opt = sorted(samples.iter().flat_map(|s| spectral_efficiency(&s.sinr_opt)).collect());
        for p in [0.0, 0.05, 0.25, 0.5, 0.95, 1.0] {
            assert_eq!(percent_loss(&opt, &opt, p).unwrap(), 0.0);
        }
    }

    #[test]
    fn grouping_and_errors() {
        let (model, mut samples) = setup(3, 2, 4);
        let (_, more) = setup(2, 2, 3);
        samples.extend(more);
        let budget = LinkBudget::default();
        let bis = BisectionConfig::default();
        assert!(evaluate(&model, &samples, &budget, &bis).is_err());
        assert!(evaluate(&model, &[], &budget, &bis).is_err());
        let reports = evaluate_by_scenario(&model, &samples, &budget, &bis).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!((reports[0].num_samples, reports[1].scenario.as_str()), (4, "2x2:urban"));
    }

    #[test]
    fn flop_comparison_smallest_instance() {
        let model = GnnModel::new(LayerPlan::default(), 1).unwrap();
        let tag = ScenarioTag::new(1, 1, MorphologyKind::Urban);
        let c = flop_comparison(&model, tag, &MorphologyTable::default(), Some(&BisectionConfig::default()), 1).unwrap();
        assert!(c.gnn > 0 && c.solver.unwrap() > 0);
        assert_eq!(c.complexity(), 2.0);
    }

    #[test]
    fn fit_examples() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pooling_is_order_invariant(v in proptest::collection::vec(0.0f64..20.0, 1..40), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut w = v.clone();
            w.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (a, b) = (sorted(v), sorted(w));
            prop_assert_eq!(&a, &b);
            for p in [0.05, 0.5] {
                prop_assert_eq!(percentile(&a, p).unwrap(), percentile(&b, p).unwrap());
            }
        }
    }
}
