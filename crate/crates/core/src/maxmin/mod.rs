//! Optimal max-min power control.
//!
//! [`solve_maxmin`] bisects on the common SINR target `t`; each step asks the
//! conic feasibility test in [`socp`] whether every UE can reach `t` under
//! the per-AP budgets. [`brute_force_maxmin`] is an independent exact-grid
//! oracle for tiny systems and [`equal_power`] the naive baseline.

mod grid;
pub mod socp;

use serde::{Deserialize, Serialize};

use crate::channel::{FadingMatrix, ScenarioConfig};
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::matrix::Matrix;
use crate::sinr::{compute_alpha, compute_sinr, min_sinr, AlphaMatrix, PowerControl};

pub use socp::{feasibility_check, BarrierSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMinSolution {
    /// Min-SINR achieved by `eta`.
    pub t_star: f64,
    pub eta: PowerControl,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionConfig {
    pub t_lo: f64,
    /// Upper end of the bracket; `None` derives it from the full-power,
    /// interference-free bound.
    pub t_hi: Option<f64>,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub feas_tol: f64,
    pub barrier: BarrierSettings,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self {
            t_lo: 1e-6,
            t_hi: None,
            rel_tol: 1e-4,
            max_iter: 60,
            feas_tol: 1e-6,
            barrier: BarrierSettings::default(),
        }
    }
}

impl BisectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_lo >= 0.0 && self.t_lo.is_finite()) {
            return Err(Error::Config(format!("t_lo must be >= 0, got {}", self.t_lo)));
        }
        if let Some(hi) = self.t_hi {
            if !(hi > self.t_lo) {
                return Err(Error::Config(format!("need t_lo < t_hi, got {} >= {hi}", self.t_lo)));
            }
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// `eta_mk = 1 / K` everywhere.
pub fn equal_power(num_aps: usize, num_ues: usize) -> PowerControl {
    PowerControl::new(Matrix::filled(num_aps, num_ues, 1.0 / num_ues as f64))
}

/// Min-SINR upper bound: every AP at full power towards UE `k` with no
/// interference, minimized over UEs.
pub fn sinr_upper_bound(a: &AlphaMatrix, rho_d: f64) -> f64 {
    let m = a.matrix();
    (0..m.cols())
        .map(|k| {
            let s: f64 = (0..m.rows()).map(|r| m.get(r, k).sqrt()).sum();
            rho_d * s * s
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn solve_maxmin(b: &FadingMatrix, cfg: &ScenarioConfig, bis: &BisectionConfig) -> Result<MaxMinSolution> {
    solve_maxmin_counted(b, cfg, bis, &mut FlopCounter::new())
}

/// [`solve_maxmin`] tallying the solver's arithmetic into `flops`.
pub fn solve_maxmin_counted(
    b: &FadingMatrix,
    cfg: &ScenarioConfig,
    bis: &BisectionConfig,
    flops: &mut FlopCounter,
) -> Result<MaxMinSolution> {
    cfg.validate()?;
    let a = compute_alpha(b, cfg.rho_u, cfg.tau)?;
    flops.mul(4 * b.num_aps() * b.num_ues());
    flops.add(b.num_aps() * b.num_ues());
    bisect(b, &a, cfg.rho_d, bis, flops)
}

pub fn bisect(
    b: &FadingMatrix,
    a: &AlphaMatrix,
    rho_d: f64,
    bis: &BisectionConfig,
    flops: &mut FlopCounter,
) -> Result<MaxMinSolution> {
    bis.validate()?;
    let (mm, kk) = (b.num_aps(), b.num_ues());
    let hi0 = bis.t_hi.unwrap_or_else(|| sinr_upper_bound(a, rho_d));
    flops.mul(mm * kk + 2 * kk);
    flops.add(mm * kk);

    // Equal power is feasible by construction: use it to raise the bracket.
    let uniform = equal_power(mm, kk);
    let t_uniform = min_sinr(&compute_sinr(b, a, &uniform, rho_d)?);
    flops.mul(mm * kk * 4 + 3 * kk);
    flops.add(mm * kk * 3 + kk);

    let (mut lo, mut best) = if t_uniform > bis.t_lo {
        (t_uniform, uniform)
    } else {
        let t_lo = bis.t_lo.max(f64::MIN_POSITIVE);
        match feasibility_check(b, a, rho_d, t_lo, bis.feas_tol, &bis.barrier, flops)? {
            Some(eta) => (t_lo, eta),
            None => return Err(Error::Bracket(bis.t_lo)),
        }
    };
    let mut hi = hi0.max(lo);
    let mut iterations = 0;
    let mut converged = hi <= lo * (1.0 + bis.rel_tol);
    while !converged && iterations < bis.max_iter {
        let mid = (lo * hi).sqrt();
        match feasibility_check(b, a, rho_d, mid, bis.feas_tol, &bis.barrier, flops)? {
            Some(eta) => {
                lo = mid;
                best = eta;
            }
            None => hi = mid,
        }
        iterations += 1;
        converged = hi <= lo * (1.0 + bis.rel_tol);
    }
    let t_star = min_sinr(&compute_sinr(b, a, &best, rho_d)?);
    Ok(MaxMinSolution {
        t_star,
        eta: best,
        iterations,
        converged,
    })
}

/// Exact maximum of the min-SINR over the `grid_step` power lattice.
/// Limited to `M * K <= 6`.
pub fn brute_force_maxmin(b: &FadingMatrix, cfg: &ScenarioConfig, grid_step: f64) -> Result<MaxMinSolution> {
    let (mm, kk) = (b.num_aps(), b.num_ues());
    if mm * kk > 6 {
        return Err(Error::OracleTooLarge { m: mm, k: kk });
    }
    let a = compute_alpha(b, cfg.rho_u, cfg.tau)?;
    let search = grid::GridSearch::new(b, &a, cfg.rho_d, grid_step)?;
    let (units, _, explored) = search.run();
    let eta = search.to_power(&units);
    let t_star = min_sinr(&compute_sinr(b, &a, &eta, cfg.rho_d)?);
    Ok(MaxMinSolution {
        t_star,
        eta,
        iterations: explored,
        converged: true,
    })
}

/// Min-SINR after rounding every coefficient down to the grid. Rounding
/// down keeps the point feasible, so the exact grid optimum is at least
/// this value.
pub fn grid_floor_value(b: &FadingMatrix, cfg: &ScenarioConfig, eta: &PowerControl, grid_step: f64) -> Result<f64> {
    let steps = grid::grid_steps(grid_step)? as f64;
    let rounded = PowerControl::new(eta.matrix().map(|v| (v.max(0.0) * steps + 1e-9).floor() / steps));
    let a = compute_alpha(b, cfg.rho_u, cfg.tau)?;
    Ok(min_sinr(&compute_sinr(b, &a, &rounded, cfg.rho_d)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_scenario, Morphology};
    use crate::sinr::is_feasible;

    fn scenario(m: usize, k: usize, seed: u64) -> (ScenarioConfig, FadingMatrix) {
        let cfg = ScenarioConfig::new(m, k, Morphology::urban(), seed).unwrap();
        let (_, b) = generate_scenario(&cfg).unwrap();
        (cfg, b)
    }

    #[test]
    fn equal_power_examples() {
        let eta = equal_power(2, 4);
        assert!(eta.matrix().as_slice().iter().all(|v| *v == 0.25));
        assert_eq!(eta.matrix().row_sums(), vec![1.0, 1.0]);
        for (m, k) in [(1, 1), (3, 7), (16, 6)] {
            assert!(is_feasible(&equal_power(m, k), 1e-12));
        }
    }

    #[test]
    fn single_link_is_full_power() {
        let (cfg, b) = scenario(1, 1, 4);
        let sol = solve_maxmin(&b, &cfg, &BisectionConfig::default()).unwrap();
        let a = compute_alpha(&b, cfg.rho_u, cfg.tau).unwrap();
        let closed = cfg.rho_d * a.get(0, 0) / (1.0 + cfg.rho_d * b.get(0, 0));
        assert!(sol.converged);
        assert!((sol.eta.get(0, 0) - 1.0).abs() < 1e-6);
        assert!((sol.t_star - closed).abs() <= 1e-4 * closed);
        let grid = brute_force_maxmin(&b, &cfg, 0.01).unwrap();
        assert_eq!(grid.eta.get(0, 0), 1.0);
    }

    #[test]
    fn solution_feasible_and_not_below_baseline() {
        for seed in 0..6 {
            let (cfg, b) = scenario(6, 3, seed);
            let sol = solve_maxmin(&b, &cfg, &BisectionConfig::default()).unwrap();
            assert!(sol.converged);
            assert!(is_feasible(&sol.eta, 1e-6));
            let a = compute_alpha(&b, cfg.rho_u, cfg.tau).unwrap();
            let s = compute_sinr(&b, &a, &sol.eta, cfg.rho_d).unwrap();
            assert!(min_sinr(&s) >= sol.t_star * (1.0 - 1e-4));
            let base = min_sinr(&compute_sinr(&b, &a, &equal_power(6, 3), cfg.rho_d).unwrap());
            assert!(base <= sol.t_star);
        }
    }

    #[test]
    fn bracket_failure_and_iteration_cap() {
        let (cfg, b) = scenario(3, 2, 1);
        let bad = BisectionConfig {
            t_lo: 1e9,
            t_hi: Some(1e10),
            ..Default::default()
        };
        assert!(matches!(solve_maxmin(&b, &cfg, &bad), Err(Error::Bracket(_))));
        let capped = BisectionConfig {
            max_iter: 2,
            ..Default::default()
        };
        let sol = solve_maxmin(&b, &cfg, &capped).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 2);
        assert!(is_feasible(&sol.eta, 1e-6));
        let invalid = BisectionConfig {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(solve_maxmin(&b, &cfg, &invalid).is_err());
    }

    #[test]
    fn feasibility_is_monotone() {
        let (cfg, b) = scenario(4, 3, 11);
        let a = compute_alpha(&b, cfg.rho_u, cfg.tau).unwrap();
        let opt = solve_maxmin(&b, &cfg, &BisectionConfig::default()).unwrap().t_star;
        let s = BarrierSettings::default();
        let mut f = FlopCounter::new();
        let ratios = [0.05, 0.3, 0.7, 0.95, 0.999, 1.001, 1.05, 1.5, 4.0];
        let feas: Vec<bool> = ratios
            .iter()
            .map(|r| feasibility_check(&b, &a, cfg.rho_d, opt * r, 1e-6, &s, &mut f).unwrap().is_some())
            .collect();
        assert_eq!(feas, vec![true, true, true, true, true, false, false, false, false]);
    }

    #[test]
    fn grid_search_matches_enumeration() {
        for seed in 0..4 {
            let (cfg, b) = scenario(2, 2, 100 + seed);
            let a = compute_alpha(&b, cfg.rho_u, cfg.tau).unwrap();
            let search = grid::GridSearch::new(&b, &a, cfg.rho_d, 0.05).unwrap();
            let (_, val, _) = search.run();
            assert_eq!(val, search.exhaustive());
        }
        let (cfg, b) = scenario(3, 2, 7);
        let a = compute_alpha(&b, cfg.rho_u, cfg.tau).unwrap();
        let search = grid::GridSearch::new(&b, &a, cfg.rho_d, 0.1).unwrap();
        assert_eq!(search.run().1, search.exhaustive());
    }

    #[test]
    fn grid_refinement_never_worse() {
        for seed in 0..3 {
            let (cfg, b) = scenario(2, 2, 300 + seed);
            let coarse = brute_force_maxmin(&b, &cfg, 0.02).unwrap().t_star;
            let fine = brute_force_maxmin(&b, &cfg, 0.01).unwrap().t_star;
            assert!(fine >= coarse);
        }
    }

    #[test]
    fn symmetric_users_nearly_equal_on_grid() {
        let b = FadingMatrix::from_vec(2, 2, vec![3e-11, 3e-11, 8e-12, 8e-12]).unwrap();
        let cfg = ScenarioConfig::new(2, 2, Morphology::urban(), 0).unwrap();
        let sol = brute_force_maxmin(&b, &cfg, 0.01).unwrap();
        let a = compute_alpha(&b, cfg.rho_u, cfg.tau).unwrap();
        let s = compute_sinr(&b, &a, &sol.eta, cfg.rho_d).unwrap();
        let (s1, s2) = (s.as_slice()[0], s.as_slice()[1]);
        // One grid step moved between the two users bounds the imbalance.
        let slack = sol.t_star * 0.05;
        assert!((s1 - s2).abs() <= slack, "{s1} vs {s2}");
    }

    #[test]
    fn oracle_size_guard() {
        let (cfg, b) = scenario(4, 2, 0);
        assert!(matches!(brute_force_maxmin(&b, &cfg, 0.1), Err(Error::OracleTooLarge { .. })));
        let (cfg, b) = scenario(2, 2, 0);
        assert!(brute_force_maxmin(&b, &cfg, 0.3).is_err());
    }

    #[test]
    fn column_permutation_permutes_solution() {
        let (cfg, b) = scenario(5, 3, 21);
        let ue = [2, 0, 1];
        let ap = [0, 1, 2, 3, 4];
        let sol = solve_maxmin(&b, &cfg, &BisectionConfig::default()).unwrap();
        let perm = solve_maxmin(&b.permuted(&ap, &ue), &cfg, &BisectionConfig::default()).unwrap();
        assert!((sol.t_star - perm.t_star).abs() <= 1e-6 * sol.t_star);
        let expected = sol.eta.permuted(&ap, &ue);
        for (x, y) in expected.matrix().as_slice().iter().zip(perm.eta.matrix().as_slice()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }
}
