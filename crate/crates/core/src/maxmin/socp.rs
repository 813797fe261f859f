//! Second-order-cone feasibility test for a target SINR `t`.
//!
//! With `s_mk = sqrt(eta_mk)`, `a_mk = sqrt(rho_d alpha_mk)` and
//! `b_mk = sqrt(rho_d beta_mk)`, the target is reachable iff some `s >= 0`,
//! `p` satisfy
//!
//! ```text
//! sum_m a_mk s_mk >= sqrt(t) * || (1, b_1k p_1, ..., b_Mk p_M) ||   for every UE k
//! || s_m. || <= p_m <= 1                                            for every AP m
//! ```
//!
//! (`p_m` bounds the AP's amplitude, so `p_m^2 >= sum_k eta_mk`.) The test
//! maximizes a common margin `z` subtracted from every UE cone's left-hand
//! side with a log-barrier interior-point method. The phase-I problem is
//! always strictly feasible; `t` is feasible iff the optimal margin is
//! non-negative.

use crate::channel::FadingMatrix;
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::matrix::Matrix;
use crate::sinr::{compute_sinr, min_sinr, AlphaMatrix, PowerControl};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSettings {
    /// Stop once the duality-gap bound `nu / tau` falls below this.
    pub gap_tol: f64,
    /// Barrier weight growth factor between centering stages.
    pub growth: f64,
    pub max_newton: usize,
    /// Centering stops when `lambda^2 / 2` is below this. Its effect on the
    /// margin bound is scaled by `1 / tau`.
    pub newton_tol: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            growth: 12.0,
            max_newton: 200,
            newton_tol: 1e-8,
        }
    }
}

struct Problem {
    m: usize,
    k: usize,
    /// Normalized UE-cone coefficients, row-major `M x K`.
    a: Vec<f64>,
    /// Squared normalized interference coefficients, row-major `M x K`.
    b2: Vec<f64>,
    /// Squared normalized noise term per UE.
    r2: Vec<f64>,
}

impl Problem {
    fn n(&self) -> usize {
        self.m * self.k + self.m + 1
    }

    fn sigma(&self, m: usize, k: usize) -> usize {
        m * self.k + k
    }

    fn p(&self, m: usize) -> usize {
        self.m * self.k + m
    }

    fn z(&self) -> usize {
        self.m * self.k + self.m
    }

    /// Barrier parameter (sum of cone degrees).
    fn nu(&self) -> f64 {
        (self.m * self.k + self.m + 2 * self.m + 2 * self.k) as f64
    }

    fn ue_lhs(&self, x: &[f64], k: usize) -> f64 {
        (0..self.m).map(|m| self.a[m * self.k + k] * x[self.sigma(m, k)]).sum::<f64>() - x[self.z()]
    }

    fn ue_rhs2(&self, x: &[f64], k: usize) -> f64 {
        self.r2[k]
            + (0..self.m)
                .map(|m| {
                    let p = x[self.p(m)];
                    self.b2[m * self.k + k] * p * p
                })
                .sum::<f64>()
    }

    fn ap_slack(&self, x: &[f64], m: usize) -> f64 {
        let p = x[self.p(m)];
        p * p - (0..self.k).map(|k| x[self.sigma(m, k)].powi(2)).sum::<f64>()
    }

    /// Barrier value, or `None` outside the open domain.
    fn barrier(&self, x: &[f64], flops: &mut FlopCounter) -> Option<f64> {
        let (mm, kk) = (self.m, self.k);
        let mut phi = 0.0;
        for i in 0..mm * kk {
            if !(x[i] > 0.0) {
                return None;
            }
            phi -= x[i].ln();
        }
        for m in 0..mm {
            let p = x[self.p(m)];
            let g = self.ap_slack(x, m);
            if !(p > 0.0 && p < 1.0 && g > 0.0) {
                return None;
            }
            phi -= (1.0 - p).ln() + g.ln();
        }
        for k in 0..kk {
            let u = self.ue_lhs(x, k);
            let h = u * u - self.ue_rhs2(x, k);
            if !(u > 0.0 && h > 0.0) {
                return None;
            }
            phi -= h.ln();
        }
        flops.mul(mm * kk + mm * (kk + 3) + kk * (3 * mm + 3));
        flops.add(mm * kk + mm * (kk + 3) + kk * (2 * mm + 3));
        Some(phi)
    }

    /// Gradient and dense Hessian of `-tau * z + barrier` at a domain point.
    fn derivatives(&self, x: &[f64], tau: f64, grad: &mut [f64], hess: &mut [f64], flops: &mut FlopCounter) {
        let (mm, kk, n) = (self.m, self.k, self.n());
        grad.fill(0.0);
        hess.fill(0.0);
        grad[self.z()] = -tau;

        for i in 0..mm * kk {
            let inv = 1.0 / x[i];
            grad[i] -= inv;
            hess[i * n + i] += inv * inv;
        }
        flops.mul(2 * mm * kk);
        flops.add(2 * mm * kk);

        // AP cones: G = p^2 - |s_m|^2 and the p <= 1 bound.
        let mut idx = vec![0usize; kk + 1];
        let mut dg = vec![0.0; kk + 1];
        for m in 0..mm {
            let pi = self.p(m);
            let p = x[pi];
            let one_minus = 1.0 - p;
            grad[pi] += 1.0 / one_minus;
            hess[pi * n + pi] += 1.0 / (one_minus * one_minus);

            let g = self.ap_slack(x, m);
            for k in 0..kk {
                idx[k] = self.sigma(m, k);
                dg[k] = -2.0 * x[idx[k]];
            }
            idx[kk] = pi;
            dg[kk] = 2.0 * p;
            let inv_g = 1.0 / g;
            for (a, &ia) in idx.iter().enumerate() {
                grad[ia] -= dg[a] * inv_g;
            }
            for k in 0..kk {
                hess[idx[k] * n + idx[k]] += 2.0 * inv_g;
            }
            hess[pi * n + pi] -= 2.0 * inv_g;
            let w = inv_g * inv_g;
            for (a, &ia) in idx.iter().enumerate() {
                let da = dg[a] * w;
                for (b, &ib) in idx.iter().enumerate() {
                    hess[ia * n + ib] += da * dg[b];
                }
            }
            let len = kk + 1;
            flops.mul(8 + 2 * kk + 2 * len + len + 2 * len * len);
            flops.add(6 + 2 * kk + len + kk + 1 + len * len);
        }

        // UE cones: h = u^2 - |v|^2 with u = sum_m a s - z.
        let len = 2 * mm + 1;
        let mut idx = vec![0usize; len];
        let mut du = vec![0.0; len];
        let mut dh = vec![0.0; len];
        for k in 0..kk {
            let u = self.ue_lhs(x, k);
            let h = u * u - self.ue_rhs2(x, k);
            let inv_h = 1.0 / h;
            for m in 0..mm {
                idx[m] = self.sigma(m, k);
                du[m] = self.a[m * kk + k];
                dh[m] = 2.0 * u * du[m];
                idx[mm + m] = self.p(m);
                du[mm + m] = 0.0;
                dh[mm + m] = -2.0 * self.b2[m * kk + k] * x[self.p(m)];
            }
            idx[2 * mm] = self.z();
            du[2 * mm] = -1.0;
            dh[2 * mm] = -2.0 * u;
            for a in 0..len {
                grad[idx[a]] -= dh[a] * inv_h;
            }
            for m in 0..mm {
                let pi = self.p(m);
                hess[pi * n + pi] += 2.0 * self.b2[m * kk + k] * inv_h;
            }
            let w2 = inv_h * inv_h;
            let w1 = 2.0 * inv_h;
            for a in 0..len {
                let (ha, ua) = (dh[a] * w2, du[a] * w1);
                let row = idx[a] * n;
                for b in 0..len {
                    hess[row + idx[b]] += ha * dh[b] - ua * du[b];
                }
            }
            flops.mul(4 * mm + 6 + 4 * mm + len + 2 * mm + 2 * len + 2 * len * len);
            flops.add(3 * mm + 3 + len + mm + 2 * len * len);
        }
    }
}

/// In-place Cholesky `A = L L^T` of a dense symmetric `n x n` matrix (lower
/// triangle used). Returns `false` if a pivot is not positive.
fn cholesky(a: &mut [f64], n: usize, flops: &mut FlopCounter) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        flops.mul(j + 1);
        flops.add(j);
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        let inv = 1.0 / ljj;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for p in 0..j {
                v -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = v * inv;
        }
        flops.mul(1 + (n - j - 1) * (j + 1));
        flops.add((n - j - 1) * j);
    }
    true
}

/// Solves `L L^T x = b` in place.
fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64], flops: &mut FlopCounter) {
    for i in 0..n {
        let mut v = b[i];
        for p in 0..i {
            v -= l[i * n + p] * b[p];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for p in i + 1..n {
            v -= l[p * n + i] * b[p];
        }
        b[i] = v / l[i * n + i];
    }
    flops.mul(n * n + n);
    flops.add(n * n - n);
}

fn newton_direction(
    hess: &[f64],
    grad: &[f64],
    n: usize,
    work: &mut Vec<f64>,
    dir: &mut [f64],
    flops: &mut FlopCounter,
) -> Result<()> {
    let max_diag = (0..n).map(|i| hess[i * n + i].abs()).fold(0.0, f64::max);
    let mut shift = 0.0;
    for _ in 0..8 {
        work.clear();
        work.extend_from_slice(hess);
        if shift > 0.0 {
            for i in 0..n {
                work[i * n + i] += shift;
            }
            flops.add(n);
        }
        if cholesky(work, n, flops) {
            for (d, g) in dir.iter_mut().zip(grad) {
                *d = -g;
            }
            cholesky_solve(work, n, dir, flops);
            return Ok(());
        }
        shift = if shift == 0.0 { 1e-14 * max_diag.max(1.0) } else { shift * 100.0 };
    }
    Err(Error::SolverFailure("Newton system is not positive definite".into()))
}

fn build_problem(b: &FadingMatrix, a: &AlphaMatrix, rho_d: f64, t: f64) -> Problem {
    let (mm, kk) = (b.num_aps(), b.num_ues());
    let sqrt_t = t.sqrt();
    let mut an = vec![0.0; mm * kk];
    let mut b2 = vec![0.0; mm * kk];
    let mut r2 = vec![0.0; kk];
    for k in 0..kk {
        let raw_b2: Vec<f64> = (0..mm).map(|m| rho_d * b.get(m, k)).collect();
        // Scale each UE cone so its right-hand side is at most 1 at full power.
        let c = sqrt_t * (1.0 + raw_b2.iter().sum::<f64>()).sqrt();
        for m in 0..mm {
            an[m * kk + k] = (rho_d * a.get(m, k)).sqrt() / c;
            b2[m * kk + k] = t * raw_b2[m] / (c * c);
        }
        r2[k] = t / (c * c);
    }
    Problem {
        m: mm,
        k: kk,
        a: an,
        b2,
        r2,
    }
}

/// Outcome of one phase-I solve.
#[derive(Debug, Clone)]
pub(crate) struct MarginSolve {
    pub margin: f64,
    pub eta: PowerControl,
}

/// Maximizes the common UE-cone margin for target `t`. Stops early once the
/// margin is certified negative.
pub(crate) fn max_margin(
    b: &FadingMatrix,
    a: &AlphaMatrix,
    rho_d: f64,
    t: f64,
    settings: &BarrierSettings,
    flops: &mut FlopCounter,
) -> Result<MarginSolve> {
    let prob = build_problem(b, a, rho_d, t);
    let (mm, kk, n) = (prob.m, prob.k, prob.n());
    let nu = prob.nu();

    let mut x = vec![0.0; n];
    let s0 = 0.5 / (kk as f64).sqrt();
    for i in 0..mm * kk {
        x[i] = s0;
    }
    for m in 0..mm {
        x[prob.p(m)] = 0.75;
    }
    let z0 = (0..kk)
        .map(|k| prob.ue_lhs(&x, k) + x[prob.z()] - prob.ue_rhs2(&x, k).sqrt())
        .fold(f64::INFINITY, f64::min);
    x[prob.z()] = z0 - 1.0;

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut work = Vec::with_capacity(n * n);
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut tau = 1.0;

    loop {
        // Centering.
        let mut phi = prob
            .barrier(&x, flops)
            .ok_or_else(|| Error::SolverFailure("iterate left the barrier domain".into()))?;
        let mut obj = -tau * x[prob.z()] + phi;
        let mut centered = false;
        let mut stalled = 0;
        for _ in 0..settings.max_newton {
            prob.derivatives(&x, tau, &mut grad, &mut hess, flops);
            newton_direction(&hess, &grad, n, &mut work, &mut dir, flops)?;
            let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            flops.dot(n);
            if !slope.is_finite() {
                return Err(Error::SolverFailure("non-finite Newton decrement".into()));
            }
            if -slope / 2.0 <= settings.newton_tol {
                centered = true;
                break;
            }
            // Round-off floor: the objective no longer changes measurably.
            if -slope / 2.0 <= 1e-4 {
                stalled += 1;
                if stalled >= 8 {
                    centered = true;
                    break;
                }
            }
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-14 {
                for i in 0..n {
                    trial[i] = x[i] + step * dir[i];
                }
                flops.mul(n);
                flops.add(n);
                if let Some(p) = prob.barrier(&trial, flops) {
                    let o = -tau * trial[prob.z()] + p;
                    if o <= obj + 0.25 * step * slope {
                        std::mem::swap(&mut x, &mut trial);
                        phi = p;
                        obj = o;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                // Progress below rounding: treat as centered when the
                // decrement is already small relative to the objective.
                if -slope / 2.0 <= 1e-6 * (1.0 + obj.abs()) {
                    centered = true;
                    break;
                }
                return Err(Error::SolverFailure(format!(
                    "line search stalled (decrement {:.3e})",
                    -slope / 2.0
                )));
            }
        }
        let _ = phi;
        if !centered {
            return Err(Error::SolverFailure(format!(
                "centering did not converge in {} Newton steps",
                settings.max_newton
            )));
        }
        let z = x[prob.z()];
        let gap = nu / tau;
        if z + 2.0 * gap < 0.0 || gap <= settings.gap_tol {
            break;
        }
        tau *= settings.growth;
    }

    let eta = Matrix::from_fn(mm, kk, |m, k| x[prob.sigma(m, k)].powi(2));
    Ok(MarginSolve {
        margin: x[prob.z()],
        eta: PowerControl::new(eta),
    })
}

/// Returns a power control reaching `SINR_k >= t (1 - feas_tol)` for every
/// UE, or `None` when the target is infeasible.
pub fn feasibility_check(
    b: &FadingMatrix,
    a: &AlphaMatrix,
    rho_d: f64,
    t: f64,
    feas_tol: f64,
    settings: &BarrierSettings,
    flops: &mut FlopCounter,
) -> Result<Option<PowerControl>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("SINR target must be positive, got {t}")));
    }
    a.matrix().ensure_shape(b.num_aps(), b.num_ues(), "alpha")?;
    let sol = max_margin(b, a, rho_d, t, settings, flops)?;
    if sol.margin < -settings.gap_tol * 10.0 {
        return Ok(None);
    }
    // Near-zero margins are decided by the exact SINR formula.
    let sinr = compute_sinr(b, a, &sol.eta, rho_d)?;
    flops.mul(b.num_aps() * b.num_ues() * 4 + 3 * b.num_ues());
    flops.add(b.num_aps() * b.num_ues() * 3 + b.num_ues());
    if min_sinr(&sinr) >= t * (1.0 - feas_tol) {
        Ok(Some(sol.eta))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinr::{compute_alpha, is_feasible};

    fn single(beta: f64, rho_d: f64, rho_u: f64) -> (FadingMatrix, AlphaMatrix, f64) {
        let b = FadingMatrix::from_vec(1, 1, vec![beta]).unwrap();
        let a = compute_alpha(&b, rho_u, 1).unwrap();
        let alpha = a.get(0, 0);
        (b, a, rho_d * alpha / (1.0 + rho_d * beta))
    }

    #[test]
    fn single_link_boundary() {
        let (b, a, t_opt) = single(3e-10, 3e11, 1.5e11);
        let s = BarrierSettings::default();
        let mut f = FlopCounter::new();
        let eta = feasibility_check(&b, &a, 3e11, t_opt, 1e-6, &s, &mut f).unwrap().unwrap();
        assert!((eta.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(feasibility_check(&b, &a, 3e11, t_opt * 1.01, 1e-6, &s, &mut f)
            .unwrap()
            .is_none());
        assert!(f.total() > 0);
    }

    #[test]
    fn tiny_target_is_feasible() {
        let b = FadingMatrix::from_vec(3, 2, vec![1e-9, 2e-11, 4e-12, 7e-10, 3e-13, 5e-11]).unwrap();
        let a = compute_alpha(&b, 1.5e11, 2).unwrap();
        let eta = feasibility_check(&b, &a, 3e11, 1e-6, 1e-6, &BarrierSettings::default(), &mut FlopCounter::new())
            .unwrap()
            .unwrap();
        assert!(is_feasible(&eta, 1e-9));
    }

    #[test]
    fn non_positive_target_rejected() {
        let (b, a, _) = single(1e-9, 1e11, 1e11);
        let r = feasibility_check(&b, &a, 1e11, 0.0, 1e-6, &BarrierSettings::default(), &mut FlopCounter::new());
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let n = 3;
        let mut a = vec![4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let orig = a.clone();
        let mut f = FlopCounter::new();
        assert!(cholesky(&mut a, n, &mut f));
        let mut x = vec![1.0, 2.0, 3.0];
        cholesky_solve(&a, n, &mut x, &mut f);
        for i in 0..n {
            let r: f64 = (0..n).map(|j| orig[i * n + j] * x[j]).sum();
            assert!((r - (i + 1) as f64).abs() < 1e-12);
        }
        let mut indefinite = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky(&mut indefinite, 2, &mut f));
    }
}
