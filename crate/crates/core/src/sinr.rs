//! Ergodic downlink SINR with MRT precoding and MMSE channel estimation.
//!
//! ```text
//! alpha_mk = rho_u tau beta_mk^2 / (1 + rho_u tau beta_mk)
//! SINR_k   = rho_d (sum_m sqrt(alpha_mk eta_mk))^2
//!            / (1 + rho_d sum_m beta_mk sum_k' eta_mk')
//! ```

use serde::{Deserialize, Serialize};

use crate::channel::FadingMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default slack for the per-AP power predicates.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaMatrix(Matrix);

impl AlphaMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.0.get(m, k)
    }
}

/// Power-control coefficients `eta_mk`, rows = APs, columns = UEs.
///
/// Values are stored as given; use [`is_feasible`] to check the per-AP
/// budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerControl(Matrix);

impl PowerControl {
    pub fn new(values: Matrix) -> Self {
        Self(values)
    }

    pub fn from_vec(num_aps: usize, num_ues: usize, values: Vec<f64>) -> Result<Self> {
        Ok(Self(Matrix::from_vec(num_aps, num_ues, values)?))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn num_aps(&self) -> usize {
        self.0.rows()
    }

    pub fn num_ues(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.0.get(m, k)
    }

    pub fn permuted(&self, ap_perm: &[usize], ue_perm: &[usize]) -> Self {
        Self(self.0.permuted(ap_perm, ue_perm))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SinrVector(Vec<f64>);

impl SinrVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain(format!("SINR must be non-negative, found {bad}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
pub fn alpha_coefficient(beta: f64, rho_u: f64, tau: f64) -> f64 {
    let g = rho_u * tau * beta;
    g * beta / (1.0 + g)
}

pub fn compute_alpha(b: &FadingMatrix, rho_u: f64, tau: usize) -> Result<AlphaMatrix> {
    if !(rho_u > 0.0) || tau == 0 {
        return Err(Error::Domain(format!(
            "alpha needs rho_u > 0 and tau >= 1, got rho_u = {rho_u}, tau = {tau}"
        )));
    }
    let tau = tau as f64;
    Ok(AlphaMatrix(b.matrix().map(|beta| alpha_coefficient(beta, rho_u, tau))))
}

pub fn compute_sinr(
    b: &FadingMatrix,
    a: &AlphaMatrix,
    eta: &PowerControl,
    rho_d: f64,
) -> Result<SinrVector> {
    let (m_aps, k_ues) = (b.num_aps(), b.num_ues());
    a.matrix().ensure_shape(m_aps, k_ues, "alpha")?;
    eta.matrix().ensure_shape(m_aps, k_ues, "eta")?;
    if let Some(bad) = eta.matrix().as_slice().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("power coefficients must be >= 0, found {bad}")));
    }
    let row_power = eta.matrix().row_sums();
    let mut signal = vec![0.0; k_ues];
    let mut interference = vec![0.0; k_ues];
    for m in 0..m_aps {
        for k in 0..k_ues {
            signal[k] += (a.get(m, k) * eta.get(m, k)).sqrt();
            interference[k] += b.get(m, k) * row_power[m];
        }
    }
    let values = signal
        .iter()
        .zip(&interference)
        .map(|(s, i)| rho_d * s * s / (1.0 + rho_d * i))
        .collect();
    SinrVector::new(values)
}

pub fn min_sinr(s: &SinrVector) -> f64 {
    s.as_slice().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Per-user spectral efficiency `log2(1 + SINR_k)` in bits/s/Hz.
pub fn spectral_efficiency(s: &SinrVector) -> Vec<f64> {
    s.as_slice().iter().map(|v| v.ln_1p() / std::f64::consts::LN_2).collect()
}

/// All entries `>= -tol` and every AP row sum `<= 1 + tol`.
pub fn is_feasible(eta: &PowerControl, tol: f64) -> bool {
    let m = eta.matrix();
    m.as_slice().iter().all(|v| *v >= -tol)
        && (0..m.rows()).all(|r| m.row(r).iter().sum::<f64>() <= 1.0 + tol)
}
