//! Random deployments and large-scale fading.
//!
//! APs and UEs are dropped uniformly over a disc whose radius depends on the
//! deployment morphology. Large-scale fading follows a single-slope
//! log-distance path loss with log-normal shadowing:
//!
//! ```text
//! PL(d)   = intercept_db + 10 * exponent * log10(d)
//! beta_mk = 10^(-(PL(d_mk) + X_mk) / 10),   X_mk ~ N(0, sigma_db^2)
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::load_toml;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphologyKind {
    Urban,
    Suburban,
    Rural,
}

impl MorphologyKind {
    pub const ALL: [MorphologyKind; 3] = [Self::Urban, Self::Suburban, Self::Rural];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Urban => "urban",
            Self::Suburban => "suburban",
            Self::Rural => "rural",
        }
    }
}

impl fmt::Display for MorphologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MorphologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "urban" => Ok(Self::Urban),
            "suburban" => Ok(Self::Suburban),
            "rural" => Ok(Self::Rural),
            other => Err(Error::Config(format!("unknown morphology {other:?}"))),
        }
    }
}

/// Deployment area and propagation parameters of one morphology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Morphology {
    pub kind: MorphologyKind,
    pub radius_m: f64,
    pub pl_exponent: f64,
    pub pl_intercept_db: f64,
    pub shadow_sigma_db: f64,
}

impl Morphology {
    pub fn new(
        kind: MorphologyKind,
        radius_m: f64,
        pl_exponent: f64,
        pl_intercept_db: f64,
        shadow_sigma_db: f64,
    ) -> Result<Self> {
        let m = Self {
            kind,
            radius_m,
            pl_exponent,
            pl_intercept_db,
            shadow_sigma_db,
        };
        m.validate()?;
        Ok(m)
    }

    /// Built-in parameters: urban 500 m, suburban 1 km, rural 4 km.
    pub fn default_for(kind: MorphologyKind) -> Self {
        let (radius_m, pl_intercept_db, pl_exponent) = match kind {
            MorphologyKind::Urban => (500.0, 30.5, 3.67),
            MorphologyKind::Suburban => (1_000.0, 19.0, 3.91),
            MorphologyKind::Rural => (4_000.0, 14.0, 3.91),
        };
        Self {
            kind,
            radius_m,
            pl_exponent,
            pl_intercept_db,
            shadow_sigma_db: 8.0,
        }
    }

    pub fn urban() -> Self {
        Self::default_for(MorphologyKind::Urban)
    }

    pub fn suburban() -> Self {
        Self::default_for(MorphologyKind::Suburban)
    }

    pub fn rural() -> Self {
        Self::default_for(MorphologyKind::Rural)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m.is_finite() && self.radius_m > 0.0) {
            return Err(Error::Config(format!(
                "{}: radius_m must be > 0, got {}",
                self.kind, self.radius_m
            )));
        }
        if !(self.pl_exponent.is_finite() && self.pl_exponent > 0.0) {
            return Err(Error::Config(format!(
                "{}: pl_exponent must be > 0, got {}",
                self.kind, self.pl_exponent
            )));
        }
        if !(self.shadow_sigma_db.is_finite() && self.shadow_sigma_db >= 0.0) {
            return Err(Error::Config(format!(
                "{}: shadow_sigma_db must be >= 0, got {}",
                self.kind, self.shadow_sigma_db
            )));
        }
        if !self.pl_intercept_db.is_finite() {
            return Err(Error::Config(format!("{}: pl_intercept_db not finite", self.kind)));
        }
        Ok(())
    }
}

/// Morphology parameters for all three kinds, with file overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphologyTable {
    pub urban: Morphology,
    pub suburban: Morphology,
    pub rural: Morphology,
}

impl Default for MorphologyTable {
    fn default() -> Self {
        Self {
            urban: Morphology::urban(),
            suburban: Morphology::suburban(),
            rural: Morphology::rural(),
        }
    }
}

impl MorphologyTable {
    pub fn get(&self, kind: MorphologyKind) -> Morphology {
        match kind {
            MorphologyKind::Urban => self.urban,
            MorphologyKind::Suburban => self.suburban,
            MorphologyKind::Rural => self.rural,
        }
    }

    fn get_mut(&mut self, kind: MorphologyKind) -> &mut Morphology {
        match kind {
            MorphologyKind::Urban => &mut self.urban,
            MorphologyKind::Suburban => &mut self.suburban,
            MorphologyKind::Rural => &mut self.rural,
        }
    }

    /// Applies per-morphology field overrides; fields left out keep their
    /// current value.
    pub fn apply_overrides(&mut self, o: &MorphologyOverrides) -> Result<()> {
        for kind in MorphologyKind::ALL {
            let Some(fields) = o.get(kind) else { continue };
            let m = self.get_mut(kind);
            let slots = [
                (fields.radius_m, &mut m.radius_m),
                (fields.pl_exponent, &mut m.pl_exponent),
                (fields.pl_intercept_db, &mut m.pl_intercept_db),
                (fields.shadow_sigma_db, &mut m.shadow_sigma_db),
            ];
            for (value, slot) in slots {
                if let Some(v) = value {
                    *slot = v;
                }
            }
            m.validate()?;
        }
        Ok(())
    }

    /// Reads overrides from a TOML file such as
    ///
    /// ```toml
    /// [urban]
    /// radius_m = 250
    /// ```
    pub fn load_overrides(path: &Path) -> Result<Self> {
        let mut table = Self::default();
        table.apply_overrides(&load_toml(path)?)?;
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphologyFields {
    pub radius_m: Option<f64>,
    pub pl_exponent: Option<f64>,
    pub pl_intercept_db: Option<f64>,
    pub shadow_sigma_db: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphologyOverrides {
    pub urban: Option<MorphologyFields>,
    pub suburban: Option<MorphologyFields>,
    pub rural: Option<MorphologyFields>,
}

impl MorphologyOverrides {
    pub fn get(&self, kind: MorphologyKind) -> Option<MorphologyFields> {
        match kind {
            MorphologyKind::Urban => self.urban,
            MorphologyKind::Suburban => self.suburban,
            MorphologyKind::Rural => self.rural,
        }
    }
}

/// Transmit powers and receiver noise used to derive the normalized SNRs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub downlink_power_w: f64,
    pub uplink_power_w: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub temperature_k: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            downlink_power_w: 0.2,
            uplink_power_w: 0.1,
            bandwidth_hz: 20e6,
            noise_figure_db: 9.0,
            temperature_k: 290.0,
        }
    }
}

impl LinkBudget {
    pub fn noise_power_w(&self) -> f64 {
        BOLTZMANN * self.temperature_k * self.bandwidth_hz * 10f64.powf(self.noise_figure_db / 10.0)
    }

    pub fn rho_d(&self) -> f64 {
        self.downlink_power_w / self.noise_power_w()
    }

    pub fn rho_u(&self) -> f64 {
        self.uplink_power_w / self.noise_power_w()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_aps: usize,
    pub num_ues: usize,
    pub morphology: Morphology,
    pub rho_d: f64,
    pub rho_u: f64,
    pub tau: usize,
    pub min_distance_m: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Default link budget, `tau = K`, 5 m minimum distance.
    pub fn new(num_aps: usize, num_ues: usize, morphology: Morphology, seed: u64) -> Result<Self> {
        let budget = LinkBudget::default();
        let cfg = Self {
            num_aps,
            num_ues,
            morphology,
            rho_d: budget.rho_d(),
            rho_u: budget.rho_u(),
            tau: num_ues,
            min_distance_m: 5.0,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_aps == 0 || self.num_ues == 0 {
            return Err(Error::Config(format!(
                "need M >= 1 and K >= 1, got M = {}, K = {}",
                self.num_aps, self.num_ues
            )));
        }
        if !(self.rho_d > 0.0 && self.rho_d.is_finite() && self.rho_u > 0.0 && self.rho_u.is_finite())
        {
            return Err(Error::Config(format!(
                "SNRs must be positive and finite, got rho_d = {}, rho_u = {}",
                self.rho_d, self.rho_u
            )));
        }
        if self.tau < self.num_ues {
            return Err(Error::Config(format!(
                "orthogonal pilots need tau >= K, got tau = {}, K = {}",
                self.tau, self.num_ues
            )));
        }
        if !(self.min_distance_m >= 0.0 && self.min_distance_m.is_finite()) {
            return Err(Error::Config(format!(
                "min_distance_m must be >= 0, got {}",
                self.min_distance_m
            )));
        }
        self.morphology.validate()
    }

    /// Same scenario with the per-sample seed `seed ^ index`.
    pub fn for_sample(&self, index: u64) -> Self {
        Self {
            seed: derive_seed(self.seed, index),
            ..*self
        }
    }
}

pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub ap_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
}

impl Deployment {
    pub fn distance(&self, m: usize, k: usize) -> f64 {
        let a = self.ap_positions[m];
        let u = self.ue_positions[k];
        (a[0] - u[0]).hypot(a[1] - u[1])
    }
}

/// `M x K` large-scale fading in linear scale. All entries are positive and
/// finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FadingMatrix(Matrix);

impl FadingMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if let Some(bad) = values.as_slice().iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!(
                "large-scale fading must be positive and finite, found {bad}"
            )));
        }
        Ok(Self(values))
    }

    pub fn from_vec(num_aps: usize, num_ues: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(Matrix::from_vec(num_aps, num_ues, values)?)
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

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn permuted(&self, ap_perm: &[usize], ue_perm: &[usize]) -> Self {
        Self(self.0.permuted(ap_perm, ue_perm))
    }
}

fn sample_in_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    // Guard against rounding pushing cos/sin products past the rim.
    let x = (r * theta.cos()).clamp(-radius, radius);
    let y = (r * theta.sin()).clamp(-radius, radius);
    let norm = x.hypot(y);
    if norm > radius {
        [x * radius / norm, y * radius / norm]
    } else {
        [x, y]
    }
}

/// Drops the APs first, then the UEs, area-uniformly over the morphology disc.
pub fn generate_deployment<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Deployment {
    let radius = cfg.morphology.radius_m;
    let ap_positions = (0..cfg.num_aps).map(|_| sample_in_disc(rng, radius)).collect();
    let ue_positions = (0..cfg.num_ues).map(|_| sample_in_disc(rng, radius)).collect();
    Deployment {
        ap_positions,
        ue_positions,
    }
}

pub fn path_loss_db(distance_m: f64, morphology: &Morphology) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::Domain(format!(
            "path loss needs a positive distance, got {distance_m}"
        )));
    }
    Ok(morphology.pl_intercept_db + 10.0 * morphology.pl_exponent * distance_m.log10())
}

/// Shadowing draws are consumed in row-major `(m, k)` order.
pub fn generate_fading<R: Rng + ?Sized>(
    dep: &Deployment,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<FadingMatrix> {
    if dep.ap_positions.len() != cfg.num_aps || dep.ue_positions.len() != cfg.num_ues {
        return Err(Error::Shape(format!(
            "deployment has {} APs / {} UEs, scenario wants {} / {}",
            dep.ap_positions.len(),
            dep.ue_positions.len(),
            cfg.num_aps,
            cfg.num_ues
        )));
    }
    let shadow = Normal::new(0.0, cfg.morphology.shadow_sigma_db)
        .map_err(|e| Error::Config(format!("shadowing: {e}")))?;
    let mut values = Matrix::zeros(cfg.num_aps, cfg.num_ues);
    for m in 0..cfg.num_aps {
        for k in 0..cfg.num_ues {
            let d = dep.distance(m, k).max(cfg.min_distance_m);
            // min_distance_m may be 0 and the points may coincide.
            let d = if d > 0.0 { d } else { f64::MIN_POSITIVE.sqrt() };
            let pl = path_loss_db(d, &cfg.morphology)?;
            let x: f64 = shadow.sample(rng);
            values.set(m, k, 10f64.powf(-(pl + x) / 10.0));
        }
    }
    FadingMatrix::new(values)
}

/// Deployment and fading for `cfg`, seeded from `cfg.seed`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<(Deployment, FadingMatrix)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let dep = generate_deployment(cfg, &mut rng);
    let fading = generate_fading(&dep, cfg, &mut rng)?;
    Ok((dep, fading))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(intercept: f64, exponent: f64, sigma: f64) -> Morphology {
        Morphology::new(MorphologyKind::Urban, 500.0, exponent, intercept, sigma).unwrap()
    }

    #[test]
    fn path_loss_values() {
        let m = flat(30.0, 3.5, 0.0);
        assert_eq!(path_loss_db(1.0, &m).unwrap(), 30.0);
        assert!((path_loss_db(10.0, &m).unwrap() - 65.0).abs() < 1e-12);
        let diff = path_loss_db(100.0, &m).unwrap() - path_loss_db(10.0, &m).unwrap();
        assert!((diff - 35.0).abs() < 1e-12);
        assert!(path_loss_db(0.0, &m).is_err());
        assert!(path_loss_db(-3.0, &m).is_err());
    }

    #[test]
    fn urban_points_inside_disc() {
        let cfg = ScenarioConfig::new(64, 18, Morphology::urban(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..20 {
            let dep = generate_deployment(&cfg, &mut rng);
            assert_eq!(dep.ap_positions.len(), 64);
            assert_eq!(dep.ue_positions.len(), 18);
            for p in dep.ap_positions.iter().chain(&dep.ue_positions) {
                assert!(p[0].hypot(p[1]) <= 500.0);
            }
        }
    }

    #[test]
    fn degenerate_disc_clamps_distance() {
        let morph = Morphology::new(MorphologyKind::Urban, 1e-12, 3.0, 10.0, 0.0).unwrap();
        let cfg = ScenarioConfig::new(1, 1, morph, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dep = generate_deployment(&cfg, &mut rng);
        assert!(dep.distance(0, 0) < 1e-11);
        let beta = generate_fading(&dep, &cfg, &mut rng).unwrap();
        let expected = 10f64.powf(-path_loss_db(5.0, &morph).unwrap() / 10.0);
        assert!((beta.get(0, 0) / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = ScenarioConfig::new(8, 3, Morphology::suburban(), 77).unwrap();
        let (d1, b1) = generate_scenario(&cfg).unwrap();
        let (d2, b2) = generate_scenario(&cfg).unwrap();
        assert_eq!(d1, d2);
        let bits = |b: &FadingMatrix| b.matrix().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&b1), bits(&b2));
        let (_, b3) = generate_scenario(&cfg.for_sample(1)).unwrap();
        assert_ne!(bits(&b1), bits(&b3));
    }

    #[test]
    fn unit_distance_without_loss_gives_unit_gain() {
        let morph = Morphology::new(MorphologyKind::Urban, 10.0, 3.0, 0.0, 0.0).unwrap();
        let mut cfg = ScenarioConfig::new(1, 1, morph, 0).unwrap();
        cfg.min_distance_m = 0.0;
        let dep = Deployment {
            ap_positions: vec![[0.0, 0.0]],
            ue_positions: vec![[1.0, 0.0]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let beta = generate_fading(&dep, &cfg, &mut rng).unwrap();
        assert!((beta.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_shadowing_means_monotone_in_distance() {
        let morph = Morphology::new(MorphologyKind::Urban, 1000.0, 3.67, 30.5, 0.0).unwrap();
        let cfg = ScenarioConfig::new(1, 6, morph, 0).unwrap();
        let dep = Deployment {
            ap_positions: vec![[0.0, 0.0]],
            ue_positions: [1.0, 5.0, 10.0, 50.0, 200.0, 900.0].iter().map(|&d| [d, 0.0]).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let beta = generate_fading(&dep, &cfg, &mut rng).unwrap();
        // 1 m and 5 m both clamp to the 5 m minimum.
        assert_eq!(beta.get(0, 0), beta.get(0, 1));
        for k in 1..5 {
            assert!(beta.get(0, k) > beta.get(0, k + 1));
        }
    }

    #[test]
    fn shadowing_has_zero_mean_in_db() {
        let morph = Morphology::new(MorphologyKind::Urban, 500.0, 3.67, 30.5, 8.0).unwrap();
        let cfg = ScenarioConfig::new(1, 1, morph, 0).unwrap();
        let dep = Deployment {
            ap_positions: vec![[0.0, 0.0]],
            ue_positions: vec![[100.0, 0.0]],
        };
        let pl = path_loss_db(100.0, &morph).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let b = generate_fading(&dep, &cfg, &mut rng).unwrap().get(0, 0);
            let x = -(10.0 * b.log10() + pl);
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((std - 8.0).abs() < 0.1, "std {std}");
    }

    #[test]
    fn overrides_from_file() {
        use crate::config::parse_toml;
        let o: MorphologyOverrides = parse_toml("[urban]\nradius_m = 250\n[rural]\nshadow_sigma_db = 0.0\n", "t").unwrap();
        let mut table = MorphologyTable::default();
        table.apply_overrides(&o).unwrap();
        assert_eq!(table.urban.radius_m, 250.0);
        assert_eq!(table.rural.shadow_sigma_db, 0.0);
        assert_eq!(table.suburban, Morphology::suburban());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        std::fs::write(&path, "[suburban]\npl_exponent = 3.5\n").unwrap();
        assert_eq!(MorphologyTable::load_overrides(&path).unwrap().suburban.pl_exponent, 3.5);

        let bad: MorphologyOverrides = parse_toml("[urban]\nradius_m = -1.0\n", "t").unwrap();
        assert!(MorphologyTable::default().apply_overrides(&bad).is_err());
        assert!(parse_toml::<MorphologyOverrides>("[urban]\nheight = 3\n", "t").is_err());
        assert!(parse_toml::<MorphologyOverrides>("[downtown]\nradius_m = 3\n", "t").is_err());
    }

    #[test]
    fn invalid_scenarios_rejected() {
        assert!(ScenarioConfig::new(0, 3, Morphology::urban(), 0).is_err());
        let mut cfg = ScenarioConfig::new(4, 3, Morphology::urban(), 0).unwrap();
        cfg.tau = 2;
        assert!(cfg.validate().is_err());
        assert!(Morphology::new(MorphologyKind::Rural, 0.0, 3.0, 0.0, 1.0).is_err());
        assert!(FadingMatrix::from_vec(1, 2, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn default_snrs_are_plausible() {
        let b = LinkBudget::default();
        // -174 dBm/Hz + 73 dB(Hz) + 9 dB = -92 dBm.
        let noise_dbm = 10.0 * (b.noise_power_w() * 1e3).log10();
        assert!((noise_dbm + 91.96).abs() < 0.05, "{noise_dbm}");
        assert!((b.rho_d() / b.rho_u() - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn decade_slope(d in 1e-3f64..1e5, exp in 0.5f64..6.0, icpt in -50f64..100.0) {
            let m = flat(icpt, exp, 0.0);
            let diff = path_loss_db(10.0 * d, &m).unwrap() - path_loss_db(d, &m).unwrap();
            prop_assert!((diff - 10.0 * exp).abs() < 1e-9);
        }

        #[test]
        fn fading_positive(seed in any::<u64>(), m in 1usize..6, k in 1usize..6) {
            let cfg = ScenarioConfig::new(m, k, Morphology::rural(), seed).unwrap();
            let (dep, b) = generate_scenario(&cfg).unwrap();
            prop_assert!(b.matrix().as_slice().iter().all(|v| *v > 0.0 && v.is_finite()));
            for p in dep.ap_positions.iter().chain(&dep.ue_positions) {
                prop_assert!(p[0].hypot(p[1]) <= cfg.morphology.radius_m);
            }
        }
    }
}
