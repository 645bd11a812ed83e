//! Calibrated data-generating process with a missing factor.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::calibration::CalibrationSummary;
use crate::error::{PremiaError, Result};
use crate::linalg::psd_sqrt;
use crate::panel::{FactorPanel, ReturnsPanel};

pub const FACTOR_NAMES: [&str; 4] = ["Mkt-RF", "SMB", "HML", "Mom"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub theta_phi: f64,
    pub alpha: f64,
    pub sigma_xi2: f64,
    pub varphi: f64,
    pub calibration: CalibrationSummary,
    /// Overrides the calibration's N.
    pub n_assets: Option<usize>,
    /// Overrides the calibration's T.
    pub n_periods: Option<usize>,
    pub seed: u64,
}

impl DgpParams {
    pub fn new(calibration: CalibrationSummary, theta_phi: f64, alpha: f64, sigma_xi2: f64, seed: u64) -> Self {
        DgpParams {
            theta_phi,
            alpha,
            sigma_xi2,
            varphi: 0.001,
            calibration,
            n_assets: None,
            n_periods: None,
            seed,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets.unwrap_or(self.calibration.n_assets)
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods.unwrap_or(self.calibration.n_periods)
    }

    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        if !(self.theta_phi >= 0.0 && self.theta_phi.is_finite()) {
            return Err(PremiaError::Parameter(format!("theta_phi must be >= 0, got {}", self.theta_phi)));
        }
        if !(self.sigma_xi2 > 0.0 && self.sigma_xi2.is_finite()) {
            return Err(PremiaError::Parameter(format!("sigma_xi2 must be > 0, got {}", self.sigma_xi2)));
        }
        if !(self.varphi > 0.0 && self.varphi < 1.0) {
            return Err(PremiaError::Parameter(format!("varphi must lie in (0, 1), got {}", self.varphi)));
        }
        if !self.alpha.is_finite() {
            return Err(PremiaError::Parameter("alpha must be finite".into()));
        }
        if self.n_assets() == 0 || self.n_periods() < 8 {
            return Err(PremiaError::Parameter("simulation needs N >= 1 and T >= 8".into()));
        }
        Ok(())
    }

    /// Model-implied variance of `(F, mom)`.
    pub fn population_variance(&self) -> Result<DMatrix<f64>> {
        let c = &self.calibration;
        let t = self.n_periods() as f64;
        let mut v = DMatrix::zeros(4, 4);
        v.view_mut((0, 0), (3, 3))
            .copy_from(&(&c.eta_f * c.eta_f.transpose() / t + &c.sigma_res));
        let cross = &c.eta_f * &c.eta_mom / t;
        for j in 0..3 {
            v[(j, 3)] = cross[j];
            v[(3, j)] = cross[j];
        }
        v[(3, 3)] = c.eta_mom.norm_squared() / t + c.sigma_mom2;
        if v.clone().cholesky().is_none() {
            return Err(PremiaError::Parameter(
                "implied factor variance is not positive definite".into(),
            ));
        }
        Ok(v)
    }
}

/// Which random streams change between two replications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawScope {
    NewTimeSeries,
    NewCrossSection,
    Both,
}

/// Position in the nested time-series x cross-section replication grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReplicationIndex {
    pub time: u64,
    pub cross: u64,
}

impl ReplicationIndex {
    pub fn new(time: u64, cross: u64) -> Self {
        ReplicationIndex { time, cross }
    }

    pub fn next(self, scope: DrawScope) -> Self {
        match scope {
            DrawScope::NewTimeSeries => ReplicationIndex::new(self.time + 1, self.cross),
            DrawScope::NewCrossSection => ReplicationIndex::new(self.time, self.cross + 1),
            DrawScope::Both => ReplicationIndex::new(self.time + 1, self.cross + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    G = 1,
    W = 2,
    SmallG = 3,
    U = 4,
    V = 5,
    Gamma = 6,
    Phi = 7,
    Xi = 8,
    Eps = 9,
}

impl Stream {
    fn is_time_series(self) -> bool {
        matches!(self, Stream::G | Stream::W | Stream::SmallG | Stream::U | Stream::V)
    }
}

const INDEX_LIMIT: u64 = 1 << 28;

fn stream_rng(seed: u64, stream: Stream, index: ReplicationIndex) -> ChaCha8Rng {
    let cross = if stream.is_time_series() { 0 } else { index.cross };
    assert!(index.time < INDEX_LIMIT && cross < INDEX_LIMIT, "replication index too large");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) | (index.time << 28) | cross);
    rng
}

pub(crate) fn normals(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // row-major fill so a stream's prefix does not depend on the column count
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Every true quantity behind a simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpTruth {
    pub lambda: DVector<f64>,
    /// `N x 4`.
    pub betas: DMatrix<f64>,
    /// Missing-factor loadings.
    pub phi: DVector<f64>,
    /// Missing factor, length `T`.
    pub g: DVector<f64>,
    pub delta: DVector<f64>,
    /// `N x T`.
    pub idiosyncratic: DMatrix<f64>,
    pub factor_mean: DVector<f64>,
    /// `λ + F̄ − E F`.
    pub lambda_tilde: DVector<f64>,
    /// Model-implied `Var((F, mom))`.
    pub factor_cov: DMatrix<f64>,
    /// `N x 3` loadings on the common components.
    pub gamma: DMatrix<f64>,
    /// `T x 3` common components.
    pub common: DMatrix<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// `T x 3` residuals of the observed factors on the common components.
    pub w: DMatrix<f64>,
    /// `N x T` returns before the premia are added.
    pub r_star: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub returns: ReturnsPanel,
    pub factors: FactorPanel,
    pub truth: DgpTruth,
}

/// Draws one panel at the given replication index.
pub fn simulate(params: &DgpParams, index: ReplicationIndex) -> Result<SimulatedPanel> {
    params.validate()?;
    let c = &params.calibration;
    let n = params.n_assets();
    let t = params.n_periods();
    let tf = t as f64;
    let seed = params.seed;
    let rng = |s: Stream| stream_rng(seed, s, index);

    let vpop = params.population_variance()?;
    let sd_u = ((1.0 - params.varphi) * c.sigma_mom2).sqrt();
    let sd_v = (params.varphi * c.sigma_mom2).sqrt();

    let common = normals(&mut rng(Stream::G), t, 3) / tf.sqrt();
    let w = normals(&mut rng(Stream::W), t, 3) * psd_sqrt(&c.sigma_res, "sigma_res")?;
    let g = normals(&mut rng(Stream::SmallG), t, 1).column(0) / tf.sqrt();
    let u = normals(&mut rng(Stream::U), t, 1).column(0) * sd_u;
    let v = normals(&mut rng(Stream::V), t, 1).column(0) * sd_v;

    let gamma = {
        let mut z = normals(&mut rng(Stream::Gamma), n, 3) * psd_sqrt(&c.v_gamma, "v_gamma")?;
        for mut row in z.row_iter_mut() {
            row += c.mu_gamma.transpose();
        }
        z
    };
    let phi = normals(&mut rng(Stream::Phi), n, 1)
        .column(0)
        .map(|z| params.theta_phi * (c.mu_phi + c.v_phi.sqrt() * z));
    let xi = normals(&mut rng(Stream::Xi), n, 1).column(0) * params.sigma_xi2.sqrt();
    let idiosyncratic = normals(&mut rng(Stream::Eps), n, t) * c.sigma_eps2.sqrt();

    let delta = (&phi * (params.alpha / tf.sqrt()) + xi) / sd_u;

    let mut factor_vals = DMatrix::zeros(t, 4);
    let f_obs = &common * c.eta_f.transpose() + &w;
    let mom = &common * &c.eta_mom + &u + &v;
    for s in 0..t {
        for j in 0..3 {
            factor_vals[(s, j)] = c.eta0_f[j] + f_obs[(s, j)];
        }
        factor_vals[(s, 3)] = c.eta0_mom + mom[s];
    }
    let mut factor_mean = DVector::zeros(4);
    factor_mean.rows_mut(0, 3).copy_from(&c.eta0_f);
    factor_mean[3] = c.eta0_mom;

    let mut r_star = &gamma * common.transpose() + &phi * g.transpose() + &delta * u.transpose();
    r_star += &idiosyncratic;

    // Cov((F, mom), r_i) for every asset, then the population betas.
    let mut cov = DMatrix::zeros(4, n);
    cov.rows_mut(0, 3).copy_from(&(&c.eta_f * gamma.transpose() / tf));
    let mom_cov = (&gamma * &c.eta_mom) / tf + &delta * ((1.0 - params.varphi) * c.sigma_mom2);
    cov.set_row(3, &mom_cov.transpose());
    let chol = vpop.clone().cholesky().expect("checked positive definite");
    let betas = chol.solve(&cov).transpose();

    let lambda = c.lambda_true.clone();
    let premia = &betas * &lambda;
    let mut r = r_star.clone();
    for (mut row, p) in r.row_iter_mut().zip(premia.iter()) {
        row.add_scalar_mut(*p);
    }

    let fbar = factor_vals.row_mean().transpose();
    let lambda_tilde = &lambda + &fbar - &factor_mean;
    let periods: Vec<i64> = (1..=t as i64).collect();
    let assets: Vec<String> = (1..=n).map(|i| format!("p{i}")).collect();
    let returns = ReturnsPanel::new(assets, periods.clone(), r)?;
    let factors = FactorPanel::new(FACTOR_NAMES.iter().map(|s| s.to_string()).collect(), periods, factor_vals)?;

    Ok(SimulatedPanel {
        returns,
        factors,
        truth: DgpTruth {
            lambda,
            betas,
            phi,
            g,
            delta,
            idiosyncratic,
            factor_mean,
            lambda_tilde,
            factor_cov: vpop,
            gamma,
            common,
            u,
            v,
            w,
            r_star,
        },
    })
}

/// `(1/T) Σᵢ φᵢ²`.
pub fn missing_strength(truth: &DgpTruth) -> f64 {
    truth.phi.norm_squared() / truth.g.len() as f64
}

/// `Σᵢ βᵢ,c² · var̂(F_c)` using the true betas.
pub fn target_strength(truth: &DgpTruth, factors: &FactorPanel, component: usize) -> f64 {
    truth.betas.column(component).norm_squared() * factors.covariance()[(component, component)]
}

/// Sample correlation of `φᵢ` with `βᵢ,c`; `None` when either is constant.
pub fn loading_correlation(truth: &DgpTruth, component: usize) -> Option<f64> {
    correlation(&truth.phi, &truth.betas.column(component).into_owned())
}

pub(crate) fn correlation(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let (ma, mb) = (a.mean(), b.mean());
    let da = a.map(|x| x - ma);
    let db = b.map(|x| x - mb);
    let denom = (da.norm_squared() * db.norm_squared()).sqrt();
    (denom > 0.0).then(|| da.dot(&db) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DgpParams {
        let mut p = DgpParams::new(CalibrationSummary::reference(), 1.0, 0.1, 0.3, 7);
        p.n_assets = Some(12);
        p.n_periods = Some(40);
        p
    }

    #[test]
    fn reproducible() {
        let a = simulate(&small(), ReplicationIndex::new(3, 4)).unwrap();
        let b = simulate(&small(), ReplicationIndex::new(3, 4)).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.factors, b.factors);
    }

    #[test]
    fn cross_section_redraw_keeps_time_series() {
        let i = ReplicationIndex::new(2, 0);
        let a = simulate(&small(), i).unwrap();
        let b = simulate(&small(), i.next(DrawScope::NewCrossSection)).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_eq!(a.truth.g, b.truth.g);
        assert_eq!(a.truth.common, b.truth.common);
        assert_ne!(a.truth.phi, b.truth.phi);
        let c = simulate(&small(), i.next(DrawScope::NewTimeSeries)).unwrap();
        assert_ne!(a.factors, c.factors);
    }

    #[test]
    fn theta_zero_has_no_missing_factor() {
        let mut p = small();
        p.theta_phi = 0.0;
        let s = simulate(&p, ReplicationIndex::default()).unwrap();
        assert!(s.truth.phi.iter().all(|&x| x == 0.0));
        assert_eq!(loading_correlation(&s.truth, 3), None);
    }

    #[test]
    fn returns_are_r_star_plus_premia() {
        let s = simulate(&small(), ReplicationIndex::new(1, 1)).unwrap();
        let premia = &s.truth.betas * &s.truth.lambda;
        for i in 0..12 {
            for t in 0..40 {
                let d = s.returns.values()[(i, t)] - s.truth.r_star[(i, t)] - premia[i];
                assert!(d.abs() <= 1e-12 * (1.0 + s.returns.values()[(i, t)].abs()));
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = small();
        p.varphi = 1.0;
        assert!(matches!(simulate(&p, ReplicationIndex::default()), Err(PremiaError::Parameter(_))));
        let mut p = small();
        p.sigma_xi2 = 0.0;
        assert!(p.validate().is_err());
    }
}
