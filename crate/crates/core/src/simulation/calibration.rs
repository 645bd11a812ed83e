//! Calibration of the simulation design to a return panel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PremiaError, Result};
use crate::linalg::{least_squares, pca};
use crate::panel::{FactorPanel, ReturnsPanel};
use crate::two_pass::first_pass_betas;

/// Moments driving the simulated panel. Matrices serialize as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    #[serde(with = "vec_serde")]
    pub mu_gamma: DVector<f64>,
    #[serde(with = "mat_serde")]
    pub v_gamma: DMatrix<f64>,
    pub mu_phi: f64,
    pub v_phi: f64,
    pub sigma_eps2: f64,
    #[serde(with = "vec_serde")]
    pub eta0_f: DVector<f64>,
    /// Row `j` holds factor `j`'s loadings on the three common components.
    #[serde(with = "mat_serde")]
    pub eta_f: DMatrix<f64>,
    #[serde(with = "mat_serde")]
    pub sigma_res: DMatrix<f64>,
    pub eta0_mom: f64,
    #[serde(with = "vec_serde")]
    pub eta_mom: DVector<f64>,
    pub sigma_mom2: f64,
    #[serde(with = "vec_serde")]
    pub lambda_true: DVector<f64>,
    pub n_assets: usize,
    pub n_periods: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strengths: Option<StrengthReport>,
}

/// Total-variation strength of the principal components and observed factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthReport {
    pub pc_strengths: Vec<f64>,
    pub explained_fractions: Vec<f64>,
    pub factor_names: Vec<String>,
    pub factor_strengths: Vec<f64>,
}

impl CalibrationSummary {
    /// Built-in calibration for `N = 100`, `T = 504` matched to the
    /// 1972-2013 Fama-French factor moments and the 100-portfolio strength diagnostics.
    pub fn reference() -> Self {
        let e_gamma2: [f64; 3] = [2816.0 * 5.04, 239.0 * 5.04, 113.0 * 5.04];
        CalibrationSummary {
            mu_gamma: DVector::from_vec(vec![(0.96 * e_gamma2[0]).sqrt(), 0.0, 0.0]),
            v_gamma: DMatrix::from_diagonal(&DVector::from_vec(vec![0.04 * e_gamma2[0], e_gamma2[1], e_gamma2[2]])),
            mu_phi: 0.0,
            v_phi: 55.0 * 5.04,
            sigma_eps2: 2816.0 / 0.73 * 0.17 / 100.0,
            eta0_f: DVector::from_vec(vec![0.5264682539682539, 0.18946428571428553, 0.40321428571428547]),
            eta_f: DMatrix::from_row_slice(
                3,
                3,
                &[
                    95.31837029665915,
                    35.052230918295734,
                    -7.497734572972023,
                    36.50296427622125,
                    -40.52595421901091,
                    38.221192727451275,
                    -9.988131358549277,
                    -33.90584777539369,
                    -49.872660070671635,
                ],
            ),
            sigma_res: DMatrix::from_row_slice(
                3,
                3,
                &[
                    0.636381113898338,
                    0.24709889726960954,
                    -0.35506316888854705,
                    0.24709889726960954,
                    0.9778833641581635,
                    -0.25500339739301636,
                    -0.35506316888854705,
                    -0.25500339739301636,
                    1.3083513669217721,
                ],
            ),
            eta0_mom: 0.7079166666666671,
            eta_mom: DVector::from_vec(vec![-15.351862348680054, 4.365455722293094, 19.159276797020638]),
            sigma_mom2: 18.637228856902833,
            lambda_true: DVector::from_vec(vec![
                0.5264682539682539,
                0.18946428571428553,
                0.40321428571428547,
                0.7079166666666671,
            ]),
            n_assets: 100,
            n_periods: 504,
            strengths: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape_ok = self.mu_gamma.len() == 3
            && self.v_gamma.shape() == (3, 3)
            && self.eta0_f.len() == 3
            && self.eta_f.shape() == (3, 3)
            && self.sigma_res.shape() == (3, 3)
            && self.eta_mom.len() == 3
            && self.lambda_true.len() == 4;
        if !shape_ok {
            return Err(PremiaError::Parameter("calibration summary has wrong dimensions".into()));
        }
        for (name, m) in [("v_gamma", &self.v_gamma), ("sigma_res", &self.sigma_res)] {
            let tr = m.trace().abs().max(1.0);
            if crate::linalg::asymmetry(m) > 1e-10 || crate::linalg::min_eigenvalue(m) < -1e-10 * tr {
                return Err(PremiaError::Parameter(format!("{name} must be symmetric PSD")));
            }
        }
        if !(self.v_phi > 0.0 && self.sigma_eps2 > 0.0 && self.sigma_mom2 > 0.0) {
            return Err(PremiaError::Parameter(
                "v_phi, sigma_eps2 and sigma_mom2 must be positive".into(),
            ));
        }
        if self.n_assets == 0 || self.n_periods < 8 {
            return Err(PremiaError::Parameter("calibration needs N >= 1 and T >= 8".into()));
        }
        Ok(())
    }
}

/// Fits the simulation design to a panel, three observed factors and momentum.
pub fn calibrate(returns: &ReturnsPanel, ff_factors: &FactorPanel, momentum: &DVector<f64>) -> Result<CalibrationSummary> {
    let (n, t) = (returns.n_assets(), returns.n_periods());
    if n < 5 || t <= 20 {
        return Err(PremiaError::InsufficientData(format!(
            "calibration needs N >= 5 and T > 20, got N = {n}, T = {t}"
        )));
    }
    if ff_factors.n_factors() != 3 {
        return Err(PremiaError::Dimension(format!(
            "calibration expects 3 observed factors, got {}",
            ff_factors.n_factors()
        )));
    }
    if ff_factors.n_periods() != t || momentum.len() != t {
        return Err(PremiaError::Alignment("calibration inputs differ in length".into()));
    }

    let pc = pca(returns.values(), 4, true)?;
    let nf = n as f64;
    let tf = t as f64;
    let gamma = pc.loadings.rows(0, 3).transpose(); // N x 3
    let phi = pc.loadings.row(3).transpose();
    let mu_gamma = gamma.row_mean().transpose();
    let mut centered = gamma.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu_gamma.transpose();
    }
    let v_gamma = centered.transpose() * &centered / nf;
    let mu_phi = phi.mean();
    let v_phi = phi.map(|x| (x - mu_phi).powi(2)).sum() / nf;
    let tail: f64 = pc.singular_values.iter().skip(4).map(|s| s * s).sum();
    let sigma_eps2 = tail / (nf * tf);

    let design = pc.factors.columns(0, 3).into_owned().insert_column(0, 1.0);
    let mut ys = ff_factors.values().clone().insert_column(3, 0.0);
    ys.set_column(3, momentum);
    let coef = least_squares(&design, &ys, "calibration regression on principal components")?;
    let resid = &ys - &design * &coef;
    let res_cov = resid.transpose() * &resid / tf;

    let eta0_f = coef.view((0, 0), (1, 3)).transpose().column(0).into_owned();
    let eta_f = coef.view((1, 0), (3, 3)).transpose();
    let sigma_res = res_cov.view((0, 0), (3, 3)).into_owned();
    let eta0_mom = coef[(0, 3)];
    let eta_mom = coef.view((1, 3), (3, 1)).into_owned().column(0).into_owned();
    let sigma_mom2 = res_cov[(3, 3)];

    let mut lambda_true = DVector::zeros(4);
    lambda_true.rows_mut(0, 3).copy_from(&ff_factors.means());
    lambda_true[3] = momentum.mean();

    Ok(CalibrationSummary {
        mu_gamma,
        v_gamma,
        mu_phi,
        v_phi,
        sigma_eps2,
        eta0_f,
        eta_f,
        sigma_res,
        eta0_mom,
        eta_mom,
        sigma_mom2,
        lambda_true,
        n_assets: n,
        n_periods: t,
        strengths: Some(strength_report(returns, ff_factors)?),
    })
}

/// Strength `s_k²/T` of the leading components and `Σᵢ βᵢⱼ² var(F_j)` of each factor.
pub fn strength_report(returns: &ReturnsPanel, factors: &FactorPanel) -> Result<StrengthReport> {
    let t = returns.n_periods();
    let m = 4.min(returns.n_assets()).min(t);
    let pc = pca(returns.values(), m, true)?;
    let pc_strengths = pc.singular_values.iter().take(m).map(|s| s * s / t as f64).collect();
    let window: Vec<usize> = (0..t).collect();
    let betas = first_pass_betas(returns, factors, &window)?;
    Ok(StrengthReport {
        pc_strengths,
        explained_fractions: pc.explained_fraction.iter().copied().collect(),
        factor_names: factors.names().to_vec(),
        factor_strengths: factor_strengths(&betas.betas, factors),
    })
}

pub fn factor_strengths(betas: &DMatrix<f64>, factors: &FactorPanel) -> Vec<f64> {
    let cov = factors.covariance();
    (0..factors.n_factors())
        .map(|j| betas.column(j).norm_squared() * cov[(j, j)])
        .collect()
}

mod vec_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub(crate) mod mat_serde {
    use nalgebra::DMatrix;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
    }
}
