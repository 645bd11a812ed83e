//! Classical two-pass risk-premia estimator.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PremiaError, Result};
use crate::inference::LongRunVariance;
use crate::linalg::{least_squares, normal_rcond, symmetrize, RCOND_THRESHOLD};
use crate::panel::{FactorPanel, ReturnsPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TwoPass,
    FourSplit,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::TwoPass => "two-pass",
            Method::FourSplit => "four-split",
        })
    }
}

/// First-pass time-series regression output.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSet {
    /// `N x k_F` slopes.
    pub betas: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    /// `N x |window|` residuals.
    pub residuals: DMatrix<f64>,
    /// Time indexes used.
    pub window: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub lambda: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    /// Covariance without the `Ω/T` factor-mean term.
    pub sampling_cov: DMatrix<f64>,
    pub method: Method,
    pub factor_names: Vec<String>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateResult {
    pub fn from_parts(
        lambda: DVector<f64>,
        mut covariance: DMatrix<f64>,
        mut sampling_cov: DMatrix<f64>,
        method: Method,
        factor_names: Vec<String>,
    ) -> Self {
        symmetrize(&mut covariance);
        symmetrize(&mut sampling_cov);
        let std_errors = covariance.diagonal().map(|v| v.max(0.0).sqrt());
        EstimateResult {
            lambda,
            covariance,
            std_errors,
            sampling_cov,
            method,
            factor_names,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.get(key).copied()
    }
}

/// Time-series OLS of every asset on a constant and the factors over `window`.
pub fn first_pass_betas(returns: &ReturnsPanel, factors: &FactorPanel, window: &[usize]) -> Result<BetaSet> {
    let t = returns.n_periods();
    if factors.n_periods() != t {
        return Err(PremiaError::Alignment(format!(
            "returns have {t} periods, factors {}",
            factors.n_periods()
        )));
    }
    let k = factors.n_factors();
    if window.len() <= k + 1 {
        return Err(PremiaError::InsufficientData(format!(
            "first pass needs more than {} periods, window has {}",
            k + 1,
            window.len()
        )));
    }
    if let Some(&bad) = window.iter().find(|&&s| s >= t) {
        return Err(PremiaError::Dimension(format!("time index {bad} outside 0..{t}")));
    }
    let f = factors.values().select_rows(window);
    let mut fd = f.clone();
    let fbar = f.row_mean();
    for mut row in fd.row_iter_mut() {
        row -= &fbar;
    }
    let rcond = normal_rcond(&fd);
    if !(rcond > RCOND_THRESHOLD) {
        return Err(PremiaError::Singular {
            context: "factor covariance on the estimation window".into(),
            rcond,
        });
    }
    let y = returns.values().select_columns(window).transpose();
    let slopes = least_squares(&fd, &y, "factor covariance on the estimation window")?;
    let betas = slopes.transpose();
    let ybar = y.row_mean().transpose();
    let intercepts = &ybar - &betas * fbar.transpose();
    let mut residuals = y - fd * &slopes;
    for mut col in residuals.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    Ok(BetaSet {
        betas,
        intercepts,
        residuals: residuals.transpose(),
        window: window.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TwoPassOptions {
    /// Zero-beta rate in the second pass.
    pub intercept: bool,
    /// Multiply the sandwich by `1 + λ'Σ_F⁻¹λ`.
    pub shanken: bool,
}

/// Heteroskedasticity-robust sandwich `(1/N) G⁻¹ S₀ G⁻¹` for a cross-sectional OLS fit.
pub(crate) fn ols_sandwich(design: &DMatrix<f64>, residuals: &DVector<f64>, context: &str) -> Result<DMatrix<f64>> {
    let xtx_inv_r = {
        let r = design.clone().qr().r();
        r.try_inverse().ok_or(PremiaError::Singular {
            context: context.to_string(),
            rcond: 0.0,
        })?
    };
    // (X'X)^{-1} = R^{-1} R^{-T}
    let xtx_inv = &xtx_inv_r * xtx_inv_r.transpose();
    let mut weighted = design.clone();
    for (mut row, e) in weighted.row_iter_mut().zip(residuals.iter()) {
        row *= *e;
    }
    let meat = weighted.transpose() * &weighted;
    // (1/N)(X'X/N)^{-1}(meat/N)(X'X/N)^{-1} = (X'X)^{-1} meat (X'X)^{-1}
    let mut v = &xtx_inv * meat * &xtx_inv;
    symmetrize(&mut v);
    Ok(v)
}

/// Two-pass estimate with full-sample betas and a no-intercept second pass
/// (unless `options.intercept`).
pub fn two_pass_estimate(
    returns: &ReturnsPanel,
    factors: &FactorPanel,
    lrv: &LongRunVariance,
    options: TwoPassOptions,
) -> Result<EstimateResult> {
    check_aligned(returns, factors)?;
    let window: Vec<usize> = (0..returns.n_periods()).collect();
    let betas = first_pass_betas(returns, factors, &window)?;
    let rbar = returns.mean_returns();
    let mut res = two_pass_from_betas(&betas.betas, &rbar, factors, lrv, options)?;
    res.diagnostics
        .insert("cross_section_r2".into(), cross_section_r2(&res, &betas, &rbar));
    Ok(res)
}

pub(crate) fn check_aligned(returns: &ReturnsPanel, factors: &FactorPanel) -> Result<()> {
    if returns.periods() != factors.periods() {
        return Err(PremiaError::Alignment(
            "returns and factors must share identical period labels (run align first)".into(),
        ));
    }
    Ok(())
}

/// Second pass on given betas and mean returns.
pub fn two_pass_from_betas(
    betas: &DMatrix<f64>,
    mean_returns: &DVector<f64>,
    factors: &FactorPanel,
    lrv: &LongRunVariance,
    options: TwoPassOptions,
) -> Result<EstimateResult> {
    let (n, k) = betas.shape();
    if mean_returns.len() != n {
        return Err(PremiaError::Dimension(format!(
            "{n} beta rows but {} mean returns",
            mean_returns.len()
        )));
    }
    if lrv.omega.shape() != (k, k) {
        return Err(PremiaError::Dimension(format!(
            "long-run variance is {}x{} for {k} factors",
            lrv.omega.nrows(),
            lrv.omega.ncols()
        )));
    }
    let design = if options.intercept {
        betas.clone().insert_column(0, 1.0)
    } else {
        betas.clone()
    };
    let p = design.ncols();
    if n <= p {
        return Err(PremiaError::InsufficientData(format!(
            "second pass needs more than {p} assets, got {n}"
        )));
    }
    let rcond = normal_rcond(&design);
    let coef = least_squares(
        &design,
        &DMatrix::from_column_slice(n, 1, mean_returns.as_slice()),
        "second-pass cross-product of betas",
    )?
    .column(0)
    .into_owned();
    let resid = mean_returns - &design * &coef;
    let full = ols_sandwich(&design, &resid, "second-pass cross-product of betas")?;
    let off = usize::from(options.intercept);
    let lambda = coef.rows(off, k).into_owned();
    let mut sandwich = full.view((off, off), (k, k)).into_owned();

    let mut shanken = 1.0;
    if options.shanken {
        let sigma_f = factors.covariance();
        let chol = sigma_f.cholesky().ok_or(PremiaError::Singular {
            context: "factor covariance (Shanken correction)".into(),
            rcond: 0.0,
        })?;
        shanken += lambda.dot(&chol.solve(&lambda));
        sandwich *= shanken;
    }
    let t = factors.n_periods() as f64;
    let covariance = &sandwich + &lrv.omega / t;
    let mut res = EstimateResult::from_parts(
        lambda,
        covariance,
        sandwich,
        Method::TwoPass,
        factors.names().to_vec(),
    );
    res.diagnostics.insert("rcond_beta".into(), rcond);
    res.diagnostics.insert("n_assets".into(), n as f64);
    res.diagnostics.insert("n_periods".into(), t);
    res.diagnostics.insert("nw_lags".into(), lrv.lags as f64);
    if options.shanken {
        res.diagnostics.insert("shanken_factor".into(), shanken);
    }
    if options.intercept {
        res.diagnostics.insert("zero_beta_rate".into(), coef[0]);
        res.diagnostics.insert("zero_beta_se".into(), full[(0, 0)].max(0.0).sqrt());
    }
    Ok(res)
}

/// `1 - SSR/SST` of the second pass with the uncentered `SST = Σ r̄ᵢ²`.
pub fn cross_section_r2(result: &EstimateResult, betas: &BetaSet, mean_returns: &DVector<f64>) -> f64 {
    let mut fitted = &betas.betas * &result.lambda;
    if let Some(c) = result.diagnostic("zero_beta_rate") {
        fitted.add_scalar_mut(c);
    }
    let ssr = (mean_returns - fitted).norm_squared();
    let sst = mean_returns.norm_squared();
    if sst == 0.0 {
        return if ssr == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ssr / sst
}
