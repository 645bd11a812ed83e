//! Long-run factor variance and tests on estimated risk premia.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{PremiaError, Result};
use crate::linalg::{min_eigenvalue, pinv_sym, symmetrize};
use crate::panel::FactorPanel;
use crate::two_pass::EstimateResult;

/// Relative eigenvalue cut-off for pseudo-inverses in Wald statistics.
pub const WALD_REL_TOL: f64 = 1e-10;

/// Two-sided 5% critical value of the standard normal.
pub const Z_975: f64 = 1.959963984540054;

/// Newey-West estimate of the long-run factor covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRunVariance {
    pub omega: DMatrix<f64>,
    pub lags: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub reject_at_5pct: bool,
}

impl TestResult {
    fn new(statistic: f64, dof: usize, p_value: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestResult {
            statistic,
            dof,
            p_value,
            reject_at_5pct: p_value < 0.05,
        }
    }
}

/// Bartlett-kernel long-run covariance of the factors with `1/T` normalization.
pub fn newey_west(factors: &FactorPanel, lags: usize) -> Result<LongRunVariance> {
    newey_west_matrix(factors.values(), lags)
}

/// As [`newey_west`] on a raw `T x k` matrix of observations.
pub fn newey_west_matrix(values: &DMatrix<f64>, lags: usize) -> Result<LongRunVariance> {
    let t = values.nrows();
    if lags >= t {
        return Err(PremiaError::Bandwidth { lags, periods: t });
    }
    let mut x = values.clone();
    for mut col in x.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let tf = t as f64;
    let mut omega = x.transpose() * &x / tf;
    for l in 1..=lags {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let lead = x.rows(l, t - l);
        let lag = x.rows(0, t - l);
        let gamma = lead.transpose() * lag / tf;
        omega += (&gamma + gamma.transpose()) * w;
    }
    symmetrize(&mut omega);
    Ok(LongRunVariance { omega, lags })
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Upper-tail chi-square probability.
pub fn chi2_upper_p(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    if stat <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    dist.sf(stat)
}

/// t statistic of one component against `null_value`, two-sided normal p-value.
pub fn t_test(result: &EstimateResult, component: usize, null_value: f64) -> Result<TestResult> {
    let k = result.lambda.len();
    if component >= k {
        return Err(PremiaError::Dimension(format!(
            "component {component} out of range for {k} premia"
        )));
    }
    let se = result.std_errors[component];
    if !(se > 0.0) || !se.is_finite() {
        return Err(PremiaError::DegenerateVariance { component });
    }
    let z = (result.lambda[component] - null_value) / se;
    Ok(TestResult::new(z, 1, normal_two_sided_p(z)))
}

/// Wald statistic `d' V⁺ d` on the restricted components, chi-square with
/// dof equal to the effective rank of the restricted covariance block.
pub fn wald_test(
    lambda_hat: &DVector<f64>,
    covariance: &DMatrix<f64>,
    restriction: &[usize],
    null_values: &DVector<f64>,
) -> Result<TestResult> {
    let k = lambda_hat.len();
    if covariance.shape() != (k, k) {
        return Err(PremiaError::Dimension(format!(
            "covariance is {}x{} for {k} premia",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    if restriction.len() != null_values.len() {
        return Err(PremiaError::Dimension(format!(
            "{} restricted components but {} null values",
            restriction.len(),
            null_values.len()
        )));
    }
    if let Some(&bad) = restriction.iter().find(|&&c| c >= k) {
        return Err(PremiaError::Dimension(format!("component {bad} out of range for {k} premia")));
    }
    let d = DVector::from_fn(restriction.len(), |i, _| lambda_hat[restriction[i]] - null_values[i]);
    let v = covariance.select_rows(restriction).select_columns(restriction);
    quadratic_form_test(&d, &v).map(|(t, _)| t)
}

/// `d' V⁺ d` together with the minimum eigenvalue of `V`.
fn quadratic_form_test(d: &DVector<f64>, v: &DMatrix<f64>) -> Result<(TestResult, f64)> {
    let mut v = v.clone();
    symmetrize(&mut v);
    let pinv = pinv_sym(&v, WALD_REL_TOL)?;
    let stat = (d.transpose() * &pinv.matrix * d)[(0, 0)];
    let stat = stat.max(0.0);
    Ok((
        TestResult::new(stat, pinv.rank, chi2_upper_p(stat, pinv.rank)),
        min_eigenvalue(&v),
    ))
}

/// Outcome of the tradable-factor specification test.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecificationTest {
    pub test: TestResult,
    /// Set when the weighting matrix had a clearly negative eigenvalue.
    pub non_psd_weight: bool,
    pub min_eigenvalue: f64,
}

/// Compares estimated premia with average factor realizations.
///
/// The weighting matrix is the sampling part of the estimator's covariance
/// (the factor-mean term is excluded), which for the two-pass estimator is
/// the Hausman difference `V_TP - Ω/T` and for the four-split estimator is
/// `sigma_iv`.
pub fn specification_test(result: &EstimateResult, factor_means: &DVector<f64>) -> Result<SpecificationTest> {
    if factor_means.len() != result.lambda.len() {
        return Err(PremiaError::Dimension(format!(
            "{} factor means for {} premia",
            factor_means.len(),
            result.lambda.len()
        )));
    }
    let d = &result.lambda - factor_means;
    let (test, min_eig) = quadratic_form_test(&d, &result.sampling_cov)?;
    let trace = result.sampling_cov.trace().abs().max(f64::MIN_POSITIVE);
    Ok(SpecificationTest {
        test,
        non_psd_weight: min_eig < -1e-10 * trace,
        min_eigenvalue: min_eig,
    })
}
