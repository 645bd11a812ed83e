//! Four-split sample-splitting IV estimator of risk premia.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PremiaError, Result};
use crate::inference::LongRunVariance;
use crate::linalg::{normal_rcond, symmetrize, tsls_reduced, RCOND_THRESHOLD};
use crate::panel::{FactorPanel, ReturnsPanel};
use crate::two_pass::{check_aligned, first_pass_betas, BetaSet, EstimateResult, Method};

/// Squared singular-value ratio below which an instrument direction is dropped.
pub const INSTRUMENT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitLayout {
    /// Four consecutive quarters of the sample.
    #[default]
    Contiguous,
    /// Period `t` goes to split `t mod 4`.
    Interleaved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitScheme {
    pub subsets: [Vec<usize>; 4],
    pub tau: usize,
}

/// Splits `0..t` into four subsets of `⌊t/4⌋` periods; the remainder is left out.
pub fn make_split_scheme(t: usize, layout: SplitLayout) -> Result<SplitScheme> {
    if t < 8 {
        return Err(PremiaError::InsufficientData(format!(
            "four splits need at least 8 periods, got {t}"
        )));
    }
    let tau = t / 4;
    let subsets = std::array::from_fn(|j| match layout {
        SplitLayout::Contiguous => (j * tau..(j + 1) * tau).collect(),
        SplitLayout::Interleaved => (0..tau).map(|s| 4 * s + j).collect(),
    });
    Ok(SplitScheme { subsets, tau })
}

impl SplitScheme {
    /// Arbitrary (possibly overlapping) windows of equal length.
    pub fn custom(subsets: [Vec<usize>; 4]) -> Result<SplitScheme> {
        let tau = subsets[0].len();
        if tau == 0 || subsets.iter().any(|s| s.len() != tau) {
            return Err(PremiaError::Parameter("split windows must be non-empty and of equal length".into()));
        }
        Ok(SplitScheme { subsets, tau })
    }
}

/// First-pass betas on each of the four windows.
pub fn subsample_betas(returns: &ReturnsPanel, factors: &FactorPanel, scheme: &SplitScheme) -> Result<[BetaSet; 4]> {
    let k = factors.n_factors();
    if scheme.tau <= k + 1 {
        return Err(PremiaError::InsufficientData(format!(
            "split length {} must exceed k_F + 1 = {}",
            scheme.tau,
            k + 1
        )));
    }
    let mut out = Vec::with_capacity(4);
    for (j, window) in scheme.subsets.iter().enumerate() {
        out.push(first_pass_betas(returns, factors, window).map_err(|e| PremiaError::in_split(j + 1, e))?);
    }
    Ok(out.try_into().expect("four splits"))
}

/// One of the four circular rotations; split indexes are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct IvRegressionSpec {
    pub rotation: usize,
    pub regressor_splits: (usize, usize),
    pub instrument_splits: (usize, usize),
    /// `k_v x k_F`.
    pub a: DMatrix<f64>,
}

impl IvRegressionSpec {
    pub fn new(rotation: usize, a: DMatrix<f64>) -> Result<Self> {
        if !(1..=4).contains(&rotation) {
            return Err(PremiaError::Parameter(format!("rotation must be 1..4, got {rotation}")));
        }
        let s = |o: usize| (rotation - 1 + o) % 4 + 1;
        Ok(IvRegressionSpec {
            rotation,
            regressor_splits: (s(0), s(1)),
            instrument_splits: (s(2), s(3)),
            a,
        })
    }
}

/// `(I_kv | 0)`.
pub fn default_a_matrix(k_v: usize, k_f: usize) -> Result<DMatrix<f64>> {
    if k_v > k_f {
        return Err(PremiaError::Identification(format!(
            "k_v = {k_v} exceeds the number of factors {k_f}"
        )));
    }
    Ok(DMatrix::from_fn(k_v, k_f, |i, j| if i == j { 1.0 } else { 0.0 }))
}

fn check_a(a: &DMatrix<f64>, k_f: usize) -> Result<()> {
    let (k_v, cols) = a.shape();
    if k_v > k_f {
        return Err(PremiaError::Identification(format!(
            "k_v = {k_v} exceeds the number of factors {k_f}"
        )));
    }
    if cols != k_f {
        return Err(PremiaError::Dimension(format!("A has {cols} columns for {k_f} factors")));
    }
    if k_v > 0 {
        let rcond = normal_rcond(&a.transpose());
        if !(rcond > RCOND_THRESHOLD) {
            return Err(PremiaError::Identification(format!(
                "A must have full row rank {k_v} (reciprocal condition {rcond:.3e})"
            )));
        }
    }
    Ok(())
}

/// Regressors `X = (β¹, (β¹ − β²)A')` and instruments `Z = (β³, β³ − β⁴)`.
pub fn build_iv_design(betas: &[BetaSet; 4], spec: &IvRegressionSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let b = |j: usize| &betas[j - 1].betas;
    design_from_betas(
        b(spec.regressor_splits.0),
        b(spec.regressor_splits.1),
        b(spec.instrument_splits.0),
        b(spec.instrument_splits.1),
        &spec.a,
    )
}

fn design_from_betas(
    b1: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    b3: &DMatrix<f64>,
    b4: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, k) = b1.shape();
    if [b2, b3, b4].iter().any(|b| b.shape() != (n, k)) {
        return Err(PremiaError::Dimension("split beta matrices differ in shape".into()));
    }
    check_a(a, k)?;
    let k_v = a.nrows();
    let mut x = DMatrix::zeros(n, k + k_v);
    x.columns_mut(0, k).copy_from(b1);
    if k_v > 0 {
        x.columns_mut(k, k_v).copy_from(&((b1 - b2) * a.transpose()));
    }
    let mut z = DMatrix::zeros(n, 2 * k);
    z.columns_mut(0, k).copy_from(b3);
    z.columns_mut(k, k).copy_from(&(b3 - b4));
    Ok((x, z))
}

/// TSLS output with the ingredients of the four-split covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Row `i` is `z̃ᵢ = X'Z(Z'Z)⁻¹zᵢ`.
    pub z_tilde: DMatrix<f64>,
    /// `X'P_Z X / N`.
    pub g: DMatrix<f64>,
    pub instrument_rank: usize,
}

pub fn per_rotation_tsls(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<RotationFit> {
    let fit = tsls_reduced(y, x, z, INSTRUMENT_REL_TOL)?;
    let n = y.len() as f64;
    Ok(RotationFit {
        coefficients: fit.coefficients,
        residuals: fit.residuals,
        z_tilde: fit.projected_x,
        g: fit.xpzx / n,
        instrument_rank: fit.instrument_rank,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourSplitOptions {
    pub k_v: usize,
    /// Overrides the default `(I_kv | 0)`; must be `k_v x k_F`.
    pub a: Option<DMatrix<f64>>,
    pub layout: SplitLayout,
}

impl Default for FourSplitOptions {
    fn default() -> Self {
        FourSplitOptions {
            k_v: 1,
            a: None,
            layout: SplitLayout::Contiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourSplitResult {
    /// Averaged estimate with `covariance = sigma_iv + Ω/T`.
    pub estimate: EstimateResult,
    pub lambda_per_rotation: Vec<DVector<f64>>,
    pub sigma_iv: DMatrix<f64>,
    pub a_hat_per_rotation: Vec<DVector<f64>>,
}

pub fn four_split_estimate(
    returns: &ReturnsPanel,
    factors: &FactorPanel,
    lrv: &LongRunVariance,
    options: &FourSplitOptions,
) -> Result<FourSplitResult> {
    check_aligned(returns, factors)?;
    let scheme = make_split_scheme(returns.n_periods(), options.layout)?;
    four_split_with_scheme(returns, factors, lrv, &scheme, options)
}

/// As [`four_split_estimate`] with caller-chosen windows.
pub fn four_split_with_scheme(
    returns: &ReturnsPanel,
    factors: &FactorPanel,
    lrv: &LongRunVariance,
    scheme: &SplitScheme,
    options: &FourSplitOptions,
) -> Result<FourSplitResult> {
    let k = factors.n_factors();
    let a = match &options.a {
        Some(a) => {
            if a.nrows() != options.k_v {
                return Err(PremiaError::Parameter(format!(
                    "A has {} rows but k_v = {}",
                    a.nrows(),
                    options.k_v
                )));
            }
            a.clone()
        }
        None => default_a_matrix(options.k_v, k)?,
    };
    check_a(&a, k)?;
    let betas = subsample_betas(returns, factors, scheme)?;
    let rbar = returns.mean_returns();
    let mut res = four_split_from_betas(&betas, &rbar, &a, lrv, factors.n_periods())?;
    res.estimate.factor_names = factors.names().to_vec();
    res.estimate.diagnostics.insert("tau".into(), scheme.tau as f64);
    Ok(res)
}

/// Rotations, averaging and covariance assembly on precomputed split betas.
pub fn four_split_from_betas(
    betas: &[BetaSet; 4],
    mean_returns: &DVector<f64>,
    a: &DMatrix<f64>,
    lrv: &LongRunVariance,
    n_periods: usize,
) -> Result<FourSplitResult> {
    let (n, k) = betas[0].betas.shape();
    check_a(a, k)?;
    let k_v = a.nrows();
    let p = k + k_v;
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
    if n <= p {
        return Err(PremiaError::InsufficientData(format!(
            "IV regressions need more than {p} assets, got {n}"
        )));
    }

    let mut fits = Vec::with_capacity(4);
    for j in 1..=4 {
        let spec = IvRegressionSpec::new(j, a.clone())?;
        let fit = build_iv_design(betas, &spec)
            .and_then(|(x, z)| per_rotation_tsls(mean_returns, &x, &z))
            .map_err(|e| PremiaError::in_rotation(j, e))?;
        fits.push(fit);
    }

    let lambda_per_rotation: Vec<DVector<f64>> = fits.iter().map(|f| f.coefficients.rows(0, k).into_owned()).collect();
    let a_hat_per_rotation: Vec<DVector<f64>> = fits.iter().map(|f| f.coefficients.rows(k, k_v).into_owned()).collect();
    let mut lambda = DVector::zeros(k);
    for l in &lambda_per_rotation {
        lambda += l;
    }
    lambda /= 4.0;

    // Stacked scores s_i = (z̃ᵢ⁽ʲ⁾ ε̂ᵢ⁽ʲ⁾)_j, so Σ̂₀ = S'S/N.
    let nf = n as f64;
    let mut scores = DMatrix::zeros(n, 4 * p);
    // H = G⁻¹R, stacked (1/4) G_j⁻¹[:, ..k].
    let mut h = DMatrix::zeros(4 * p, k);
    for (j, fit) in fits.iter().enumerate() {
        let mut block = fit.z_tilde.clone();
        for (mut row, e) in block.row_iter_mut().zip(fit.residuals.iter()) {
            row *= *e;
        }
        scores.columns_mut(j * p, p).copy_from(&block);
        let g_inv = fit.g.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
            PremiaError::in_rotation(
                j + 1,
                PremiaError::Singular {
                    context: "G_j = X'P_Z X / N".into(),
                    rcond: 0.0,
                },
            )
        })?;
        h.view_mut((j * p, 0), (p, k)).copy_from(&(g_inv.columns(0, k) * 0.25));
    }
    // (1/N) R'G⁻¹ Σ̂₀ G⁻¹R = (SH)'(SH)/N²
    let sh = &scores * &h;
    let mut sigma_iv = sh.transpose() * &sh / (nf * nf);
    symmetrize(&mut sigma_iv);

    let covariance = &sigma_iv + &lrv.omega / n_periods as f64;
    let mut estimate = EstimateResult::from_parts(lambda, covariance, sigma_iv.clone(), Method::FourSplit, vec![]);
    estimate.diagnostics.insert("k_v".into(), k_v as f64);
    estimate.diagnostics.insert("n_assets".into(), nf);
    estimate.diagnostics.insert("n_periods".into(), n_periods as f64);
    estimate.diagnostics.insert("nw_lags".into(), lrv.lags as f64);
    estimate.diagnostics.insert(
        "min_instrument_rank".into(),
        fits.iter().map(|f| f.instrument_rank).min().unwrap_or(0) as f64,
    );
    Ok(FourSplitResult {
        estimate,
        lambda_per_rotation,
        sigma_iv,
        a_hat_per_rotation,
    })
}
