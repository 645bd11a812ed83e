//! Infeasible bias terms of the two-pass estimator and the weak-factor
//! attenuation limit.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dgp::{normals, DgpTruth};
use crate::error::{PremiaError, Result};
use crate::linalg::psd_sqrt;
use crate::panel::{FactorPanel, ReturnsPanel};
use crate::two_pass::BetaSet;

#[derive(Debug, Clone, PartialEq)]
pub struct BiasTerms {
    /// `B^A`.
    pub attenuation: DVector<f64>,
    /// `B^OV`.
    pub omitted: DVector<f64>,
}

fn demeaned(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// `B^A = −(Σβ̂β̂')⁻¹ Σuᵢuᵢ' λ̃` and `B^OV = (Σβ̂β̂')⁻¹ Σβ̂ᵢ μᵢ'(v̄ − η̂'λ̃)`,
/// where `uᵢ = (1/T)Σ Σ_F⁻¹F̃_t e_it` and `η̂ = (1/T)Σ Σ_F⁻¹F̃_t v_t'`.
///
/// `errors` is `N x T`, `missing` is `T x k_v`, `loadings` is `N x k_v`.
#[allow(clippy::too_many_arguments)]
pub fn bias_terms(
    betas_hat: &DMatrix<f64>,
    errors: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    sigma_f: &DMatrix<f64>,
    lambda_tilde: &DVector<f64>,
    missing: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
) -> Result<BiasTerms> {
    let (n, k) = betas_hat.shape();
    let t = factors.nrows();
    if errors.shape() != (n, t) || sigma_f.shape() != (k, k) || missing.nrows() != t || loadings.nrows() != n {
        return Err(PremiaError::Dimension("bias_terms: inconsistent shapes".into()));
    }
    let tf = t as f64;
    let sf_chol = sigma_f.clone().cholesky().ok_or(PremiaError::Singular {
        context: "factor covariance".into(),
        rcond: 0.0,
    })?;
    let sf_inv = sf_chol.inverse();
    let ft = demeaned(factors);
    let u = errors * &ft * &sf_inv / tf; // N x k
    let btb = (betas_hat.transpose() * betas_hat).cholesky().ok_or(PremiaError::Singular {
        context: "cross-product of estimated betas".into(),
        rcond: 0.0,
    })?;
    let attenuation = -btb.solve(&(u.transpose() * &u * lambda_tilde));
    let vbar = missing.row_mean().transpose();
    let eta = &sf_inv * ft.transpose() * missing / tf; // k x k_v
    let shift = vbar - eta.transpose() * lambda_tilde;
    let omitted = btb.solve(&(betas_hat.transpose() * (loadings * shift)));
    Ok(BiasTerms { attenuation, omitted })
}

/// Bias terms for a simulated panel using its true idiosyncratic errors,
/// missing factor and loadings, and the model-implied factor covariance.
pub fn bias_decomposition(truth: &DgpTruth, betas_full: &BetaSet, factors: &FactorPanel) -> Result<BiasTerms> {
    let t = factors.n_periods();
    let n = betas_full.betas.nrows();
    bias_terms(
        &betas_full.betas,
        &truth.idiosyncratic,
        factors.values(),
        &truth.factor_cov,
        &truth.lambda_tilde,
        &DMatrix::from_column_slice(t, 1, truth.g.as_slice()),
        &DMatrix::from_column_slice(n, 1, truth.phi.as_slice()),
    )
}

/// Plug-in limit `−(Γ + 𝓘Σ_u𝓘)⁻¹ 𝓘Σ_u λ` of `(√T B^A_strong; B^A_weak)`.
///
/// `gamma` is `N x k` with weak columns already scaled by `√T`; `weak` marks them.
pub fn attenuation_limit(
    gamma: &DMatrix<f64>,
    sigma_f: &DMatrix<f64>,
    sigma_e2: f64,
    lambda: &DVector<f64>,
    weak: &[bool],
) -> Result<DVector<f64>> {
    let (n, k) = gamma.shape();
    if sigma_f.shape() != (k, k) || lambda.len() != k || weak.len() != k {
        return Err(PremiaError::Dimension("attenuation_limit: inconsistent shapes".into()));
    }
    let big_gamma = gamma.transpose() * gamma / n as f64;
    let sigma_u = sigma_f
        .clone()
        .cholesky()
        .ok_or(PremiaError::Singular {
            context: "factor covariance".into(),
            rcond: 0.0,
        })?
        .inverse()
        * sigma_e2;
    let ind = DMatrix::from_diagonal(&DVector::from_iterator(k, weak.iter().map(|&w| if w { 1.0 } else { 0.0 })));
    let lhs = big_gamma + &ind * &sigma_u * &ind;
    let rhs = &ind * &sigma_u * lambda;
    let sol = lhs.lu().solve(&rhs).ok_or(PremiaError::Singular {
        context: "attenuation limit system".into(),
        rcond: 0.0,
    })?;
    Ok(-sol)
}

/// Homoskedastic panel with no missing factor and one weak factor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakFactorDgp {
    /// `N x 2`; the second column is the weak one (`√T`-scaled).
    pub gamma: DMatrix<f64>,
    pub sigma_f: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub sigma_e2: f64,
    pub n_periods: usize,
    pub seed: u64,
}

/// One draw from [`WeakFactorDgp`].
#[derive(Debug, Clone)]
pub struct WeakFactorPanel {
    pub returns: ReturnsPanel,
    pub factors: FactorPanel,
    pub betas: DMatrix<f64>,
    pub errors: DMatrix<f64>,
    pub lambda_tilde: DVector<f64>,
}

impl WeakFactorDgp {
    /// Market-like strong factor and a momentum-like weak factor, `N = 100`, `T = 504`.
    pub fn reference(seed: u64) -> Self {
        let n = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xA1);
        let z = normals(&mut rng, n, 2);
        let gamma = DMatrix::from_fn(n, 2, |i, j| {
            let b1 = 1.0 + 0.3 * z[(i, 0)];
            if j == 0 {
                b1
            } else {
                0.5 + 0.8 * (b1 - 1.0) / 0.3 * 0.5 + 0.9 * z[(i, 1)]
            }
        });
        WeakFactorDgp {
            gamma,
            sigma_f: DMatrix::from_row_slice(2, 2, &[21.2, -2.9, -2.9, 19.9]),
            lambda: DVector::from_vec(vec![0.53, 0.71]),
            sigma_e2: 6.5,
            n_periods: 504,
            seed,
        }
    }

    pub fn betas(&self) -> DMatrix<f64> {
        let mut b = self.gamma.clone();
        let scale = (self.n_periods as f64).sqrt();
        b.column_mut(1).scale_mut(1.0 / scale);
        b
    }

    pub fn limit(&self) -> Result<DVector<f64>> {
        attenuation_limit(&self.gamma, &self.sigma_f, self.sigma_e2, &self.lambda, &[false, true])
    }

    pub fn simulate(&self, rep: u64) -> Result<WeakFactorPanel> {
        let t = self.n_periods;
        let n = self.gamma.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((1 << 56) | rep);
        let f = normals(&mut rng, t, 2) * psd_sqrt(&self.sigma_f, "sigma_f")?;
        let errors = normals(&mut rng, n, t) * self.sigma_e2.sqrt();
        let betas = self.betas();
        let mut r = &betas * f.transpose() + &errors;
        let premia = &betas * &self.lambda;
        for (mut row, p) in r.row_iter_mut().zip(premia.iter()) {
            row.add_scalar_mut(*p);
        }
        let lambda_tilde = &self.lambda + f.row_mean().transpose();
        let periods: Vec<i64> = (1..=t as i64).collect();
        Ok(WeakFactorPanel {
            returns: ReturnsPanel::new((1..=n).map(|i| format!("p{i}")).collect(), periods.clone(), r)?,
            factors: FactorPanel::new(vec!["strong".into(), "weak".into()], periods, f)?,
            betas,
            errors,
            lambda_tilde,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_zero_bias() {
        let b = DMatrix::from_fn(6, 2, |i, j| 1.0 + (i * (j + 1)) as f64 * 0.3);
        let f = DMatrix::from_fn(10, 2, |t, j| ((t * 3 + j) % 7) as f64);
        let terms = bias_terms(
            &b,
            &DMatrix::zeros(6, 10),
            &f,
            &DMatrix::identity(2, 2),
            &DVector::from_vec(vec![0.5, 0.2]),
            &DMatrix::zeros(10, 1),
            &DMatrix::zeros(6, 1),
        )
        .unwrap();
        assert_eq!(terms.attenuation, DVector::zeros(2));
        assert_eq!(terms.omitted, DVector::zeros(2));
    }

    #[test]
    fn limit_is_zero_without_weak_factors() {
        let d = WeakFactorDgp::reference(1);
        let l = attenuation_limit(&d.gamma, &d.sigma_f, d.sigma_e2, &d.lambda, &[false, false]).unwrap();
        assert_eq!(l, DVector::zeros(2));
        assert!(d.limit().unwrap()[1] < 0.0);
    }
}
