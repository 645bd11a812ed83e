//! Dense linear-algebra kernels shared by the estimators.
//!
//! Least-squares problems are solved through a thin QR factorization; the
//! reciprocal condition of the normal matrix is read off the singular values
//! of the triangular factor, so `X'X` is never formed or inverted.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{PremiaError, Result};

/// Matrices whose normal-equation reciprocal condition falls below this are singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Result of an ordinary least-squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Slope coefficients, one per column of the regressor matrix.
    pub coefficients: DVector<f64>,
    /// Intercept, present when the fit prepended a constant column.
    pub intercept: Option<f64>,
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
    /// Reciprocal condition number of the normal matrix of the full design.
    pub rcond: f64,
}

/// Result of a two-stage least-squares fit.
#[derive(Debug, Clone)]
pub struct TslsFit {
    pub coefficients: DVector<f64>,
    /// `y - X b`, computed with the original (not projected) regressors.
    pub residuals: DVector<f64>,
    /// `P_Z X`. Row `i` equals `X'Z (Z'Z)^{-1} z_i`.
    pub projected_x: DMatrix<f64>,
    /// `X' P_Z X`.
    pub xpzx: DMatrix<f64>,
    /// `(Z'Z)^{-1}`, or its pseudo-inverse for the rank-reduced variant.
    pub ztz_inv: DMatrix<f64>,
    /// Rank of the instrument matrix actually used for the projection.
    pub instrument_rank: usize,
}

/// Principal components of a panel.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// T x m, columns orthonormal over time.
    pub factors: DMatrix<f64>,
    /// m x N, `diag(s) V'` for the leading components.
    pub loadings: DMatrix<f64>,
    /// Share of total sum of squares captured by each retained component.
    pub explained_fraction: DVector<f64>,
    /// All singular values of the (demeaned) T x N matrix, descending.
    pub singular_values: DVector<f64>,
}

/// Moore-Penrose inverse of a symmetric matrix together with its effective rank.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

/// Reciprocal condition of `A'A` given the singular values of `A`.
pub fn rcond_from_singular_values(sv: &DVector<f64>) -> f64 {
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || !min.is_finite() {
        return 0.0;
    }
    (min / max).powi(2)
}

/// Reciprocal condition of `X'X` without forming it.
pub fn normal_rcond(x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return 1.0;
    }
    if x.nrows() < x.ncols() {
        return 0.0;
    }
    let r = x.clone().qr().r();
    rcond_from_singular_values(&r.singular_values())
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Solves `min ||Y - X B||` for every column of `Y` with a single factorization.
///
/// `context` names the design in the singularity error.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    if y.nrows() != n {
        return Err(PremiaError::Dimension(format!(
            "{context}: design has {n} rows but response has {}",
            y.nrows()
        )));
    }
    if n < k || k == 0 {
        return Err(PremiaError::InsufficientData(format!(
            "{context}: {n} observations for {k} coefficients"
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let rcond = rcond_from_singular_values(&r.singular_values());
    if !(rcond > RCOND_THRESHOLD) {
        return Err(PremiaError::Singular {
            context: context.to_string(),
            rcond,
        });
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty).ok_or(PremiaError::Singular {
        context: context.to_string(),
        rcond,
    })
}

/// Ordinary least squares of `y` on `X`, optionally with a prepended intercept.
pub fn ols(y: &DVector<f64>, x: &DMatrix<f64>, intercept: bool) -> Result<OlsFit> {
    let design = if intercept { with_intercept(x) } else { x.clone() };
    let (n, k) = design.shape();
    if n <= k {
        return Err(PremiaError::InsufficientData(format!(
            "ols needs more than {k} observations, got {n}"
        )));
    }
    let rcond = normal_rcond(&design);
    let coef = least_squares(&design, &DMatrix::from_column_slice(n, 1, y.as_slice()), "ols design")?;
    let coef = coef.column(0).into_owned();
    let fitted = &design * &coef;
    let residuals = y - &fitted;
    let (intercept, coefficients) = if intercept {
        (Some(coef[0]), coef.rows(1, k - 1).into_owned())
    } else {
        (None, coef)
    };
    Ok(OlsFit {
        coefficients,
        intercept,
        residuals,
        fitted,
        rcond,
    })
}

/// Two-stage least squares: `b = (X'P_Z X)^{-1} X'P_Z y`, `P_Z = Z (Z'Z)^{-1} Z'`.
pub fn tsls(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<TslsFit> {
    check_iv_shapes(y, x, z)?;
    let rcond = normal_rcond(z);
    if !(rcond > RCOND_THRESHOLD) {
        return Err(PremiaError::Singular {
            context: "instrument cross-product Z'Z".into(),
            rcond,
        });
    }
    let basis = z.clone().qr().q();
    let ztz = z.transpose() * z;
    let ztz_inv = ztz
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(PremiaError::Singular {
            context: "instrument cross-product Z'Z".into(),
            rcond,
        })?;
    finish_tsls(y, x, &basis, ztz_inv, z.ncols())
}

/// Two-stage least squares that projects on the column space of `Z` even when
/// `Z'Z` is rank deficient (`(Z'Z)^{-1}` replaced by its pseudo-inverse).
///
/// Directions with squared singular value below `rel_tol` times the largest are
/// dropped. Identification still requires the retained rank to cover `X`.
pub fn tsls_reduced(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    rel_tol: f64,
) -> Result<TslsFit> {
    check_iv_shapes(y, x, z)?;
    let svd = z.clone().svd(true, false);
    let u = svd.u.as_ref().expect("u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&j| smax > 0.0 && (svd.singular_values[j] / smax).powi(2) > rel_tol)
        .collect();
    if keep.len() < x.ncols() {
        return Err(PremiaError::Identification(format!(
            "instrument rank {} below number of regressors {}",
            keep.len(),
            x.ncols()
        )));
    }
    let basis = u.select_columns(&keep);
    let ztz = z.transpose() * z;
    let ztz_inv = pinv_sym(&ztz, rel_tol)?.matrix;
    finish_tsls(y, x, &basis, ztz_inv, keep.len())
}

fn check_iv_shapes(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
    let n = y.len();
    if x.nrows() != n || z.nrows() != n {
        return Err(PremiaError::Dimension(format!(
            "tsls: y has {n} rows, X {}, Z {}",
            x.nrows(),
            z.nrows()
        )));
    }
    if z.ncols() < x.ncols() {
        return Err(PremiaError::Identification(format!(
            "under-identified: {} instruments for {} regressors",
            z.ncols(),
            x.ncols()
        )));
    }
    if n < z.ncols() {
        return Err(PremiaError::InsufficientData(format!(
            "tsls: {n} observations for {} instruments",
            z.ncols()
        )));
    }
    Ok(())
}

fn finish_tsls(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    ztz_inv: DMatrix<f64>,
    instrument_rank: usize,
) -> Result<TslsFit> {
    let projected_x = basis * (basis.transpose() * x);
    for j in 0..x.ncols() {
        let total = x.column(j).norm_squared();
        let kept = projected_x.column(j).norm_squared();
        let ratio = if total > 0.0 { kept / total } else { 0.0 };
        if !(ratio > RCOND_THRESHOLD) {
            return Err(PremiaError::Singular {
                context: format!("projected regressors X'P_Z X (column {j} orthogonal to instruments)"),
                rcond: ratio,
            });
        }
    }
    let n = y.len();
    let coef = least_squares(
        &projected_x,
        &DMatrix::from_column_slice(n, 1, y.as_slice()),
        "projected regressors X'P_Z X",
    )?;
    let coefficients = coef.column(0).into_owned();
    let residuals = y - x * &coefficients;
    let mut xpzx = projected_x.transpose() * &projected_x;
    symmetrize(&mut xpzx);
    Ok(TslsFit {
        coefficients,
        residuals,
        projected_x,
        xpzx,
        ztz_inv,
        instrument_rank,
    })
}

/// Principal components of an `N x T` panel (assets in rows).
///
/// Factors are the leading left singular vectors of the `T x N` matrix, each
/// with unit sum of squares over time; loadings are `diag(s) V'`. Each
/// component's sign is chosen so its largest-magnitude loading is positive.
pub fn pca(panel: &DMatrix<f64>, m: usize, demean: bool) -> Result<PcaResult> {
    let (n, t) = panel.shape();
    if m == 0 || m > n.min(t) {
        return Err(PremiaError::Dimension(format!(
            "cannot extract {m} components from a {n} x {t} panel"
        )));
    }
    let mut data = panel.transpose();
    if demean {
        for mut col in data.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    }
    let svd = data.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let sorted = DVector::from_iterator(s.len(), order.iter().map(|&j| s[j]));
    let total: f64 = sorted.iter().map(|v| v * v).sum();

    let mut factors = DMatrix::zeros(t, m);
    let mut loadings = DMatrix::zeros(m, n);
    let mut explained = DVector::zeros(m);
    for (c, &j) in order.iter().take(m).enumerate() {
        let mut f = u.column(j).into_owned();
        let mut l = v_t.row(j).transpose() * s[j];
        let (imax, _) = l
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if l[imax] < 0.0 {
            f.neg_mut();
            l.neg_mut();
        }
        factors.set_column(c, &f);
        loadings.set_row(c, &l.transpose());
        explained[c] = if total > 0.0 { s[j] * s[j] / total } else { 0.0 };
    }
    Ok(PcaResult {
        factors,
        loadings,
        explained_fraction: explained,
        singular_values: sorted,
    })
}

/// Largest absolute asymmetry relative to the largest entry.
pub fn asymmetry(s: &DMatrix<f64>) -> f64 {
    let scale = s.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (s - s.transpose()).amax() / scale
}

/// Replaces `s` by `(s + s') / 2`.
pub fn symmetrize(s: &mut DMatrix<f64>) {
    let t = s.transpose();
    *s += t;
    *s *= 0.5;
}

/// Pseudo-inverse of a symmetric matrix via its eigendecomposition.
///
/// Eigenvalues at or below `rel_tol * max_eigenvalue` count as zero, so the
/// inverse of an indefinite input is taken on its positive part only.
pub fn pinv_sym(s: &DMatrix<f64>, rel_tol: f64) -> Result<PseudoInverse> {
    if !s.is_square() {
        return Err(PremiaError::Contract(format!(
            "pinv_sym needs a square matrix, got {:?}",
            s.shape()
        )));
    }
    let asym = asymmetry(s);
    if asym > 1e-10 {
        return Err(PremiaError::Contract(format!(
            "pinv_sym input is not symmetric (relative asymmetry {asym:.3e})"
        )));
    }
    let k = s.nrows();
    if k == 0 {
        return Ok(PseudoInverse {
            matrix: DMatrix::zeros(0, 0),
            rank: 0,
        });
    }
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let cutoff = rel_tol * max;
    let mut out = DMatrix::zeros(k, k);
    let mut rank = 0;
    if max > 0.0 {
        for (j, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > cutoff {
                rank += 1;
                let v = eig.eigenvectors.column(j);
                out += (v * v.transpose()) / ev;
            }
        }
    }
    symmetrize(&mut out);
    Ok(PseudoInverse { matrix: out, rank })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    let mut sym = s.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Symmetric square root `S^{1/2}` of a positive semi-definite matrix.
///
/// Negative eigenvalues within `-1e-10 * trace` are clipped to zero; anything
/// more negative is an error.
pub fn psd_sqrt(s: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let tol = 1e-10 * s.trace().abs().max(f64::MIN_POSITIVE);
    let mut out = DMatrix::zeros(s.nrows(), s.ncols());
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < -tol {
            return Err(PremiaError::Parameter(format!(
                "{what} is not positive semi-definite (eigenvalue {ev:.3e})"
            )));
        }
        if ev > 0.0 {
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) * ev.sqrt();
        }
    }
    Ok(out)
}
