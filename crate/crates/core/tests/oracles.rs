//! Independent reference computations for the estimators and kernels.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use premia_core::four_split::{
    build_iv_design, four_split_estimate, make_split_scheme, per_rotation_tsls, subsample_betas, FourSplitOptions,
    IvRegressionSpec, SplitLayout,
};
use premia_core::inference::{newey_west, newey_west_matrix, wald_test};
use premia_core::linalg::{ols, pca, tsls};
use premia_core::panel::{read_table, FactorPanel, LoadOptions, ReturnsPanel};
use premia_core::two_pass::{cross_section_r2, first_pass_betas, two_pass_estimate, TwoPassOptions};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Plain Gauss-Jordan inverse, written out so the oracle shares no code with the library.
fn gj_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = m.row(i).iter().copied().collect();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        for v in a[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let pivot_row = a[c].clone();
                for (v, pv) in a[r].iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    DMatrix::from_fn(n, n, |i, j| a[i][n + j])
}

fn random_panel(seed: u64, n: usize, t: usize, k: usize) -> (ReturnsPanel, FactorPanel, DMatrix<f64>) {
    let mut r = rng(seed);
    let f = normals(&mut r, t, k).map(|x| 2.0 * x) + DMatrix::from_element(t, k, 0.5);
    let b = normals(&mut r, n, k).add_scalar(1.0);
    let mut ret = &b * f.transpose() + normals(&mut r, n, t);
    let prem = &b * DVector::from_element(k, 0.4);
    for (mut row, p) in ret.row_iter_mut().zip(prem.iter()) {
        row.add_scalar_mut(*p);
    }
    let periods: Vec<i64> = (1..=t as i64).collect();
    (
        ReturnsPanel::new((0..n).map(|i| format!("a{i}")).collect(), periods.clone(), ret).unwrap(),
        FactorPanel::new((0..k).map(|j| format!("f{j}")).collect(), periods, f).unwrap(),
        b,
    )
}

#[test]
fn tsls_matches_explicit_formula() {
    let mut r = rng(1);
    let z = normals(&mut r, 50, 4);
    let x = &z * normals(&mut r, 4, 2) + normals(&mut r, 50, 2) * 0.5;
    let y = (&x * DVector::from_vec(vec![1.0, -2.0]) + normals(&mut r, 50, 1).column(0)).into_owned();
    let ztz_inv = gj_inverse(&(z.transpose() * &z));
    let pz = &z * &ztz_inv * z.transpose();
    let b = gj_inverse(&(x.transpose() * &pz * &x)) * x.transpose() * &pz * &y;
    let fit = tsls(&y, &x, &z).unwrap();
    assert_relative_eq!(fit.coefficients, b, epsilon = 1e-9);
    assert_relative_eq!(fit.ztz_inv, ztz_inv, epsilon = 1e-9);
    assert_relative_eq!(fit.xpzx, x.transpose() * &pz * &x, epsilon = 1e-9);
}

#[test]
fn pca_reconstruction_error_is_tail_energy() {
    let mut r = rng(2);
    let panel = normals(&mut r, 30, 5) * normals(&mut r, 5, 80) + normals(&mut r, 30, 80) * 0.1;
    for m in 1..=6 {
        let p = pca(&panel, m, true).unwrap();
        let mut demeaned = panel.transpose();
        for mut c in demeaned.column_iter_mut() {
            let mean = c.mean();
            c.add_scalar_mut(-mean);
        }
        let err = (&demeaned - &p.factors * &p.loadings).norm_squared();
        let tail: f64 = p.singular_values.iter().skip(m).map(|s| s * s).sum();
        assert_relative_eq!(err, tail, max_relative = 1e-8, epsilon = 1e-12);
        assert_relative_eq!(p.factors.transpose() * &p.factors, DMatrix::identity(m, m), epsilon = 1e-10);
    }
}

#[test]
fn first_pass_equals_per_asset_ols() {
    let (ret, f, _) = random_panel(3, 15, 60, 3);
    let window: Vec<usize> = (5..50).collect();
    let b = first_pass_betas(&ret, &f, &window).unwrap();
    let x = f.values().select_rows(&window);
    for i in 0..15 {
        let y = DVector::from_iterator(window.len(), window.iter().map(|&t| ret.values()[(i, t)]));
        let fit = ols(&y, &x, true).unwrap();
        assert_relative_eq!(b.betas.row(i).transpose(), fit.coefficients, epsilon = 1e-10);
        assert_relative_eq!(b.intercepts[i], fit.intercept.unwrap(), epsilon = 1e-10);
        assert_relative_eq!(b.residuals.row(i).transpose(), fit.residuals, epsilon = 1e-10);
    }
}

#[test]
fn residuals_orthogonal_to_demeaned_factors() {
    let (ret, f, _) = random_panel(4, 10, 80, 2);
    let window: Vec<usize> = (0..80).collect();
    let b = first_pass_betas(&ret, &f, &window).unwrap();
    let mut fd = f.values().clone();
    for mut c in fd.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    let cross = &b.residuals * &fd;
    let scale = b.residuals.norm() * fd.norm();
    assert!(cross.amax() <= 1e-8 * scale);
}

#[test]
fn subsample_betas_are_window_restricted_first_pass() {
    let (ret, f, _) = random_panel(5, 12, 90, 2);
    let scheme = make_split_scheme(90, SplitLayout::Contiguous).unwrap();
    let sets = subsample_betas(&ret, &f, &scheme).unwrap();
    for (j, s) in sets.iter().enumerate() {
        let direct = first_pass_betas(&ret, &f, &scheme.subsets[j]).unwrap();
        assert_relative_eq!(s.betas, direct.betas, epsilon = 1e-10);
        assert_eq!(s.window, (j * 22..(j + 1) * 22).collect::<Vec<_>>());
    }
}

#[test]
fn cross_split_beta_errors_are_uncorrelated() {
    // Correlation of estimation errors across splits shrinks towards zero as N grows.
    let (ret, f, b) = random_panel(6, 4000, 80, 1);
    let scheme = make_split_scheme(80, SplitLayout::Contiguous).unwrap();
    let sets = subsample_betas(&ret, &f, &scheme).unwrap();
    let err = |j: usize| DVector::from_iterator(4000, (0..4000).map(|i| sets[j].betas[(i, 0)] - b[(i, 0)]));
    for j in 1..4 {
        let (a, c) = (err(0), err(j));
        let (ma, mc) = (a.mean(), c.mean());
        let corr = a.map(|x| x - ma).dot(&c.map(|x| x - mc)) / (a.map(|x| x - ma).norm() * c.map(|x| x - mc).norm());
        assert!(corr.abs() < 0.06, "split 1 vs {}: corr {corr}", j + 1);
    }
}

#[test]
fn per_rotation_tsls_matches_stepwise_oracle() {
    let (ret, f, _) = random_panel(7, 60, 100, 2);
    let scheme = make_split_scheme(100, SplitLayout::Contiguous).unwrap();
    let sets = subsample_betas(&ret, &f, &scheme).unwrap();
    let spec = IvRegressionSpec::new(3, DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
    let (x, z) = build_iv_design(&sets, &spec).unwrap();
    let y = ret.mean_returns();
    let fit = per_rotation_tsls(&y, &x, &z).unwrap();
    let ztz_inv = gj_inverse(&(z.transpose() * &z));
    let xz = x.transpose() * &z;
    let z_tilde = (&xz * &ztz_inv * z.transpose()).transpose();
    let g = z_tilde.transpose() * &x / 60.0;
    let coef = gj_inverse(&g) * z_tilde.transpose() * &y / 60.0;
    assert_relative_eq!(fit.coefficients, coef, epsilon = 1e-9);
    assert_relative_eq!(fit.z_tilde, z_tilde, epsilon = 1e-9);
    assert_relative_eq!(fit.g, g, epsilon = 1e-9);
    let normal_eq = fit.z_tilde.transpose() * &fit.residuals;
    assert!(normal_eq.amax() <= 1e-8 * (1.0 + y.norm() * fit.z_tilde.norm()));
}

#[test]
fn four_split_covariance_matches_block_formula() {
    let (ret, f, _) = random_panel(8, 80, 120, 2);
    let lrv = newey_west(&f, 3).unwrap();
    let opts = FourSplitOptions::default();
    let res = four_split_estimate(&ret, &f, &lrv, &opts).unwrap();
    let scheme = make_split_scheme(120, SplitLayout::Contiguous).unwrap();
    let sets = subsample_betas(&ret, &f, &scheme).unwrap();
    let (k, p, n) = (2usize, 3usize, 80usize);
    let y = ret.mean_returns();
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let mut stacked = DMatrix::zeros(n, 4 * p);
    let mut g = DMatrix::zeros(4 * p, 4 * p);
    let mut lambdas = DVector::zeros(k);
    for j in 1..=4 {
        let (x, z) = build_iv_design(&sets, &IvRegressionSpec::new(j, a.clone()).unwrap()).unwrap();
        let pz = &z * gj_inverse(&(z.transpose() * &z)) * z.transpose();
        let gj = x.transpose() * &pz * &x / n as f64;
        let coef = gj_inverse(&(x.transpose() * &pz * &x)) * x.transpose() * &pz * &y;
        lambdas += coef.rows(0, k);
        let e = &y - &x * &coef;
        let zt = &pz * &x;
        for i in 0..n {
            for c in 0..p {
                stacked[(i, (j - 1) * p + c)] = zt[(i, c)] * e[i];
            }
        }
        g.view_mut(((j - 1) * p, (j - 1) * p), (p, p)).copy_from(&gj);
    }
    let sigma0 = stacked.transpose() * &stacked / n as f64;
    let mut r = DMatrix::zeros(4 * p, k);
    for j in 0..4 {
        for c in 0..k {
            r[(j * p + c, c)] = 0.25;
        }
    }
    let gi = gj_inverse(&g);
    let sigma_iv = r.transpose() * &gi * sigma0 * &gi * &r / n as f64;
    assert_relative_eq!(res.estimate.lambda, lambdas / 4.0, epsilon = 1e-10);
    assert_relative_eq!(res.sigma_iv, sigma_iv, max_relative = 1e-9, epsilon = 1e-14);
    assert_relative_eq!(res.estimate.covariance, &sigma_iv + &lrv.omega / 120.0, max_relative = 1e-9, epsilon = 1e-14);
}

#[test]
fn cross_section_r2_matches_direct_formula() {
    let (ret, f, _) = random_panel(9, 40, 70, 2);
    let lrv = newey_west(&f, 0).unwrap();
    let res = two_pass_estimate(&ret, &f, &lrv, TwoPassOptions::default()).unwrap();
    let window: Vec<usize> = (0..70).collect();
    let b = first_pass_betas(&ret, &f, &window).unwrap();
    let rbar = ret.mean_returns();
    let mut ssr = 0.0;
    let mut sst = 0.0;
    for i in 0..40 {
        let fit: f64 = (0..2).map(|j| b.betas[(i, j)] * res.lambda[j]).sum();
        ssr += (rbar[i] - fit).powi(2);
        sst += rbar[i] * rbar[i];
    }
    assert_relative_eq!(cross_section_r2(&res, &b, &rbar), 1.0 - ssr / sst, epsilon = 1e-12);
}

#[test]
fn single_factor_two_pass_closed_form() {
    let (ret, f, _) = random_panel(10, 25, 50, 1);
    let lrv = newey_west(&f, 1).unwrap();
    let res = two_pass_estimate(&ret, &f, &lrv, TwoPassOptions::default()).unwrap();
    let b = first_pass_betas(&ret, &f, &(0..50).collect::<Vec<_>>()).unwrap();
    let rbar = ret.mean_returns();
    let num: f64 = (0..25).map(|i| b.betas[(i, 0)] * rbar[i]).sum();
    let den: f64 = (0..25).map(|i| b.betas[(i, 0)].powi(2)).sum();
    assert_relative_eq!(res.lambda[0], num / den, max_relative = 1e-12);
}

#[test]
fn newey_west_matches_bartlett_sum() {
    let mut r = rng(11);
    let x = normals(&mut r, 300, 2) + normals(&mut r, 300, 1) * DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
    let omega = newey_west_matrix(&x, 4).unwrap().omega;
    let t = x.nrows();
    let mean = x.row_mean();
    let d = DMatrix::from_fn(t, 2, |r, c| x[(r, c)] - mean[c]);
    let mut hand = d.transpose() * &d / t as f64;
    for l in 1..=4usize {
        let w = 1.0 - l as f64 / 5.0;
        let gam = d.rows(l, t - l).transpose() * d.rows(0, t - l) / t as f64;
        hand += (&gam + gam.transpose()) * w;
    }
    assert_relative_eq!(omega, hand, epsilon = 1e-12);
}

#[test]
fn newey_west_iid_approaches_population_covariance() {
    // Averaged over 10k independent draws of a 250-period panel.
    let mut r = rng(11);
    let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 1.2, 1.2, 2.0]);
    let chol = sigma.clone().cholesky().unwrap().l();
    let draws = 10_000;
    let mut avg = DMatrix::zeros(2, 2);
    for _ in 0..draws {
        let x = normals(&mut r, 250, 2) * chol.transpose();
        avg += newey_west_matrix(&x, 4).unwrap().omega / draws as f64;
    }
    for (o, s) in avg.iter().zip(sigma.iter()) {
        assert!((o / s - 1.0).abs() < 0.05, "{avg} vs {sigma}");
    }
}

#[test]
fn newey_west_ar1_oracle() {
    let mut r = rng(12);
    let rho: f64 = 0.6;
    let t = 200_000;
    let mut x = Vec::with_capacity(t);
    let mut prev = 0.0;
    for _ in 0..t {
        prev = rho * prev + r.sample::<f64, _>(StandardNormal);
        x.push(prev);
    }
    for lags in [0usize, 2, 6] {
        let omega = newey_west_matrix(&DMatrix::from_column_slice(t, 1, &x), lags).unwrap().omega[(0, 0)];
        let target = (1.0 + 2.0 * (1..=lags).map(|l| (1.0 - l as f64 / (lags as f64 + 1.0)) * rho.powi(l as i32)).sum::<f64>())
            / (1.0 - rho * rho);
        assert!((omega / target - 1.0).abs() < 0.03, "lags {lags}: {omega} vs {target}");
    }
}

#[test]
fn wald_two_dimensional_hand_computation() {
    let l = DVector::from_vec(vec![1.0, 0.5, 9.0]);
    let v = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 7.0]);
    let w = wald_test(&l, &v, &[0, 1], &DVector::from_vec(vec![0.0, 0.0])).unwrap();
    // inverse of [[2, .5], [.5, 1]] is [[1, -.5], [-.5, 2]] / 1.75
    let expected = (1.0 * 1.0 - 2.0 * 0.5 * 1.0 * 0.5 + 2.0 * 0.25) / 1.75;
    assert_relative_eq!(w.statistic, expected, epsilon = 1e-10);
    assert_eq!(w.dof, 2);
    assert_relative_eq!(w.p_value, (-expected / 2.0).exp(), epsilon = 1e-10);
}

#[test]
fn fixture_factor_means_and_newey_west_errors_match_reference_row() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/ff_factors_197201_201312.csv");
    let table = read_table(&path, &LoadOptions::default()).unwrap();
    assert_eq!(table.periods.len(), 504);
    let rf = table.column_index("RF").unwrap();
    let factors = FactorPanel::from_table(&table.without_column(rf)).unwrap();
    let lrv = newey_west(&factors, 4).unwrap();
    let se = lrv.omega.diagonal().map(|v| (v / 504.0).sqrt());
    let means = factors.means();
    let reference_mean = [0.527, 0.187, 0.401, 0.708];
    let reference_se = [0.216, 0.138, 0.152, 0.205];
    for j in 0..4 {
        assert!((means[j] - reference_mean[j]).abs() < 0.003, "mean {j}: {}", means[j]);
        assert!((se[j] - reference_se[j]).abs() < 0.001, "se {j}: {}", se[j]);
    }
}
