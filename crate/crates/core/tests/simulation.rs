use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use premia_core::four_split::FourSplitOptions;
use premia_core::panel::{FactorPanel, ReturnsPanel};
use premia_core::simulation::experiment::abs_bias;
use premia_core::simulation::{
    calibrate, run_experiment, simulate, CalibrationSummary, DgpParams, DrawScope, Estimator, ExperimentSpec,
    FourSplitEstimator, ReplicationIndex, TruthOracle, TwoPassEstimator,
};
use premia_core::two_pass::TwoPassOptions;

fn params(theta: f64, sxi2: f64, seed: u64) -> DgpParams {
    DgpParams::new(CalibrationSummary::reference(), theta, 0.1, sxi2, seed)
}

fn spec(r_t: usize, r_i: usize) -> ExperimentSpec {
    ExperimentSpec {
        r_t,
        r_i,
        target: 3,
        threads: None,
    }
}

#[test]
fn identical_seed_gives_identical_panels_and_metrics() {
    let p = params(2.0, 0.3, 99);
    let a = simulate(&p, ReplicationIndex::new(5, 2)).unwrap();
    let b = simulate(&p, ReplicationIndex::new(5, 2)).unwrap();
    assert_eq!(a.returns, b.returns);
    assert_eq!(a.factors, b.factors);
    assert_eq!(a.truth, b.truth);

    let tp = TwoPassEstimator {
        nw_lags: 4,
        options: TwoPassOptions::default(),
    };
    let est: [&dyn Estimator; 1] = [&tp];
    let m1 = run_experiment(std::slice::from_ref(&p), &est, spec(3, 2)).unwrap();
    let m2 = run_experiment(std::slice::from_ref(&p), &est, spec(3, 2)).unwrap();
    assert_eq!(format!("{m1:?}"), format!("{m2:?}"));
}

#[test]
fn different_seeds_give_different_panels() {
    let a = simulate(&params(1.0, 0.3, 1), ReplicationIndex::default()).unwrap();
    let b = simulate(&params(1.0, 0.3, 2), ReplicationIndex::default()).unwrap();
    assert_ne!(a.returns, b.returns);
}

#[test]
fn cross_section_redraw_leaves_time_series_streams_alone() {
    let p = params(3.0, 0.3, 5);
    let i = ReplicationIndex::new(4, 0);
    let a = simulate(&p, i).unwrap();
    let b = simulate(&p, i.next(DrawScope::NewCrossSection)).unwrap();
    assert_eq!(a.factors, b.factors);
    assert_eq!(a.truth.common, b.truth.common);
    assert_eq!(a.truth.g, b.truth.g);
    assert_eq!(a.truth.u, b.truth.u);
    assert_eq!(a.truth.v, b.truth.v);
    assert_eq!(a.truth.w, b.truth.w);
    assert_ne!(a.truth.gamma, b.truth.gamma);
    assert_ne!(a.truth.idiosyncratic, b.truth.idiosyncratic);

    let c = simulate(&p, i.next(DrawScope::NewTimeSeries)).unwrap();
    assert_ne!(a.truth.g, c.truth.g);
}

#[test]
fn returns_equal_r_star_plus_priced_component() {
    let s = simulate(&params(3.0, 0.3, 8), ReplicationIndex::new(0, 3)).unwrap();
    let premia = &s.truth.betas * &s.truth.lambda;
    let r = s.returns.values();
    let worst = (0..r.nrows())
        .flat_map(|i| (0..r.ncols()).map(move |t| (i, t)))
        .map(|(i, t)| (r[(i, t)] - s.truth.r_star[(i, t)] - premia[i]).abs() / (1.0 + r[(i, t)].abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn unit_theta_matches_fourth_component_strength() {
    let p = params(1.0, 0.3, 13);
    let mut total = 0.0;
    for c in 0..40 {
        let s = simulate(&p, ReplicationIndex::new(0, c)).unwrap();
        total += s.truth.phi.norm_squared() / s.truth.g.len() as f64;
    }
    let mean = total / 40.0;
    assert!((mean / 55.0 - 1.0).abs() < 0.1, "{mean}");
}

#[test]
fn calibrating_a_simulated_panel_recovers_its_moments() {
    let reference = CalibrationSummary::reference();
    let s = simulate(&params(1.0, 1e-6, 21), ReplicationIndex::new(2, 2)).unwrap();
    let ff = s.factors.select_factors(&[0, 1, 2]).unwrap();
    let mom = s.factors.values().column(3).into_owned();
    let c = calibrate(&s.returns, &ff, &mom).unwrap();
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    assert!(rel(c.mu_gamma[0].abs(), reference.mu_gamma[0]) < 0.1, "{} vs {}", c.mu_gamma[0], reference.mu_gamma[0]);
    assert!(rel(c.sigma_eps2, reference.sigma_eps2) < 0.1, "{} vs {}", c.sigma_eps2, reference.sigma_eps2);
    assert!(rel(c.sigma_mom2, reference.sigma_mom2) < 0.1, "{} vs {}", c.sigma_mom2, reference.sigma_mom2);
    assert_eq!(c.lambda_true, s.factors.means());
}

fn orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, demean: bool) -> DMatrix<f64> {
    let mut m: DMatrix<f64> = DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    if demean {
        for mut c in m.column_iter_mut() {
            let mean = c.mean();
            c.add_scalar_mut(-mean);
        }
    }
    m.qr().q()
}

#[test]
fn noiseless_four_factor_panel_calibrates_exactly() {
    let (n, t) = (20, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = orthonormal(&mut rng, t, 4, true);
    let loadings = orthonormal(&mut rng, n, 4, false) * DMatrix::from_diagonal(&DVector::from_vec(vec![90.0, 40.0, 20.0, 8.0]));
    let mut r = &loadings * g.transpose();
    for (i, mut row) in r.row_iter_mut().enumerate() {
        row.add_scalar_mut(0.1 * i as f64);
    }
    let periods: Vec<i64> = (0..t as i64).collect();
    let returns = ReturnsPanel::new((0..n).map(|i| format!("a{i}")).collect(), periods.clone(), r).unwrap();
    let ff = FactorPanel::new(
        vec!["x".into(), "y".into(), "z".into()],
        periods,
        DMatrix::from_fn(t, 3, |_, _| rng.sample(StandardNormal)),
    )
    .unwrap();
    let mom = DVector::from_fn(t, |_, _| rng.sample(StandardNormal));
    let c = calibrate(&returns, &ff, &mom).unwrap();
    assert!(c.sigma_eps2.abs() < 1e-20 * 90.0 * 90.0, "{}", c.sigma_eps2);

    let centered_var = |col: usize| {
        let x = loadings.column(col);
        let m = x.mean();
        x.map(|v| (v - m).powi(2)).sum() / n as f64
    };
    for j in 0..3 {
        let m = loadings.column(j).mean();
        assert!((c.mu_gamma[j].abs() - m.abs()).abs() < 1e-9, "mu_gamma {j}");
        assert!((c.v_gamma[(j, j)] - centered_var(j)).abs() < 1e-9, "v_gamma {j}");
    }
    assert!((c.mu_phi.abs() - loadings.column(3).mean().abs()).abs() < 1e-9);
    assert!((c.v_phi - centered_var(3)).abs() < 1e-9);
}

#[test]
fn truth_oracle_has_zero_error_and_no_rejection_rate() {
    let est: [&dyn Estimator; 1] = [&TruthOracle];
    let m = run_experiment(&[params(2.0, 0.3, 3)], &est, spec(3, 3)).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].bias, 0.0);
    assert_eq!(m[0].abs_bias, 0.0);
    assert_eq!(m[0].std_dev, 0.0);
    assert_eq!(m[0].rejection_rate, None);
    assert_eq!(m[0].failures, 0);
    assert_eq!(m[0].estimator, "truth");
}

#[test]
fn abs_bias_is_mean_of_absolute_time_means() {
    let errors = vec![vec![1.0, -3.0], vec![2.0, 2.0], vec![-0.5, 0.25]];
    let expected = (1.0 + 2.0 + 0.125) / 3.0;
    assert_eq!(abs_bias(&errors), expected);
    let m = run_experiment(
        &[params(0.0, 0.3, 1)],
        &[&FourSplitEstimator {
            nw_lags: 4,
            options: FourSplitOptions::default(),
        }],
        spec(2, 2),
    )
    .unwrap();
    assert!(m[0].abs_bias >= 0.0);
    let rr = m[0].rejection_rate.unwrap();
    assert!((0.0..=1.0).contains(&rr));
}

#[test]
fn four_split_size_is_near_nominal_without_missing_factor() {
    let fs = FourSplitEstimator {
        nw_lags: 4,
        options: FourSplitOptions::default(),
    };
    let m = run_experiment(&[params(0.0, 0.9, 17)], &[&fs], spec(20, 20)).unwrap();
    let rr = m[0].rejection_rate.unwrap();
    assert!((0.005..=0.12).contains(&rr), "rejection rate {rr}");
    assert_eq!(m[0].failures, 0);
}

#[test]
fn four_split_rmse_falls_with_cross_section_size() {
    let fs = FourSplitEstimator {
        nw_lags: 4,
        options: FourSplitOptions::default(),
    };
    let rmse: Vec<f64> = [25usize, 50, 100]
        .iter()
        .map(|&n| {
            let mut p = params(3.0, 0.3, 23);
            p.n_assets = Some(n);
            let m = run_experiment(&[p], &[&fs], spec(15, 10)).unwrap();
            (m[0].bias.powi(2) + m[0].std_dev.powi(2)).sqrt()
        })
        .collect();
    // Allow a little Monte Carlo slack between neighbours.
    assert!(rmse[1] <= rmse[0] * 1.05 && rmse[2] <= rmse[1] * 1.05, "{rmse:?}");
    assert!(rmse[2] < rmse[0], "{rmse:?}");
}

#[test]
fn calibration_json_round_trips_exactly() {
    let s = simulate(&params(1.0, 0.3, 31), ReplicationIndex::default()).unwrap();
    let ff = s.factors.select_factors(&[0, 1, 2]).unwrap();
    let c = calibrate(&s.returns, &ff, &s.factors.values().column(3).into_owned()).unwrap();
    let back: CalibrationSummary = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
}
