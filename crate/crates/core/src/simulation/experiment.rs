//! Nested Monte Carlo experiments over a parameter grid.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{loading_correlation, missing_strength, simulate, target_strength, DgpParams, ReplicationIndex, SimulatedPanel};
use crate::error::{PremiaError, Result};
use crate::four_split::{four_split_estimate, FourSplitOptions};
use crate::inference::newey_west;
use crate::two_pass::{two_pass_estimate, TwoPassOptions};

/// Point estimate with optional standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: DVector<f64>,
    pub std_errors: Option<DVector<f64>>,
}

/// Anything that maps a simulated panel to risk-premia estimates.
pub trait Estimator: Send + Sync {
    fn name(&self) -> String;
    fn estimate(&self, sim: &SimulatedPanel) -> Result<Estimate>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoPassEstimator {
    pub nw_lags: usize,
    pub options: TwoPassOptions,
}

impl Estimator for TwoPassEstimator {
    fn name(&self) -> String {
        "two-pass".into()
    }

    fn estimate(&self, sim: &SimulatedPanel) -> Result<Estimate> {
        let lrv = newey_west(&sim.factors, self.nw_lags)?;
        let r = two_pass_estimate(&sim.returns, &sim.factors, &lrv, self.options)?;
        Ok(Estimate {
            value: r.lambda,
            std_errors: Some(r.std_errors),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourSplitEstimator {
    pub nw_lags: usize,
    pub options: FourSplitOptions,
}

impl Estimator for FourSplitEstimator {
    fn name(&self) -> String {
        "four-split".into()
    }

    fn estimate(&self, sim: &SimulatedPanel) -> Result<Estimate> {
        let lrv = newey_west(&sim.factors, self.nw_lags)?;
        let r = four_split_estimate(&sim.returns, &sim.factors, &lrv, &self.options)?;
        Ok(Estimate {
            value: r.estimate.lambda,
            std_errors: Some(r.estimate.std_errors),
        })
    }
}

/// Returns the true premia; useful for checking the metric plumbing.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruthOracle;

impl Estimator for TruthOracle {
    fn name(&self) -> String {
        "truth".into()
    }

    fn estimate(&self, sim: &SimulatedPanel) -> Result<Estimate> {
        Ok(Estimate {
            value: sim.truth.lambda.clone(),
            std_errors: None,
        })
    }
}

/// Replication counts and the component under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentSpec {
    pub r_t: usize,
    pub r_i: usize,
    pub target: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McMetrics {
    pub estimator: String,
    pub theta_phi: f64,
    pub sigma_xi2: f64,
    pub alpha: f64,
    pub varphi: f64,
    pub bias: f64,
    pub abs_bias: f64,
    pub std_dev: f64,
    /// Absent when the estimator reports no standard errors.
    pub rejection_rate: Option<f64>,
    pub mean_se: Option<f64>,
    pub missing_strength: f64,
    pub target_strength: f64,
    pub loading_correlation: Option<f64>,
    pub r_t: usize,
    pub r_i: usize,
    pub failures: usize,
}

impl McMetrics {
    pub fn coverage(&self) -> Option<f64> {
        self.rejection_rate.map(|r| 1.0 - r)
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut s = CompensatedSum::default();
    let mut n = 0usize;
    for x in xs {
        s.add(x);
        n += 1;
    }
    (n > 0).then(|| s.value() / n as f64)
}

/// `(1/R_t) Σ_a |(1/R_i) Σ_b err_ab|` over time-series draws with at least one success.
pub fn abs_bias(errors_by_time: &[Vec<f64>]) -> f64 {
    mean(errors_by_time.iter().filter_map(|e| mean(e.iter().copied())).map(f64::abs)).unwrap_or(f64::NAN)
}

struct Outcome {
    error: f64,
    se: Option<f64>,
}

struct Replication {
    time: usize,
    missing_strength: f64,
    target_strength: f64,
    loading_correlation: Option<f64>,
    outcomes: Vec<std::result::Result<Outcome, String>>,
}

fn replicate(params: &DgpParams, index: ReplicationIndex, estimators: &[&dyn Estimator], target: usize) -> Result<Replication> {
    let sim = simulate(params, index)?;
    let truth_value = sim.truth.lambda[target];
    let outcomes = estimators
        .iter()
        .map(|e| match e.estimate(&sim) {
            Ok(est) if est.value.len() > target => Ok(Outcome {
                error: est.value[target] - truth_value,
                se: est.std_errors.as_ref().map(|s| s[target]),
            }),
            Ok(_) => Err("estimate has too few components".to_string()),
            Err(err) => Err(err.to_string()),
        })
        .collect();
    Ok(Replication {
        time: index.time as usize,
        missing_strength: missing_strength(&sim.truth),
        target_strength: target_strength(&sim.truth, &sim.factors, target),
        loading_correlation: loading_correlation(&sim.truth, target),
        outcomes,
    })
}

/// Runs every estimator on `R_t x R_i` panels at each grid point.
///
/// Replications run in parallel; all reductions happen afterwards in
/// replication order, so results do not depend on the thread count.
pub fn run_experiment(grid: &[DgpParams], estimators: &[&dyn Estimator], spec: ExperimentSpec) -> Result<Vec<McMetrics>> {
    if spec.r_t == 0 || spec.r_i == 0 {
        return Err(PremiaError::Config("replication counts must be at least 1".into()));
    }
    if spec.target >= 4 {
        return Err(PremiaError::Config(format!("target component {} out of range", spec.target)));
    }
    for p in grid {
        p.validate()?;
    }
    let work = || -> Result<Vec<McMetrics>> {
        let mut rows = Vec::new();
        for params in grid {
            let reps: Vec<Result<Replication>> = (0..spec.r_t * spec.r_i)
                .into_par_iter()
                .map(|k| {
                    let idx = ReplicationIndex::new((k / spec.r_i) as u64, (k % spec.r_i) as u64);
                    replicate(params, idx, estimators, spec.target)
                })
                .collect();
            let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
            rows.extend(summarize(params, &reps, estimators, spec));
        }
        Ok(rows)
    };
    match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| PremiaError::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn summarize(params: &DgpParams, reps: &[Replication], estimators: &[&dyn Estimator], spec: ExperimentSpec) -> Vec<McMetrics> {
    let ms = mean(reps.iter().map(|r| r.missing_strength)).unwrap_or(f64::NAN);
    let ts = mean(reps.iter().map(|r| r.target_strength)).unwrap_or(f64::NAN);
    let corr = mean(reps.iter().filter_map(|r| r.loading_correlation));
    estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let ok: Vec<(usize, &Outcome)> = reps
                .iter()
                .filter_map(|r| r.outcomes[e].as_ref().ok().map(|o| (r.time, o)))
                .collect();
            let failures = reps.len() - ok.len();
            let mut by_time = vec![Vec::new(); spec.r_t];
            for (t, o) in &ok {
                by_time[*t].push(o.error);
            }
            let bias = mean(ok.iter().map(|(_, o)| o.error)).unwrap_or(f64::NAN);
            let std_dev = if ok.len() > 1 {
                let mut s = CompensatedSum::default();
                for (_, o) in &ok {
                    s.add((o.error - bias).powi(2));
                }
                (s.value() / (ok.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let with_se: Vec<(f64, f64)> = ok.iter().filter_map(|(_, o)| o.se.map(|s| (o.error, s))).collect();
            let (rejection_rate, mean_se) = if with_se.is_empty() {
                (None, None)
            } else {
                let rej = mean(with_se.iter().map(|&(err, se)| {
                    let z = err / se;
                    if !z.is_finite() || z.abs() > crate::inference::Z_975 {
                        1.0
                    } else {
                        0.0
                    }
                }));
                (rej, mean(with_se.iter().map(|&(_, se)| se)))
            };
            McMetrics {
                estimator: est.name(),
                theta_phi: params.theta_phi,
                sigma_xi2: params.sigma_xi2,
                alpha: params.alpha,
                varphi: params.varphi,
                bias,
                abs_bias: abs_bias(&by_time),
                std_dev,
                rejection_rate,
                mean_se,
                missing_strength: ms,
                target_strength: ts,
                loading_correlation: corr,
                r_t: spec.r_t,
                r_i: spec.r_i,
                failures,
            }
        })
        .collect()
}
