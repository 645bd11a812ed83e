//! Experiment configuration files and metrics output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::calibration::CalibrationSummary;
use super::dgp::DgpParams;
use super::experiment::{Estimator, ExperimentSpec, FourSplitEstimator, McMetrics, TwoPassEstimator};
use crate::error::{PremiaError, Result};
use crate::four_split::{FourSplitOptions, SplitLayout};
use crate::panel::format_f64;
use crate::two_pass::TwoPassOptions;

fn default_alpha() -> f64 {
    0.1
}
fn default_varphi() -> f64 {
    0.001
}
fn default_sigma_xi2() -> Vec<f64> {
    vec![0.3]
}
fn default_estimators() -> Vec<String> {
    vec!["two-pass".into(), "four-split".into()]
}
fn default_k_v() -> usize {
    1
}
fn default_nw_lags() -> usize {
    4
}
fn default_target() -> usize {
    3
}

/// Monte Carlo experiment read from TOML. The grid is the product of
/// `theta_phi` and `sigma_xi2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub theta_phi: Vec<f64>,
    #[serde(default = "default_sigma_xi2")]
    pub sigma_xi2: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_varphi")]
    pub varphi: f64,
    pub r_t: usize,
    pub r_i: usize,
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_k_v")]
    pub k_v: usize,
    #[serde(default = "default_nw_lags")]
    pub nw_lags: usize,
    #[serde(default = "default_target")]
    pub target: usize,
    #[serde(default)]
    pub n_assets: Option<usize>,
    #[serde(default)]
    pub n_periods: Option<usize>,
    /// JSON calibration summary; the built-in reference calibration otherwise.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| PremiaError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| PremiaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn check(&self) -> Result<()> {
        if self.theta_phi.is_empty() || self.sigma_xi2.is_empty() {
            return Err(PremiaError::Config("theta_phi and sigma_xi2 must be non-empty".into()));
        }
        if self.r_t == 0 || self.r_i == 0 {
            return Err(PremiaError::Config("r_t and r_i must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(PremiaError::Config("no estimators selected".into()));
        }
        for e in &self.estimators {
            if !matches!(e.as_str(), "two-pass" | "four-split") {
                return Err(PremiaError::Config(format!(
                    "unknown estimator '{e}' (expected two-pass or four-split)"
                )));
            }
        }
        if self.target >= 4 {
            return Err(PremiaError::Config(format!("target {} out of range 0..4", self.target)));
        }
        Ok(())
    }

    /// Loads the configured calibration or falls back to the reference one.
    pub fn calibration_summary(&self, base_dir: Option<&Path>) -> Result<CalibrationSummary> {
        match &self.calibration {
            None => Ok(CalibrationSummary::reference()),
            Some(p) => {
                let path = match base_dir {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let text = std::fs::read_to_string(&path).map_err(|source| PremiaError::Io {
                    path: path.clone(),
                    source,
                })?;
                let c: CalibrationSummary = serde_json::from_str(&text)
                    .map_err(|e| PremiaError::Config(format!("{}: {e}", path.display())))?;
                c.validate()?;
                Ok(c)
            }
        }
    }

    pub fn grid(&self, calibration: &CalibrationSummary) -> Vec<DgpParams> {
        let mut out = Vec::new();
        for &theta in &self.theta_phi {
            for &sx in &self.sigma_xi2 {
                let mut p = DgpParams::new(calibration.clone(), theta, self.alpha, sx, self.seed);
                p.varphi = self.varphi;
                p.n_assets = self.n_assets;
                p.n_periods = self.n_periods;
                out.push(p);
            }
        }
        out
    }

    pub fn estimators(&self) -> Vec<Box<dyn Estimator>> {
        self.estimators
            .iter()
            .map(|e| -> Box<dyn Estimator> {
                match e.as_str() {
                    "two-pass" => Box::new(TwoPassEstimator {
                        nw_lags: self.nw_lags,
                        options: TwoPassOptions::default(),
                    }),
                    _ => Box::new(FourSplitEstimator {
                        nw_lags: self.nw_lags,
                        options: FourSplitOptions {
                            k_v: self.k_v,
                            a: None,
                            layout: SplitLayout::Contiguous,
                        },
                    }),
                }
            })
            .collect()
    }

    pub fn spec(&self, threads: Option<usize>) -> ExperimentSpec {
        ExperimentSpec {
            r_t: self.r_t,
            r_i: self.r_i,
            target: self.target,
            threads,
        }
    }
}

pub const METRICS_HEADER: &str = "theta_phi,sigma_xi2,alpha,varphi,missing_strength,target_strength,loading_correlation,estimator,bias,abs_bias,std_dev,rejection_rate,mean_se,r_t,r_i,failures";

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

/// One CSV row per (grid point, estimator); absent values are empty fields.
pub fn metrics_to_csv(rows: &[McMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            format_f64(m.theta_phi),
            format_f64(m.sigma_xi2),
            format_f64(m.alpha),
            format_f64(m.varphi),
            format_f64(m.missing_strength),
            format_f64(m.target_strength),
            opt(m.loading_correlation),
            m.estimator,
            format_f64(m.bias),
            format_f64(m.abs_bias),
            format_f64(m.std_dev),
            opt(m.rejection_rate),
            opt(m.mean_se),
            m.r_t,
            m.r_i,
            m.failures
        )
        .unwrap();
    }
    out
}
