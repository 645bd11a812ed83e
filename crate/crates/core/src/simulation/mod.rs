//! Calibrated Monte Carlo engine.

pub mod calibration;
pub mod config;
pub mod diagnostics;
pub mod dgp;
pub mod experiment;

pub use calibration::{calibrate, strength_report, CalibrationSummary, StrengthReport};
pub use config::{metrics_to_csv, ExperimentConfig};
pub use diagnostics::{attenuation_limit, bias_decomposition, bias_terms, BiasTerms, WeakFactorDgp};
pub use dgp::{simulate, DgpParams, DgpTruth, DrawScope, ReplicationIndex, SimulatedPanel};
pub use experiment::{
    run_experiment, Estimate, Estimator, ExperimentSpec, FourSplitEstimator, McMetrics, TruthOracle, TwoPassEstimator,
};
