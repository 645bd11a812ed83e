//! Risk-premia estimation for linear factor models on large asset panels.
//!
//! The two-pass and four-split estimators live in [`two_pass`] and
//! [`four_split`]; [`simulation`] hosts the calibrated Monte Carlo engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod four_split;
pub mod inference;
pub mod linalg;
pub mod panel;
pub mod simulation;
pub mod two_pass;

pub use error::{ErrorKind, PremiaError, Result};
pub use four_split::{four_split_estimate, FourSplitOptions, FourSplitResult, SplitLayout, SplitScheme};
pub use inference::{newey_west, specification_test, t_test, wald_test, LongRunVariance, TestResult};
pub use panel::{align, build_excess_returns, load_french_portfolios, FactorPanel, LoadOptions, RawTable, ReturnsPanel};
pub use two_pass::{first_pass_betas, two_pass_estimate, BetaSet, EstimateResult, Method, TwoPassOptions};
