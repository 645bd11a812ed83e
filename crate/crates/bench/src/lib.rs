//! Shared inputs for the benchmarks.

use premia_core::simulation::{simulate, CalibrationSummary, DgpParams, ReplicationIndex, SimulatedPanel};

/// Reference-calibrated design (N = 100, T = 504) with a missing factor.
pub fn params() -> DgpParams {
    DgpParams::new(CalibrationSummary::reference(), 3.0, 0.1, 0.3, 42)
}

/// One simulated panel at the reference size.
pub fn panel() -> SimulatedPanel {
    simulate(&params(), ReplicationIndex::default()).expect("reference design simulates")
}
