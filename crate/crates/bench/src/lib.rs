//! Benchmark fixtures shared by the criterion benches.

use fracshe_core::{CovarianceModel, GridSpec, ModelSpec, SigmaSpec, Simulator, SolverConfig};

/// The white-noise regime used by the CLT batteries.
pub fn white_regime(points: usize) -> Simulator {
    let grid = GridSpec::new(1, 40.0, points).expect("valid grid");
    let model = CovarianceModel::new(1, 1.5, ModelSpec::WhiteNoise).expect("valid model");
    let cfg = SolverConfig::new(1.5, 1.0 / 320.0, 0.5, grid, SigmaSpec::Linear { a: 1.0, b: 0.0 }, model);
    Simulator::new(cfg).expect("valid solver")
}
