//! Sampled-data control over a shared network with deadline-based packet
//! dropouts: plant discretization, delay models, Riccati/Lyapunov
//! stabilizability tests, sampling-period bounds and a closed-loop simulator.
// `!(x >= 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod dynamics;
mod error;
pub mod linalg;
pub mod network;
pub mod simulator;
pub mod stabilization;

pub use nalgebra::{DMatrix, DVector};

pub use bounds::{
    deadline_margin, decoupled_stabilizable, find_min_deadline, proposition_check, sampling_bounds,
    scalar_stabilizable, DeadlineDecision, DecoupledPlant, Regime, SamplingBounds, ScalarPlant,
    Verdict,
};
pub use dynamics::{
    check_assumptions, check_assumptions_with, discretize, mat_exp, mat_power, AssumptionReport,
    AssumptionTolerances, ContinuousPlant, DiscretePlant,
};
pub use error::{Error, Result};
pub use network::{
    cdf_at, dropout_rate, sample_arrival, total_service_rate, DeadlinePolicy, DelayDistribution,
    DropoutModel, FlowSet, Interpolation,
};
pub use simulator::{
    closed_loop_maps, closed_loop_spectral_radius, exact_moments, run_monte_carlo, run_trial,
    trial_rng, AugmentedState, MomentSource, MomentTrajectory, SimConfig, TrialTrajectory,
};
pub use stabilization::{
    dare_feasible, dare_solve, dle_solve, lyapunov_operator_eval, pmax_bisection,
    pmax_bisection_with, pmax_scalar_closed_form, predictor_coeffs, robust_grid_check, DareOptions,
    DareOutcome, DareSolution, DareWeights, Divergence, DleSolution, PredictorCoeffs,
    RobustGridReport, StabilityMargin,
};
