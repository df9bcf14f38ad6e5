//! Models and simulation tools for control loops closed over lossy, delayed
//! networks: exact zero-order-hold discretization with delay-split input
//! matrices, packet loss and delay channel models, compensation strategies,
//! a scenario catalog, and a deterministic simulation / Monte Carlo engine.

pub mod channel;
pub mod error;
pub mod matrix;
pub mod plant;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod strategies;

pub use channel::{sample_delay, sample_loss, DelayModel, DelaySample, Dist, LossModel, Ratio};
pub use error::{Error, Result, Violation};
pub use matrix::{mat_exp, spectral_radius, Matrix};
pub use plant::{
    build_lifted, decompose_delay, discretize, gamma_split, ContinuousPlant, DelayDecomposition,
    DiscretizationTriple, LiftedSystem,
};
pub use rng::RandomStream;
pub use scenario::{
    case_info, catalog, default_plant, from_toml, scenario_from_case, to_toml, validate, CaseId,
    CaseInfo, ModelFamily, Overrides, ScenarioSpec,
};
pub use sim::{
    closed_loop_matrix, closed_loop_matrix_lifted, monte_carlo, run, run_guarded, run_trial,
    step_compensated, step_delay_free, step_long_delay, step_naive_loss, step_short_delay,
    summarize, ChannelStep, LoopState, MonteCarloSummary, OutputMap, SimulationTrace, StepRecord,
    DIVERGENCE_GUARD,
};
pub use strategies::{
    compensate_ca, compensate_sc, lqr_design, CompensationStrategy, EstimatorState, GainBucket,
    GainPolicy, ResolvedGain,
};
