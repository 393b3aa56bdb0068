//! Frequency estimation with a continuously homodyne-monitored, squeezed
//! bosonic mode.
//!
//! The crate integrates the conditional Gaussian dynamics of the mode
//! together with its derivatives with respect to the unknown frequency ω,
//! evaluates the Fisher information carried by the homodyne record and by
//! the conditional states, and runs feedback policies on top of it. An
//! environment server exposes the same simulator to an external
//! reinforcement-learning trainer over a line-delimited JSON protocol.
//!
//! Module map:
//!
//! * [`gaussian`]: model matrices, stability, analytic steady states,
//!   squeezing and purity.
//! * [`engine`]: stochastic integration, trajectories and ensembles.
//! * [`metrology`]: Fisher-information functionals.
//! * [`policy`]: feedback policies and the actor weight format.
//! * [`env`]: environment protocol server.
//! * [`experiment`]: batch analyses producing CSV files.

pub mod csv;
pub mod engine;
pub mod env;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod linalg;
pub mod metrology;
pub mod policy;
pub mod rng;
pub mod stats;

pub use engine::{
    reset, run_ensemble, run_trajectory, Ensemble, EnsembleSpec, InitSampler, InitialCondition, RunOptions, Sample,
    StepResult, TangentState, TrajectoryRun, TrajectoryState,
};
pub use error::{Error, Result};
pub use gaussian::{
    build_matrices, perpendicular_squeezing_db, purity, squeezing_db, stability_check, steady_state_covariance,
    GaussianState, SystemMatrices, SystemParams,
};
pub use linalg::{Mat2, Sym2, Vec2};
pub use metrology::{
    effective_qfi, fhom_increment, final_homodyne_fi, gaussian_qfi, optimize_final_homodyne, qcrb_bound,
    reward_increment, FisherReport, StrongMeasurementSpec,
};
pub use policy::{load_weights, neural_act, NeuralPolicy, NeuralWeights, NoControl, Observation, OpenLoop, Policy, Strategy};
pub use rng::StreamKey;
