//! Kalman filtering of a linear process observed by quantized sensors over
//! fading, packet-dropping links, with relays that forward or XOR-combine
//! sensor packets.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: process, sensors, quantization noise, trajectories.
//! - [`channel`]: topology, block fading, gain×power → success probability.
//! - [`netcode`]: relay operations, GF(2) decodability, pattern distributions.
//! - [`filter`]: the gateway Kalman filter and the expected covariance `f(P)`.
//! - [`optimize`]: relay selection, power allocation, stability certificates.
//! - [`experiments`]: scenario files, the Monte Carlo harness, CSV output.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod netcode;
pub mod optimize;

pub use channel::{
    bpsk_success_probability, link_probabilities, sample_channel_state, Bpsk, ChannelState,
    Fading, FadingSpec, LinkProbabilities, PowerAllocation, SuccessLaw, Topology,
};
pub use error::{Error, Result};
pub use filter::{
    expected_covariance, kalman_step, special_case_expected_covariance, xor_better_thresholds,
    CovarianceMatrix, FilterState, SpecialCaseOp,
};
pub use model::{
    half_bits_noise_factor, quantization_noise_factor, simulate_trajectory, SensorParams,
    SensorSpec, SystemModel, Trajectory,
};
pub use netcode::{
    enumerate_configs, enumerate_outcomes_oracle, pattern_distribution, recover_measurements,
    theta_expression_table, LinkOutcome, PatternDistribution, ReconstructionPattern, RelayConfig,
    RelayOperation,
};
pub use optimize::{
    joint_select_and_power, optimize_power, select_config_exhaustive, select_config_per_relay,
    stability_check, JointMode, PowerResult, RelaySelector, SelectionResult, SolverParams,
    StabilityPolicy, StabilityReport, Verdict,
};
pub use experiments::{emit_results, run_scenario, RunResult, Scenario, Scheme};
