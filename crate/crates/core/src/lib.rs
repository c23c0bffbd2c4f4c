//! Monte-Carlo simulator for downlink network cooperative MIMO.
//!
//! A drop places BSs on a grid and UEs uniformly ([`scenario`]), draws UMi
//! path loss with Rician fading ([`channel`]), forms serving sets for one of
//! four cooperation schemes ([`clustering`]), designs precoders by weighted
//! MMSE ([`precoding`]) and scores the result ([`metrics`]). [`harness`]
//! sweeps this over SNR points and drops. [`sensing`] holds the separate
//! delay-Doppler synchronization experiment.

pub mod channel;
pub mod clustering;
pub mod harness;
pub mod metrics;
pub mod precoding;
pub mod scenario;
pub mod sensing;

pub use channel::{ChannelState, C64};
pub use clustering::{ClusterAssignment, Scheme};
pub use harness::{compare_schemes, run_experiment, ExperimentPlan};
pub use precoding::{solve, solve_warm, PrecodingSolution, SolverConfig};
pub use scenario::{load_config, Config};
