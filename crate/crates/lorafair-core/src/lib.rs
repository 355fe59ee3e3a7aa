//! Joint spreading-factor assignment and transmit-power allocation for a
//! single-gateway LoRa uplink with imperfect SF orthogonality.
//!
//! The crate models the capture effect under Rayleigh fading with both co-SF
//! and inter-SF interference, assigns SFs to devices through a many-to-one
//! matching with swap refinement, and allocates transmit powers by bisecting
//! over a max-min rate target with linearized or quadratic feasibility
//! subproblems. A Monte Carlo harness drives deployments, baselines and
//! metric aggregation.

pub mod baselines;
pub mod capture;
pub mod feasibility;
pub mod harness;
pub mod matching;
pub mod model;
pub mod power;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use capture::{p_cap, p_cap_co, p_cap_inter, short_term_rate, Assignment, PowerVector};
pub use matching::{solve_sf_allocation, MatchState};
pub use model::{ChannelParams, Deployment, NoiseModel, Sf, SfTable};
pub use power::{bisect_power, joint_allocate, ApproxKind};
