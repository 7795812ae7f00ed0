//! Deterministic decentralized federated learning simulator with
//! propagation-based contribution evaluation.

// Range checks are written so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod baselines;
pub mod config;
pub mod coordinator;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod lcv;
pub mod learner;
pub mod oracle;
pub mod rng;
pub mod shapley;
pub mod topology;

pub use config::SimConfig;
pub use coordinator::{ContributionVector, Coordinator, RoundAudit};
pub use engine::{ExchangePacket, SimResult, Simulation};
pub use error::{Error, Result};
pub use oracle::{cosine_distance, exact_shapley, pearson, ShapleyResult};
pub use lcv::{compute_lcv, Lcv, LcvMode, LcvSettings};
pub use learner::{Dataset, ModelParams, ModelShape, TrainSettings};
pub use topology::{build_schedule, Edge, RoundSchedule, TopologyKind, TopologySpec};
