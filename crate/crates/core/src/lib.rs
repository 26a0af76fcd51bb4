//! Simulation, exact coupling and ergodicity diagnostics for piecewise
//! deterministic Markov processes driven by randomly switched semiflows.
//!
//! Every numeric type is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coupling;
pub mod error;
pub mod fm;
pub mod jump;
pub mod models;
pub mod pdmp;
pub mod quad;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod semiflow;
pub mod state;
pub mod stats;

pub use error::{Error, Result};
pub use models::{build_preset, Overrides, Preset, PresetId};
pub use rng::{Purpose, RngStream, StreamId};
pub use scalar::Real;
pub use semiflow::{FlowRegularityCertificate, LFn, PhiFn, SemiflowSpec};
pub use state::{
    hybrid_distance, lyapunov_v, truncated_distance, AugmentedState, BaseMetric, EmpiricalMeasure, HybridMetric,
    HybridState,
};

pub type State = HybridState<f64>;
pub type Metric = HybridMetric<f64>;
pub type Measure = EmpiricalMeasure<f64>;
pub type Flows = SemiflowSpec<f64>;
pub type Model = pdmp::ModelSpec<f64>;
pub type FlowCertificate = FlowRegularityCertificate<f64>;
pub type JumpCertificate = jump::JumpRegularityCertificate<f64>;
