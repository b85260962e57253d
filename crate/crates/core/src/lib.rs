//! Register-interval analysis, bank-aware register renumbering and a
//! two-level GPU register file timing model.
//!
//! The pipeline runs [`ir::parse_program`] → [`cfg::build_cfg`] →
//! [`intervals::form_intervals`] → [`renumber::renumber_program`] →
//! [`rfsim::generate_traces`] → [`rfsim::simulate`].

pub mod cfg;
pub mod corpus;
pub mod intervals;
pub mod ir;
pub mod regset;
pub mod renumber;
pub mod rfsim;
pub mod scalar;

pub use regset::{RegSet, MAX_REGISTERS};
pub use scalar::Scalar;

/// Exact latency multiplier.
pub type Multiplier = num_rational::Ratio<i64>;

/// Simulator configuration with exact rational latency arithmetic.
pub type ExactRegisterFileConfig = rfsim::RegisterFileConfig<Multiplier>;

/// Simulator configuration using binary floating point.
pub type FloatRegisterFileConfig = rfsim::RegisterFileConfig<f64>;
