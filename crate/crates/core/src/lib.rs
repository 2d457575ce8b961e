//! Emphatic temporal-difference (ETD) learning laboratory.
//!
//! * [`mdp`]: finite off-policy problems and exact ETD reference quantities.
//! * [`trace`]: follow-on / eligibility trace recursions and trace statistics.
//! * [`learner`]: constrained ETD variants, ELSTD, stepsizes, averaging.
//! * [`env`]: the two finite benchmark problems and Mountain Car.
//! * [`harness`]: seeded experiments, statistics and export.

pub mod env;
pub mod error;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod mdp;
pub mod scalar;
pub mod trace;

pub use error::{EtdError, Result};
pub use scalar::Real;

pub type Mdp = mdp::FiniteMdp<f64>;
pub type Solution = mdp::EtdSolution<f64>;
pub type Record = trace::StepRecord<f64>;
pub type Traces = trace::TraceState<f64>;
pub type Learner = learner::LearnerState<f64>;
