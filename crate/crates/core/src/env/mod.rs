//! Benchmark environments.

pub mod discretized;
pub mod features;
pub mod finite;
pub mod monte_carlo;
pub mod mountain_car;

pub use features::FeatureScheme;
pub use finite::{build_problem1, build_problem1_two_interest, build_problem2, FiniteSimulator, MiddleReward};
pub use mountain_car::{McSimulator, McState};
