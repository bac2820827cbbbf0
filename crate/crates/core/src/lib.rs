//! Analytical modeling of heterogeneous edge NN accelerators.
//!
//! The pipeline runs model graph → per-unit profiles → clusters → two-phase
//! mapping → event-driven simulation. Physical quantities are generic over
//! [`Scalar`]; use the `f64` aliases for speed and the `Exact` ones when an
//! identity must hold without rounding.

pub mod accel;
pub mod characterize;
pub mod cluster;
pub mod dataflow;
pub mod energy;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod scheduler;
pub mod sim;

pub use scalar::{Exact, Scalar};

pub type SimReportF64 = sim::SimReport<f64>;
pub type ExactSimReport = sim::SimReport<Exact>;
pub type EnergyBreakdownF64 = energy::EnergyBreakdown<f64>;
pub type ExactEnergyBreakdown = energy::EnergyBreakdown<Exact>;
pub type ComparisonReportF64 = sim::ComparisonReport<f64>;
pub type ExactComparisonReport = sim::ComparisonReport<Exact>;
pub type EvaluationF64 = pipeline::Evaluation<f64>;
pub type ExactEvaluation = pipeline::Evaluation<Exact>;
