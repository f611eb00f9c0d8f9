//! Multi-branch answer grading: domain types, datasets, the scoring model and
//! its evaluation metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the element type for the common cases.

pub mod data;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod nn;
mod scalar;
pub mod text;

pub use scalar::Scalar;

pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type GradingModel64 = model::GradingModel<f64>;
pub type GradingModel32 = model::GradingModel<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type Encoder64 = model::Encoder<f64>;
