//! Linear articulatory probing of speech representations and cross-speaker
//! affine transferability analysis.
//!
//! Numeric types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod acoustic;
pub mod alignment;
pub mod charts;
pub mod ema;
pub mod linalg;
pub mod pipeline;
pub mod probing;
pub mod registry;
mod scalar;
pub mod stats;
pub mod synth;

pub use scalar::Scalar;

pub type EmaTrajectory32 = ema::EmaTrajectory<f32>;
pub type EmaTrajectory64 = ema::EmaTrajectory<f64>;
pub type FeatureMatrix32 = ema::FeatureMatrix<f32>;
pub type FeatureMatrix64 = ema::FeatureMatrix<f64>;
pub type AffineMap32 = linalg::AffineMap<f32>;
pub type AffineMap64 = linalg::AffineMap<f64>;
