//! Balanced multimodal active learning.
//!
//! A small two-modality classifier, Shapley-based modality attribution,
//! gradient-embedding query strategies (including the modulated BMMAL
//! embedding) and a seeded pool-based simulator with the statistics used to
//! compare strategies.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common `f64` and `f32` instantiations.

pub mod alloop;
pub mod attribution;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod seeds;
pub mod stats;
pub mod strategies;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset64 = datagen::Dataset<f64>;
pub type Dataset32 = datagen::Dataset<f32>;
pub type Sample64 = datagen::MultimodalSample<f64>;
pub type Sample32 = datagen::MultimodalSample<f32>;
pub type Model64 = model::ModelParams<f64>;
pub type Model32 = model::ModelParams<f32>;
pub type Attribution64 = attribution::AttributionResult<f64>;
pub type Attribution32 = attribution::AttributionResult<f32>;
pub type Embedding64 = embedding::GradientEmbedding<f64>;
pub type Embedding32 = embedding::GradientEmbedding<f32>;
pub type Query64 = strategies::QueryResult<f64>;
pub type Query32 = strategies::QueryResult<f32>;
pub type Bundle64 = alloop::ReportBundle<f64>;
pub type Bundle32 = alloop::ReportBundle<f32>;
