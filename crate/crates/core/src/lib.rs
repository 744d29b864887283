//! Reading, aggregation, and constraint inference for extracting event slot
//! values from clusters of news documents.

pub mod compute;
pub mod constraints;
pub mod corpus;
pub mod aggregator;
pub mod encoder;
pub mod evaluation;
pub mod model;
pub mod scalar;
pub mod scorer;
pub mod synth;
pub mod training;

pub use scalar::Scalar;

pub type TensorF64 = compute::Tensor<f64>;
pub type TensorF32 = compute::Tensor<f32>;
pub type TapeF64 = compute::Tape<f64>;
pub type TapeF32 = compute::Tape<f32>;
pub type ModelParamsF64 = model::ModelParams<f64>;
pub type ModelParamsF32 = model::ModelParams<f32>;
pub type EmbeddingTableF64 = encoder::EmbeddingTable<f64>;
pub type EmbeddingTableF32 = encoder::EmbeddingTable<f32>;
pub type ValueScoreTableF64 = aggregator::ValueScoreTable<f64>;
pub type ValueScoreTableF32 = aggregator::ValueScoreTable<f32>;
