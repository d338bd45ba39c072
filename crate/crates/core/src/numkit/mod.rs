//! Numeric substrate: dense vectors, seeded random streams and samplers.

mod rng;
mod vector;

pub use rng::{
    exponential_from_uniform, sample_exponential, sample_lognormal, sample_uniform, worker_stream,
    RngStream, STREAM_DATA, STREAM_INIT, STREAM_PROBE, STREAM_PROFILES,
};
pub use vector::{dot, DenseVector};
