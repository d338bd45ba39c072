//! Discrete-event simulation of asynchronous parameter-server SGD with
//! top-k gradient sparsification, with and without error-feedback memory.

// NaN must fail range checks, so negated comparisons are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod delay;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod numkit;
pub mod objectives;
pub mod optimizer;
pub mod simulator;
pub mod sparsifier;

pub use error::{Error, IdxError, Result};
