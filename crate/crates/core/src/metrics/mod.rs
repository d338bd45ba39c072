//! Measurements taken during a run and the convergence-bound formulas they
//! are checked against.

mod bounds;
mod mu;
mod record;
pub mod stats;

pub use bounds::{
    corollary_bound, delayed_gradient_gap, estimate_c, min_grad_norm_sq, theorem_bound, BoundInputs,
};
pub use mu::{MuEstimate, MuUpdate};
pub use record::{
    records_to_csv, write_csv_header, write_csv_rows, RunMeta, RunRecord, CSV_HEADER,
};
