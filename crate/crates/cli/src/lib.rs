//! Command-line surface for the simplex diffusion toolkit: run
//! configuration, toy datasets, the 4×4 grid task, and the presample /
//! train / sample / solve / elbo / check commands.

pub mod commands;
pub mod config;
pub mod datasets;
pub mod shidoku;

use simplex_diffusion::error::Error;

/// Process exit code for an error: 1 for domain and configuration
/// problems, 2 for numerical failures, 3 for retry-cap exhaustion.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::RetryCapExhausted { .. } => 3,
        Error::NumericalTruncation { .. } | Error::NonFinite(_) => 2,
        _ => 1,
    }
}
