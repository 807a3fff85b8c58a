//! Batch driver for the data-space inversion pipeline: a JSON run
//! configuration in, a deterministic artifact tree out.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical or I/O
//! failure, 4 missing artifact.

pub mod config;
pub mod stages;

pub use config::RunConfig;
pub use stages::Artifacts;

use dsi_core::DsiError;

/// Maps an error to the process exit code of the `dsi` binary.
pub fn exit_code(err: &DsiError) -> i32 {
    match err {
        DsiError::Config(_) | DsiError::Schema(_) | DsiError::Parse { .. } => 2,
        DsiError::Numerical(_) | DsiError::Io { .. } => 3,
        DsiError::MissingArtifact(_) => 4,
    }
}
