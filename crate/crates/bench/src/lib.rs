//! Desk-scale experiment harness around the `hlmbo` library.
//!
//! Every command shares one checkpoint and is deterministic given its
//! configuration and seeds; only the `wall_ms` column varies between reruns.

pub mod config;
pub mod plot;
pub mod report;
pub mod run;
pub mod stats;

pub use config::BenchConfig;
pub use report::{write_summary, BenchReport, Meta, Row};
pub use run::{ablate_accuracy, ablate_hypothesis, compare, label_audit, load_checkpoint, sweep_zeta, train, Outcome};
pub use stats::{sign_test, SignTest};

use hlmbo::Error;

/// Process exit status for a failed command: 2 for configuration problems,
/// 3 for everything that went wrong at run time.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::BadRequest(_) | Error::InvalidFamily(_) | Error::InvalidSpace(_) => 2,
        _ => 3,
    }
}
