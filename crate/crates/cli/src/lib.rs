//! Experiment driver behind the `dudodp` binary: dataset generation, template prior
//! archives, method runs, ablations and reports.

pub mod archive;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod output;
pub mod run;

use dudodp::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DENOISER: i32 = 4;

/// Process exit code for an error raised by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => EXIT_CONFIG,
        Some(Error::DenoiserUnavailable(_)) => EXIT_DENOISER,
        _ => EXIT_DATA,
    }
}

/// Prefixes an error's message with a case id, keeping its variant.
pub fn in_case(id: &str, err: Error) -> Error {
    match err {
        Error::Config(m) => Error::Config(format!("case {id}: {m}")),
        Error::Contract(m) => Error::Contract(format!("case {id}: {m}")),
        Error::Data(m) => Error::Data(format!("case {id}: {m}")),
        Error::DenoiserUnavailable(m) => Error::DenoiserUnavailable(format!("case {id}: {m}")),
        io @ Error::Io { .. } => Error::Data(format!("case {id}: {io}")),
    }
}
