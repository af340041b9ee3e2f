//! Command implementations behind the `harvest` binary, plus the acceptance
//! suite that `harvest validate` and the `acceptance` test target share.

pub mod commands;
pub mod error;
pub mod output;
pub mod validate;

pub use error::CliError;
pub use output::RunManifest;
