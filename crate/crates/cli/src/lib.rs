//! Library side of the `ccot` command-line tool: input parsing, the `run`
//! and `bench` commands and their output files.

pub mod bench;
pub mod error;
pub mod ingest;
pub mod run;

pub use error::{CliError, Result};
pub use ingest::{ingest, Format};
pub use run::{run, Method, MethodSettings, RunManifest, Source};
