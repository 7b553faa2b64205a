//! Configuration, orchestration and output plumbing for `nec-lab`.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_for, RunConfig, SchemaError, SchemaErrors, Task};
pub use run::{invoke, Invocation, Manifest, RunError};
