//! Pipeline behind the `rrpo` command: corpora, reward models, policies,
//! evaluation and ablations, all as files under one output directory.

pub mod config;
pub mod output;
pub mod pipeline;

pub use config::{ConfigError, RunConfig};
