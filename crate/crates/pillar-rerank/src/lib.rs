//! Host-side companion of `pillar-rerank-core`: matrix, bundle, checkpoint
//! and report files, a thread-pool executor, experiment configuration, and
//! the `pillar-rerank` command-line tool.

pub mod bundle_io;
pub mod checkpoint_io;
pub mod cli;
pub mod error;
pub mod exec;
pub mod matrix_file;
pub mod report_io;
pub mod settings;
pub mod textio;

pub use error::{Error, Result};
pub use exec::PoolExecutor;
