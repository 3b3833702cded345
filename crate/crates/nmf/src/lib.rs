//! Distributed nonnegative matrix factorization: transports, file formats and
//! the run harness around the kernels in [`nmf_core`].

pub mod comm;
pub mod error;
pub mod harness;
pub mod io;

pub use comm::{CommStats, CommWorld, TransportKind};
pub use error::{NmfError, Result};
pub use harness::{run, run_rank, Algorithm, DataSource, InitMethod, RunConfig, RunMetrics};
pub use nmf_core::{self, ColumnBlock, DenseMatrix};
