use std::time::Duration;

pub type Result<T, E = NmfError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum NmfError {
    #[error(transparent)]
    Core(#[from] nmf_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error("protocol error between rank {rank} and rank {peer}: {detail}")]
    Protocol {
        rank: usize,
        peer: usize,
        detail: String,
    },

    #[error("rank {rank} timed out after {elapsed:?} waiting for rank {peer}")]
    Timeout {
        rank: usize,
        peer: usize,
        elapsed: Duration,
    },

    #[error("rank {rank}: peer {peer} disconnected")]
    Disconnected { rank: usize, peer: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank {rank} panicked")]
    RankPanicked { rank: usize },

    #[error("B diverged between rank 0 and rank {rank}")]
    ReplicaMismatch { rank: usize },
}
