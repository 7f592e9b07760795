use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("negative coupling weight a[{i}][{j}] = {value}")]
    NegativeWeight { i: usize, j: usize, value: f64 },

    #[error("non-finite coupling weight a[{i}][{j}]")]
    NonFiniteWeight { i: usize, j: usize },

    #[error("self-loop weight a[{i}][{i}] = {value} must be zero")]
    SelfLoop { i: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no single root component: digraph has {roots} root components")]
    NoSingleRoot { roots: usize },

    #[error("global consensus not guaranteed: digraph is {class}")]
    NotQuasiStronglyConnected { class: String },

    #[error("digraph is not strongly connected ({class})")]
    NotStronglyConnected { class: String },

    #[error("left null vector of root block is not positive (residual {residual:e}, min entry {min_entry:e})")]
    DegenerateGamma { residual: f64, min_entry: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix for node {node} is not symmetric positive definite")]
    NotPositiveDefinite { node: usize },

    #[error("explicit Euler step unstable at node {node}: T_s*(K/c_i)*in_degree = {factor} >= 2")]
    UnstableStep { node: usize, factor: f64 },

    #[error("non-finite state at step {step}, node {node}")]
    NonFiniteState { step: usize, node: usize },

    #[error("trajectory has not synchronized: final error {final_error:e} exceeds {tolerance:e}")]
    NotSynchronized { final_error: f64, tolerance: f64 },

    #[error("consensus value {0:e} below numeric floor")]
    VanishingConsensus(f64),

    #[error("rank-deficient observation matrix at node {node}")]
    RankDeficient { node: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
