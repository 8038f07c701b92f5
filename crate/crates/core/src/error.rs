use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid value at layer {layer}: {msg}")]
    Value { layer: usize, msg: String },

    #[error("invalid value: {0}")]
    Model(String),

    #[error("unsupported layer kind `{0}`")]
    UnsupportedKind(String),

    #[error("shape error at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },

    #[error("layer {0} cannot be part of a fusion block")]
    NotFusible(usize),

    #[error("operation requires a global_pool or dense layer, got {0}")]
    Kind(String),

    #[error("graph has {nodes} nodes, enumeration is limited to {limit}")]
    TooLarge { nodes: usize, limit: usize },

    #[error("invalid fusion setting: {0}")]
    InvalidSetting(String),

    #[error("no path from input to output node")]
    NoPath,
}

pub type Result<T> = std::result::Result<T, Error>;
