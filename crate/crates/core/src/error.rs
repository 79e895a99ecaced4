use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("document {doc_id}: {message}")]
    Validation { doc_id: String, message: String },

    #[error("alignment does not cover words {0:?}")]
    AlignmentGap(Vec<usize>),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("negative attention value {value} at index {index}")]
    NegativeAttention { index: usize, value: f64 },

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("synthetic corpus: {0}")]
    Synthetic(String),

    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("layer {layer} out of range for a {layers}-layer model")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("missing human attention for documents {0:?}")]
    MissingAttention(Vec<String>),

    #[error("insufficient {class} instances: required {required}, available {available}")]
    InsufficientClass {
        class: String,
        required: usize,
        available: usize,
    },

    #[error("AUC needs both classes (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
