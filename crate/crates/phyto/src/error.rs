use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] phyto_core::Error),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image `{id}`: {source}")]
    Image {
        id: String,
        #[source]
        source: image::ImageError,
    },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("unknown backbone `{name}`; available: {available}")]
    UnknownBackbone { name: String, available: String },
    #[error("pretrained weights for {backbone} not usable at {path}: {reason}. Download {url} into that path (or set weights_dir / PHYTO_WEIGHTS_DIR) and retry")]
    Weights { backbone: String, path: PathBuf, url: String, reason: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("model: {0}")]
    Model(String),
    #[error("non-finite training loss at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("training: {0}")]
    Training(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
