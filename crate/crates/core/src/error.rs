use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("incompatible: {0}")]
    Compatibility(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("estimator error: {0}")]
    Estimator(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("training failed at iteration {iteration}: {reason}")]
    TrainingFailure { iteration: usize, reason: String },
    #[error("ingestion failed for: {}", .0.join(", "))]
    Ingestion(Vec<String>),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.as_ref().display().to_string();
        move |source| Error::Io { path, source }
    }
}
