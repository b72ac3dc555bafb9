use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] crossview_tensor::TensorError),

    #[error(transparent)]
    Container(#[from] crossview_tensor::io::ContainerError),

    #[error(transparent)]
    Param(#[from] crossview_tensor::ParamError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub fn data_err(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

pub fn usage_err(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

impl Error {
    /// Process exit code class: 2 usage, 3 data/format, 4 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 2,
            Error::Tensor(crossview_tensor::TensorError::NonFinite { .. }) => 4,
            _ => 3,
        }
    }
}
