use thiserror::Error;

#[derive(Debug, Error)]
pub enum VcdError {
    #[error("invalid parameter {name}: {message}")]
    Param { name: &'static str, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("infeasible scene {scene_id}: {message}")]
    SceneConstruction { scene_id: usize, message: String },

    #[error("malformed tensor file: {0}")]
    TensorFormat(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VcdError {
    pub fn param(name: &'static str, message: impl Into<String>) -> Self {
        VcdError::Param {
            name,
            message: message.into(),
        }
    }
}
