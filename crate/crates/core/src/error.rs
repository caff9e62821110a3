use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid volume header {path}: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),
    #[error("payload length mismatch: header declares {expected} voxels, payload holds {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid spacing: {0}")]
    InvalidSpacing(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("degenerate box: zero or negative extent on axis {axis}")]
    DegenerateBox { axis: usize },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("instance {0} not present in mask")]
    InstanceNotFound(u32),
    #[error("lesion {index} does not fit inside the volume")]
    LesionOutOfBounds { index: usize },
    #[error("target box does not intersect the volume")]
    TargetOutsideVolume,
    #[error("loss domain error: {0}")]
    Domain(String),
    #[error("detection without a score")]
    MissingScore,
    #[error("image id mismatch: `{0}` vs `{1}`")]
    ImageIdMismatch(String, String),
    #[error("no ground-truth objects in the evaluation set")]
    NoGroundTruth,
    #[error("cannot split {ids} ids into {folds} folds")]
    TooFewIds { ids: usize, folds: usize },
    #[error("unknown augmentation scheme `{0}`")]
    UnknownScheme(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
