use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed GeoJSON at byte {offset}: {message}")]
    GeoJsonParse { offset: usize, message: String },

    #[error("unsupported geometry type `{0}` (expected Polygon or MultiPolygon)")]
    UnsupportedGeometry(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("region of interest `{0}` lies entirely outside the raster bounds")]
    EmptyRoi(String),

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("image decode error: {0}")]
    Decode(String),

    #[error("missing microns-per-pixel for {0}")]
    MissingMpp(String),

    #[error("upsampling unsupported: target {target} MPP is finer than source {source_mpp} MPP")]
    UpsampleUnsupported { source_mpp: f64, target: f64 },

    #[error("insufficient tissue: {0}")]
    InsufficientTissue(String),

    #[error("degenerate stain distribution: {0}")]
    DegenerateStain(String),

    #[error("degenerate image: {0}")]
    DegenerateImage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image {width}x{height} smaller than {window}x{window} window")]
    TooSmall {
        width: u32,
        height: u32,
        window: usize,
    },

    #[error("patch grid does not match core: {0}")]
    GridMismatch(String),

    #[error("duplicate patch at row {row}, col {col}")]
    DuplicatePatch { row: u32, col: u32 },

    #[error("patch coordinate out of range: row {row}, col {col}")]
    PatchOutOfRange { row: u32, col: u32 },

    #[error("invalid backend spec: {0}")]
    InvalidBackend(String),

    #[error("backend command failed ({status}): {diagnostics}")]
    BackendFailure { status: String, diagnostics: String },

    #[error("backend output incomplete: missing {0}")]
    IncompleteOutput(String),

    #[error("backend contract violation: {0}")]
    ContractViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("F statistic undefined: all samples identical")]
    UndefinedF,

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
