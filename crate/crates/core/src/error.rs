use std::path::PathBuf;

/// Errors produced by the analysis library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed npy data: {0}")]
    MalformedNpy(String),

    #[error("unsupported npy dtype {0:?} (only little-endian f4/f8 are accepted)")]
    UnsupportedDtype(String),

    #[error("expected a rank-2 array, found shape {0:?}")]
    BadRank(Vec<usize>),

    #[error("archive member {0:?} is missing")]
    MissingMember(String),

    #[error("row count mismatch for {what}: matrix has {matrix} rows, manifest has {manifest}")]
    RowCountMismatch {
        what: String,
        matrix: usize,
        manifest: usize,
    },

    #[error("manifest schema violation: {0}")]
    Manifest(String),

    #[error("incompatible patch geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("image {image_id:?} not found under {dir}")]
    MissingImage { image_id: String, dir: PathBuf },

    #[error("report schema violation: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Zip(#[from] zip::result::ZipError),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedNpy(_) => "malformed_npy",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::BadRank(_) => "bad_rank",
            Error::MissingMember(_) => "missing_member",
            Error::RowCountMismatch { .. } => "row_count_mismatch",
            Error::Manifest(_) => "manifest_schema",
            Error::Geometry(_) => "incompatible_geometry",
            Error::Dimension(_) => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::MissingImage { .. } => "missing_image",
            Error::Report(_) => "report_schema",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Zip(_) => "zip",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
