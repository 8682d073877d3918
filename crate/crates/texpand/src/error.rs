//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read image {path}: {source}")]
    ImageRead {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("cannot write image {path}: {source}")]
    ImageWrite {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("image {path} has {channels} channels, expected 3-channel RGB")]
    NotRgb { path: PathBuf, channels: usize },

    #[error("pixel value {value} outside canonical range [-1, 1] (tolerance {tolerance})")]
    OutOfRange { value: f32, tolerance: f32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise field dimensions must be at least 1x1 (got {height}x{width})")]
    EmptyNoiseField { height: usize, width: usize },

    #[error("exemplar is {height}x{width} but sampling 2k x 2k blocks with k={k} needs at least {min}x{min}")]
    ExemplarTooSmall {
        height: usize,
        width: usize,
        k: usize,
        min: usize,
    },

    #[error("crop window (offset ({row}, {col}), size {h}x{w}) is outside the {img_h}x{img_w} image")]
    CropOutOfBounds {
        row: i64,
        col: i64,
        h: usize,
        w: usize,
        img_h: usize,
        img_w: usize,
    },

    #[error("image dimensions {height}x{width} not divisible into a {rows}x{cols} tile grid")]
    IndivisibleTiles {
        height: usize,
        width: usize,
        rows: usize,
        cols: usize,
    },

    #[error("generator input must be at least 16x16 with sides divisible by 4, got {height}x{width}")]
    BadGeneratorInput { height: usize, width: usize },

    #[error("discriminator depth {0} outside supported range [3, 8]")]
    BadDiscriminatorDepth(usize),

    #[error("input {height}x{width} smaller than one discriminator patch (needs at least {min}x{min})")]
    InputSmallerThanPatch {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("unknown feature layer '{0}' (expected 'relu', 'resblock_1'..'resblock_6' or 'conv')")]
    UnknownLayer(String),

    #[error(
        "feature extractor weights not found at {path}. Run `scripts/fetch_vgg19.py {path}` to \
         download and convert the pre-trained weights, or `texpand make-extractor --output {path}` \
         for a randomly initialized stand-in"
    )]
    ExtractorMissing { path: PathBuf },

    #[error("weight archive {path} is corrupt: {reason}")]
    ArchiveCorrupt { path: PathBuf, reason: String },

    #[error("archive {path} is missing tensor '{name}'")]
    ArchiveMissingTensor { path: PathBuf, name: String },

    #[error("config mismatch on resume, differing fields: {0}")]
    ConfigMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at iteration {iteration} ({which}); diagnostic checkpoint written to {checkpoint}")]
    NonFiniteLoss {
        iteration: usize,
        which: String,
        checkpoint: PathBuf,
    },

    #[error("intermediate result {height}x{width} exceeds pixel budget of {budget} pixels")]
    PixelBudget {
        height: usize,
        width: usize,
        budget: usize,
    },

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Msg(String),
}

impl Error {
    pub fn msg(m: impl Into<String>) -> Self {
        Error::Msg(m.into())
    }
}
