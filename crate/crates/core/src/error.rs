use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid pose: quaternion must be nonzero and all components finite")]
    InvalidPose,
    #[error("invalid camera intrinsics")]
    InvalidCamera,
    #[error("invalid depth {0}: must be positive and finite")]
    InvalidDepth(f64),
    #[error("invalid noise level {0}: expected 1, 2 or 3")]
    InvalidNoiseLevel(u8),
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("duplicate or unsorted frame id {0}")]
    FrameOrder(u64),
    #[error("record {frame_id} holds {count} points, budget is {budget}")]
    OverBudget {
        frame_id: u64,
        count: usize,
        budget: usize,
    },
    #[error("record {0}: points and scores differ in length")]
    ScoreMismatch(u64),
    #[error("map has no records")]
    EmptyMap,
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("trailing bytes after last record")]
    TrailingBytes,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Mismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: dimensions {dims:?} not divisible by {divisor}")]
    Indivisible {
        op: &'static str,
        dims: Vec<usize>,
        divisor: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("quaternion norm {0} is not unit")]
    NonUnitQuaternion(f64),
    #[error("lambda {0} must be >= 1")]
    LambdaBelowOne(f64),
    #[error("stage weights sum to {0}, expected 1")]
    WeightSum(f64),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("frame {0}: selected local map is empty")]
    DegenerateSample(u64),
    #[error("local map at the query pose is empty")]
    EmptyLocalMap,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, frame {frame_id}: loss = {loss}")]
    Diverged {
        epoch: usize,
        frame_id: u64,
        loss: f64,
    },
    #[error("no model supplied for iteration {0}")]
    MissingModel(usize),
    #[error("image is {got:?}, camera expects {expected:?}")]
    ImageSize {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("n_points must be >= 1000 and n_frames >= 1")]
    BadParameters,
    #[error("could not place a visible trajectory after {0} attempts")]
    RejectionFailed(usize),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("error list is empty")]
    Empty,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("frame {frame}: scan file {path} is missing")]
    MissingScan { frame: usize, path: PathBuf },
    #[error("config key {0:?} is unknown")]
    UnknownConfigKey(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
