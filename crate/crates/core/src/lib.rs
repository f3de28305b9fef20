//! Detection-tube extraction and multi-object video segmentation.
//!
//! The library links per-frame object detections into temporally consistent
//! *tubes* (longest path over a detection similarity DAG), builds per-object
//! location priors from motion inside-outside maps and box-level foreground
//! extraction, and produces a video segmentation by minimizing a Potts energy
//! over a spatio-temporal superpixel graph.
//!
//! Pipeline stages (see [`pipeline::run_pipeline`]):
//!
//! 1. [`tube`] — link detections, extract tubes, interpolate gaps, volumetric NMS
//! 2. [`motion`] — flow boundaries, inside-outside maps, location priors
//! 3. [`foreground`] — GrabCut box foregrounds and GMM appearance models
//! 4. [`seg`] — superpixel graph, unary/pairwise energies, labeling solvers
//!
//! [`io`], [`eval`] and [`synth`] provide file formats, metrics and a
//! deterministic synthetic-scene generator used by the test suites and the CLI.

pub mod eval;
pub mod foreground;
pub mod io;
pub mod maxflow;
pub mod model;
pub mod motion;
pub mod pipeline;
pub mod seg;
pub mod similarity;
pub mod synth;
pub mod tube;

pub use model::{box_center, color_histogram, iou, BoundingBox, ColorHistogram, Detection, FlowField, Image};
pub use motion::PixelMask;
pub use pipeline::{run_pipeline, PipelineConfig, PipelineInputs, PipelineOutput};

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box [{x_min},{x_max})x[{y_min},{y_max}): min must be strictly below max")]
    InvalidBox {
        x_min: i32,
        y_min: i32,
        x_max: i32,
        y_max: i32,
    },
    #[error("detection score {0} outside [0,1]")]
    InvalidScore(f64),
    #[error("box [{x_min},{x_max})x[{y_min},{y_max}) outside {width}x{height} image")]
    BoxOutOfBounds {
        x_min: i32,
        y_min: i32,
        x_max: i32,
        y_max: i32,
        width: usize,
        height: usize,
    },
    #[error("color histogram has zero total")]
    EmptyHistogram,
    #[error("missing flow field for frame {0}")]
    MissingFlow(usize),
    #[error("correlation search window lies entirely outside the image")]
    SearchWindowOutside,
    #[error("misaligned input: {what}: expected {expected}, got {actual}")]
    Misaligned {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("frame {frame}: {message}")]
    Frame { frame: usize, message: String },
    #[error("no appearance model for label {0}")]
    MissingModel(usize),
    #[error("exhaustive search over {labelings} labelings exceeds the 2^24 budget")]
    InstanceTooLarge { labelings: u128 },
    #[error("too many objects for exact assignment: {0} (max 20)")]
    TooManyObjects(usize),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
