//! Desensitization post-processing and evaluation toolkit for faces and
//! vehicle license plates.
//!
//! The crate consumes per-frame detections and segmentation masks, applies
//! the joint desensitization pipeline (detection join, detection-segmentation
//! join, Kalman-filter join), renders redacted frames, and scores results
//! with the IoFF/mIOFF metric family. A synthetic scenario harness generates
//! deterministic ground truth and simulated detector noise so every stage can
//! be evaluated end to end without external data.
//!
//! Modules:
//!
//! - [`mask`] / [`annot`] — domain types and the annotation document format
//! - [`geometry`] — box/mask geometry kernels (IoU, min bounding box, components)
//! - [`metrics`] — detection AP and the IoFF/mIOFF desensitization metrics
//! - [`postproc`] — DJ/DSJ filtering producing desensitization regions
//! - [`tracker`] — Kalman smoothing and gap coasting of sensitive detections
//! - [`renderer`] — mosaic/solid/icon redaction and PPM image I/O
//! - [`losses`] — multitask loss functions with analytic gradients
//! - [`pipeline`] — DJ→DSJ→KFJ composition over a prediction sequence
//! - [`harness`] — synthetic scene generator, noise simulator, ablation runner

pub mod annot;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod postproc;
pub mod renderer;
pub mod tracker;

pub use annot::{
    BBox, Category, FaceTriMask, FrameAnnotation, ObjectInstance, PredictionFrame, PredictionSet,
    SequenceAnnotation,
};
pub use mask::PixelMask;
