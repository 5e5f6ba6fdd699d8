//! Polar oriented-box toolkit.
//!
//! Boxes are encoded around the center of their minimum bounding rectangle
//! as four vertex polar angles, the shorter rectangle side, and four
//! side-to-diameter ratios. Around that codec sit the pieces needed to use it
//! for detection: exact rotated geometry, heatmap/regression targets, head
//! losses with analytic gradients, peak decoding and rotated NMS, DOTA-style
//! tiling and I/O, oriented-box AP evaluation, and a small gradient-descent
//! harness comparing box parameterizations.
//!
//! Batch kernels take an [`Exec`] policy. With the default `parallel`
//! feature they run on rayon; without it everything is sequential.

pub mod codec;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod geometry;
pub mod losses;
pub mod par;
pub mod postprocess;
pub mod targets;

pub use error::{Error, ErrorKind, Result};
pub use geometry::{Point2, Quad, RotatedRect};
pub use par::Exec;
