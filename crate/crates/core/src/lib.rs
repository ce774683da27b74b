//! Dense whole-slide probability maps from a strided fully convolutional scorer.
//!
//! A no-padding convolutional scorer applied to a large input reproduces the
//! per-patch classifier at stride `S_f`. Running it at `α²` pixel offsets and
//! interleaving the outputs gives predictions at stride `S_d = S_f / α`; tiling
//! the slide with non-overlapping regions of interest and stitching the dense
//! tiles yields the whole-slide map. The crate also carries everything around
//! that core: a tiled slide store, tissue masking, a bounded prefetch pipeline,
//! training with hard negative mining, detection extraction, FROC/ROC scoring
//! and a synthetic slide generator.

pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod oracle;
pub mod pipeline;
pub mod postproc;
pub mod preproc;
pub mod reconstruct;
pub mod scorer;
pub mod slide_io;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{Offset, ScanGeometry};
