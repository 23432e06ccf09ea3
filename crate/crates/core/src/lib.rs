//! Geared rotationally identical CNN (GRI-CNN) structures on a deterministic
//! 2D convolution engine.
//!
//! The crate is organised around the pipeline that builds and verifies the
//! four gear structures (SSK, SNK, GSK, GNK):
//!
//! * [`grid`] — square rasters, the eight exact Dih4 grid symmetries, and
//!   bilinear rotation with exact quarter-turn decomposition.
//! * [`symmetry`] — Dih4-symmetric kernel construction and orbit combination.
//! * [`cnn`] — deterministic convolution stack (forward and backward),
//!   flatten templates and the fully connected head.
//! * [`gri`] — assembly of the four gear structures and their training loop.
//! * [`synthdata`] — deterministic two-class synthetic image generator.
//! * [`harness`] — the output-consistency trial protocol.
//! * [`report`] — consistency report aggregation and CSV/markdown emission.

pub mod cnn;
pub mod grid;
pub mod gri;
pub mod harness;
pub mod report;
pub mod symmetry;
pub mod synthdata;
