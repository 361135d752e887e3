//! Multiscale elliptic and Helmholtz forward solvers, analytic and numerical
//! homogenization, the finite-element heterogeneous multiscale method, and
//! least-squares recovery of microstructure parameters from boundary or
//! interior data.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod fem;
pub mod format;
pub mod geometry;
pub mod hmm;
pub mod homogenization;
pub mod inversion;
pub mod mesh;
pub mod microstructure;
pub mod observation;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{Point, Rect};
pub use mesh::{build_uniform_mesh, Side, TriMesh};
pub use tensor::{EffectiveTensor, SymTensor};
