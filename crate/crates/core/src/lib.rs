//! Rational Gaussian wavelets, variable projection and VP networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod cwt;
pub mod data;
pub mod error;
pub mod fit;
pub mod grid;
pub mod net;
pub mod optim;
pub mod rgw;
pub mod vp;

pub use error::{Error, Result};
pub use grid::SampleGrid;
pub use rgw::{EtaVector, Mother, MotherKind, MotherShape, PolePair, Wavelet};
