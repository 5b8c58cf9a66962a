//! Numerical toolkit for conformally flat submanifolds with flat normal bundle.

// Tensor code indexes several arrays with the same loop variables.
#![allow(clippy::needless_range_loop)]

pub mod catalog;
pub mod conformal;
pub mod curvature;
pub mod error;
pub mod extrinsic;
pub mod gridfile;
pub mod jet;
pub mod lightcone;
pub mod linalg;
pub mod map;
pub mod principal;
pub mod ribaucour;
pub mod runner;

pub use error::{Error, Result};
pub use jet::Jet;
pub use map::{evaluate, evaluate_jet, evaluate_jets, ChartDomain, FnMap, Jet3, MapRef, SmoothMap};
