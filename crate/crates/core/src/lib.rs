//! Executable desk-scale versions of the universality constructions for
//! potential wells: torus flows and adapted 1-forms, an exact LP deciding
//! strong adaptation at bounded Fourier degree, flat embeddings into
//! potential wells, and Turing machines compiled into torus maps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `1.41421356` is a deliberately truncated rotation number, not sqrt(2).
#![allow(clippy::approx_constant)]

pub mod acceptance;
pub mod adapted_lp;
pub mod chart;
pub mod error;
pub mod embedder;
pub mod flows;
pub mod forms;
pub mod hamiltonian;
pub mod io;
pub mod rational;
pub mod simplex;
pub mod trig;
pub mod turing;

pub use error::{Error, Result};
