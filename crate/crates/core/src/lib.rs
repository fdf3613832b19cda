//! Numerical laboratory for reverse-Agmon lower bounds on semiclassical
//! Schrödinger eigenfunctions in classically forbidden regions.
//!
//! The crate is organised bottom-up: [`models`] fixes the closed-form
//! potentials, [`agmon`] builds distances and level sets, [`halfplane`] is the
//! exact flat model, [`hjphase`] and [`quantize`] carry the parametrix and the
//! cutoff calculus, [`fcalc`] the functional calculus on the boundary, and
//! [`solver`] the discrete ground truth. [`cli`] wires everything into sweeps.

pub mod agmon;
pub mod cli;
pub mod error;
pub mod fcalc;
pub mod halfplane;
pub mod hjphase;
pub mod models;
pub mod quantize;
pub mod series;
pub mod smooth;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;
