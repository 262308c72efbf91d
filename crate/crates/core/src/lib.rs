//! QM/MM coupling of a two-centre tight-binding model to Taylor-expanded
//! interatomic potentials, for point defects and anti-plane screw
//! dislocations in a two-dimensional triangular crystal.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod coupling;
pub mod dislocation;
pub mod error;
pub mod fit;
pub mod harness;
pub mod kinematics;
pub mod lattice;
pub mod properties;
pub mod solver;
pub mod site_potential;
pub mod tb;

pub use error::{Error, Result};
