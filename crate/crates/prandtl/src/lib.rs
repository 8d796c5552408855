//! Numerical laboratory for the parabolically regularized 2D Prandtl equations linearized
//! around a monotone shear flow, in vorticity form on a periodic strip.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod grid;
pub mod spaces;
pub mod shear;
pub mod compat;
pub mod solver;
pub mod transform;
pub mod experiments;
