//! Geometry-based optimal experimental design for stochastic inverse
//! problems.
//!
//! A design is a set of observed field values (sensor locations). Its
//! quality is measured by the local geometry of the Jacobian of the
//! parameter-to-QoI map: *scaling* (inverse cross-section volume) and
//! *skewness* (how far the rows are from orthogonal). Designs are ranked
//! by Monte Carlo expectations of the reciprocals of both, then checked by
//! data-consistent inversion.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod criteria;
pub mod dci;
pub mod design;
pub mod error;
pub mod geometry;
pub mod models;
pub mod sampling;

pub use error::{Error, Result};
