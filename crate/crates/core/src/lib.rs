//! Gridless direction-of-arrival estimation for arbitrary planar arrays.
//!
//! The measurement is a covariance matrix `b = M mu + noise` where
//! `(M mu)_{kj} = sum_l c_l exp(i <theta_l, Delta_k - Delta_j>)`. The
//! estimator solves the dual of the TV-regularized problem as an SDP over
//! trigonometric approximations of the steering functions, reads the support
//! off the dual polynomial and refits amplitudes on that support.
//!
//! Besides the estimator the crate carries the geometric and certificate
//! machinery used to reason about recovery: coverings of the difference
//! set, quality parameters, filters and soft certificates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod herm;
pub mod measurement;
pub mod quadrature;
pub mod sdp;
pub mod special;
pub mod trig;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;

/// A point in the plane, `[x, y]`.
pub type Point = [f64; 2];
