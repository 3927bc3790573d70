//! Output-feedback synthesis and certification for reaction-diffusion plants
//! with saturated in-domain inputs.
//!
//! The crate is `no_std` (with `alloc`). Everything is organised around a
//! modal reduction of the plant on the eigenbasis of a Sturm-Liouville
//! operator:
//!
//! * [`sturm_liouville`] computes the eigenbasis,
//! * [`spectral`] projects actuators and sensors onto it,
//! * [`controller`] builds the observer-based controller and the truncated
//!   closed loop,
//! * [`lmi`] assembles the matrix-inequality certificates and solves them with
//!   the interior-point engine in [`sdp`],
//! * [`attraction`] evaluates the resulting ellipsoidal attraction estimates,
//! * [`sim`] integrates the saturated closed loop.
#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod attraction;
pub mod controller;
mod error;
pub mod linalg;
pub mod lmi;
pub mod quadrature;
pub mod sdp;
pub mod sim;
pub mod spectral;
pub mod sturm_liouville;
mod tridiag;

pub use error::{Error, Result};
