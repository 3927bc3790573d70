//! Config-driven pipeline around `rdsat-core`: eigenbasis, projection,
//! gains, certificates, attraction shaping and simulation, with CSV and text
//! artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod config;
pub mod expr;
pub mod pipeline;
pub mod plot;
