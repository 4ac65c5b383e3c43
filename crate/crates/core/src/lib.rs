//! Curvature-based singularity outlines for radio maps, a constant-drift
//! decoupled diffusion sampler with analytic oracles, synthetic propagation
//! fields, evaluation metrics and fingerprint localization.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod ddm;
pub mod error;
pub mod grid;
pub mod helmholtz;
pub mod io;
pub mod localization;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    amplitude_from_power, field_map, BsConfig, Cell, ComplexField, EnvironmentMap, Grid, OutlineMask,
    ScalarField, UnitTag,
};
