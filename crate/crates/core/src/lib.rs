//! Numerical construction of the value function of the finite-state mean
//! field games planning problem with affine common noise.
//!
//! The planning solution is obtained as the limit of penalized problems
//! whose initial datum `(x − x₀)/ε` drives the population toward `x₀`.
//! The crate provides the time-marching solver for those problems, a
//! characteristics oracle for the noiseless case, Yosida regularization
//! of monotone fields, the limit extraction and its diagnostics, induced
//! trajectories, and the half-space variant with a vanishing drift.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod error;
pub mod grid;
pub mod halfspace;
pub mod io;
pub mod linalg;
pub mod model;
pub mod newton;
pub mod planning;
pub mod solver;
pub mod trajectories;
pub mod yosida;

pub use error::{Error, Result};
pub use grid::{FnField, FnTimeField, GridBox, GridField, SliceView, TimeField, VectorField};
pub use model::{
    check_couple_monotone, check_monotone_map, eval_field, AffineField, AffineNoiseMap, Dynamics,
    FieldSpec, LipschitzConstants, ModelSpec, MonotonicityReport, Registered,
};
pub use solver::{
    lipschitz_norm, penalized_initial, residual, solve_master, DiffStencil, GridSolution,
    SolverParams,
};
