//! Discrete kinetic-theory laboratory for the Knudsen layer of the
//! linearized hard-sphere Boltzmann equation near the evaporation to
//! condensation transition.
//!
//! Pipeline: [`velocity`] grid, [`collision`] operators, [`spectral`]
//! constants, [`gep`] slow branch, [`penalty`] projections, [`halfspace`]
//! solvers and [`sone`] curve tracing. [`cli`] wires them into runs.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod collision;
pub mod gep;
pub mod halfspace;
pub mod linalg;
pub mod penalty;
pub mod quadrature;
pub mod sone;
pub mod spectral;
pub mod velocity;

use serde::{Deserialize, Serialize};

/// Tolerances shared by every stage of a run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tol_quad: f64,
    pub tol_op: f64,
    pub tol_kernel: f64,
    pub tol_gep: f64,
    pub tol_solve: f64,
    pub tol_fix: f64,
    pub tol_root: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_quad: 1e-7,
            tol_op: 1e-6,
            tol_kernel: 1e-5,
            tol_gep: 1e-6,
            tol_solve: 1e-10,
            tol_fix: 1e-8,
            tol_root: 1e-7,
        }
    }
}
