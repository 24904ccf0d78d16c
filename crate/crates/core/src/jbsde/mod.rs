//! Backward solvers for the single-agent and auxiliary jump BSDEs.
//!
//! Both backends produce a discrete triple (Y, Z, U): Y on nodes, Z and U on
//! cells (left-endpoint, predictable), U indexed by mark atom. Solutions are
//! exposed to the rest of the pipeline through [`SolutionField`], which
//! evaluates Z and U at an arbitrary state so they can be applied along Monte
//! Carlo paths that were not part of the solve.

mod generator;
mod lattice;
mod lsmc;
mod regression;

pub use generator::{jump_convexity, GeneratorKind, GeneratorSpec};
pub use lattice::{solve_lattice, Branching, Lattice, LatticeNode, LatticePath, LatticeSolution};
pub use lsmc::{solve_lsmc, LsmcConfig, LsmcSolution, Measure};
pub use regression::{PolyBasis, RegressionFit};

use serde::Serialize;

/// Z and U as functions of (cell, W(t_i-), N(t_i-)).
pub trait SolutionField: Send + Sync {
    fn d(&self) -> usize;
    fn n_atoms(&self) -> usize;
    fn y0(&self) -> f64;
    fn z(&self, cell: usize, w: &[f64], counts: &[u32], out: &mut [f64]);
    fn u(&self, cell: usize, w: &[f64], counts: &[u32], out: &mut [f64]);
    /// Bound on |U| used for the tilted intensity bound.
    fn u_bound(&self) -> f64;
}

/// Solver diagnostics shared by both backends.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BsdeDiagnostics {
    /// max |Y_n - terminal|; zero by construction.
    pub terminal_mismatch: f64,
    /// sup over nodes of E[sum_{s >= t} |Z_s|^2 ds | state].
    pub bmo_energy: f64,
    pub max_abs_u: f64,
    /// max over states of sum_k p_k exp(alpha U_k) with p_k = rate_k dt. The explicit
    /// jump step is monotone in the continuation values only while this is at most one.
    pub jump_step_weight: f64,
    /// max - min of the terminal condition.
    pub terminal_oscillation: f64,
    pub ridge_fallbacks: usize,
    /// Per-cell root mean square residual of the conditional-mean regression.
    pub regression_rms: Vec<f64>,
    /// Number of lattice nodes visited (lattice only).
    pub nodes: usize,
}

/// Per-cell Y, Z, U along one path, convenient for CSV export and identity checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsdePathValues {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

/// A field with state-independent Z and U per cell; handy for tests and demos.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    pub d: usize,
    pub k: usize,
    pub y0: f64,
    /// `[cell][coordinate]`
    pub z: Vec<f64>,
    /// `[cell][atom]`
    pub u: Vec<f64>,
}

impl SolutionField for ConstantField {
    fn d(&self) -> usize {
        self.d
    }

    fn n_atoms(&self) -> usize {
        self.k
    }

    fn y0(&self) -> f64 {
        self.y0
    }

    fn z(&self, cell: usize, _w: &[f64], _counts: &[u32], out: &mut [f64]) {
        out.copy_from_slice(&self.z[cell * self.d..(cell + 1) * self.d]);
    }

    fn u(&self, cell: usize, _w: &[f64], _counts: &[u32], out: &mut [f64]) {
        out.copy_from_slice(&self.u[cell * self.k..(cell + 1) * self.k]);
    }

    fn u_bound(&self) -> f64 {
        self.u.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
