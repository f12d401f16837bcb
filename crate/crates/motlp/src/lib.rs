//! Model-independent price bounds for multi-period derivatives via discrete
//! martingale optimal transport (MOT).
//!
//! The crate solves two- and three-period MOT problems as dense linear
//! programs, approximates three-period bounds to first order in a vanishing
//! pairwise interaction, prices a tree-like benchmark model, and extracts
//! risk-neutral marginals from option chains.
//!
//! All numeric kernels are generic over [`Scalar`]; the aliases below fix
//! the default `f64` instantiation used by the CLI.

pub mod io;
pub mod linalg;
pub mod lp;
pub mod market;
pub mod measure;
pub mod mot;
pub mod perturb;
pub mod scalar;
pub mod structure;
pub mod tree;

pub use lp::{LinearProgram, LpError, LpSolution, LpStatus, Sense};
pub use measure::{DiscreteMeasure, MeasureError};
pub use mot::{CostSpec, Coupling2, Coupling3, DualCertificate, MotError};
pub use scalar::{Rational, Scalar};

/// Default scalar used by the CLI and the concrete aliases.
pub type Real = f64;
/// Discrete measure over `f64` positions.
pub type Measure = DiscreteMeasure<Real>;
/// Two-axis coupling over `f64` grids.
pub type Plan2 = Coupling2<Real>;
/// Three-axis coupling over `f64` grids.
pub type Plan3 = Coupling3<Real>;
/// Linear program over `f64`.
pub type Lp = LinearProgram<Real>;

/// Central tolerance and behaviour knobs. Every tolerance in the crate
/// flows from one of these fields; `Default` pins the documented values.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Config {
    /// General-purpose comparison tolerance where nothing tighter is stated.
    pub tol: f64,
    /// Allowed deviation of measure weights from total mass one.
    pub weight_sum_tol: f64,
    /// Atom positions closer than this are merged at construction.
    pub merge_tol: f64,
    /// Simplex pivot magnitude threshold.
    pub pivot_tol: f64,
    /// Primal feasibility scale factor: residual <= feas_tol * (1 + |rhs|).
    pub feas_tol: f64,
    /// Relative primal/dual gap bound on optimal solves.
    pub gap_tol: f64,
    /// Sub-replication slack allowed when verifying dual certificates.
    pub certificate_tol: f64,
    /// Marginal projection residual allowed on couplings.
    pub marginal_tol: f64,
    /// Mass-weighted martingale residual allowed on couplings.
    pub martingale_tol: f64,
    /// Coordinate deviation that makes the uniqueness probe declare non-unique.
    pub probe_tol: f64,
    /// Masses below this are treated as absent by support-based checks.
    pub support_floor: f64,
    /// Conditional subproblems for atoms lighter than this are skipped
    /// (zero means never skip).
    pub mass_floor: f64,
    /// Total weight the chain repair LP may move.
    pub repair_budget: f64,
    /// Seed for randomized probes.
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            tol: 1e-9,
            weight_sum_tol: 1e-12,
            merge_tol: 1e-12,
            pivot_tol: 1e-11,
            feas_tol: 1e-8,
            gap_tol: 1e-7,
            certificate_tol: 1e-7,
            marginal_tol: 1e-9,
            martingale_tol: 1e-8,
            probe_tol: 1e-6,
            support_floor: 1e-10,
            mass_floor: 0.0,
            repair_budget: 0.1,
            seed: 0,
        }
    }
}

impl Config {
    /// Hybrid absolute+relative comparison tolerance at a given scale.
    pub fn hybrid(&self, scale: f64) -> f64 {
        1e-9 + 1e-7 * scale.abs()
    }
}
