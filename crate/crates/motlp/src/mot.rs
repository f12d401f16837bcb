//! Martingale optimal transport on discrete marginals: couplings, cost
//! specifications, LP builders and solvers for the two-period, three-period,
//! fixed-barycenter and overlapping-marginals problems.
//!
//! All martingale constraints are imposed in mass-weighted form
//! `Σ_j m_ij (y_j − x_i) = 0`, which stays linear and tolerates zero-mass
//! cells.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LinearProgram, LpError, LpSolution, LpStatus, Sense};
use crate::measure::{convex_order_leq, DiscreteMeasure, MeasureError};
use crate::scalar::Scalar;
use crate::Config;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotError {
    #[error("marginals are not in convex order: {context}")]
    ConvexOrderViolation { context: String },
    #[error("marginal mismatch: {context}")]
    MarginalMismatch { context: String },
    #[error("coupling is not a martingale: {context}")]
    NotMartingale { context: String },
    #[error("problem is infeasible: {context}")]
    Infeasible { context: String },
    #[error("conditional measures at x = {x} are not in convex order")]
    ConditionalConvexOrder { x: f64 },
    #[error("atom {atom} lies outside the support interval [{lo}, {hi}]")]
    SupportViolation { atom: f64, lo: f64, hi: f64 },
    #[error("barycenter {ybar} does not lie strictly inside ({lo}, {hi})")]
    DegenerateBracket { ybar: f64, lo: f64, hi: f64 },
    #[error("conditional at x = {x} has {count} support atoms, expected two")]
    NotTwoPoint { x: f64, count: usize },
    #[error("invalid input: {context}")]
    Invalid { context: String },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Serializable witness for a failed coupling check.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub check: String,
    pub location: String,
    pub magnitude: f64,
}

// ---------------------------------------------------------------------------
// Couplings
// ---------------------------------------------------------------------------

/// Sparse joint mass over two atom grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling2<S> {
    x_atoms: Vec<S>,
    y_atoms: Vec<S>,
    mass: BTreeMap<(usize, usize), S>,
}

impl<S: Scalar> Coupling2<S> {
    pub fn from_entries(
        x_atoms: Vec<S>,
        y_atoms: Vec<S>,
        entries: impl IntoIterator<Item = ((usize, usize), S)>,
    ) -> Result<Self, MotError> {
        check_grid(&x_atoms, "x")?;
        check_grid(&y_atoms, "y")?;
        let mut mass = BTreeMap::new();
        for ((i, j), v) in entries {
            if i >= x_atoms.len() || j >= y_atoms.len() {
                return Err(MotError::Invalid {
                    context: format!("mass index ({i}, {j}) outside the grids"),
                });
            }
            if v < S::zero() {
                return Err(MotError::Invalid {
                    context: format!("negative mass {} at ({i}, {j})", v.to_f64()),
                });
            }
            if !v.is_zero() {
                let slot = mass.entry((i, j)).or_insert_with(S::zero);
                *slot = slot.clone() + v;
            }
        }
        Ok(Coupling2 {
            x_atoms,
            y_atoms,
            mass,
        })
    }

    /// Builds grids from the positions occurring in `(x, y, mass)` triples.
    /// Positions must repeat exactly (as parsed values) to land on the same
    /// grid point.
    pub fn from_position_entries(triples: Vec<(S, S, S)>) -> Result<Self, MotError> {
        let mut xs: Vec<S> = triples.iter().map(|(x, _, _)| x.clone()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite position"));
        xs.dedup();
        let mut ys: Vec<S> = triples.iter().map(|(_, y, _)| y.clone()).collect();
        ys.sort_by(|a, b| a.partial_cmp(b).expect("finite position"));
        ys.dedup();
        let entries = triples
            .into_iter()
            .map(|(x, y, v)| {
                let i = xs.iter().position(|a| *a == x).expect("member");
                let j = ys.iter().position(|a| *a == y).expect("member");
                ((i, j), v)
            })
            .collect::<Vec<_>>();
        Coupling2::from_entries(xs, ys, entries)
    }

    pub fn x_atoms(&self) -> &[S] {
        &self.x_atoms
    }

    pub fn y_atoms(&self) -> &[S] {
        &self.y_atoms
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &S)> {
        self.mass.iter()
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.mass.get(&(i, j)).cloned().unwrap_or_else(S::zero)
    }

    pub fn total_mass(&self) -> S {
        self.mass.values().fold(S::zero(), |a, v| a + v.clone())
    }

    pub fn row_masses(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.x_atoms.len()];
        for (&(i, _), v) in &self.mass {
            out[i] = out[i].clone() + v.clone();
        }
        out
    }

    pub fn col_masses(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.y_atoms.len()];
        for (&(_, j), v) in &self.mass {
            out[j] = out[j].clone() + v.clone();
        }
        out
    }

    /// Mass-weighted martingale residual per x-atom:
    /// `Σ_j m_ij (y_j − x_i)`.
    pub fn martingale_residuals(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.x_atoms.len()];
        for (&(i, j), v) in &self.mass {
            out[i] = out[i].clone()
                + v.clone() * (self.y_atoms[j].clone() - self.x_atoms[i].clone());
        }
        out
    }

    pub fn is_martingale(&self, cfg: &Config) -> bool {
        self.martingale_residuals()
            .iter()
            .zip(&self.x_atoms)
            .all(|(r, x)| r.abs().to_f64() <= cfg.martingale_tol * (1.0 + x.to_f64().abs()))
    }

    pub fn value(&self, cost: impl Fn(&S, &S) -> S) -> S {
        self.mass.iter().fold(S::zero(), |acc, (&(i, j), v)| {
            acc + v.clone() * cost(&self.x_atoms[i], &self.y_atoms[j])
        })
    }

    /// Support pairs with mass above `floor`.
    pub fn support(&self, floor: f64) -> Vec<(S, S)> {
        self.mass
            .iter()
            .filter(|(_, v)| v.to_f64() > floor)
            .map(|(&(i, j), _)| (self.x_atoms[i].clone(), self.y_atoms[j].clone()))
            .collect()
    }

    /// Conditional distributions of the second axis given the first, at
    /// every first-axis atom with positive mass.
    pub fn disintegrate_first(&self, cfg: &Config) -> Vec<Slice<S, DiscreteMeasure<S>>> {
        let rows = self.row_masses();
        let mut slices = Vec::new();
        for (i, w) in rows.iter().enumerate() {
            if *w <= S::zero() {
                continue;
            }
            let pairs: Vec<(S, S)> = self
                .mass
                .range((i, 0)..=(i, usize::MAX))
                .map(|(&(_, j), v)| (self.y_atoms[j].clone(), v.clone()))
                .collect();
            let kernel = DiscreteMeasure::normalized(pairs, cfg).expect("positive slice mass");
            slices.push(Slice {
                index: i,
                position: self.x_atoms[i].clone(),
                weight: w.clone(),
                kernel,
            });
        }
        slices
    }

    /// Conditional distributions of the first axis given the second.
    pub fn disintegrate_second(&self, cfg: &Config) -> Vec<Slice<S, DiscreteMeasure<S>>> {
        let cols = self.col_masses();
        let mut per_col: Vec<Vec<(S, S)>> = vec![Vec::new(); self.y_atoms.len()];
        for (&(i, j), v) in &self.mass {
            per_col[j].push((self.x_atoms[i].clone(), v.clone()));
        }
        let mut slices = Vec::new();
        for (j, w) in cols.iter().enumerate() {
            if *w <= S::zero() {
                continue;
            }
            let kernel = DiscreteMeasure::normalized(per_col[j].clone(), cfg)
                .expect("positive slice mass");
            slices.push(Slice {
                index: j,
                position: self.y_atoms[j].clone(),
                weight: w.clone(),
                kernel,
            });
        }
        slices
    }

    /// Largest absolute mass difference against another coupling on the
    /// same grids.
    pub fn max_mass_diff(&self, other: &Coupling2<S>) -> Result<f64, MotError> {
        if self.x_atoms != other.x_atoms || self.y_atoms != other.y_atoms {
            return Err(MotError::MarginalMismatch {
                context: "couplings live on different grids".into(),
            });
        }
        let mut keys: Vec<(usize, usize)> = self.mass.keys().cloned().collect();
        keys.extend(other.mass.keys().cloned());
        keys.sort_unstable();
        keys.dedup();
        Ok(keys
            .into_iter()
            .map(|(i, j)| (self.get(i, j) - other.get(i, j)).abs().to_f64())
            .fold(0.0, f64::max))
    }

    /// Runs the full invariant suite against expected marginals.
    pub fn check_invariants(
        &self,
        mx: &DiscreteMeasure<S>,
        my: &DiscreteMeasure<S>,
        martingale: bool,
        cfg: &Config,
    ) -> Vec<Violation> {
        let mut out = Vec::new();
        check_axis(&self.x_atoms, &self.row_masses(), mx, "x", cfg, &mut out);
        check_axis(&self.y_atoms, &self.col_masses(), my, "y", cfg, &mut out);
        if martingale {
            for (i, r) in self.martingale_residuals().iter().enumerate() {
                let scale = 1.0 + self.x_atoms[i].to_f64().abs();
                if r.abs().to_f64() > cfg.martingale_tol * scale {
                    out.push(Violation {
                        check: "martingale".into(),
                        location: format!("x[{i}]"),
                        magnitude: r.to_f64(),
                    });
                }
            }
        }
        out
    }
}

/// Sparse joint mass over three atom grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling3<S> {
    x_atoms: Vec<S>,
    y_atoms: Vec<S>,
    z_atoms: Vec<S>,
    mass: BTreeMap<(usize, usize, usize), S>,
}

impl<S: Scalar> Coupling3<S> {
    pub fn from_entries(
        x_atoms: Vec<S>,
        y_atoms: Vec<S>,
        z_atoms: Vec<S>,
        entries: impl IntoIterator<Item = ((usize, usize, usize), S)>,
    ) -> Result<Self, MotError> {
        check_grid(&x_atoms, "x")?;
        check_grid(&y_atoms, "y")?;
        check_grid(&z_atoms, "z")?;
        let mut mass = BTreeMap::new();
        for ((i, j, k), v) in entries {
            if i >= x_atoms.len() || j >= y_atoms.len() || k >= z_atoms.len() {
                return Err(MotError::Invalid {
                    context: format!("mass index ({i}, {j}, {k}) outside the grids"),
                });
            }
            if v < S::zero() {
                return Err(MotError::Invalid {
                    context: format!("negative mass {} at ({i}, {j}, {k})", v.to_f64()),
                });
            }
            if !v.is_zero() {
                let slot = mass.entry((i, j, k)).or_insert_with(S::zero);
                *slot = slot.clone() + v;
            }
        }
        Ok(Coupling3 {
            x_atoms,
            y_atoms,
            z_atoms,
            mass,
        })
    }

    /// Grid-building constructor from `(x, y, z, mass)` quadruples; see
    /// [`Coupling2::from_position_entries`].
    pub fn from_position_entries(quads: Vec<(S, S, S, S)>) -> Result<Self, MotError> {
        let mut xs: Vec<S> = quads.iter().map(|(x, _, _, _)| x.clone()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite position"));
        xs.dedup();
        let mut ys: Vec<S> = quads.iter().map(|(_, y, _, _)| y.clone()).collect();
        ys.sort_by(|a, b| a.partial_cmp(b).expect("finite position"));
        ys.dedup();
        let mut zs: Vec<S> = quads.iter().map(|(_, _, z, _)| z.clone()).collect();
        zs.sort_by(|a, b| a.partial_cmp(b).expect("finite position"));
        zs.dedup();
        let entries = quads
            .into_iter()
            .map(|(x, y, z, v)| {
                let i = xs.iter().position(|a| *a == x).expect("member");
                let j = ys.iter().position(|a| *a == y).expect("member");
                let k = zs.iter().position(|a| *a == z).expect("member");
                ((i, j, k), v)
            })
            .collect::<Vec<_>>();
        Coupling3::from_entries(xs, ys, zs, entries)
    }

    pub fn x_atoms(&self) -> &[S] {
        &self.x_atoms
    }

    pub fn y_atoms(&self) -> &[S] {
        &self.y_atoms
    }

    pub fn z_atoms(&self) -> &[S] {
        &self.z_atoms
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize, usize), &S)> {
        self.mass.iter()
    }

    pub fn total_mass(&self) -> S {
        self.mass.values().fold(S::zero(), |a, v| a + v.clone())
    }

    pub fn value(&self, cost: impl Fn(&S, &S, &S) -> S) -> S {
        self.mass.iter().fold(S::zero(), |acc, (&(i, j, k), v)| {
            acc + v.clone()
                * cost(&self.x_atoms[i], &self.y_atoms[j], &self.z_atoms[k])
        })
    }

    pub fn project_xy(&self) -> Coupling2<S> {
        let mut mass: BTreeMap<(usize, usize), S> = BTreeMap::new();
        for (&(i, j, _), v) in &self.mass {
            let slot = mass.entry((i, j)).or_insert_with(S::zero);
            *slot = slot.clone() + v.clone();
        }
        Coupling2 {
            x_atoms: self.x_atoms.clone(),
            y_atoms: self.y_atoms.clone(),
            mass,
        }
    }

    pub fn project_yz(&self) -> Coupling2<S> {
        let mut mass: BTreeMap<(usize, usize), S> = BTreeMap::new();
        for (&(_, j, k), v) in &self.mass {
            let slot = mass.entry((j, k)).or_insert_with(S::zero);
            *slot = slot.clone() + v.clone();
        }
        Coupling2 {
            x_atoms: self.y_atoms.clone(),
            y_atoms: self.z_atoms.clone(),
            mass,
        }
    }

    pub fn project_xz(&self) -> Coupling2<S> {
        let mut mass: BTreeMap<(usize, usize), S> = BTreeMap::new();
        for (&(i, _, k), v) in &self.mass {
            let slot = mass.entry((i, k)).or_insert_with(S::zero);
            *slot = slot.clone() + v.clone();
        }
        Coupling2 {
            x_atoms: self.x_atoms.clone(),
            y_atoms: self.z_atoms.clone(),
            mass,
        }
    }

    pub fn axis_masses(&self, axis: usize) -> Vec<S> {
        let len = match axis {
            0 => self.x_atoms.len(),
            1 => self.y_atoms.len(),
            _ => self.z_atoms.len(),
        };
        let mut out = vec![S::zero(); len];
        for (&(i, j, k), v) in &self.mass {
            let idx = match axis {
                0 => i,
                1 => j,
                _ => k,
            };
            out[idx] = out[idx].clone() + v.clone();
        }
        out
    }

    /// First-step residuals `Σ_{j,k} m_ijk (y_j − x_i)` per x-atom.
    pub fn martingale_residuals_step1(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.x_atoms.len()];
        for (&(i, j, _), v) in &self.mass {
            out[i] = out[i].clone()
                + v.clone() * (self.y_atoms[j].clone() - self.x_atoms[i].clone());
        }
        out
    }

    /// Second-step residuals `Σ_k m_ijk (z_k − y_j)` per (x, y) pair,
    /// returned with the pair indices.
    pub fn martingale_residuals_step2(&self) -> Vec<((usize, usize), S)> {
        let mut map: BTreeMap<(usize, usize), S> = BTreeMap::new();
        for (&(i, j, k), v) in &self.mass {
            let slot = map.entry((i, j)).or_insert_with(S::zero);
            *slot = slot.clone()
                + v.clone() * (self.z_atoms[k].clone() - self.y_atoms[j].clone());
        }
        map.into_iter().collect()
    }

    pub fn support(&self, floor: f64) -> Vec<(S, S, S)> {
        self.mass
            .iter()
            .filter(|(_, v)| v.to_f64() > floor)
            .map(|(&(i, j, k), _)| {
                (
                    self.x_atoms[i].clone(),
                    self.y_atoms[j].clone(),
                    self.z_atoms[k].clone(),
                )
            })
            .collect()
    }

    /// Conditional (x, z) couplings given the middle coordinate, one per
    /// y-atom carrying positive mass. Kernels live on their support
    /// sub-grids and are normalized to unit mass.
    pub fn disintegrate_middle(&self, _cfg: &Config) -> Vec<Slice<S, Coupling2<S>>> {
        let weights = self.axis_masses(1);
        let mut per_y: Vec<Vec<((usize, usize), S)>> = vec![Vec::new(); self.y_atoms.len()];
        for (&(i, j, k), v) in &self.mass {
            per_y[j].push(((i, k), v.clone()));
        }
        let mut out = Vec::new();
        for (j, w) in weights.iter().enumerate() {
            if *w <= S::zero() {
                continue;
            }
            let mut xs: Vec<usize> = per_y[j].iter().map(|((i, _), _)| *i).collect();
            xs.sort_unstable();
            xs.dedup();
            let mut zs: Vec<usize> = per_y[j].iter().map(|((_, k), _)| *k).collect();
            zs.sort_unstable();
            zs.dedup();
            let x_atoms: Vec<S> = xs.iter().map(|&i| self.x_atoms[i].clone()).collect();
            let z_atoms: Vec<S> = zs.iter().map(|&k| self.z_atoms[k].clone()).collect();
            let entries = per_y[j].iter().map(|((i, k), v)| {
                let si = xs.binary_search(i).expect("index present");
                let sk = zs.binary_search(k).expect("index present");
                ((si, sk), v.clone() / w.clone())
            });
            let kernel =
                Coupling2::from_entries(x_atoms, z_atoms, entries).expect("valid sub-grid");
            out.push(Slice {
                index: j,
                position: self.y_atoms[j].clone(),
                weight: w.clone(),
                kernel,
            });
        }
        out
    }

    pub fn check_invariants(
        &self,
        mx: &DiscreteMeasure<S>,
        my: &DiscreteMeasure<S>,
        mz: &DiscreteMeasure<S>,
        cfg: &Config,
    ) -> Vec<Violation> {
        let mut out = Vec::new();
        check_axis(&self.x_atoms, &self.axis_masses(0), mx, "x", cfg, &mut out);
        check_axis(&self.y_atoms, &self.axis_masses(1), my, "y", cfg, &mut out);
        check_axis(&self.z_atoms, &self.axis_masses(2), mz, "z", cfg, &mut out);
        for (i, r) in self.martingale_residuals_step1().iter().enumerate() {
            let scale = 1.0 + self.x_atoms[i].to_f64().abs();
            if r.abs().to_f64() > cfg.martingale_tol * scale {
                out.push(Violation {
                    check: "martingale step 1".into(),
                    location: format!("x[{i}]"),
                    magnitude: r.to_f64(),
                });
            }
        }
        for ((i, j), r) in self.martingale_residuals_step2() {
            let scale = 1.0 + self.y_atoms[j].to_f64().abs();
            if r.abs().to_f64() > cfg.martingale_tol * scale {
                out.push(Violation {
                    check: "martingale step 2".into(),
                    location: format!("(x[{i}], y[{j}])"),
                    magnitude: r.to_f64(),
                });
            }
        }
        out
    }
}

/// One conditional slice of a disintegration.
#[derive(Debug, Clone)]
pub struct Slice<S, K> {
    pub index: usize,
    pub position: S,
    pub weight: S,
    pub kernel: K,
}

fn check_grid<S: Scalar>(atoms: &[S], axis: &str) -> Result<(), MotError> {
    if atoms.is_empty() {
        return Err(MotError::Invalid {
            context: format!("{axis} grid is empty"),
        });
    }
    if atoms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MotError::Invalid {
            context: format!("{axis} grid is not strictly increasing"),
        });
    }
    Ok(())
}

fn check_axis<S: Scalar>(
    atoms: &[S],
    masses: &[S],
    expected: &DiscreteMeasure<S>,
    axis: &str,
    cfg: &Config,
    out: &mut Vec<Violation>,
) {
    if atoms.len() != expected.len()
        || atoms
            .iter()
            .zip(expected.atoms())
            .any(|(a, b)| (a.clone() - b.clone()).abs().to_f64() > cfg.merge_tol)
    {
        out.push(Violation {
            check: "grid".into(),
            location: format!("{axis} axis"),
            magnitude: f64::NAN,
        });
        return;
    }
    for (i, (m, w)) in masses.iter().zip(expected.weights()).enumerate() {
        let diff = (m.clone() - w.clone()).abs().to_f64();
        if diff > cfg.marginal_tol {
            out.push(Violation {
                check: "marginal".into(),
                location: format!("{axis}[{i}]"),
                magnitude: diff,
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Cost specification
// ---------------------------------------------------------------------------

pub type PairCost<S> = Arc<dyn Fn(&S, &S) -> S + Send + Sync>;

/// Pairwise cost triple `c(x, y, z) = c1(x, y) + c2(y, z) + ε c3(x, z)`.
#[derive(Clone)]
pub struct CostSpec<S> {
    pub c1: PairCost<S>,
    pub c2: PairCost<S>,
    pub c3: PairCost<S>,
    pub epsilon: S,
}

impl<S: Scalar> CostSpec<S> {
    pub fn new(
        c1: impl Fn(&S, &S) -> S + Send + Sync + 'static,
        c2: impl Fn(&S, &S) -> S + Send + Sync + 'static,
        c3: impl Fn(&S, &S) -> S + Send + Sync + 'static,
        epsilon: S,
    ) -> Self {
        CostSpec {
            c1: Arc::new(c1),
            c2: Arc::new(c2),
            c3: Arc::new(c3),
            epsilon,
        }
    }

    pub fn with_epsilon(&self, epsilon: S) -> Self {
        CostSpec {
            c1: self.c1.clone(),
            c2: self.c2.clone(),
            c3: self.c3.clone(),
            epsilon,
        }
    }

    pub fn total(&self, x: &S, y: &S, z: &S) -> S {
        self.total_with_eps(x, y, z, &self.epsilon)
    }

    pub fn total_with_eps(&self, x: &S, y: &S, z: &S, eps: &S) -> S {
        (self.c1)(x, y) + (self.c2)(y, z) + eps.clone() * (self.c3)(x, z)
    }

    /// Cross terms of the third moment of `x + y + z`:
    /// `c1 = 9 x y²`, `c2 = 3 y z²`, `c3 = 3 x z²`.
    pub fn third_moment_cross(epsilon: S) -> Self {
        CostSpec::new(
            |x: &S, y: &S| S::from_f64(9.0) * x.clone() * y.clone() * y.clone(),
            |y: &S, z: &S| S::from_f64(3.0) * y.clone() * z.clone() * z.clone(),
            |x: &S, z: &S| S::from_f64(3.0) * x.clone() * z.clone() * z.clone(),
            epsilon,
        )
    }

    /// Basket of forward-start straddles over all period pairs:
    /// `c1 = |y − x|`, `c2 = |z − y|`, `c3 = |z − x|`.
    pub fn straddle_basket(epsilon: S) -> Self {
        CostSpec::new(
            |x: &S, y: &S| (y.clone() - x.clone()).abs(),
            |y: &S, z: &S| (z.clone() - y.clone()).abs(),
            |x: &S, z: &S| (z.clone() - x.clone()).abs(),
            epsilon,
        )
    }
}

impl<S: std::fmt::Debug> std::fmt::Debug for CostSpec<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostSpec")
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

// ---------------------------------------------------------------------------
// Dual certificates
// ---------------------------------------------------------------------------

/// Semi-static sub-replication certificate: static payoffs `u, v, w` on the
/// three grids plus dynamic positions `g` (per x-atom) and `h` (per (x, y)
/// pair, row-major). For two-period problems `w` and `h` are empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualCertificate<S> {
    pub u: Vec<S>,
    pub v: Vec<S>,
    pub w: Vec<S>,
    pub g: Vec<S>,
    pub h: Vec<S>,
}

impl<S: Scalar> DualCertificate<S> {
    fn from_duals2(duals: &[S], nx: usize, ny: usize) -> Self {
        assert_eq!(duals.len(), nx + ny + nx);
        DualCertificate {
            u: duals[..nx].to_vec(),
            v: duals[nx..nx + ny].to_vec(),
            w: Vec::new(),
            g: duals[nx + ny..].to_vec(),
            h: Vec::new(),
        }
    }

    fn from_duals3(duals: &[S], nx: usize, ny: usize, nz: usize) -> Self {
        assert_eq!(duals.len(), nx + ny + nz + nx + nx * ny);
        let o1 = nx;
        let o2 = o1 + ny;
        let o3 = o2 + nz;
        let o4 = o3 + nx;
        DualCertificate {
            u: duals[..o1].to_vec(),
            v: duals[o1..o2].to_vec(),
            w: duals[o2..o3].to_vec(),
            g: duals[o3..o4].to_vec(),
            h: duals[o4..].to_vec(),
        }
    }

    /// Largest violation of the sub-replication inequality
    /// `u(x) + v(y) + g(x)(y − x) ≤ c(x, y)` over the full grid
    /// (direction flipped for maximization).
    pub fn max_violation2(
        &self,
        x_atoms: &[S],
        y_atoms: &[S],
        cost: impl Fn(&S, &S) -> S,
        sense: Sense,
    ) -> f64 {
        let mut worst = 0.0f64;
        for (i, x) in x_atoms.iter().enumerate() {
            for (j, y) in y_atoms.iter().enumerate() {
                let lhs = self.u[i].clone()
                    + self.v[j].clone()
                    + self.g[i].clone() * (y.clone() - x.clone());
                let slack = match sense {
                    Sense::Minimize => lhs - cost(x, y),
                    Sense::Maximize => cost(x, y) - lhs,
                };
                worst = worst.max(slack.to_f64());
            }
        }
        worst
    }

    /// Largest violation of
    /// `u(x) + v(y) + w(z) + g(x)(y − x) + h(x, y)(z − y) ≤ c(x, y, z)`
    /// over the full grid (direction flipped for maximization).
    pub fn max_violation3(
        &self,
        x_atoms: &[S],
        y_atoms: &[S],
        z_atoms: &[S],
        cost: impl Fn(&S, &S, &S) -> S,
        sense: Sense,
    ) -> f64 {
        let ny = y_atoms.len();
        let mut worst = 0.0f64;
        for (i, x) in x_atoms.iter().enumerate() {
            for (j, y) in y_atoms.iter().enumerate() {
                let uvg = self.u[i].clone()
                    + self.v[j].clone()
                    + self.g[i].clone() * (y.clone() - x.clone());
                let h = self.h[i * ny + j].clone();
                for (k, z) in z_atoms.iter().enumerate() {
                    let lhs = uvg.clone()
                        + self.w[k].clone()
                        + h.clone() * (z.clone() - y.clone());
                    let slack = match sense {
                        Sense::Minimize => lhs - cost(x, y, z),
                        Sense::Maximize => cost(x, y, z) - lhs,
                    };
                    worst = worst.max(slack.to_f64());
                }
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// LP builders
// ---------------------------------------------------------------------------

/// Variable layout of the two-period MOT program: rows are
/// `[x-marginals | y-marginals | martingale per x]`.
#[derive(Debug, Clone, Copy)]
pub struct Mot2Layout {
    pub nx: usize,
    pub ny: usize,
}

impl Mot2Layout {
    #[inline]
    pub fn var(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn num_vars(&self) -> usize {
        self.nx * self.ny
    }
}

pub fn mot2_lp<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    cost: impl Fn(&S, &S) -> S,
    sense: Sense,
) -> (LinearProgram<S>, Mot2Layout) {
    let layout = Mot2Layout {
        nx: mx.len(),
        ny: my.len(),
    };
    let n = layout.num_vars();
    let mut objective = vec![S::zero(); n];
    for (i, x) in mx.atoms().iter().enumerate() {
        for (j, y) in my.atoms().iter().enumerate() {
            objective[layout.var(i, j)] = cost(x, y);
        }
    }
    let mut rows = Vec::with_capacity(layout.nx + layout.ny + layout.nx);
    let mut rhs = Vec::with_capacity(rows.capacity());
    for i in 0..layout.nx {
        let mut r = vec![S::zero(); n];
        for j in 0..layout.ny {
            r[layout.var(i, j)] = S::one();
        }
        rows.push(r);
        rhs.push(mx.weights()[i].clone());
    }
    for j in 0..layout.ny {
        let mut r = vec![S::zero(); n];
        for i in 0..layout.nx {
            r[layout.var(i, j)] = S::one();
        }
        rows.push(r);
        rhs.push(my.weights()[j].clone());
    }
    for (i, x) in mx.atoms().iter().enumerate() {
        let mut r = vec![S::zero(); n];
        for (j, y) in my.atoms().iter().enumerate() {
            r[layout.var(i, j)] = y.clone() - x.clone();
        }
        rows.push(r);
        rhs.push(S::zero());
    }
    let lp = LinearProgram::new(objective, rows, rhs, sense).expect("consistent by construction");
    (lp, layout)
}

/// Variable layout of the three-period MOT program: rows are
/// `[x | y | z marginals | martingale step 1 per x | step 2 per (x, y)]`.
#[derive(Debug, Clone, Copy)]
pub struct Mot3Layout {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Mot3Layout {
    #[inline]
    pub fn var(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ny + j) * self.nz + k
    }

    pub fn num_vars(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}

pub fn mot3_lp<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: impl Fn(&S, &S, &S) -> S,
    sense: Sense,
) -> (LinearProgram<S>, Mot3Layout) {
    let layout = Mot3Layout {
        nx: mx.len(),
        ny: my.len(),
        nz: mz.len(),
    };
    let n = layout.num_vars();
    let mut objective = vec![S::zero(); n];
    for (i, x) in mx.atoms().iter().enumerate() {
        for (j, y) in my.atoms().iter().enumerate() {
            for (k, z) in mz.atoms().iter().enumerate() {
                objective[layout.var(i, j, k)] = cost(x, y, z);
            }
        }
    }
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..layout.nx {
        let mut r = vec![S::zero(); n];
        for j in 0..layout.ny {
            for k in 0..layout.nz {
                r[layout.var(i, j, k)] = S::one();
            }
        }
        rows.push(r);
        rhs.push(mx.weights()[i].clone());
    }
    for j in 0..layout.ny {
        let mut r = vec![S::zero(); n];
        for i in 0..layout.nx {
            for k in 0..layout.nz {
                r[layout.var(i, j, k)] = S::one();
            }
        }
        rows.push(r);
        rhs.push(my.weights()[j].clone());
    }
    for k in 0..layout.nz {
        let mut r = vec![S::zero(); n];
        for i in 0..layout.nx {
            for j in 0..layout.ny {
                r[layout.var(i, j, k)] = S::one();
            }
        }
        rows.push(r);
        rhs.push(mz.weights()[k].clone());
    }
    for (i, x) in mx.atoms().iter().enumerate() {
        let mut r = vec![S::zero(); n];
        for (j, y) in my.atoms().iter().enumerate() {
            for k in 0..layout.nz {
                r[layout.var(i, j, k)] = y.clone() - x.clone();
            }
        }
        rows.push(r);
        rhs.push(S::zero());
    }
    for i in 0..layout.nx {
        for (j, y) in my.atoms().iter().enumerate() {
            let mut r = vec![S::zero(); n];
            for (k, z) in mz.atoms().iter().enumerate() {
                r[layout.var(i, j, k)] = z.clone() - y.clone();
            }
            rows.push(r);
            rhs.push(S::zero());
        }
    }
    let lp = LinearProgram::new(objective, rows, rhs, sense).expect("consistent by construction");
    (lp, layout)
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Mot2Solution<S> {
    pub value: S,
    pub coupling: Coupling2<S>,
    pub certificate: DualCertificate<S>,
    pub lp: LinearProgram<S>,
    pub lp_solution: LpSolution<S>,
}

/// Two-period martingale optimal transport between `mx ⪯_c my`.
pub fn solve_mot2<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    cost: impl Fn(&S, &S) -> S,
    sense: Sense,
    cfg: &Config,
) -> Result<Mot2Solution<S>, MotError> {
    let tol = S::from_f64(cfg.tol);
    if !convex_order_leq(mx, my, &tol) {
        return Err(MotError::ConvexOrderViolation {
            context: "first marginal is not dominated by the second".into(),
        });
    }
    let (lp, layout) = mot2_lp(mx, my, &cost, sense);
    let sol = lp::solve(&lp, cfg)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(MotError::Infeasible {
                context: "two-period program reported infeasible despite convex order".into(),
            })
        }
        LpStatus::Unbounded => {
            return Err(MotError::Invalid {
                context: "two-period program unbounded; cost must be finite on the grid".into(),
            })
        }
    }
    let coupling = coupling2_from_primal(mx, my, &layout, &sol.primal)?;
    let certificate = DualCertificate::from_duals2(&sol.duals, layout.nx, layout.ny);
    Ok(Mot2Solution {
        value: sol.value.clone(),
        coupling,
        certificate,
        lp,
        lp_solution: sol,
    })
}

fn coupling2_from_primal<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    layout: &Mot2Layout,
    primal: &[S],
) -> Result<Coupling2<S>, MotError> {
    let mut entries = Vec::new();
    for i in 0..layout.nx {
        for j in 0..layout.ny {
            let v = primal[layout.var(i, j)].clone();
            if v > S::zero() {
                entries.push(((i, j), v));
            }
        }
    }
    Coupling2::from_entries(mx.atoms().to_vec(), my.atoms().to_vec(), entries)
}

#[derive(Debug, Clone)]
pub struct Mot3Solution<S> {
    pub value: S,
    pub coupling: Coupling3<S>,
    pub certificate: DualCertificate<S>,
    pub lp: LinearProgram<S>,
    pub lp_solution: LpSolution<S>,
}

/// Full three-period martingale optimal transport for a pairwise cost.
pub fn solve_mot3<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    sense: Sense,
    cfg: &Config,
) -> Result<Mot3Solution<S>, MotError> {
    let tol = S::from_f64(cfg.tol);
    if !convex_order_leq(mx, my, &tol) {
        return Err(MotError::ConvexOrderViolation {
            context: "mx is not dominated by my".into(),
        });
    }
    if !convex_order_leq(my, mz, &tol) {
        return Err(MotError::ConvexOrderViolation {
            context: "my is not dominated by mz".into(),
        });
    }
    let (lp, layout) = mot3_lp(mx, my, mz, |x, y, z| cost.total(x, y, z), sense);
    let sol = lp::solve(&lp, cfg)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(MotError::Infeasible {
                context: "three-period program reported infeasible despite convex order".into(),
            })
        }
        LpStatus::Unbounded => {
            return Err(MotError::Invalid {
                context: "three-period program unbounded".into(),
            })
        }
    }
    let coupling = coupling3_from_primal(mx, my, mz, &layout, &sol.primal)?;
    let certificate = DualCertificate::from_duals3(&sol.duals, layout.nx, layout.ny, layout.nz);
    Ok(Mot3Solution {
        value: sol.value.clone(),
        coupling,
        certificate,
        lp,
        lp_solution: sol,
    })
}

fn coupling3_from_primal<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    layout: &Mot3Layout,
    primal: &[S],
) -> Result<Coupling3<S>, MotError> {
    let mut entries = Vec::new();
    for i in 0..layout.nx {
        for j in 0..layout.ny {
            for k in 0..layout.nz {
                let v = primal[layout.var(i, j, k)].clone();
                if v > S::zero() {
                    entries.push(((i, j, k), v));
                }
            }
        }
    }
    Coupling3::from_entries(
        mx.atoms().to_vec(),
        my.atoms().to_vec(),
        mz.atoms().to_vec(),
        entries,
    )
}

#[derive(Debug, Clone)]
pub struct FixedBarycenterSolution<S> {
    pub value: S,
    pub coupling: Coupling2<S>,
    pub lp: LinearProgram<S>,
    pub lp_solution: LpSolution<S>,
}

/// Transport between `sx` and `sz` where every conditional of `z` given `x`
/// has the prescribed constant mean `ybar`.
pub fn solve_fixed_barycenter<S: Scalar>(
    sx: &DiscreteMeasure<S>,
    sz: &DiscreteMeasure<S>,
    ybar: &S,
    cost3: impl Fn(&S, &S) -> S,
    sense: Sense,
    cfg: &Config,
) -> Result<FixedBarycenterSolution<S>, MotError> {
    solve_fixed_barycenter_with_tol(sx, sz, ybar, cost3, sense, cfg, cfg.tol)
}

/// Same with an explicit mean tolerance; conditional marginals extracted
/// from a parent coupling carry error amplified by the inverse slice weight.
pub fn solve_fixed_barycenter_with_tol<S: Scalar>(
    sx: &DiscreteMeasure<S>,
    sz: &DiscreteMeasure<S>,
    ybar: &S,
    cost3: impl Fn(&S, &S) -> S,
    sense: Sense,
    cfg: &Config,
    mean_tol: f64,
) -> Result<FixedBarycenterSolution<S>, MotError> {
    if ybar < sz.min_atom() || ybar > sz.max_atom() {
        return Err(MotError::Infeasible {
            context: format!(
                "barycenter {} outside the z support [{}, {}]",
                ybar.to_f64(),
                sz.min_atom().to_f64(),
                sz.max_atom().to_f64()
            ),
        });
    }
    let mean_gap = (sz.mean() - ybar.clone()).abs().to_f64();
    if mean_gap > mean_tol * (1.0 + ybar.to_f64().abs()) {
        return Err(MotError::Infeasible {
            context: format!(
                "z marginal mean differs from barycenter by {mean_gap:e}"
            ),
        });
    }
    let nx = sx.len();
    let nz = sz.len();
    let n = nx * nz;
    let var = |i: usize, k: usize| i * nz + k;
    let mut objective = vec![S::zero(); n];
    for (i, x) in sx.atoms().iter().enumerate() {
        for (k, z) in sz.atoms().iter().enumerate() {
            objective[var(i, k)] = cost3(x, z);
        }
    }
    let mut rows = Vec::with_capacity(nx + nz + nx);
    let mut rhs = Vec::with_capacity(rows.capacity());
    for i in 0..nx {
        let mut r = vec![S::zero(); n];
        for k in 0..nz {
            r[var(i, k)] = S::one();
        }
        rows.push(r);
        rhs.push(sx.weights()[i].clone());
    }
    for k in 0..nz {
        let mut r = vec![S::zero(); n];
        for i in 0..nx {
            r[var(i, k)] = S::one();
        }
        rows.push(r);
        rhs.push(sz.weights()[k].clone());
    }
    for i in 0..nx {
        let mut r = vec![S::zero(); n];
        for (k, z) in sz.atoms().iter().enumerate() {
            r[var(i, k)] = z.clone() - ybar.clone();
        }
        rows.push(r);
        rhs.push(S::zero());
    }
    let lp = LinearProgram::new(objective, rows, rhs, sense)?;
    let sol = lp::solve(&lp, cfg)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(MotError::Infeasible {
                context: "no coupling attains the prescribed conditional mean".into(),
            })
        }
        LpStatus::Unbounded => {
            return Err(MotError::Invalid {
                context: "fixed-barycenter program unbounded".into(),
            })
        }
    }
    let mut entries = Vec::new();
    for i in 0..nx {
        for k in 0..nz {
            let v = sol.primal[var(i, k)].clone();
            if v > S::zero() {
                entries.push(((i, k), v));
            }
        }
    }
    let coupling = Coupling2::from_entries(sx.atoms().to_vec(), sz.atoms().to_vec(), entries)?;
    Ok(FixedBarycenterSolution {
        value: sol.value.clone(),
        coupling,
        lp,
        lp_solution: sol,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerYRecord<S> {
    pub y: S,
    pub weight: S,
    pub value: S,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct OverlapSolution<S> {
    pub value: S,
    pub coupling: Coupling3<S>,
    pub per_y: Vec<PerYRecord<S>>,
}

/// Optimal three-period coupling among those with prescribed (x, y) and
/// (y, z) projections: per y-atom, a fixed-barycenter problem between the
/// conditionals with `ybar = y`, assembled as `μ_Y ⊗ κ^{XZ}_Y`.
pub fn solve_overlapping<S: Scalar>(
    pxy: &Coupling2<S>,
    pyz: &Coupling2<S>,
    cost3: impl Fn(&S, &S) -> S + Send + Sync,
    sense: Sense,
    cfg: &Config,
) -> Result<OverlapSolution<S>, MotError> {
    check_shared_middle(pxy, pyz, cfg)?;

    let x_slices = pxy.disintegrate_second(cfg);
    let z_slices = pyz.disintegrate_first(cfg);
    let mut by_index: BTreeMap<usize, &Slice<S, DiscreteMeasure<S>>> =
        z_slices.iter().map(|s| (s.index, s)).collect();
    let work: Vec<(usize, &Slice<S, DiscreteMeasure<S>>, &Slice<S, DiscreteMeasure<S>>)> =
        x_slices
            .iter()
            .map(|a| {
                by_index
                    .remove(&a.index)
                    .map(|b| (a.index, a, b))
                    .ok_or_else(|| MotError::MarginalMismatch {
                        context: format!(
                            "y-atom index {} charged by the first coupling only",
                            a.index
                        ),
                    })
            })
            .collect::<Result<_, _>>()?;
    if let Some((&j, _)) = by_index.first_key_value() {
        return Err(MotError::MarginalMismatch {
            context: format!("y-atom index {j} charged by the second coupling only"),
        });
    }

    let results: Vec<Result<(usize, PerYRecord<S>, Option<Coupling2<S>>), MotError>> = work
        .par_iter()
        .map(|(j, xs, zs)| {
            let w = xs.weight.clone();
            if w.to_f64() <= cfg.mass_floor {
                return Ok((
                    *j,
                    PerYRecord {
                        y: xs.position.clone(),
                        weight: w,
                        value: S::zero(),
                        skipped: true,
                    },
                    None,
                ));
            }
            let mean_tol = cfg.tol * (1.0 + 1.0 / w.to_f64());
            let sub = solve_fixed_barycenter_with_tol(
                &xs.kernel,
                &zs.kernel,
                &xs.position,
                &cost3,
                sense,
                cfg,
                mean_tol,
            )
            .map_err(|e| match e {
                MotError::Infeasible { context } => MotError::Infeasible {
                    context: format!("y-atom {}: {}", xs.position.to_f64(), context),
                },
                other => other,
            })?;
            Ok((
                *j,
                PerYRecord {
                    y: xs.position.clone(),
                    weight: w,
                    value: sub.value.clone(),
                    skipped: false,
                },
                Some(sub.coupling),
            ))
        })
        .collect();

    let mut per_y = Vec::new();
    let mut entries: Vec<((usize, usize, usize), S)> = Vec::new();
    let mut value = S::zero();
    for res in results {
        let (j, record, kernel) = res?;
        if let Some(kernel) = kernel {
            let gi: Vec<usize> = kernel
                .x_atoms()
                .iter()
                .map(|x| position_index(pxy.x_atoms(), x))
                .collect::<Result<_, _>>()?;
            let gk: Vec<usize> = kernel
                .y_atoms()
                .iter()
                .map(|z| position_index(pyz.y_atoms(), z))
                .collect::<Result<_, _>>()?;
            for (&(si, sk), v) in kernel.iter() {
                entries.push(((gi[si], j, gk[sk]), record.weight.clone() * v.clone()));
            }
            value = value + record.weight.clone() * record.value.clone();
        }
        per_y.push(record);
    }
    let coupling = Coupling3::from_entries(
        pxy.x_atoms().to_vec(),
        pxy.y_atoms().to_vec(),
        pyz.y_atoms().to_vec(),
        entries,
    )?;
    Ok(OverlapSolution {
        value,
        coupling,
        per_y,
    })
}

pub(crate) fn check_shared_middle<S: Scalar>(
    pxy: &Coupling2<S>,
    pyz: &Coupling2<S>,
    cfg: &Config,
) -> Result<(), MotError> {
    let same_grid = pxy.y_atoms().len() == pyz.x_atoms().len()
        && pxy
            .y_atoms()
            .iter()
            .zip(pyz.x_atoms())
            .all(|(a, b)| (a.clone() - b.clone()).abs().to_f64() <= cfg.merge_tol);
    if !same_grid {
        return Err(MotError::MarginalMismatch {
            context: "shared axis grids differ".into(),
        });
    }
    let a = pxy.col_masses();
    let b = pyz.row_masses();
    for (j, (wa, wb)) in a.iter().zip(&b).enumerate() {
        let diff = (wa.clone() - wb.clone()).abs().to_f64();
        if diff > cfg.marginal_tol {
            return Err(MotError::MarginalMismatch {
                context: format!("shared marginal differs by {diff:e} at index {j}"),
            });
        }
    }
    for (name, c) in [("first", pxy), ("second", pyz)] {
        if !c.is_martingale(cfg) {
            return Err(MotError::NotMartingale {
                context: format!("{name} coupling"),
            });
        }
    }
    Ok(())
}

fn position_index<S: Scalar>(grid: &[S], pos: &S) -> Result<usize, MotError> {
    grid.iter()
        .position(|a| a == pos)
        .ok_or_else(|| MotError::Invalid {
            context: format!("position {} not on the parent grid", pos.to_f64()),
        })
}
