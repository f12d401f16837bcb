//! The ε-perturbation engine: value curves `P(ε)` of the three-period
//! problem with cost `c1 + c2 + ε c3`, one-sided derivatives at `ε = 0`,
//! and the first-order approximations `Q(ε) = P(0) + ε P'(0)`.
//!
//! At `ε = 0` the problem decouples into the two consecutive two-period
//! problems; the derivative of the lower (upper) bound is the optimal value
//! of `c3` over the set of optimizers. Two routes compute it: the decoupled
//! route solves the overlapping-marginals problem on the two-period
//! optimizers, the lexicographic route re-optimizes `c3` over the optimal
//! face of the full three-period LP. They agree whenever the two-period
//! optimizers are unique; under non-uniqueness the lexicographic value is
//! authoritative.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lp::{self, LpStatus, Sense};
use crate::measure::DiscreteMeasure;
use crate::mot::{
    mot3_lp, solve_mot2, solve_mot3, solve_overlapping, CostSpec, DualCertificate, MotError,
    PerYRecord,
};
use crate::scalar::Scalar;
use crate::structure::{uniqueness_probe, Uniqueness};
use crate::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativePath {
    Decoupled,
    Lexicographic,
    Auto,
}

/// Number of random secondary objectives used when probing two-period
/// optimizers for uniqueness on the Auto path.
pub const DEFAULT_PROBE_TRIALS: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeReport<S> {
    /// The derivative estimate the caller should use.
    pub value: S,
    pub decoupled: Option<S>,
    pub lexicographic: Option<S>,
    pub path_used: DerivativePath,
    /// Probe verdicts for the (x, y) and (y, z) problems, when probed.
    pub two_period_unique: Option<(bool, bool)>,
    pub warnings: Vec<String>,
}

/// One-sided derivative of the optimal value at `ε = 0`. For the lower
/// bound (minimization) this is the right derivative
/// `inf {∫ c3 dπ : π optimal at ε = 0}`; for the upper bound the mirrored
/// supremum.
pub fn derivative_at_zero<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    sense: Sense,
    path: DerivativePath,
    cfg: &Config,
) -> Result<DerivativeReport<S>, MotError> {
    match path {
        DerivativePath::Decoupled => {
            let d = decoupled_derivative(mx, my, mz, cost, sense, cfg)?;
            Ok(DerivativeReport {
                value: d.clone(),
                decoupled: Some(d),
                lexicographic: None,
                path_used: DerivativePath::Decoupled,
                two_period_unique: None,
                warnings: Vec::new(),
            })
        }
        DerivativePath::Lexicographic => {
            let d = lexicographic_derivative(mx, my, mz, cost, sense, cfg)?;
            Ok(DerivativeReport {
                value: d.clone(),
                decoupled: None,
                lexicographic: Some(d),
                path_used: DerivativePath::Lexicographic,
                two_period_unique: None,
                warnings: Vec::new(),
            })
        }
        DerivativePath::Auto => {
            let pxy = solve_mot2(mx, my, |x, y| (cost.c1)(x, y), sense, cfg)?;
            let pyz = solve_mot2(my, mz, |y, z| (cost.c2)(y, z), sense, cfg)?;
            let probe_xy =
                uniqueness_probe(&pxy.lp, &pxy.lp_solution, DEFAULT_PROBE_TRIALS, cfg)?;
            let probe_yz =
                uniqueness_probe(&pyz.lp, &pyz.lp_solution, DEFAULT_PROBE_TRIALS, cfg)?;
            let unique = (
                probe_xy.verdict == Uniqueness::Unique,
                probe_yz.verdict == Uniqueness::Unique,
            );
            let overlap =
                solve_overlapping(&pxy.coupling, &pyz.coupling, |x, z| (cost.c3)(x, z), sense, cfg)?;
            let decoupled = overlap.value;
            if unique.0 && unique.1 {
                return Ok(DerivativeReport {
                    value: decoupled.clone(),
                    decoupled: Some(decoupled),
                    lexicographic: None,
                    path_used: DerivativePath::Decoupled,
                    two_period_unique: Some(unique),
                    warnings: Vec::new(),
                });
            }
            let lexicographic = lexicographic_derivative(mx, my, mz, cost, sense, cfg)?;
            Ok(DerivativeReport {
                value: lexicographic.clone(),
                decoupled: Some(decoupled),
                lexicographic: Some(lexicographic),
                path_used: DerivativePath::Lexicographic,
                two_period_unique: Some(unique),
                warnings: vec![
                    "two-period optimizers are not unique; using the face optimum".into(),
                ],
            })
        }
    }
}

fn decoupled_derivative<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    sense: Sense,
    cfg: &Config,
) -> Result<S, MotError> {
    let pxy = solve_mot2(mx, my, |x, y| (cost.c1)(x, y), sense, cfg)?;
    let pyz = solve_mot2(my, mz, |y, z| (cost.c2)(y, z), sense, cfg)?;
    let overlap =
        solve_overlapping(&pxy.coupling, &pyz.coupling, |x, z| (cost.c3)(x, z), sense, cfg)?;
    Ok(overlap.value)
}

fn lexicographic_derivative<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    sense: Sense,
    cfg: &Config,
) -> Result<S, MotError> {
    let (lp_prob, layout) = mot3_lp(
        mx,
        my,
        mz,
        |x, y, z| (cost.c1)(x, y) + (cost.c2)(y, z),
        sense,
    );
    let base = lp::solve(&lp_prob, cfg)?;
    if base.status != LpStatus::Optimal {
        return Err(MotError::Infeasible {
            context: "base problem not optimal on the lexicographic path".into(),
        });
    }
    let mut secondary = vec![S::zero(); layout.num_vars()];
    for (i, x) in mx.atoms().iter().enumerate() {
        for j in 0..my.len() {
            for (k, z) in mz.atoms().iter().enumerate() {
                secondary[layout.var(i, j, k)] = (cost.c3)(x, z);
            }
        }
    }
    let sol = lp::solve_over_face(&lp_prob, &base, &secondary, sense, cfg)?;
    if sol.status != LpStatus::Optimal {
        return Err(MotError::Invalid {
            context: format!("secondary stage ended with status {:?}", sol.status),
        });
    }
    Ok(sol.value)
}

/// First-order report for one sense (lower or upper bound).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideReport<S> {
    pub sense: Sense,
    /// `P(0)`, the decoupled optimum.
    pub p_at_zero: S,
    pub derivative: DerivativeReport<S>,
    /// `Q(ε) = P(0) + ε P'(0)` at the requested ε.
    pub q_value: S,
    /// Exact `P(ε)` when the exact method ran.
    pub p_value: Option<S>,
    /// Support of the assembled first-order optimizer `(x, y, z, mass)`.
    pub first_order_support: Vec<(S, S, S, S)>,
    /// Support of the exact optimizer, when computed.
    pub exact_support: Option<Vec<(S, S, S, S)>>,
    /// Sub-replication certificate of the exact solve, when computed.
    pub certificate: Option<DualCertificate<S>>,
    pub per_y: Vec<PerYRecord<S>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport<S> {
    pub epsilon: S,
    pub lower: SideReport<S>,
    pub upper: SideReport<S>,
    /// Tree-model prices `(p, value)` in requested order.
    pub tree_prices: Vec<(u32, S)>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds; excluded from serialized output so that reports
    /// are byte-identical across runs.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

fn first_order_side<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    eps: &S,
    sense: Sense,
    cfg: &Config,
) -> Result<SideReport<S>, MotError> {
    let pxy = solve_mot2(mx, my, |x, y| (cost.c1)(x, y), sense, cfg)?;
    let pyz = solve_mot2(my, mz, |y, z| (cost.c2)(y, z), sense, cfg)?;
    let p_at_zero = pxy.value.clone() + pyz.value.clone();

    let probe_xy = uniqueness_probe(&pxy.lp, &pxy.lp_solution, DEFAULT_PROBE_TRIALS, cfg)?;
    let probe_yz = uniqueness_probe(&pyz.lp, &pyz.lp_solution, DEFAULT_PROBE_TRIALS, cfg)?;
    let unique = (
        probe_xy.verdict == Uniqueness::Unique,
        probe_yz.verdict == Uniqueness::Unique,
    );
    let overlap =
        solve_overlapping(&pxy.coupling, &pyz.coupling, |x, z| (cost.c3)(x, z), sense, cfg)?;
    let mut warnings = Vec::new();
    let derivative = if unique.0 && unique.1 {
        DerivativeReport {
            value: overlap.value.clone(),
            decoupled: Some(overlap.value.clone()),
            lexicographic: None,
            path_used: DerivativePath::Decoupled,
            two_period_unique: Some(unique),
            warnings: Vec::new(),
        }
    } else {
        let lex = lexicographic_derivative(mx, my, mz, cost, sense, cfg)?;
        warnings.push(
            "two-period optimizers are not unique; first-order slope taken from the face optimum"
                .into(),
        );
        DerivativeReport {
            value: lex.clone(),
            decoupled: Some(overlap.value.clone()),
            lexicographic: Some(lex),
            path_used: DerivativePath::Lexicographic,
            two_period_unique: Some(unique),
            warnings: Vec::new(),
        }
    };
    let q_value = p_at_zero.clone() + eps.clone() * derivative.value.clone();
    let support = overlap
        .coupling
        .iter()
        .map(|(&(i, j, k), v)| {
            (
                overlap.coupling.x_atoms()[i].clone(),
                overlap.coupling.y_atoms()[j].clone(),
                overlap.coupling.z_atoms()[k].clone(),
                v.clone(),
            )
        })
        .collect();
    Ok(SideReport {
        sense,
        p_at_zero,
        derivative,
        q_value,
        p_value: None,
        first_order_support: support,
        exact_support: None,
        certificate: None,
        per_y: overlap.per_y,
        warnings,
    })
}

/// First-order lower and upper bounds `Q_l(ε)`, `Q_u(ε)` with supports,
/// certificates, and the per-y subproblem log.
pub fn first_order_bounds<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    eps: &S,
    cfg: &Config,
) -> Result<BoundsReport<S>, MotError> {
    let start = std::time::Instant::now();
    let lower = first_order_side(mx, my, mz, cost, eps, Sense::Minimize, cfg)?;
    let upper = first_order_side(mx, my, mz, cost, eps, Sense::Maximize, cfg)?;
    let mut warnings = Vec::new();
    let same_decomposition = lower.derivative.path_used == upper.derivative.path_used;
    if same_decomposition && lower.q_value.to_f64() > upper.q_value.to_f64() {
        warnings.push(format!(
            "Q_l = {} exceeds Q_u = {}",
            lower.q_value.to_f64(),
            upper.q_value.to_f64()
        ));
    }
    Ok(BoundsReport {
        epsilon: eps.clone(),
        lower,
        upper,
        tree_prices: Vec::new(),
        warnings,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Adds the exact `P(ε)` values (full three-period LP) to a report.
pub fn add_exact_bounds<S: Scalar>(
    report: &mut BoundsReport<S>,
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    cfg: &Config,
) -> Result<(), MotError> {
    let start = std::time::Instant::now();
    let at_eps = cost.with_epsilon(report.epsilon.clone());
    for (sense, side) in [
        (Sense::Minimize, &mut report.lower),
        (Sense::Maximize, &mut report.upper),
    ] {
        let sol = solve_mot3(mx, my, mz, &at_eps, sense, cfg)?;
        side.p_value = Some(sol.value.clone());
        side.exact_support = Some(
            sol.coupling
                .iter()
                .map(|(&(i, j, k), v)| {
                    (
                        sol.coupling.x_atoms()[i].clone(),
                        sol.coupling.y_atoms()[j].clone(),
                        sol.coupling.z_atoms()[k].clone(),
                        v.clone(),
                    )
                })
                .collect(),
        );
        side.certificate = Some(sol.certificate);
    }
    report.elapsed_seconds += start.elapsed().as_secs_f64();
    Ok(())
}

/// Value curve of one side of the bound over an ε-grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCurve<S> {
    pub sense: Sense,
    pub eps_grid: Vec<S>,
    /// `P(ε)` per grid point; `None` where the solver failed.
    pub values: Vec<Option<S>>,
    /// `Q(ε)` per grid point.
    pub q_values: Vec<S>,
    pub p_at_zero: S,
    pub derivative_at_zero: S,
    /// Curve-invariant violations and per-point solver failures.
    pub flags: Vec<String>,
}

/// Computes `P(ε)` by a full three-period solve per grid point (grid points
/// run in parallel, results assembled in grid order) and the tangent
/// `Q(ε)`. Concavity/convexity and tangent-ordering checks are recorded in
/// `flags`.
pub fn bound_curve<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    eps_grid: &[S],
    sense: Sense,
    cfg: &Config,
) -> Result<BoundCurve<S>, MotError> {
    if eps_grid.is_empty() {
        return Err(MotError::Invalid {
            context: "empty epsilon grid".into(),
        });
    }
    if eps_grid.windows(2).any(|w| w[0] > w[1]) || eps_grid[0] < S::zero() {
        return Err(MotError::Invalid {
            context: "epsilon grid must be sorted and nonnegative".into(),
        });
    }
    let side = first_order_side(mx, my, mz, cost, &eps_grid[0], sense, cfg)?;
    let p_at_zero = side.p_at_zero.clone();
    let derivative = side.derivative.value.clone();

    let results: Vec<Result<S, MotError>> = eps_grid
        .par_iter()
        .map(|eps| {
            let at_eps = cost.with_epsilon(eps.clone());
            solve_mot3(mx, my, mz, &at_eps, sense, cfg).map(|s| s.value)
        })
        .collect();
    let mut flags = Vec::new();
    let mut values = Vec::with_capacity(eps_grid.len());
    for (eps, res) in eps_grid.iter().zip(results) {
        match res {
            Ok(v) => values.push(Some(v)),
            Err(e) => {
                flags.push(format!("solve failed at epsilon {}: {e}", eps.to_f64()));
                values.push(None);
            }
        }
    }
    let q_values: Vec<S> = eps_grid
        .iter()
        .map(|e| p_at_zero.clone() + e.clone() * derivative.clone())
        .collect();

    // Chordal concavity (lower) / convexity (upper) on consecutive triples.
    for w in 0..eps_grid.len().saturating_sub(2) {
        let (e0, e1, e2) = (
            eps_grid[w].to_f64(),
            eps_grid[w + 1].to_f64(),
            eps_grid[w + 2].to_f64(),
        );
        if e2 - e0 <= 0.0 {
            continue;
        }
        if let (Some(v0), Some(v1), Some(v2)) = (&values[w], &values[w + 1], &values[w + 2]) {
            let chord = v0.to_f64() + (v2.to_f64() - v0.to_f64()) * (e1 - e0) / (e2 - e0);
            let tol = 1e-7 * (1.0 + v1.to_f64().abs());
            let ok = match sense {
                Sense::Minimize => v1.to_f64() >= chord - tol,
                Sense::Maximize => v1.to_f64() <= chord + tol,
            };
            if !ok {
                flags.push(format!(
                    "curvature violation on grid window starting at epsilon {e0}"
                ));
            }
        }
    }
    // Tangent-line bound: the tangent lies above a concave curve and below
    // a convex one.
    for ((eps, v), q) in eps_grid.iter().zip(&values).zip(&q_values) {
        if let Some(v) = v {
            let tol = 1e-7 * (1.0 + v.to_f64().abs());
            let ok = match sense {
                Sense::Minimize => v.to_f64() <= q.to_f64() + tol,
                Sense::Maximize => v.to_f64() >= q.to_f64() - tol,
            };
            if !ok {
                flags.push(format!(
                    "tangent ordering violated at epsilon {}",
                    eps.to_f64()
                ));
            }
        }
    }
    Ok(BoundCurve {
        sense,
        eps_grid: eps_grid.to_vec(),
        values,
        q_values,
        p_at_zero,
        derivative_at_zero: derivative,
        flags,
    })
}
