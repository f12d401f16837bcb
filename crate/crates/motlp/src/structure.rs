//! Structural constructions and checkers for martingale couplings: the two
//! gluing constructions, left-monotonicity and (c, W)-monotonicity checks,
//! two-point conditional decompositions, the forced coupling onto a
//! two-point target, and a randomized uniqueness probe.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::lp::{self, LinearProgram, LpError, LpSolution, LpStatus, Sense};
use crate::measure::{convex_order_leq, DiscreteMeasure};
use crate::mot::{check_shared_middle, mot2_lp, Coupling2, Coupling3, MotError};
use crate::scalar::Scalar;
use crate::Config;

// ---------------------------------------------------------------------------
// Gluing
// ---------------------------------------------------------------------------

/// Markovian glueing of couplings sharing their middle marginal: given
/// `pxy` on (x, y) and `pyz` on (y, z), the conditional of (x, z) given y
/// is the product of the two conditionals. This is the unique glueing in
/// which z depends on the past through y only.
pub fn markov_glue<S: Scalar>(
    pxy: &Coupling2<S>,
    pyz: &Coupling2<S>,
    cfg: &Config,
) -> Result<Coupling3<S>, MotError> {
    check_shared_middle(pxy, pyz, cfg)?;
    let weights = pxy.col_masses();
    let ny = pxy.y_atoms().len();
    let mut per_y_xy: Vec<Vec<(usize, S)>> = vec![Vec::new(); ny];
    for (&(i, j), v) in pxy.iter() {
        per_y_xy[j].push((i, v.clone()));
    }
    let mut per_y_yz: Vec<Vec<(usize, S)>> = vec![Vec::new(); ny];
    for (&(j, k), v) in pyz.iter() {
        per_y_yz[j].push((k, v.clone()));
    }
    let mut entries = Vec::new();
    for j in 0..ny {
        let w = weights[j].clone();
        if w <= S::zero() {
            continue;
        }
        for (i, vxy) in &per_y_xy[j] {
            for (k, vyz) in &per_y_yz[j] {
                entries.push(((*i, j, *k), vxy.clone() * vyz.clone() / w.clone()));
            }
        }
    }
    Coupling3::from_entries(
        pxy.x_atoms().to_vec(),
        pxy.y_atoms().to_vec(),
        pyz.y_atoms().to_vec(),
        entries,
    )
}

/// Glueing of couplings sharing their first marginal: given `pxy` on
/// (x, y) and `pxz` on (x, z) with the per-x conditionals in convex order,
/// finds, per x-atom, a martingale coupling of the two conditionals by a
/// zero-objective feasibility LP (a discrete Strassen step). Projections
/// onto (x, y) and (x, z) reproduce the inputs.
pub fn strassen_glue<S: Scalar>(
    pxy: &Coupling2<S>,
    pxz: &Coupling2<S>,
    cfg: &Config,
) -> Result<Coupling3<S>, MotError> {
    let same_grid = pxy.x_atoms().len() == pxz.x_atoms().len()
        && pxy
            .x_atoms()
            .iter()
            .zip(pxz.x_atoms())
            .all(|(a, b)| (a.clone() - b.clone()).abs().to_f64() <= cfg.merge_tol);
    if !same_grid {
        return Err(MotError::MarginalMismatch {
            context: "shared first-axis grids differ".into(),
        });
    }
    for (i, (wa, wb)) in pxy
        .row_masses()
        .iter()
        .zip(pxz.row_masses())
        .enumerate()
    {
        let diff = (wa.clone() - wb).abs().to_f64();
        if diff > cfg.marginal_tol {
            return Err(MotError::MarginalMismatch {
                context: format!("shared marginal differs by {diff:e} at index {i}"),
            });
        }
    }
    for (name, c) in [("(x, y)", pxy), ("(x, z)", pxz)] {
        if !c.is_martingale(cfg) {
            return Err(MotError::NotMartingale {
                context: format!("{name} coupling"),
            });
        }
    }

    let y_slices = pxy.disintegrate_first(cfg);
    let z_slices = pxz.disintegrate_first(cfg);
    if y_slices.len() != z_slices.len()
        || y_slices
            .iter()
            .zip(&z_slices)
            .any(|(a, b)| a.index != b.index)
    {
        return Err(MotError::MarginalMismatch {
            context: "couplings charge different x-atoms".into(),
        });
    }

    let inner: Vec<Result<(usize, S, Coupling2<S>), MotError>> = y_slices
        .par_iter()
        .zip(z_slices.par_iter())
        .map(|(ys, zs)| {
            let x = ys.position.clone();
            let tol = S::from_f64(cfg.tol * (1.0 + 1.0 / ys.weight.to_f64()));
            if !convex_order_leq(&ys.kernel, &zs.kernel, &tol) {
                return Err(MotError::ConditionalConvexOrder { x: x.to_f64() });
            }
            let (lp_prob, layout) =
                mot2_lp(&ys.kernel, &zs.kernel, |_, _| S::zero(), Sense::Minimize);
            let sol = lp::solve(&lp_prob, cfg)?;
            if sol.status != LpStatus::Optimal {
                return Err(MotError::Infeasible {
                    context: format!(
                        "no martingale coupling of the conditionals at x = {}",
                        x.to_f64()
                    ),
                });
            }
            let mut entries = Vec::new();
            for j in 0..layout.nx {
                for k in 0..layout.ny {
                    let v = sol.primal[layout.var(j, k)].clone();
                    if v > S::zero() {
                        entries.push(((j, k), v));
                    }
                }
            }
            let kernel = Coupling2::from_entries(
                ys.kernel.atoms().to_vec(),
                zs.kernel.atoms().to_vec(),
                entries,
            )?;
            Ok((ys.index, ys.weight.clone(), kernel))
        })
        .collect();

    let mut entries = Vec::new();
    for res in inner {
        let (i, w, kernel) = res?;
        for (&(sj, sk), v) in kernel.iter() {
            let gj = index_of(pxy.y_atoms(), &kernel.x_atoms()[sj])?;
            let gk = index_of(pxz.y_atoms(), &kernel.y_atoms()[sk])?;
            entries.push(((i, gj, gk), w.clone() * v.clone()));
        }
    }
    Coupling3::from_entries(
        pxy.x_atoms().to_vec(),
        pxy.y_atoms().to_vec(),
        pxz.y_atoms().to_vec(),
        entries,
    )
}

fn index_of<S: Scalar>(grid: &[S], pos: &S) -> Result<usize, MotError> {
    grid.iter()
        .position(|a| a == pos)
        .ok_or_else(|| MotError::Invalid {
            context: format!("position {} not on the parent grid", pos.to_f64()),
        })
}

// ---------------------------------------------------------------------------
// Monotonicity checks
// ---------------------------------------------------------------------------

/// Result of the no-crossing scan; on failure `witness` holds the violating
/// triple `((x, z⁻), (x, z⁺), (x', z'))`.
#[derive(Debug, Clone, Serialize)]
pub struct LeftMonotoneReport<S> {
    pub monotone: bool,
    pub witness: Option<[(S, S); 3]>,
}

/// Checks the no-crossing condition on a support set: for `(x, z⁻)`,
/// `(x, z⁺)`, `(x', z')` in the support with `x < x'`, `z'` must not lie
/// strictly inside `(z⁻, z⁺)`. Strictness carries the margin `tol`.
pub fn left_monotone_check<S: Scalar>(support: &[(S, S)], tol: f64) -> LeftMonotoneReport<S> {
    let mut points: Vec<(S, S)> = support.to_vec();
    points.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    // Group destinations per x; a violation against any (z⁻, z⁺) pair is a
    // violation against the widest pair of that group.
    let mut groups: Vec<(S, S, S)> = Vec::new(); // (x, z_lo, z_hi)
    for (x, z) in &points {
        match groups.last_mut() {
            Some((gx, _, hi)) if (x.clone() - gx.clone()).abs().to_f64() <= tol => {
                *hi = z.clone();
            }
            _ => groups.push((x.clone(), z.clone(), z.clone())),
        }
    }
    for (gx, lo, hi) in &groups {
        if (hi.clone() - lo.clone()).to_f64() <= 2.0 * tol {
            continue;
        }
        for (x, z) in &points {
            if x.to_f64() <= gx.to_f64() + tol {
                continue;
            }
            if z.to_f64() > lo.to_f64() + tol && z.to_f64() < hi.to_f64() - tol {
                return LeftMonotoneReport {
                    monotone: false,
                    witness: Some([
                        (gx.clone(), lo.clone()),
                        (gx.clone(), hi.clone()),
                        (x.clone(), z.clone()),
                    ]),
                };
            }
        }
    }
    LeftMonotoneReport {
        monotone: true,
        witness: None,
    }
}

/// Result of the competitor-LP optimality check; on failure `improving`
/// holds a strictly cheaper competitor measure.
#[derive(Debug, Clone, Serialize)]
pub struct CwMonotoneReport<S> {
    pub monotone: bool,
    pub objective: S,
    pub best_competitor_objective: S,
    pub improving: Option<Vec<((S, S), S)>>,
    pub sampled: bool,
}

/// Checks finite-support optimality of `beta` (weights over `points`)
/// against every competitor measure on the grid spanned by the x- and
/// z-values of the points, with matching marginals and matching per-x
/// first z-moments. Sets larger than `limit` are subsampled
/// deterministically from `cfg.seed`.
pub fn cw_monotone_check<S: Scalar>(
    points: &[(S, S)],
    beta: &[S],
    cost: impl Fn(&S, &S) -> S,
    limit: usize,
    cfg: &Config,
) -> Result<CwMonotoneReport<S>, MotError> {
    if points.len() != beta.len() {
        return Err(MotError::Invalid {
            context: "points and weights differ in length".into(),
        });
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    let sampled = points.len() > limit;
    if sampled {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        idx = sample(&mut rng, points.len(), limit).into_vec();
        idx.sort_unstable();
    }
    let pts: Vec<(S, S)> = idx.iter().map(|&i| points[i].clone()).collect();
    let wts: Vec<S> = idx.iter().map(|&i| beta[i].clone()).collect();

    let mut xs: Vec<S> = pts.iter().map(|(x, _)| x.clone()).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    let mut zs: Vec<S> = pts.iter().map(|(_, z)| z.clone()).collect();
    zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    zs.dedup();
    let nx = xs.len();
    let nz = zs.len();
    let var = |i: usize, k: usize| i * nz + k;

    let mut bx = vec![S::zero(); nx];
    let mut bz = vec![S::zero(); nz];
    let mut moment = vec![S::zero(); nx];
    let mut beta_objective = S::zero();
    for ((x, z), w) in pts.iter().zip(&wts) {
        let i = xs.iter().position(|a| a == x).expect("grid member");
        let k = zs.iter().position(|a| a == z).expect("grid member");
        bx[i] = bx[i].clone() + w.clone();
        bz[k] = bz[k].clone() + w.clone();
        moment[i] = moment[i].clone() + w.clone() * z.clone();
        beta_objective = beta_objective + w.clone() * cost(x, z);
    }

    let n = nx * nz;
    let mut objective = vec![S::zero(); n];
    for (i, x) in xs.iter().enumerate() {
        for (k, z) in zs.iter().enumerate() {
            objective[var(i, k)] = cost(x, z);
        }
    }
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..nx {
        let mut r = vec![S::zero(); n];
        for k in 0..nz {
            r[var(i, k)] = S::one();
        }
        rows.push(r);
        rhs.push(bx[i].clone());
    }
    for k in 0..nz {
        let mut r = vec![S::zero(); n];
        for i in 0..nx {
            r[var(i, k)] = S::one();
        }
        rows.push(r);
        rhs.push(bz[k].clone());
    }
    for i in 0..nx {
        let mut r = vec![S::zero(); n];
        for (k, z) in zs.iter().enumerate() {
            r[var(i, k)] = z.clone();
        }
        rows.push(r);
        rhs.push(moment[i].clone());
    }
    let lp_prob = LinearProgram::new(objective, rows, rhs, Sense::Minimize)?;
    let sol = lp::solve(&lp_prob, cfg)?;
    if sol.status != LpStatus::Optimal {
        return Err(MotError::Infeasible {
            context: "competitor program has no optimum although beta is feasible".into(),
        });
    }
    let monotone =
        sol.value.to_f64() >= beta_objective.to_f64() - cfg.hybrid(beta_objective.to_f64());
    let improving = if monotone {
        None
    } else {
        let mut plan = Vec::new();
        for i in 0..nx {
            for k in 0..nz {
                let v = sol.primal[var(i, k)].clone();
                if v.to_f64() > cfg.support_floor {
                    plan.push(((xs[i].clone(), zs[k].clone()), v));
                }
            }
        }
        Some(plan)
    };
    Ok(CwMonotoneReport {
        monotone,
        objective: beta_objective,
        best_competitor_objective: sol.value,
        improving,
        sampled,
    })
}

// ---------------------------------------------------------------------------
// Two-point structure
// ---------------------------------------------------------------------------

/// A two-point conditional `λ₋ δ_{T₋} + (1 − λ₋) δ_{T₊}` with prescribed
/// barycenter.
#[derive(Debug, Clone, Serialize)]
pub struct TwoPointEntry<S> {
    pub t_minus: S,
    pub t_plus: S,
    pub lambda_minus: S,
}

impl<S: Scalar> TwoPointEntry<S> {
    pub fn lambda_plus(&self) -> S {
        S::one() - self.lambda_minus.clone()
    }

    pub fn barycenter(&self) -> S {
        self.lambda_minus.clone() * self.t_minus.clone()
            + self.lambda_plus() * self.t_plus.clone()
    }
}

/// Unique weights putting the barycenter of `{t_minus, t_plus}` at `ybar`:
/// `λ₋ = (ȳ − T₊) / (T₋ − T₊)`.
pub fn two_point_decompose<S: Scalar>(
    ybar: &S,
    t_minus: &S,
    t_plus: &S,
) -> Result<TwoPointEntry<S>, MotError> {
    if !(t_minus < ybar && ybar < t_plus) {
        return Err(MotError::DegenerateBracket {
            ybar: ybar.to_f64(),
            lo: t_minus.to_f64(),
            hi: t_plus.to_f64(),
        });
    }
    let lambda_minus =
        (ybar.clone() - t_plus.clone()) / (t_minus.clone() - t_plus.clone());
    Ok(TwoPointEntry {
        t_minus: t_minus.clone(),
        t_plus: t_plus.clone(),
        lambda_minus,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoPointRow<S> {
    pub x: S,
    pub weight: S,
    pub entry: TwoPointEntry<S>,
    pub observed_lambda_minus: S,
}

/// Per-x two-point decomposition of a fixed-barycenter coupling.
#[derive(Debug, Clone, Serialize)]
pub struct TwoPointMap<S> {
    pub rows: Vec<TwoPointRow<S>>,
}

impl<S: Scalar> TwoPointMap<S> {
    /// Extracts the two-point structure of every x-conditional carrying
    /// more than `floor` mass. Conditionals with more than two support
    /// atoms are an error; single-atom conditionals sitting at `ybar` are
    /// trivially consistent and skipped.
    pub fn from_coupling(
        coupling: &Coupling2<S>,
        ybar: &S,
        floor: f64,
        cfg: &Config,
    ) -> Result<Self, MotError> {
        let mut rows = Vec::new();
        for slice in coupling.disintegrate_first(cfg) {
            let charged: Vec<(S, S)> = slice
                .kernel
                .iter()
                .filter(|(_, w)| w.to_f64() > floor)
                .map(|(z, w)| (z.clone(), w.clone()))
                .collect();
            match charged.len() {
                0 => continue,
                1 => {
                    if (charged[0].0.clone() - ybar.clone()).abs().to_f64() > cfg.tol {
                        return Err(MotError::NotTwoPoint {
                            x: slice.position.to_f64(),
                            count: 1,
                        });
                    }
                }
                2 => {
                    let entry = two_point_decompose(ybar, &charged[0].0, &charged[1].0)?;
                    rows.push(TwoPointRow {
                        x: slice.position,
                        weight: slice.weight,
                        observed_lambda_minus: charged[0].1.clone(),
                        entry,
                    });
                }
                count => {
                    return Err(MotError::NotTwoPoint {
                        x: slice.position.to_f64(),
                        count,
                    })
                }
            }
        }
        Ok(TwoPointMap { rows })
    }
}

// ---------------------------------------------------------------------------
// Singleton coupling onto a two-point target
// ---------------------------------------------------------------------------

/// The unique martingale coupling of `mx` onto the two-point target
/// `{y1, y2}`: conditionals are `g1(x) = (y2 − x)/(y2 − y1)` and
/// `g2(x) = (x − y1)/(y2 − y1)`; the target weights are the mixtures
/// `a_i = ∫ g_i dμ_X`.
pub fn singleton_coupling<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    y1: &S,
    y2: &S,
) -> Result<Coupling2<S>, MotError> {
    if y1 >= y2 {
        return Err(MotError::Invalid {
            context: format!(
                "target atoms must satisfy y1 < y2, got {} and {}",
                y1.to_f64(),
                y2.to_f64()
            ),
        });
    }
    for x in mx.atoms() {
        if x < y1 || x > y2 {
            return Err(MotError::SupportViolation {
                atom: x.to_f64(),
                lo: y1.to_f64(),
                hi: y2.to_f64(),
            });
        }
    }
    let span = y2.clone() - y1.clone();
    let mut entries = Vec::new();
    for (i, (x, w)) in mx.iter().enumerate() {
        let g1 = (y2.clone() - x.clone()) / span.clone();
        let g2 = (x.clone() - y1.clone()) / span.clone();
        entries.push(((i, 0), w.clone() * g1));
        entries.push(((i, 1), w.clone() * g2));
    }
    Coupling2::from_entries(
        mx.atoms().to_vec(),
        vec![y1.clone(), y2.clone()],
        entries,
    )
}

// ---------------------------------------------------------------------------
// Uniqueness probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Uniqueness {
    /// No trial found a second optimizer; probabilistic evidence only.
    Unique,
    NonUnique,
}

#[derive(Debug, Clone)]
pub struct ProbeReport<S> {
    pub verdict: Uniqueness,
    pub trials: usize,
    pub max_deviation: f64,
    /// Two optimizers differing in some coordinate, when non-unique.
    pub witnesses: Option<(Vec<S>, Vec<S>)>,
}

/// Optimizes `trials` random secondary objectives over the optimal face of
/// an already solved program and reports whether any trial moved the
/// optimizer by more than `cfg.probe_tol` in some coordinate.
pub fn uniqueness_probe<S: Scalar>(
    lp: &LinearProgram<S>,
    base: &LpSolution<S>,
    trials: usize,
    cfg: &Config,
) -> Result<ProbeReport<S>, LpError> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let n = lp.num_vars();
    let mut max_deviation = 0.0f64;
    for t in 0..trials {
        let secondary: Vec<S> = (0..n)
            .map(|_| S::from_f64(rng.random_range(-1.0..1.0)))
            .collect();
        let sol = lp::solve_over_face(lp, base, &secondary, Sense::Minimize, cfg)?;
        if sol.status != LpStatus::Optimal {
            return Err(LpError::NumericalFailure(format!(
                "probe trial {t} ended with status {:?}",
                sol.status
            )));
        }
        let dev = base
            .primal
            .iter()
            .zip(&sol.primal)
            .map(|(a, b)| (a.clone() - b.clone()).abs().to_f64())
            .fold(0.0, f64::max);
        max_deviation = max_deviation.max(dev);
        if dev > cfg.probe_tol {
            return Ok(ProbeReport {
                verdict: Uniqueness::NonUnique,
                trials: t + 1,
                max_deviation,
                witnesses: Some((base.primal.clone(), sol.primal)),
            });
        }
    }
    Ok(ProbeReport {
        verdict: Uniqueness::Unique,
        trials,
        max_deviation,
        witnesses: None,
    })
}
