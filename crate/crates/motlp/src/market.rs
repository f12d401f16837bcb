//! Option-chain ingestion: risk-neutral marginals from call prices by
//! second differencing in strike (Breeden–Litzenberger), plus an LP repair
//! step that moves the least total weight needed to restore equal means and
//! the convex order along a maturity chain.
//!
//! Inputs are assumed to be in forward (undiscounted) terms; no discounting
//! or rate handling happens here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LinearProgram, LpError, LpStatus, Sense};
use crate::measure::{convex_order_leq, DiscreteMeasure, MeasureError};
use crate::scalar::Scalar;
use crate::Config;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("need at least 3 strikes, got {count}")]
    TooFewStrikes { count: usize },
    #[error("all mass clipped; the chain admits no density")]
    AllMassClipped,
    #[error("chain repair infeasible: {context}")]
    RepairInfeasible { context: String },
    #[error("invalid chain: {context}")]
    InvalidChain { context: String },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// One maturity of quoted calls on a strictly increasing strike grid.
#[derive(Debug, Clone)]
pub struct OptionChain<S> {
    pub label: String,
    strikes: Vec<S>,
    calls: Vec<S>,
    pub forward: Option<S>,
}

/// JSON sidecar accompanying a chain CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMeta {
    pub maturity: String,
    #[serde(default)]
    pub forward: Option<f64>,
}

impl<S: Scalar> OptionChain<S> {
    pub fn new(
        label: impl Into<String>,
        rows: Vec<(S, S)>,
        forward: Option<S>,
    ) -> Result<Self, MarketError> {
        let mut rows = rows;
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite strikes"));
        if rows.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(MarketError::InvalidChain {
                context: "duplicate strikes".into(),
            });
        }
        if let Some(bad) = rows.iter().find(|(_, c)| *c < S::zero()) {
            return Err(MarketError::InvalidChain {
                context: format!("negative call price at strike {}", bad.0.to_f64()),
            });
        }
        let (strikes, calls) = rows.into_iter().unzip();
        Ok(OptionChain {
            label: label.into(),
            strikes,
            calls,
            forward,
        })
    }

    pub fn strikes(&self) -> &[S] {
        &self.strikes
    }

    pub fn calls(&self) -> &[S] {
        &self.calls
    }
}

/// Ingestion diagnostics for one chain.
#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub label: String,
    pub implied_mean: f64,
    /// Clipped (strike, negative mass) pairs.
    pub clipped: Vec<(f64, f64)>,
    pub clipped_mass: f64,
    /// Factor applied to restore total mass one.
    pub renormalization: f64,
    pub warnings: Vec<String>,
}

/// Risk-neutral density implied by a call chain. Interior strikes receive
/// the difference of consecutive call-price slopes (the discrete second
/// derivative in strike, exact for piecewise-linear call curves); the mass
/// the interior misses telescopes into the boundary strikes, preserving
/// total mass one and the chain-implied mean. Negative masses (convexity
/// violations) are clipped to zero and the result renormalized.
pub fn bl_density<S: Scalar>(
    chain: &OptionChain<S>,
    _cfg: &Config,
) -> Result<(DiscreteMeasure<S>, IngestReport), MarketError> {
    let n = chain.strikes.len();
    if n < 3 {
        return Err(MarketError::TooFewStrikes { count: n });
    }
    let k = &chain.strikes;
    let c = &chain.calls;
    // Slopes of the call curve on each strike interval.
    let slopes: Vec<S> = (0..n - 1)
        .map(|i| (c[i + 1].clone() - c[i].clone()) / (k[i + 1].clone() - k[i].clone()))
        .collect();
    let mut masses = vec![S::zero(); n];
    masses[0] = S::one() + slopes[0].clone();
    for i in 1..n - 1 {
        masses[i] = slopes[i].clone() - slopes[i - 1].clone();
    }
    masses[n - 1] = -slopes[n - 2].clone();

    let mut warnings = Vec::new();
    let mut clipped = Vec::new();
    let mut clipped_mass = 0.0;
    for (i, m) in masses.iter_mut().enumerate() {
        if *m < S::zero() {
            let amount = -m.to_f64();
            clipped.push((k[i].to_f64(), amount));
            clipped_mass += amount;
            *m = S::zero();
        }
    }
    if !clipped.is_empty() {
        warnings.push(format!(
            "clipped {} negative masses totalling {clipped_mass:e}",
            clipped.len()
        ));
    }
    let total = masses.iter().fold(S::zero(), |a, m| a + m.clone());
    if total.to_f64() <= 0.0 {
        return Err(MarketError::AllMassClipped);
    }
    let pairs: Vec<(S, S)> = k.iter().cloned().zip(masses).collect();
    let measure = DiscreteMeasure::normalized(pairs, _cfg)?;
    let report = IngestReport {
        label: chain.label.clone(),
        implied_mean: measure.mean().to_f64(),
        clipped,
        clipped_mass,
        renormalization: 1.0 / total.to_f64(),
        warnings,
    };
    Ok((measure, report))
}

/// Call prices `C(K) = Σ w max(x − K, 0)` of a discrete measure on a
/// strike grid; the exact inverse of [`bl_density`] when the grid carries
/// the support.
pub fn synthesize_calls<S: Scalar>(measure: &DiscreteMeasure<S>, strikes: &[S]) -> Vec<S> {
    strikes
        .iter()
        .map(|strike| {
            measure.iter().fold(S::zero(), |acc, (x, w)| {
                if x > strike {
                    acc + (x.clone() - strike.clone()) * w.clone()
                } else {
                    acc
                }
            })
        })
        .collect()
}

/// Minimal-L1 weight repair: returns measures on the same atom grids whose
/// means all equal `target_mean` and whose consecutive potentials are
/// ordered, moving total weight at most `cfg.repair_budget`. A chain that
/// already satisfies both is returned unchanged.
pub fn repair_chain<S: Scalar>(
    measures: &[DiscreteMeasure<S>],
    target_mean: &S,
    cfg: &Config,
) -> Result<Vec<DiscreteMeasure<S>>, MarketError> {
    if measures.is_empty() {
        return Err(MarketError::InvalidChain {
            context: "empty chain".into(),
        });
    }
    let tol = S::from_f64(cfg.tol);
    let already_valid = measures
        .iter()
        .all(|m| (m.mean() - target_mean.clone()).abs() <= tol)
        && measures
            .windows(2)
            .all(|w| convex_order_leq(&w[0], &w[1], &tol));
    if already_valid {
        return Ok(measures.to_vec());
    }

    // Variables per measure m with n_m atoms: [w'_i | e+_i | e-_i], then one
    // slack per potential-ordering row, then one slack for the budget row.
    let sizes: Vec<usize> = measures.iter().map(DiscreteMeasure::len).collect();
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in &sizes {
        offsets.push(acc);
        acc += 3 * s;
    }
    let weight_vars = acc;
    let w_var = |m: usize, i: usize| offsets[m] + i;
    let ep_var = |m: usize, i: usize| offsets[m] + sizes[m] + i;
    let em_var = |m: usize, i: usize| offsets[m] + 2 * sizes[m] + i;

    let mut order_rows: Vec<(usize, S)> = Vec::new(); // (pair index, test point)
    for (pair, w) in measures.windows(2).enumerate() {
        let mut points: Vec<S> = w[0].atoms().to_vec();
        points.extend_from_slice(w[1].atoms());
        points.sort_by(|a, b| a.partial_cmp(b).expect("finite atoms"));
        points.dedup();
        for t in points {
            order_rows.push((pair, t));
        }
    }
    let n = weight_vars + order_rows.len() + 1;
    let order_slack = |r: usize| weight_vars + r;
    let budget_slack = n - 1;

    let mut rows: Vec<Vec<S>> = Vec::new();
    let mut rhs: Vec<S> = Vec::new();
    for (m, measure) in measures.iter().enumerate() {
        // deviation split: w' - e+ + e- = w
        for (i, (_, w)) in measure.iter().enumerate() {
            let mut r = vec![S::zero(); n];
            r[w_var(m, i)] = S::one();
            r[ep_var(m, i)] = -S::one();
            r[em_var(m, i)] = S::one();
            rows.push(r);
            rhs.push(w.clone());
        }
        // total mass one
        let mut r = vec![S::zero(); n];
        for i in 0..sizes[m] {
            r[w_var(m, i)] = S::one();
        }
        rows.push(r);
        rhs.push(S::one());
        // mean pinned to the target
        let mut r = vec![S::zero(); n];
        for (i, (x, _)) in measure.iter().enumerate() {
            r[w_var(m, i)] = x.clone();
        }
        rows.push(r);
        rhs.push(target_mean.clone());
    }
    // potential ordering U_m(t) <= U_{m+1}(t) at the union of atoms
    for (r_idx, (pair, t)) in order_rows.iter().enumerate() {
        let mut r = vec![S::zero(); n];
        for (i, (x, _)) in measures[*pair].iter().enumerate() {
            r[w_var(*pair, i)] = (t.clone() - x.clone()).abs();
        }
        for (i, (x, _)) in measures[*pair + 1].iter().enumerate() {
            r[w_var(*pair + 1, i)] = -(t.clone() - x.clone()).abs();
        }
        r[order_slack(r_idx)] = S::one();
        rows.push(r);
        rhs.push(S::zero());
    }
    // budget on total moved weight
    let mut r = vec![S::zero(); n];
    for (m, &s) in sizes.iter().enumerate() {
        for i in 0..s {
            r[ep_var(m, i)] = S::one();
            r[em_var(m, i)] = S::one();
        }
    }
    r[budget_slack] = S::one();
    rows.push(r);
    rhs.push(S::from_f64(cfg.repair_budget));

    let mut objective = vec![S::zero(); n];
    for (m, &s) in sizes.iter().enumerate() {
        for i in 0..s {
            objective[ep_var(m, i)] = S::one();
            objective[em_var(m, i)] = S::one();
        }
    }
    let program = LinearProgram::new(objective, rows, rhs, Sense::Minimize)?;
    let sol = lp::solve(&program, cfg)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(MarketError::RepairInfeasible {
                context: format!(
                    "no repair within budget {} restores the convex-order chain",
                    cfg.repair_budget
                ),
            })
        }
        LpStatus::Unbounded => {
            return Err(MarketError::RepairInfeasible {
                context: "repair program unbounded".into(),
            })
        }
    }
    let mut repaired = Vec::with_capacity(measures.len());
    for (m, measure) in measures.iter().enumerate() {
        let pairs: Vec<(S, S)> = measure
            .atoms()
            .iter()
            .enumerate()
            .map(|(i, x)| (x.clone(), sol.primal[w_var(m, i)].clone()))
            .collect();
        repaired.push(DiscreteMeasure::normalized(pairs, cfg)?);
    }
    Ok(repaired)
}
