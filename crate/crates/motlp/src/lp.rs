//! Dense linear programming in equality standard form with a lexicographic
//! second stage and dual extraction.
//!
//! The solver is a two-phase tableau simplex with a largest-reduced-cost
//! pivot rule, falling back to Bland's rule after `5 (m + n)` iterations to
//! guarantee termination. On optimal termination the primal point and the
//! duals are re-derived from the original data through an LU solve of the
//! final basis, which removes accumulated tableau drift.
//!
//! Problems are `min/max cᵀx  s.t.  A x = b, x ≥ 0`. Infeasible and
//! unbounded problems are reported through [`LpStatus`], never as errors;
//! only numerical breakdown is an error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{lu_solve, DenseMatrix};
use crate::scalar::Scalar;
use crate::Config;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("inconsistent dimensions: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("lexicographic stage infeasible; the primary optimum should make it feasible")]
    LexicographicInfeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    pub fn flip(self) -> Sense {
        match self {
            Sense::Minimize => Sense::Maximize,
            Sense::Maximize => Sense::Minimize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Equality-form linear program. All variables are implicitly nonnegative.
#[derive(Debug, Clone)]
pub struct LinearProgram<S> {
    pub objective: Vec<S>,
    pub constraints: DenseMatrix<S>,
    pub rhs: Vec<S>,
    pub sense: Sense,
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new(
        objective: Vec<S>,
        rows: Vec<Vec<S>>,
        rhs: Vec<S>,
        sense: Sense,
    ) -> Result<Self, LpError> {
        let m = rows.len();
        let n = objective.len();
        if rhs.len() != m {
            return Err(LpError::Shape(format!(
                "{} constraint rows but {} rhs entries",
                m,
                rhs.len()
            )));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(LpError::Shape(format!(
                "row of width {} in a problem with {} variables",
                bad.len(),
                n
            )));
        }
        Ok(LinearProgram {
            objective,
            constraints: DenseMatrix::from_rows(rows),
            rhs,
            sense,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rhs.len()
    }

    /// Plain-text dump: one objective line, then one line per constraint as
    /// `a_1 ... a_n | b`. Used by the CLI debug flag.
    pub fn dump_text(&self) -> String {
        let fmt = |v: &S| format!("{:.16e}", v.to_f64());
        let mut out = String::new();
        out.push_str(match self.sense {
            Sense::Minimize => "minimize ",
            Sense::Maximize => "maximize ",
        });
        out.push_str(
            &self
                .objective
                .iter()
                .map(&fmt)
                .collect::<Vec<_>>()
                .join(" "),
        );
        out.push('\n');
        for i in 0..self.num_constraints() {
            let row = self
                .constraints
                .row(i)
                .iter()
                .map(&fmt)
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!("{} | {}\n", row, fmt(&self.rhs[i])));
        }
        out
    }
}

/// Solver outcome. `value`, `primal`, `duals` and `basis` are meaningful
/// only when `status == Optimal`; otherwise they are empty/zero.
#[derive(Debug, Clone)]
pub struct LpSolution<S> {
    pub status: LpStatus,
    pub value: S,
    pub primal: Vec<S>,
    pub duals: Vec<S>,
    pub basis: Vec<usize>,
}

impl<S: Scalar> LpSolution<S> {
    fn non_optimal(status: LpStatus) -> Self {
        LpSolution {
            status,
            value: S::zero(),
            primal: Vec::new(),
            duals: Vec::new(),
            basis: Vec::new(),
        }
    }
}

/// KKT residuals of an optimal solution, for verification.
#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    /// `‖Ax − b‖_∞`
    pub primal_residual: f64,
    /// `|cᵀx − bᵀy|`
    pub duality_gap: f64,
    /// `max_j |x_j · (c_j − yᵀ a_j)|`
    pub complementary_slackness: f64,
    /// most negative primal coordinate, as a magnitude
    pub negativity: f64,
}

pub fn verify_kkt<S: Scalar>(lp: &LinearProgram<S>, sol: &LpSolution<S>) -> KktReport {
    let ax = lp.constraints.mul_vec(&sol.primal);
    let primal_residual = ax
        .iter()
        .zip(&lp.rhs)
        .map(|(a, b)| (a.clone() - b.clone()).abs().to_f64())
        .fold(0.0, f64::max);
    let cx = lp
        .objective
        .iter()
        .zip(&sol.primal)
        .fold(S::zero(), |acc, (c, x)| acc + c.clone() * x.clone());
    let by = lp
        .rhs
        .iter()
        .zip(&sol.duals)
        .fold(S::zero(), |acc, (b, y)| acc + b.clone() * y.clone());
    let duality_gap = (cx - by).abs().to_f64();
    let n = lp.num_vars();
    let mut comp = 0.0f64;
    for j in 0..n {
        let mut yta = S::zero();
        for i in 0..lp.num_constraints() {
            yta = yta + sol.duals[i].clone() * lp.constraints.get(i, j).clone();
        }
        let slack = (lp.objective[j].clone() - yta).to_f64();
        comp = comp.max((sol.primal[j].to_f64() * slack).abs());
    }
    let negativity = sol
        .primal
        .iter()
        .map(|x| (-x.to_f64()).max(0.0))
        .fold(0.0, f64::max);
    KktReport {
        primal_residual,
        duality_gap,
        complementary_slackness: comp,
        negativity,
    }
}

/// Solves the program. Deterministic: identical inputs produce identical
/// pivot sequences and identical solutions.
///
/// Highly degenerate bases can stall the tableau walk even under Bland's
/// rule in floating arithmetic. When an attempt exhausts its iteration
/// guard (or ends in a numerically bad basis), the solve restarts with the
/// right-hand side shifted by `A δ` for a tiny deterministic `δ > 0`: the
/// shift keeps the system consistent (it translates the feasible set by
/// `δ`) while breaking degeneracy. The final point and duals are always
/// re-derived from the unshifted data.
pub fn solve<S: Scalar>(lp: &LinearProgram<S>, cfg: &Config) -> Result<LpSolution<S>, LpError> {
    let b_scale = lp
        .rhs
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.to_f64().abs()));
    let mut last_err = None;
    for eta in [0.0, 1e-10, 1e-8] {
        let shift = if eta == 0.0 {
            None
        } else {
            // deterministic pseudo-random positive shift per variable
            let delta: Vec<S> = (0..lp.num_vars())
                .map(|j| {
                    let mut h = (j as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15);
                    h ^= h >> 33;
                    let frac = 1.0 + (h % 1024) as f64 / 1024.0;
                    S::from_f64(eta * (1.0 + b_scale) * frac)
                })
                .collect();
            Some(lp.constraints.mul_vec(&delta))
        };
        match Simplex::new(lp, shift, cfg)?.run() {
            Ok(sol) => return Ok(sol),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

/// Re-optimizes `secondary` over the optimal face of `lp` by appending the
/// primary objective as an equality row pinned at its optimal value.
///
/// The returned solution's `value` is the secondary optimum; its `duals`
/// refer to the augmented system (original rows first, objective row last).
pub fn solve_lexicographic<S: Scalar>(
    lp: &LinearProgram<S>,
    secondary: &[S],
    sense2: Sense,
    cfg: &Config,
) -> Result<LpSolution<S>, LpError> {
    let primary = solve(lp, cfg)?;
    if primary.status != LpStatus::Optimal {
        return Err(LpError::Shape(format!(
            "lexicographic stage requires an optimal primary solve, got {:?}",
            primary.status
        )));
    }
    solve_over_face(lp, &primary, secondary, sense2, cfg)
}

/// Same as [`solve_lexicographic`] but reuses an already computed primary
/// solution.
pub fn solve_over_face<S: Scalar>(
    lp: &LinearProgram<S>,
    primary: &LpSolution<S>,
    secondary: &[S],
    sense2: Sense,
    cfg: &Config,
) -> Result<LpSolution<S>, LpError> {
    if secondary.len() != lp.num_vars() {
        return Err(LpError::Shape(format!(
            "secondary objective has {} entries for {} variables",
            secondary.len(),
            lp.num_vars()
        )));
    }
    let mut rows: Vec<Vec<S>> = (0..lp.num_constraints())
        .map(|i| lp.constraints.row(i).to_vec())
        .collect();
    // The pinned-objective row is normalized to unit coefficient scale so
    // it does not inflate the absolute feasibility tolerances of the
    // augmented problem.
    let mut scale = S::one();
    for c in &lp.objective {
        let a = c.abs();
        if a > scale {
            scale = a;
        }
    }
    rows.push(
        lp.objective
            .iter()
            .map(|c| c.clone() / scale.clone())
            .collect(),
    );
    let mut rhs = lp.rhs.clone();
    rhs.push(primary.value.clone() / scale);
    let augmented = LinearProgram::new(secondary.to_vec(), rows, rhs, sense2)?;
    let sol = solve(&augmented, cfg)?;
    if sol.status == LpStatus::Infeasible {
        return Err(LpError::LexicographicInfeasible);
    }
    Ok(sol)
}

struct Simplex<'a, S> {
    lp: &'a LinearProgram<S>,
    cfg: &'a Config,
    n: usize,
    m: usize,
    /// tableau over variable and artificial columns, m x (n + m)
    t: DenseMatrix<S>,
    b: Vec<S>,
    basis: Vec<usize>,
    /// -1 where the row was flipped to make the rhs nonnegative
    row_sign: Vec<S>,
    /// minimization objective (sense-applied), normalized to unit scale
    cost: Vec<S>,
    /// absolute slack the ratio test may leave on basic values
    delta_feas: f64,
    iterations: usize,
    bland_after: usize,
    max_iterations: usize,
}

impl<'a, S: Scalar> Simplex<'a, S> {
    fn new(
        lp: &'a LinearProgram<S>,
        rhs_shift: Option<Vec<S>>,
        cfg: &'a Config,
    ) -> Result<Self, LpError> {
        let n = lp.num_vars();
        let m = lp.num_constraints();
        if n == 0 {
            return Err(LpError::Shape("problem has no variables".into()));
        }
        let mut t = DenseMatrix::zeros(m, n + m);
        let mut b = Vec::with_capacity(m);
        let mut row_sign = Vec::with_capacity(m);
        for i in 0..m {
            let rhs_i = match &rhs_shift {
                Some(shift) => lp.rhs[i].clone() + shift[i].clone(),
                None => lp.rhs[i].clone(),
            };
            let flip = rhs_i < S::zero();
            let sign = if flip { -S::one() } else { S::one() };
            for j in 0..n {
                t.set(i, j, sign.clone() * lp.constraints.get(i, j).clone());
            }
            t.set(i, n + i, S::one());
            b.push(sign.clone() * rhs_i);
            row_sign.push(sign);
        }
        // Minimization copy of the objective, normalized so pivot tolerances
        // are scale-free.
        let mut cost: Vec<S> = match lp.sense {
            Sense::Minimize => lp.objective.clone(),
            Sense::Maximize => lp.objective.iter().map(|c| -c.clone()).collect(),
        };
        let mut scale = S::one();
        for c in &cost {
            let a = c.abs();
            if a > scale {
                scale = a;
            }
        }
        for c in &mut cost {
            *c = c.clone() / scale.clone();
        }
        let b_max = b.iter().fold(0.0f64, |acc, v| acc.max(v.to_f64().abs()));
        let bland_after = 5 * (m + n);
        let max_iterations = 10 * (m + n) + 1000;
        Ok(Simplex {
            lp,
            cfg,
            n,
            m,
            t,
            b,
            basis: (n..n + m).collect(),
            row_sign,
            cost,
            delta_feas: 1e-10 * (1.0 + b_max),
            iterations: 0,
            bland_after,
            max_iterations,
        })
    }

    fn run(mut self) -> Result<LpSolution<S>, LpError> {
        // Phase 1: minimize the sum of artificials.
        let mut d = vec![S::zero(); self.n + self.m];
        for j in 0..self.n {
            let mut acc = S::zero();
            for i in 0..self.m {
                acc = acc - self.t.get(i, j).clone();
            }
            d[j] = acc;
        }
        if !self.iterate(&mut d, false)? {
            // Phase 1 of a consistent system cannot be unbounded.
            return Err(LpError::NumericalFailure(
                "phase 1 reported unbounded".into(),
            ));
        }
        let b_scale = self
            .b
            .iter()
            .fold(S::zero(), |acc, v| acc + v.abs())
            .to_f64();
        // Residual artificial mass; sub-slack negatives are ratio-test
        // artifacts, not infeasibility.
        let infeasibility: f64 = (0..self.m)
            .filter(|&i| self.basis[i] >= self.n)
            .map(|i| self.b[i].to_f64().max(0.0))
            .sum();
        let threshold =
            self.cfg.tol * (1.0 + b_scale) + 10.0 * self.m as f64 * self.delta_feas;
        if infeasibility > threshold {
            return Ok(LpSolution::non_optimal(LpStatus::Infeasible));
        }
        self.purge_artificials();

        // Phase 2: the real objective.
        let mut d = vec![S::zero(); self.n + self.m];
        for j in 0..self.n {
            d[j] = self.cost[j].clone();
        }
        for i in 0..self.m {
            let k = self.basis[i];
            let ck = if k < self.n {
                self.cost[k].clone()
            } else {
                S::zero()
            };
            if ck.is_zero() {
                continue;
            }
            let row = self.t.row(i);
            for j in 0..self.n + self.m {
                d[j] = d[j].clone() - ck.clone() * row[j].clone();
            }
        }
        if !self.iterate(&mut d, true)? {
            return Ok(LpSolution::non_optimal(LpStatus::Unbounded));
        }
        self.extract()
    }

    /// Runs simplex iterations until optimality (true) or unboundedness
    /// (false). In phase 2 (`ban_artificials`) artificial columns may leave
    /// the basis but never enter it.
    fn iterate(&mut self, d: &mut [S], ban_artificials: bool) -> Result<bool, LpError> {
        // Scales with the pivot threshold; with pivot_tol = 0 (exact
        // arithmetic) comparisons become strict.
        let enter_tol = S::from_f64(self.cfg.pivot_tol * 100.0);
        let pivot_tol = S::from_f64(self.cfg.pivot_tol);
        loop {
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(LpError::NumericalFailure(format!(
                    "iteration limit {} exhausted with cycling guard active",
                    self.max_iterations
                )));
            }
            let bland = self.iterations > self.bland_after;
            let cols = if ban_artificials {
                self.n
            } else {
                self.n + self.m
            };

            let mut entering: Option<usize> = None;
            if bland {
                for j in 0..cols {
                    if d[j] < -enter_tol.clone() {
                        entering = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -enter_tol.clone();
                for j in 0..cols {
                    if d[j] < best {
                        best = d[j].clone();
                        entering = Some(j);
                    }
                }
            }
            let e = match entering {
                Some(e) => e,
                None => return Ok(true),
            };

            let r = match self.select_leaving(e, &pivot_tol, bland) {
                Some(r) => r,
                None => return Ok(false),
            };
            self.pivot(r, e, d);
        }
    }

    /// Ratio of row `i` for entering column `e`; degenerate rows clamp to
    /// ratio zero.
    fn ratio_of(&self, i: usize, e: usize, pivot_tol: &S) -> Option<S> {
        let a = self.t.get(i, e);
        if *a <= *pivot_tol {
            return None;
        }
        let num = if self.b[i] < S::zero() {
            S::zero()
        } else {
            self.b[i].clone()
        };
        Some(num / a.clone())
    }

    /// Ratio test. In Bland mode the minimal ratio with the smallest basic
    /// variable index wins. Otherwise a two-pass rule runs: pass one relaxes
    /// every ratio by the absolute slack `delta_feas` and takes the minimum;
    /// pass two picks the largest pivot among rows whose true ratio stays
    /// under that bound. No basic value ever drops below `-delta_feas`, and
    /// the final extraction removes the slack again.
    fn select_leaving(&self, e: usize, pivot_tol: &S, bland: bool) -> Option<usize> {
        if bland {
            let mut theta: Option<S> = None;
            for i in 0..self.m {
                if let Some(ratio) = self.ratio_of(i, e, pivot_tol) {
                    match &theta {
                        Some(t) if *t <= ratio => {}
                        _ => theta = Some(ratio),
                    }
                }
            }
            let theta = theta?;
            let mut r: Option<usize> = None;
            for i in 0..self.m {
                if let Some(ratio) = self.ratio_of(i, e, pivot_tol) {
                    if ratio == theta {
                        match r {
                            Some(best) if self.basis[best] <= self.basis[i] => {}
                            _ => r = Some(i),
                        }
                    }
                }
            }
            return r;
        }
        let delta = S::from_f64(self.delta_feas);
        let mut theta_max: Option<S> = None;
        for i in 0..self.m {
            let a = self.t.get(i, e);
            if *a <= *pivot_tol {
                continue;
            }
            let mut num = self.b[i].clone() + delta.clone();
            if num < S::zero() {
                num = S::zero();
            }
            let relaxed = num / a.clone();
            match &theta_max {
                Some(t) if *t <= relaxed => {}
                _ => theta_max = Some(relaxed),
            }
        }
        let theta_max = theta_max?;
        let mut r: Option<usize> = None;
        let mut best_pivot = S::zero();
        for i in 0..self.m {
            if let Some(ratio) = self.ratio_of(i, e, pivot_tol) {
                if ratio <= theta_max {
                    let a = self.t.get(i, e).abs();
                    if a > best_pivot {
                        best_pivot = a;
                        r = Some(i);
                    }
                }
            }
        }
        r
    }

    fn pivot(&mut self, r: usize, e: usize, d: &mut [S]) {
        let width = self.n + self.m;
        let pivot = self.t.get(r, e).clone();
        {
            let row = self.t.row_mut(r);
            for v in row.iter_mut() {
                *v = v.clone() / pivot.clone();
            }
        }
        self.b[r] = self.b[r].clone() / pivot;
        let pivot_row: Vec<S> = self.t.row(r).to_vec();
        let pivot_b = self.b[r].clone();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t.get(i, e).clone();
            if f.is_zero() {
                continue;
            }
            let row = self.t.row_mut(i);
            for j in 0..width {
                row[j] = row[j].clone() - f.clone() * pivot_row[j].clone();
            }
            self.b[i] = self.b[i].clone() - f * pivot_b.clone();
        }
        let f = d[e].clone();
        if !f.is_zero() {
            for j in 0..width {
                d[j] = d[j].clone() - f.clone() * pivot_row[j].clone();
            }
        }
        self.basis[r] = e;
    }

    /// Pivots basic artificials out where a structural column is available;
    /// rows where none exists are redundant and keep their artificial at
    /// zero level.
    fn purge_artificials(&mut self) {
        let pivot_tol = S::from_f64(self.cfg.pivot_tol);
        for r in 0..self.m {
            if self.basis[r] < self.n {
                continue;
            }
            let mut best: Option<(usize, S)> = None;
            for j in 0..self.n {
                if self.basis.contains(&j) {
                    continue;
                }
                let a = self.t.get(r, j).abs();
                if a > pivot_tol {
                    match &best {
                        Some((_, v)) if *v >= a => {}
                        _ => best = Some((j, a)),
                    }
                }
            }
            if let Some((j, _)) = best {
                let mut dummy = vec![S::zero(); self.n + self.m];
                self.pivot(r, j, &mut dummy);
            }
        }
    }

    /// Rebuilds the primal point and the duals from the original data via
    /// LU on the final basis, removing tableau drift.
    fn extract(&self) -> Result<LpSolution<S>, LpError> {
        let m = self.m;
        let n = self.n;
        let mut bmat = DenseMatrix::zeros(m, m);
        let mut cb = Vec::with_capacity(m);
        for (col, &k) in self.basis.iter().enumerate() {
            if k < n {
                for i in 0..m {
                    bmat.set(i, col, self.lp.constraints.get(i, k).clone());
                }
                cb.push(self.lp.objective[k].clone());
            } else {
                // artificial for row k - n, in original row orientation
                let row = k - n;
                bmat.set(row, col, self.row_sign[row].clone());
                cb.push(S::zero());
            }
        }
        let lu_tol = S::from_f64(self.cfg.pivot_tol * 1e-3);
        let xb = lu_solve(bmat.clone(), &self.lp.rhs, &lu_tol)
            .ok_or_else(|| LpError::NumericalFailure("singular final basis".into()))?;
        let duals = lu_solve(bmat.transpose(), &cb, &lu_tol)
            .ok_or_else(|| LpError::NumericalFailure("singular final basis".into()))?;

        let b_scale = self.lp.rhs.iter().fold(0.0, |acc, v| acc + v.to_f64().abs());
        let clamp = self.cfg.feas_tol * (1.0 + b_scale);
        let mut primal = vec![S::zero(); n];
        for (col, &k) in self.basis.iter().enumerate() {
            let v = xb[col].clone();
            if k < n {
                primal[k] = if v < S::zero() {
                    if v.to_f64() < -clamp {
                        return Err(LpError::NumericalFailure(format!(
                            "basic variable {} at {} below feasibility clamp",
                            k,
                            v.to_f64()
                        )));
                    }
                    S::zero()
                } else {
                    v
                };
            }
        }
        let value = self
            .lp
            .objective
            .iter()
            .zip(&primal)
            .fold(S::zero(), |acc, (c, x)| acc + c.clone() * x.clone());
        Ok(LpSolution {
            status: LpStatus::Optimal,
            value,
            primal,
            duals,
            basis: self.basis.clone(),
        })
    }
}
