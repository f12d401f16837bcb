//! Shared test utilities: random convex-order chains, martingale kernel
//! generators, and an exact rational brute-force oracle that enumerates the
//! basic feasible solutions of small equality-form programs. The oracle
//! shares no code with the simplex path it cross-checks: it row-reduces and
//! solves square systems with its own arbitrary-precision elimination.

#![allow(dead_code)]

use motlp::lp::{LinearProgram, Sense};
use motlp::mot::{mot3_lp, Coupling2};
use motlp::scalar::Scalar;
use motlp::{Config, DiscreteMeasure, Measure, Rational};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub fn cfg() -> Config {
    Config::default()
}

pub fn m(pairs: &[(f64, f64)]) -> Measure {
    DiscreteMeasure::from_f64_pairs(pairs, &cfg()).unwrap()
}

/// Random measure with `n` distinct atoms in `[lo, hi]`, weights bounded
/// away from zero.
pub fn random_measure(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Measure {
    loop {
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(lo..hi), rng.random_range(0.2..1.0)))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if pairs.windows(2).all(|w| w[1].0 - w[0].0 > 1e-6) {
            return DiscreteMeasure::normalized(pairs, &cfg()).unwrap();
        }
    }
}

/// Mean-preserving spread: splits atoms symmetrically while the atom count
/// stays within `cap`. The result dominates the input in convex order.
pub fn spread(rng: &mut ChaCha12Rng, measure: &Measure, max_delta: f64, cap: usize) -> Measure {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut count = measure.len();
    for (&x, &w) in measure.iter() {
        if count < cap && rng.random_bool(0.8) {
            let d = rng.random_range(0.2 * max_delta..max_delta);
            pairs.push((x - d, 0.5 * w));
            pairs.push((x + d, 0.5 * w));
            count += 1;
        } else {
            pairs.push((x, w));
        }
    }
    DiscreteMeasure::normalized(pairs, &cfg()).unwrap()
}

/// Random convex-order chain `mx ⪯_c my ⪯_c mz` built from successive
/// mean-preserving spreads; each measure has at most `cap` atoms.
pub fn random_chain(
    rng: &mut ChaCha12Rng,
    n_base: usize,
    cap: usize,
    lo: f64,
    hi: f64,
) -> (Measure, Measure, Measure) {
    let scale = 0.1 * (hi - lo);
    let mx = random_measure(rng, n_base, lo, hi);
    let my = spread(rng, &mx, scale, cap);
    let mz = spread(rng, &my, scale, cap);
    (mx, my, mz)
}

/// Mixture of two-point measures, each bracketing `ybar` with exact
/// barycenter `ybar`; the mixture therefore has mean `ybar` exactly (in
/// floating arithmetic, up to one rounding per component).
pub fn random_two_point_mixture(
    rng: &mut ChaCha12Rng,
    ybar: f64,
    n_pairs: usize,
    max_spread: f64,
) -> Measure {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for _ in 0..n_pairs {
        let lo = ybar - rng.random_range(0.2 * max_spread..max_spread);
        let hi = ybar + rng.random_range(0.2 * max_spread..max_spread);
        let lambda = (ybar - hi) / (lo - hi);
        let w = rng.random_range(0.2..1.0);
        pairs.push((lo, w * lambda));
        pairs.push((hi, w * (1.0 - lambda)));
    }
    DiscreteMeasure::normalized(pairs, &cfg()).unwrap()
}

/// Martingale coupling of fresh x-atoms onto a fixed y-grid: each x-atom is
/// defined as the barycenter of a random kernel over the grid, so the
/// martingale property holds by construction.
pub fn random_coupling_onto(
    rng: &mut ChaCha12Rng,
    nx: usize,
    y_atoms: &[f64],
    y_weights_out: Option<&mut Vec<f64>>,
) -> Coupling2<f64> {
    let ny = y_atoms.len();
    loop {
        let mut rows: Vec<(f64, f64, Vec<f64>)> = Vec::new(); // (x, w, kernel)
        for _ in 0..nx {
            let mut kernel: Vec<f64> = (0..ny).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = kernel.iter().sum();
            for k in kernel.iter_mut() {
                *k /= total;
            }
            let x: f64 = kernel.iter().zip(y_atoms).map(|(p, y)| p * y).sum();
            let w = rng.random_range(0.2..1.0);
            rows.push((x, w, kernel));
        }
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if rows.windows(2).any(|w| w[1].0 - w[0].0 <= 1e-9) {
            continue;
        }
        let wsum: f64 = rows.iter().map(|r| r.1).sum();
        let x_atoms: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut entries = Vec::new();
        for (i, (_, w, kernel)) in rows.iter().enumerate() {
            for (j, p) in kernel.iter().enumerate() {
                entries.push(((i, j), w / wsum * p));
            }
        }
        let coupling = Coupling2::from_entries(x_atoms, y_atoms.to_vec(), entries).unwrap();
        if let Some(out) = y_weights_out {
            *out = coupling.col_masses();
        }
        return coupling;
    }
}

/// Martingale coupling from a given first marginal onto a z-grid that
/// brackets every source atom: each conditional is a random mixture of
/// bracketing two-point kernels.
pub fn random_coupling_from(
    rng: &mut ChaCha12Rng,
    source: &Measure,
    z_atoms: &[f64],
) -> Coupling2<f64> {
    let nz = z_atoms.len();
    let mut entries = Vec::new();
    for (i, (&y, &w)) in source.iter().enumerate() {
        let below: Vec<usize> = (0..nz).filter(|&k| z_atoms[k] < y).collect();
        let above: Vec<usize> = (0..nz).filter(|&k| z_atoms[k] > y).collect();
        assert!(
            !below.is_empty() && !above.is_empty(),
            "z grid must bracket every source atom"
        );
        let n_mix = 2.min(below.len()).min(above.len());
        let mut kernel = vec![0.0f64; nz];
        for _ in 0..n_mix {
            let lo = z_atoms[below[rng.random_range(0..below.len())]];
            let hi = z_atoms[above[rng.random_range(0..above.len())]];
            let lambda = (y - hi) / (lo - hi);
            let mix = rng.random_range(0.2..1.0);
            let ilo = z_atoms.iter().position(|&z| z == lo).unwrap();
            let ihi = z_atoms.iter().position(|&z| z == hi).unwrap();
            kernel[ilo] += mix * lambda;
            kernel[ihi] += mix * (1.0 - lambda);
        }
        let total: f64 = kernel.iter().sum();
        for (k, v) in kernel.iter().enumerate() {
            if *v > 0.0 {
                entries.push(((i, k), w * v / total));
            }
        }
    }
    Coupling2::from_entries(source.atoms().to_vec(), z_atoms.to_vec(), entries).unwrap()
}

/// Three-period program with the (x, y) and (y, z) projections pinned to
/// given couplings; the optimal value over `cost3(x, z)` is the oracle for
/// the overlapping-marginals decomposition.
pub fn constrained_mot3_value(
    pxy: &Coupling2<f64>,
    pyz: &Coupling2<f64>,
    cost3: impl Fn(&f64, &f64) -> f64,
    sense: Sense,
) -> f64 {
    let mx = DiscreteMeasure::new(
        pxy.x_atoms()
            .iter()
            .cloned()
            .zip(pxy.row_masses())
            .collect(),
        &cfg(),
    )
    .unwrap();
    let my = DiscreteMeasure::new(
        pxy.y_atoms()
            .iter()
            .cloned()
            .zip(pxy.col_masses())
            .collect(),
        &cfg(),
    )
    .unwrap();
    let mz = DiscreteMeasure::new(
        pyz.y_atoms()
            .iter()
            .cloned()
            .zip(pyz.col_masses())
            .collect(),
        &cfg(),
    )
    .unwrap();
    let (lp, layout) = mot3_lp(&mx, &my, &mz, |x, _, z| cost3(x, z), sense);
    let mut rows: Vec<Vec<f64>> = (0..lp.num_constraints())
        .map(|i| lp.constraints.row(i).to_vec())
        .collect();
    let mut rhs = lp.rhs.clone();
    for i in 0..layout.nx {
        for j in 0..layout.ny {
            let mut r = vec![0.0; layout.num_vars()];
            for k in 0..layout.nz {
                r[layout.var(i, j, k)] = 1.0;
            }
            rows.push(r);
            rhs.push(pxy.get(i, j));
        }
    }
    for j in 0..layout.ny {
        for k in 0..layout.nz {
            let mut r = vec![0.0; layout.num_vars()];
            for i in 0..layout.nx {
                r[layout.var(i, j, k)] = 1.0;
            }
            rows.push(r);
            rhs.push(pyz.get(j, k));
        }
    }
    let constrained = LinearProgram::new(lp.objective.clone(), rows, rhs, sense).unwrap();
    let sol = motlp::lp::solve(&constrained, &cfg()).unwrap();
    assert_eq!(sol.status, motlp::lp::LpStatus::Optimal);
    sol.value
}

// ---------------------------------------------------------------------------
// Exact rational vertex enumeration
// ---------------------------------------------------------------------------

pub mod exact {
    use super::*;
    use num_traits::Zero;

    pub type Q = Rational;

    fn q(v: f64) -> Q {
        Q::from_f64(v)
    }

    /// Advances a sorted r-combination of `0..n`; false when exhausted.
    fn next_combination(combo: &mut [usize], n: usize) -> bool {
        let r = combo.len();
        let mut i = r;
        while i > 0 {
            i -= 1;
            if combo[i] < n - r + i {
                combo[i] += 1;
                for j in i + 1..r {
                    combo[j] = combo[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }

    /// Equality-form feasible region `{A x = b, x ≥ 0}` in exact rationals.
    pub struct ExactProblem {
        pub objective: Vec<Q>,
        pub rows: Vec<Vec<Q>>,
        pub rhs: Vec<Q>,
    }

    impl ExactProblem {
        /// Exact copy of an `f64` program (every finite double is an exact
        /// rational).
        pub fn from_f64(lp: &LinearProgram<f64>) -> Self {
            ExactProblem {
                objective: lp.objective.iter().map(|&v| q(v)).collect(),
                rows: (0..lp.num_constraints())
                    .map(|i| lp.constraints.row(i).iter().map(|&v| q(v)).collect())
                    .collect(),
                rhs: lp.rhs.iter().map(|&v| q(v)).collect(),
            }
        }

        /// Indices of a maximal independent row subset; `None` when the
        /// system is inconsistent.
        fn independent_rows(&self) -> Option<Vec<usize>> {
            let n = self.objective.len();
            let mut reduced: Vec<(Vec<Q>, Q)> = Vec::new();
            let mut kept = Vec::new();
            for (idx, row) in self.rows.iter().enumerate() {
                let mut a = row.clone();
                let mut b = self.rhs[idx].clone();
                for (r, rb) in &reduced {
                    let lead = r.iter().position(|v| !v.is_zero()).unwrap();
                    if !a[lead].is_zero() {
                        let f = a[lead].clone() / r[lead].clone();
                        for j in 0..n {
                            a[j] = a[j].clone() - f.clone() * r[j].clone();
                        }
                        b = b - f * rb.clone();
                    }
                }
                if a.iter().all(|v| v.is_zero()) {
                    if !b.is_zero() {
                        return None;
                    }
                    continue;
                }
                reduced.push((a, b));
                kept.push(idx);
            }
            Some(kept)
        }

        /// All basic feasible solutions (vertices of the polytope), found
        /// by solving every full-rank column subset exactly and keeping the
        /// nonnegative consistent ones.
        pub fn vertices(&self) -> Vec<Vec<Q>> {
            let n = self.objective.len();
            let rows = match self.independent_rows() {
                Some(r) => r,
                None => return Vec::new(),
            };
            let r = rows.len();
            assert!(r <= n, "more independent rows than variables");
            let mut out: Vec<Vec<Q>> = Vec::new();
            let mut combo: Vec<usize> = (0..r).collect();
            loop {
                if let Some(x) = self.try_basis(&rows, &combo) {
                    if !out.contains(&x) {
                        out.push(x);
                    }
                }
                if !next_combination(&mut combo, n) {
                    return out;
                }
            }
        }

        fn try_basis(&self, rows: &[usize], cols: &[usize]) -> Option<Vec<Q>> {
            let r = rows.len();
            // square system over the chosen columns, solved by exact
            // elimination local to the oracle
            let mut a: Vec<Vec<Q>> = rows
                .iter()
                .map(|&ri| cols.iter().map(|&cj| self.rows[ri][cj].clone()).collect())
                .collect();
            let mut b: Vec<Q> = rows.iter().map(|&ri| self.rhs[ri].clone()).collect();
            for col in 0..r {
                let pivot_row = (col..r).find(|&i| !a[i][col].is_zero())?;
                a.swap(col, pivot_row);
                b.swap(col, pivot_row);
                let pivot = a[col][col].clone();
                for i in 0..r {
                    if i == col {
                        continue;
                    }
                    if a[i][col].is_zero() {
                        continue;
                    }
                    let f = a[i][col].clone() / pivot.clone();
                    for j in col..r {
                        a[i][j] = a[i][j].clone() - f.clone() * a[col][j].clone();
                    }
                    b[i] = b[i].clone() - f * b[col].clone();
                }
            }
            let mut x = vec![Q::from_f64(0.0); self.objective.len()];
            for (slot, &cj) in cols.iter().enumerate() {
                let v = b[slot].clone() / a[slot][slot].clone();
                if v < Q::from_f64(0.0) {
                    return None;
                }
                x[cj] = v;
            }
            // verify the full system: guards against degenerate subsets
            for (row, rb) in self.rows.iter().zip(&self.rhs) {
                let lhs = row
                    .iter()
                    .zip(&x)
                    .fold(Q::from_f64(0.0), |acc, (a, v)| acc + a.clone() * v.clone());
                if lhs != *rb {
                    return None;
                }
            }
            Some(x)
        }

        fn value(&self, x: &[Q]) -> Q {
            self.objective
                .iter()
                .zip(x)
                .fold(Q::from_f64(0.0), |acc, (c, v)| acc + c.clone() * v.clone())
        }

        /// Optimal value and the set of optimal vertices.
        pub fn optimum(&self, sense: Sense) -> Option<(Q, Vec<Vec<Q>>)> {
            let vertices = self.vertices();
            let mut best: Option<Q> = None;
            for v in &vertices {
                let val = self.value(v);
                best = Some(match best {
                    None => val,
                    Some(b) => match sense {
                        Sense::Minimize => {
                            if val < b {
                                val
                            } else {
                                b
                            }
                        }
                        Sense::Maximize => {
                            if val > b {
                                val
                            } else {
                                b
                            }
                        }
                    },
                });
            }
            let best = best?;
            let argmin: Vec<Vec<Q>> = vertices
                .into_iter()
                .filter(|v| self.value(v) == best)
                .collect();
            Some((best, argmin))
        }

        /// Best secondary value over the primary-optimal vertex set.
        pub fn lexicographic_optimum(
            &self,
            secondary: &[Q],
            sense1: Sense,
            sense2: Sense,
        ) -> Option<(Q, Q)> {
            let (primary, face) = self.optimum(sense1)?;
            let mut best: Option<Q> = None;
            for v in &face {
                let val = secondary
                    .iter()
                    .zip(v)
                    .fold(Q::from_f64(0.0), |acc, (c, x)| acc + c.clone() * x.clone());
                best = Some(match best {
                    None => val,
                    Some(b) => match sense2 {
                        Sense::Minimize => {
                            if val < b {
                                val
                            } else {
                                b
                            }
                        }
                        Sense::Maximize => {
                            if val > b {
                                val
                            } else {
                                b
                            }
                        }
                    },
                });
            }
            Some((primary, best?))
        }
    }
}
