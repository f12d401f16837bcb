//! Discrete probability measures on the real line.
//!
//! The convex order test uses potential functions: `U_m(t) = ∫|t − x| dm`
//! is piecewise linear with kinks only at the atoms of `m`, so two measures
//! with equal means are in convex order exactly when the potentials are
//! pointwise ordered at the atoms of both measures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::Config;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("measure needs at least one atom")]
    Empty,
    #[error("atom {index} has negative weight {weight}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("weights sum to {sum}, expected 1 within {tol:e}")]
    WeightSum { sum: f64, tol: f64 },
    #[error("non-finite atom position or weight at index {index}")]
    NonFinite { index: usize },
    #[error("cannot normalize: total mass {total} is not positive")]
    ZeroMass { total: f64 },
}

/// A probability measure with finitely many atoms, positions strictly
/// increasing. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure<S> {
    atoms: Vec<S>,
    weights: Vec<S>,
}

impl<S: Scalar> DiscreteMeasure<S> {
    /// Builds a measure from (position, weight) pairs. Pairs are sorted,
    /// positions within `cfg.merge_tol` are merged by weight addition, and
    /// the result must carry total mass one within `cfg.weight_sum_tol`.
    /// Zero-weight atoms are retained.
    pub fn new(pairs: Vec<(S, S)>, cfg: &Config) -> Result<Self, MeasureError> {
        let m = Self::collect(pairs, cfg)?;
        let sum = m.total_mass().to_f64();
        if (sum - 1.0).abs() > cfg.weight_sum_tol {
            return Err(MeasureError::WeightSum {
                sum,
                tol: cfg.weight_sum_tol,
            });
        }
        Ok(m)
    }

    /// Builds a measure and rescales the weights so they sum to one exactly
    /// (in the ambient arithmetic). Used for conditional distributions.
    pub fn normalized(pairs: Vec<(S, S)>, cfg: &Config) -> Result<Self, MeasureError> {
        let mut m = Self::collect(pairs, cfg)?;
        let total = m.total_mass();
        if total <= S::zero() {
            return Err(MeasureError::ZeroMass {
                total: total.to_f64(),
            });
        }
        for w in &mut m.weights {
            *w = w.clone() / total.clone();
        }
        Ok(m)
    }

    /// Convenience constructor for a point mass.
    pub fn dirac(position: S) -> Self {
        DiscreteMeasure {
            atoms: vec![position],
            weights: vec![S::one()],
        }
    }

    /// Convenience constructor from f64 pairs under default tolerances.
    pub fn from_f64_pairs(pairs: &[(f64, f64)], cfg: &Config) -> Result<Self, MeasureError> {
        Self::new(
            pairs
                .iter()
                .map(|&(x, w)| (S::from_f64(x), S::from_f64(w)))
                .collect(),
            cfg,
        )
    }

    fn collect(mut pairs: Vec<(S, S)>, cfg: &Config) -> Result<Self, MeasureError> {
        if pairs.is_empty() {
            return Err(MeasureError::Empty);
        }
        for (i, (x, w)) in pairs.iter().enumerate() {
            if !x.is_finite_val() || !w.is_finite_val() {
                return Err(MeasureError::NonFinite { index: i });
            }
            if *w < S::zero() {
                return Err(MeasureError::NegativeWeight {
                    index: i,
                    weight: w.to_f64(),
                });
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite positions"));
        let merge = S::from_f64(cfg.merge_tol);
        let mut atoms: Vec<S> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<S> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            match atoms.last() {
                Some(last) if x.clone() - last.clone() <= merge => {
                    let lw = weights.last_mut().expect("non-empty");
                    *lw = lw.clone() + w;
                }
                _ => {
                    atoms.push(x);
                    weights.push(w);
                }
            }
        }
        Ok(DiscreteMeasure { atoms, weights })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[S] {
        &self.atoms
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, &S)> {
        self.atoms.iter().zip(self.weights.iter())
    }

    pub fn min_atom(&self) -> &S {
        &self.atoms[0]
    }

    pub fn max_atom(&self) -> &S {
        &self.atoms[self.atoms.len() - 1]
    }

    pub fn total_mass(&self) -> S {
        self.weights
            .iter()
            .fold(S::zero(), |acc, w| acc + w.clone())
    }

    /// First moment `Σ w_i x_i`.
    pub fn mean(&self) -> S {
        self.iter()
            .fold(S::zero(), |acc, (x, w)| acc + x.clone() * w.clone())
    }

    /// Second central moment.
    pub fn variance(&self) -> S {
        let mean = self.mean();
        self.iter().fold(S::zero(), |acc, (x, w)| {
            let d = x.clone() - mean.clone();
            acc + d.clone() * d * w.clone()
        })
    }

    /// Potential function `U(t) = Σ w_i |t − x_i|`, convex and piecewise
    /// linear in `t` with kinks only at the atoms.
    pub fn potential(&self, t: &S) -> S {
        self.iter().fold(S::zero(), |acc, (x, w)| {
            acc + (t.clone() - x.clone()).abs() * w.clone()
        })
    }

    /// Convolution with a cost: `Σ w_i f(x_i)`.
    pub fn integrate(&self, f: impl Fn(&S) -> S) -> S {
        self.iter()
            .fold(S::zero(), |acc, (x, w)| acc + f(x) * w.clone())
    }
}

/// Convex order test `a ⪯_c b`: equal means within `tol` and
/// `U_a(t) ≤ U_b(t) + tol` at every atom of either measure. Checking at the
/// atoms is sufficient because both potentials are piecewise linear with
/// kinks only there and they agree asymptotically when means are equal.
pub fn convex_order_leq<S: Scalar>(a: &DiscreteMeasure<S>, b: &DiscreteMeasure<S>, tol: &S) -> bool {
    if (a.mean() - b.mean()).abs() > *tol {
        return false;
    }
    for t in a.atoms().iter().chain(b.atoms().iter()) {
        if a.potential(t) > b.potential(t) + tol.clone() {
            return false;
        }
    }
    true
}
