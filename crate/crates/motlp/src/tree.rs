//! Tree-like benchmark model: each transition is the martingale coupling
//! minimizing the deviation `|next − current|^p` over the step, the two
//! steps are glued Markovianly, and the glued plan prices the pairwise
//! cost. The plan is feasible for the three-period problem, so its price
//! always lies between the exact lower and upper bounds.

use num_traits::pow::pow;

use crate::lp::Sense;
use crate::measure::DiscreteMeasure;
use crate::mot::{solve_mot2, CostSpec, Coupling3, MotError};
use crate::scalar::Scalar;
use crate::structure::markov_glue;
use crate::Config;

#[derive(Debug, Clone)]
pub struct TreePrice<S> {
    pub p: u32,
    pub value: S,
    pub coupling: Coupling3<S>,
}

/// Prices `c1 + c2 + ε c3` under the minimal-|Δ|^p model. Ties among
/// deviation-optimal couplings resolve through the solver's deterministic
/// pivoting (for `p = 2` every martingale coupling is deviation-optimal and
/// the solver returns an extreme point).
pub fn tree_price<S: Scalar>(
    mx: &DiscreteMeasure<S>,
    my: &DiscreteMeasure<S>,
    mz: &DiscreteMeasure<S>,
    p: u32,
    cost: &CostSpec<S>,
    eps: &S,
    cfg: &Config,
) -> Result<TreePrice<S>, MotError> {
    if p == 0 {
        return Err(MotError::Invalid {
            context: "deviation exponent must be at least 1".into(),
        });
    }
    let deviation = move |a: &S, b: &S| pow((b.clone() - a.clone()).abs(), p as usize);
    let pxy = solve_mot2(mx, my, deviation, Sense::Minimize, cfg)?;
    let pyz = solve_mot2(my, mz, deviation, Sense::Minimize, cfg)?;
    let coupling = markov_glue(&pxy.coupling, &pyz.coupling, cfg)?;
    let value = coupling.value(|x, y, z| cost.total_with_eps(x, y, z, eps));
    Ok(TreePrice { p, value, coupling })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> Config {
        Config::default()
    }

    fn m(pairs: &[(f64, f64)]) -> DiscreteMeasure<f64> {
        DiscreteMeasure::from_f64_pairs(pairs, &cfg()).unwrap()
    }

    #[test]
    fn quadratic_deviation_value_is_the_variance_telescope() {
        // For p = 2 the deviation objective of any martingale plan equals
        // E z^2 - E x^2.
        let mx = m(&[(0.5, 0.5), (1.5, 0.5)]);
        let my = m(&[(0.0, 0.25), (1.0, 0.5), (2.0, 0.25)]);
        let mz = m(&[(-1.0, 0.25), (1.0, 0.5), (3.0, 0.25)]);
        let price = tree_price(
            &mx,
            &my,
            &mz,
            2,
            &CostSpec::new(
                |x: &f64, y: &f64| (y - x).powi(2),
                |y: &f64, z: &f64| (z - y).powi(2),
                |_: &f64, _: &f64| 0.0,
                0.0,
            ),
            &0.0,
            &cfg(),
        )
        .unwrap();
        let expected = mz.integrate(|z| z * z) - mx.integrate(|x| x * x);
        assert!((price.value - expected).abs() < 1e-9);
    }

    #[test]
    fn forced_chain_price_is_p_independent() {
        let mx = m(&[(1.0, 1.0)]);
        let my = m(&[(1.0, 1.0)]);
        let mz = m(&[(0.0, 0.5), (2.0, 0.5)]);
        let cost = CostSpec::straddle_basket(1.0);
        let mut prices = Vec::new();
        for p in 1..=3 {
            let t = tree_price(&mx, &my, &mz, p, &cost, &1.0, &cfg()).unwrap();
            prices.push(t.value);
        }
        for w in prices.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-9);
        }
        // unique coupling: half mass to z = 0 and z = 2 through y = 1
        let expected = 0.5 * cost.total(&1.0, &1.0, &0.0) + 0.5 * cost.total(&1.0, &1.0, &2.0);
        assert!((prices[0] - expected).abs() < 1e-9);
    }
}
