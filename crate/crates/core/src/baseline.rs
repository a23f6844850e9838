//! Risk-neutral baseline: total-cost value iteration.
//!
//! Iterates V ← min_u [c(x, u) + Σ_y Pr(y | x, u) V(y)] from V ≡ 0 until the
//! sup-norm change drops below a tolerance. On models that satisfy the cost
//! positivity and absorption assumptions this converges monotonically from
//! below to the optimal expected total cost. The greedy policy is the
//! comparison point for the risk-averse solver: it has the best mean but may
//! carry a heavy upper tail.

use thiserror::Error;

use crate::mdp::Mdp;

/// Iteration cap; reaching it signals a modeling bug (absorption assumption
/// violated or a tolerance far below attainable precision).
pub const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid tolerance {0}, expected a strictly positive value")]
    InvalidTolerance(f64),
    #[error("value iteration did not converge within {MAX_ITERATIONS} iterations")]
    IterationCap,
}

/// Optimal expected total cost per state and a greedy deterministic policy.
///
/// `values[x]` is the expected cost-to-absorption from x; `policy[x]` is the
/// index into `mdp.actions(x)` of the chosen action. Ties are broken by
/// action declaration order so runs are reproducible.
#[derive(Debug, Clone)]
pub struct BaselineSolution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
}

impl BaselineSolution {
    /// The β-weighted expected total cost.
    pub fn initial_value(&self, mdp: &Mdp) -> f64 {
        mdp.initial()
            .iter()
            .zip(&self.values)
            .map(|(&b, &v)| b * v)
            .sum()
    }
}

/// Runs value iteration until the sup-norm update is at most `tol`.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> Result<BaselineSolution, BaselineError> {
    if !(tol > 0.0) {
        return Err(BaselineError::InvalidTolerance(tol));
    }
    let n = mdp.n_states();
    let mut values = vec![0.0; n];
    let mut policy = vec![0usize; n];
    for _ in 0..MAX_ITERATIONS {
        let mut delta = 0.0f64;
        for x in 0..n {
            if !mdp.is_transient(x) {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut best_u = 0;
            for (u, action) in mdp.actions(x).iter().enumerate() {
                let mut q = action.cost();
                for &(t, p) in action.transitions() {
                    q += p * values[t];
                }
                if q < best {
                    best = q;
                    best_u = u;
                }
            }
            delta = delta.max((best - values[x]).abs());
            values[x] = best;
            policy[x] = best_u;
        }
        if delta <= tol {
            return Ok(BaselineSolution { values, policy });
        }
    }
    Err(BaselineError::IterationCap)
}
