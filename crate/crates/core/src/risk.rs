//! Value at Risk and Average Value at Risk on finite cost distributions.
//!
//! For a random cost Y and confidence level τ ∈ (0, 1):
//!
//! * VaR_τ(Y) = inf{η : Pr(Y ≤ η) ≥ τ}, the τ-quantile;
//! * AVaR_τ(Y) = min_s { s + E[(Y − s)⁺] / (1 − τ) }, the mean of the upper
//!   (1 − τ) tail.
//!
//! The minimizing s is VaR_τ(Y), which gives the closed form used here:
//! AVaR_τ(Y) = q + Σ_{y > q} (y − q)·Pr(Y = y) / (1 − τ) with q = VaR_τ(Y).
//! When the distribution has an atom straddling τ, the closed form splits it
//! automatically, no special casing needed.
//!
//! The module also evaluates the two error bounds of the solver pipeline: the
//! horizon-truncation bound (geometric in the absorption rate γ) and the
//! cost-discretization bound d·ζ.

use thiserror::Error;

/// Tolerance for "masses sum to one" on distributions assembled from solver
/// output or empirical counts.
pub const MASS_TOL: f64 = 1e-9;

/// Errors from distribution construction and risk evaluation.
#[derive(Debug, Error)]
pub enum RiskError {
    #[error("invalid tau: must be in (0, 1), got {tau}")]
    InvalidTau { tau: f64 },
    #[error("distribution has no atoms")]
    Empty,
    #[error("cost {value} is negative or not finite")]
    BadSupportValue { value: f64 },
    #[error("mass {mass} at cost {value} is negative")]
    NegativeMass { value: f64, mass: f64 },
    #[error("masses sum to {sum}, expected 1 within {MASS_TOL}")]
    MassSum { sum: f64 },
    #[error("invalid {name}: {value} (expected {expected})")]
    InvalidParameter { name: &'static str, value: f64, expected: &'static str },
}

/// A finite distribution over nonnegative costs.
///
/// Support values are strictly increasing and every atom has positive mass;
/// [`CostDistribution::from_pairs`] sorts, merges duplicates, and drops
/// zero-mass entries to establish that shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDistribution {
    support: Vec<f64>,
    mass: Vec<f64>,
}

fn check_tau(tau: f64) -> Result<(), RiskError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(RiskError::InvalidTau { tau })
    }
}

impl CostDistribution {
    /// Builds a distribution from (cost, mass) pairs.
    ///
    /// Pairs may arrive in any order and may repeat a cost; repeated costs
    /// are merged by summing mass (only exactly equal values merge, callers
    /// that need tolerant matching should align atoms first). Entries with
    /// mass ≤ 0 are dropped after a negativity check. The total mass must be
    /// 1 within [`MASS_TOL`].
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, RiskError> {
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for &(value, mass) in pairs {
            if !value.is_finite() || value < 0.0 {
                return Err(RiskError::BadSupportValue { value });
            }
            if mass < -1e-12 {
                return Err(RiskError::NegativeMass { value, mass });
            }
            sorted.push((value, mass));
        }
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support = Vec::new();
        let mut mass = Vec::new();
        for (value, m) in sorted {
            if support.last() == Some(&value) {
                *mass.last_mut().unwrap() += m;
            } else {
                support.push(value);
                mass.push(m);
            }
        }
        let mut keep = 0;
        for i in 0..support.len() {
            if mass[i] > 0.0 {
                support[keep] = support[i];
                mass[keep] = mass[i];
                keep += 1;
            }
        }
        support.truncate(keep);
        mass.truncate(keep);
        if support.is_empty() {
            return Err(RiskError::Empty);
        }
        let sum: f64 = mass.iter().sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(RiskError::MassSum { sum });
        }
        Ok(CostDistribution { support, mass })
    }

    /// A distribution concentrated on one cost.
    pub fn point_mass(value: f64) -> Result<Self, RiskError> {
        Self::from_pairs(&[(value, 1.0)])
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Atoms as (cost, mass) pairs in increasing cost order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.mass.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(y, m)| y * m).sum()
    }

    /// VaR_τ: the smallest support value whose cumulative mass reaches τ.
    pub fn var(&self, tau: f64) -> Result<f64, RiskError> {
        check_tau(tau)?;
        let mut cum = 0.0;
        for (y, m) in self.iter() {
            cum += m;
            if cum >= tau {
                return Ok(y);
            }
        }
        // Rounding can leave the final cumulative a hair under τ; the last
        // atom is the quantile for every τ ≤ 1.
        Ok(*self.support.last().expect("nonempty by construction"))
    }

    /// AVaR_τ via the tail-average closed form.
    ///
    /// Equals the minimum over s of [`CostDistribution::avar_objective`];
    /// the minimizer is `var(tau)`.
    pub fn avar(&self, tau: f64) -> Result<f64, RiskError> {
        let q = self.var(tau)?;
        let tail: f64 = self
            .iter()
            .filter(|&(y, _)| y > q)
            .map(|(y, m)| (y - q) * m)
            .sum();
        Ok(q + tail / (1.0 - tau))
    }

    /// The objective s + E[(Y − s)⁺] / (1 − τ) whose minimum over s is AVaR_τ.
    pub fn avar_objective(&self, tau: f64, s: f64) -> Result<f64, RiskError> {
        check_tau(tau)?;
        let tail: f64 = self
            .iter()
            .filter(|&(y, _)| y > s)
            .map(|(y, m)| (y - s) * m)
            .sum();
        Ok(s + tail / (1.0 - tau))
    }

    /// Serializes as two-column CSV with a `cost,prob` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cost,prob\n");
        for (y, m) in self.iter() {
            out.push_str(&format!("{y},{m}\n"));
        }
        out
    }
}

/// Upper bound on the optimality loss from truncating the process after d
/// steps: n·K̄·(1−γ)^⌊(d+1)/n⌋ / (1−τ). Zero when γ = 1 (absorption within n
/// steps is certain).
pub fn suboptimality_gap(
    n: usize,
    k_upper: f64,
    gamma: f64,
    tau: f64,
    d: u32,
) -> Result<f64, RiskError> {
    check_tau(tau)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(RiskError::InvalidParameter {
            name: "gamma",
            value: gamma,
            expected: "a value in (0, 1]",
        });
    }
    if d < 1 {
        return Err(RiskError::InvalidParameter {
            name: "d",
            value: d as f64,
            expected: "a horizon of at least 1",
        });
    }
    let exponent = (d + 1) / n as u32;
    Ok(n as f64 * k_upper * (1.0 - gamma).powi(exponent as i32) / (1.0 - tau))
}

/// Uniform bound d·ζ on |ζ·y_t − c_t| over all stages t ≤ d, where y_t is the
/// discretized accumulated cost and c_t the exact one.
pub fn discretization_error_bound(zeta: f64, d: u32) -> f64 {
    zeta * d as f64
}
