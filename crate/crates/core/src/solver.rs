//! Occupancy-measure linear program over the augmented chain.
//!
//! For every augmented state σ = (x, y, z) and action u there is an
//! occupancy variable ρ(σ, u) ≥ 0, the probability of being in σ and picking
//! u. Flow conservation ties them to the dynamics:
//!
//! ```text
//! Σ_u ρ(σ, u) − Σ_{σ', u'} P'(σ | σ', u')·ρ(σ', u') = β'(σ)
//! ```
//!
//! Layer-d states keep one variable per action as arrival bookkeeping, and
//! per cost level k a variable θ(k) collects Σ ρ over layer-d states with
//! y = k. Because the stage counter always advances, every trajectory hits
//! layer d exactly once and θ is the probability law of the discretized
//! truncated cost.
//!
//! For a fixed tail threshold s the objective
//!
//! ```text
//! s + (1/(1−τ)) Σ_k (ζ·k − s)⁺ θ(k)
//! ```
//!
//! is linear in (ρ, θ), so each s is one LP solve. For any fixed θ the
//! objective is piecewise linear in s with breakpoints only at support
//! values ζ·k, so scanning the breakpoint grid {ζ·k : 0 ≤ k ≤ N} is exact
//! for the discretized problem; the best solve yields the AVaR-optimal
//! occupancy, and normalizing ρ per state recovers the optimal randomized
//! policy.
//!
//! The simplex backend sits behind [`LpSolver`]; any solver of
//! "minimize cᵀx subject to Ax = b, x ≥ 0" with 1e-8 accuracy fits.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentedMdp, Discretization};
use crate::mdp::MdpError;
use crate::risk::{CostDistribution, RiskError};

/// Occupancy below this threshold counts as "never reached"; such states get
/// the uniform policy because any choice there is measure zero.
pub const OCCUPANCY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid {name}: {value} (expected {expected})")]
    InvalidParameter { name: &'static str, value: f64, expected: &'static str },
    #[error("initial mass vector has {got} entries, augmented chain has {expected}")]
    BetaMismatch { expected: usize, got: usize },
    #[error("occupancy LP is infeasible, which indicates a construction bug")]
    Infeasible,
    #[error("occupancy LP is unbounded, which indicates a construction bug")]
    Unbounded,
    #[error("LP backend failed: {0}")]
    Backend(String),
    #[error("policy has no distribution for augmented state ({x}, {y}, {z})")]
    PolicyGap { x: String, y: u32, z: u32 },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Model(#[from] MdpError),
}

/// A solved LP: optimal value and one optimal basic assignment.
#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub objective: f64,
    pub values: Vec<f64>,
}

/// Minimal contract for the simplex backend: minimize `objective`·x subject
/// to one equality per row and x ≥ 0. Rows hold sparse (column, coefficient)
/// pairs with no repeated column.
pub trait LpSolver {
    fn minimize(
        &self,
        objective: &[f64],
        rows: &[Vec<(usize, f64)>],
        rhs: &[f64],
    ) -> Result<LpOutcome, SolverError>;
}

/// The default backend, a sparse simplex implementation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Microlp;

impl LpSolver for Microlp {
    fn minimize(
        &self,
        objective: &[f64],
        rows: &[Vec<(usize, f64)>],
        rhs: &[f64],
    ) -> Result<LpOutcome, SolverError> {
        let mut problem = microlp::Problem::new(microlp::OptimizationDirection::Minimize);
        let vars: Vec<microlp::Variable> = objective
            .iter()
            .map(|&c| problem.add_var(c, (0.0, f64::INFINITY)))
            .collect();
        for (row, &b) in rows.iter().zip(rhs) {
            let mut expr = microlp::LinearExpr::empty();
            for &(col, coeff) in row {
                expr.add(vars[col], coeff);
            }
            problem.add_constraint(expr, microlp::ComparisonOp::Eq, b);
        }
        let outcome = problem.solve().map_err(|e| match e {
            microlp::Error::Infeasible => SolverError::Infeasible,
            microlp::Error::Unbounded => SolverError::Unbounded,
            other => SolverError::Backend(other.to_string()),
        })?;
        let solution = outcome
            .into_solution()
            .map_err(|_| SolverError::Backend("solve interrupted before optimality".into()))?;
        let values = vars.iter().map(|&v| solution.var_value(v)).collect();
        Ok(LpOutcome { objective: solution.objective(), values })
    }
}

/// The assembled occupancy LP. Immutable once built; every fixed-s solve
/// reuses the same constraint rows with a different objective.
#[derive(Debug)]
pub struct OccupancyLp {
    /// Variable layout: ρ variables first, grouped by augmented state in
    /// index order, then θ(0..=N).
    rho_vars: Vec<(usize, usize)>,
    var_offset: Vec<usize>,
    n_theta: usize,
    /// Flow rows first (one per state), then the θ accounting rows.
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    /// The cost level a ρ column feeds, for columns of layer-d states.
    terminal_level: Vec<Option<u32>>,
    n_flow_rows: usize,
    zeta: f64,
    s_max: f64,
}

impl OccupancyLp {
    /// Total variable count (ρ plus θ).
    pub fn n_variables(&self) -> usize {
        self.rho_vars.len() + self.n_theta
    }

    pub fn n_rho(&self) -> usize {
        self.rho_vars.len()
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    /// Column of ρ(state i, action u).
    pub fn rho_column(&self, i: usize, u: usize) -> usize {
        self.var_offset[i] + u
    }

    /// Sum of ρ over the actions of augmented state i.
    pub fn occupancy(&self, i: usize, rho: &[f64]) -> f64 {
        let lo = self.var_offset[i];
        let hi = if i + 1 < self.var_offset.len() {
            self.var_offset[i + 1]
        } else {
            self.rho_vars.len()
        };
        rho[lo..hi].iter().sum()
    }
}

/// Builds flow and θ-accounting constraints over exactly the reachable
/// variables. `beta_prime` must be aligned with `aug.states()`.
pub fn build_lp(aug: &AugmentedMdp, beta_prime: &[f64]) -> Result<OccupancyLp, SolverError> {
    if beta_prime.len() != aug.n_states() {
        return Err(SolverError::BetaMismatch {
            expected: aug.n_states(),
            got: beta_prime.len(),
        });
    }
    let disc = aug.disc();
    let n_states = aug.n_states();
    let mut rho_vars = Vec::new();
    let mut var_offset = Vec::with_capacity(n_states);
    for i in 0..n_states {
        var_offset.push(rho_vars.len());
        for u in 0..aug.n_actions(i) {
            rho_vars.push((i, u));
        }
    }
    let n_rho = rho_vars.len();
    let n_theta = disc.n_levels() as usize + 1;
    let terminal_level: Vec<Option<u32>> = rho_vars
        .iter()
        .map(|&(i, _)| aug.is_terminal(i).then(|| aug.state(i).y))
        .collect();

    // One flow row per state: outflow +1 on own variables, inflow −p from
    // predecessors. The stage counter makes the chain a DAG, so a variable
    // never hits its own row twice.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_states + n_theta];
    let mut rhs = vec![0.0; n_states + n_theta];
    for i in 0..n_states {
        for u in 0..aug.n_actions(i) {
            rows[i].push((var_offset[i] + u, 1.0));
        }
        rhs[i] = beta_prime[i];
    }
    for i in 0..n_states {
        if aug.is_terminal(i) {
            continue;
        }
        for u in 0..aug.n_actions(i) {
            let col = var_offset[i] + u;
            for &(j, p) in aug.successors(i, u) {
                rows[j].push((col, -p));
            }
        }
    }
    // θ(k) equals the layer-d arrival mass at cost level k; absorbing-state
    // bookkeeping variables count too, because trajectories absorbed early
    // carry their frozen cost into the terminal layer.
    for i in 0..n_states {
        if !aug.is_terminal(i) {
            continue;
        }
        let k = aug.state(i).y as usize;
        for u in 0..aug.n_actions(i) {
            rows[n_states + k].push((var_offset[i] + u, -1.0));
        }
    }
    for k in 0..n_theta {
        rows[n_states + k].push((n_rho + k, 1.0));
    }

    let bounds = aug.mdp().cost_bounds()?;
    let s_max = bounds.k_upper * disc.d() as f64;
    Ok(OccupancyLp {
        rho_vars,
        var_offset,
        n_theta,
        rows,
        rhs,
        terminal_level,
        n_flow_rows: n_states,
        zeta: disc.zeta(),
        s_max,
    })
}

/// Result of one fixed-s solve.
#[derive(Debug, Clone)]
pub struct FixedSSolution {
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
    /// s + (1/(1−τ))·Σ (ζk − s)⁺ θ(k) at the optimum.
    pub objective: f64,
}

/// Minimizes the AVaR objective for one fixed tail threshold s.
pub fn solve_fixed_s(
    lp: &OccupancyLp,
    tau: f64,
    s: f64,
    solver: &impl LpSolver,
) -> Result<FixedSSolution, SolverError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SolverError::InvalidParameter {
            name: "tau",
            value: tau,
            expected: "a value in (0, 1)",
        });
    }
    if !(s >= 0.0 && s <= lp.s_max + 1e-12) {
        return Err(SolverError::InvalidParameter {
            name: "s",
            value: s,
            expected: "a threshold in [0, k_upper · d]",
        });
    }
    let n_rho = lp.rho_vars.len();
    let excess = |k: u32| {
        let e = lp.zeta * k as f64 - s;
        if e > 0.0 { e / (1.0 - tau) } else { 0.0 }
    };
    let mut objective = vec![0.0; lp.n_variables()];
    for k in 0..lp.n_theta {
        objective[n_rho + k] = excess(k as u32);
    }
    // The thousands of zero-cost ρ columns make the program heavily
    // degenerate, and the backend's basis factorization occasionally breaks
    // on such pivot paths. On a backend failure, fall back to solving with θ
    // substituted out; the reported objective is recomputed from θ at the
    // true s either way, so every returned value is the exact objective of
    // the solution it comes with.
    let (rho, theta) = match solver.minimize(&objective, &lp.rows, &lp.rhs) {
        Ok(outcome) => (
            outcome.values[..n_rho].to_vec(),
            outcome.values[n_rho..].to_vec(),
        ),
        Err(SolverError::Backend(_)) => solve_substituted(lp, &excess, solver)?,
        Err(other) => return Err(other),
    };
    let tail: f64 = theta
        .iter()
        .enumerate()
        .map(|(k, &m)| excess(k as u32) * m)
        .sum();
    Ok(FixedSSolution { rho, theta, objective: s + tail })
}

/// Backend-failure fallback: substitute θ out of the program (each level's
/// cost moves onto the layer-d ρ columns that feed it, only the flow rows
/// remain) and, if the factorization still breaks, escalate through
/// deterministic tie-breaking ramps on the column costs. A ramp separates
/// the otherwise identical zero-cost columns by far less than any mass the
/// solution carries, and the caller recomputes the true objective from the
/// returned θ, so a rescued solve still reports an honest value.
fn solve_substituted(
    lp: &OccupancyLp,
    excess: &impl Fn(u32) -> f64,
    solver: &impl LpSolver,
) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    let reduced: Vec<f64> = lp
        .terminal_level
        .iter()
        .map(|level| level.map_or(0.0, excess))
        .collect();
    let flow_rows = &lp.rows[..lp.n_flow_rows];
    let flow_rhs = &lp.rhs[..lp.n_flow_rows];
    let scale = reduced.iter().fold(1.0f64, |a, &b| a.max(b));
    let mut last_error = None;
    for ramp in [0.0, 1e-9, 1e-7, 1e-5] {
        let cost: Vec<f64> = if ramp == 0.0 {
            reduced.clone()
        } else {
            let step = ramp * scale / reduced.len() as f64;
            reduced
                .iter()
                .enumerate()
                .map(|(c, &v)| v + step * (c + 1) as f64)
                .collect()
        };
        match solver.minimize(&cost, flow_rows, flow_rhs) {
            Ok(outcome) => {
                let rho = outcome.values;
                let mut theta = vec![0.0; lp.n_theta];
                for (col, level) in lp.terminal_level.iter().enumerate() {
                    if let Some(k) = level {
                        theta[*k as usize] += rho[col];
                    }
                }
                return Ok((rho, theta));
            }
            Err(err @ SolverError::Backend(_)) => last_error = Some(err),
            Err(other) => return Err(other),
        }
    }
    Err(last_error.expect("the ladder attempted at least one solve"))
}

/// The best point of the s-grid: optimal occupancy, the cost law it induces,
/// the minimizing threshold, and the overall objective (the AVaR estimate).
#[derive(Debug, Clone)]
pub struct OccupancySolution {
    pub rho_star: Vec<f64>,
    pub theta_star: CostDistribution,
    pub s_star: f64,
    pub objective: f64,
    /// Upper bound on the optimality lost by subsampling the s-grid; 0 for
    /// stride 1. The objective's slope in s lies in [1 − 1/(1−τ), 1], so
    /// skipped breakpoints cost at most stride·ζ/(1−τ).
    pub grid_slack: f64,
}

/// Solves the LP on the breakpoint grid {ζ·k} ∩ [0, K̄·d] and keeps the best,
/// breaking ties toward smaller s.
///
/// `stride` subsamples the grid (every stride-th breakpoint, the last one
/// always included); stride 1 is exact because for any fixed θ the objective
/// is piecewise linear in s with breakpoints only on the grid.
///
/// The per-threshold optimum is convex in s (each fixed occupancy gives a
/// convex function of s; the pointwise minimum over the feasible set of a
/// jointly convex function stays convex), so the scan walks the grid in
/// ascending order and stops once the objective has risen clear of the best
/// value seen. That skips the large-s tail, where the LP is at its most
/// degenerate, without giving up exactness.
pub fn search_s(
    lp: &OccupancyLp,
    tau: f64,
    stride: u32,
    solver: &impl LpSolver,
) -> Result<OccupancySolution, SolverError> {
    if stride == 0 {
        return Err(SolverError::InvalidParameter {
            name: "stride",
            value: 0.0,
            expected: "a positive grid stride",
        });
    }
    let k_top = if lp.zeta > 0.0 {
        let exact = (lp.s_max / lp.zeta).min((lp.n_theta - 1) as f64);
        exact.floor() as u32
    } else {
        0
    };
    let mut grid: Vec<u32> = (0..=k_top).step_by(stride as usize).collect();
    if grid.last() != Some(&k_top) {
        grid.push(k_top);
    }
    let mut best: Option<(FixedSSolution, f64)> = None;
    let mut rises = 0u8;
    for &k in &grid {
        let s = lp.zeta * k as f64;
        let solved = solve_fixed_s(lp, tau, s, solver)?;
        let better = match &best {
            None => true,
            Some((incumbent, _)) => solved.objective < incumbent.objective,
        };
        if better {
            best = Some((solved, s));
            rises = 0;
        } else {
            let incumbent = best.as_ref().map(|(b, _)| b.objective).unwrap_or(0.0);
            // Convexity: once the objective is strictly above the incumbent,
            // no later grid point can beat it. Two consecutive rises guard
            // against a tie resolved the wrong way by roundoff.
            if solved.objective > incumbent + 1e-7 * (1.0 + incumbent.abs()) {
                rises += 1;
                if rises >= 2 {
                    break;
                }
            } else {
                rises = 0;
            }
        }
    }
    let (solved, s_star) = best.expect("grid contains at least one threshold");
    // Simplex vertices carry mass dust on the order of machine epsilon;
    // dropping atoms below the occupancy floor keeps the law clean and moves
    // its total by far less than the distribution-sum tolerance.
    let mut pairs: Vec<(f64, f64)> = solved
        .theta
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m > OCCUPANCY_FLOOR)
        .map(|(k, &m)| (lp.zeta * k as f64, m))
        .collect();
    // The accounting rows hold only to backend tolerance, so on large
    // programs the masses can miss 1 by a few parts in 1e9. Rescale such
    // near-misses; anything worse is a genuine defect and stays visible.
    let total: f64 = pairs.iter().map(|&(_, m)| m).sum();
    if (total - 1.0).abs() <= 1e-6 && total > 0.0 {
        for pair in &mut pairs {
            pair.1 /= total;
        }
    }
    let theta_star = CostDistribution::from_pairs(&pairs)?;
    let grid_slack = if stride == 1 {
        0.0
    } else {
        stride as f64 * lp.zeta / (1.0 - tau)
    };
    Ok(OccupancySolution {
        rho_star: solved.rho,
        theta_star,
        s_star,
        objective: solved.objective,
        grid_slack,
    })
}

/// A randomized policy over augmented states with z < d.
///
/// Maps (x, y, z) to a probability vector over U(x). Stage-d states make no
/// decisions and are not represented.
#[derive(Debug, Clone)]
pub struct AugmentedPolicy {
    disc: Discretization,
    map: HashMap<(usize, u32, u32), Vec<f64>>,
}

impl AugmentedPolicy {
    pub fn new(disc: Discretization) -> Self {
        AugmentedPolicy { disc, map: HashMap::new() }
    }

    pub fn disc(&self) -> &Discretization {
        &self.disc
    }

    pub fn insert(&mut self, x: usize, y: u32, z: u32, probs: Vec<f64>) {
        self.map.insert((x, y, z), probs);
    }

    /// The action distribution at (x, y, z), if the policy covers it.
    pub fn get(&self, x: usize, y: u32, z: u32) -> Option<&[f64]> {
        self.map.get(&(x, y, z)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Entries sorted by (z, y, x) for deterministic export and display.
    pub fn entries_sorted(&self) -> Vec<((usize, u32, u32), &[f64])> {
        let mut entries: Vec<_> = self.map.iter().map(|(&k, v)| (k, v.as_slice())).collect();
        entries.sort_by_key(|&((x, y, z), _)| (z, y, x));
        entries
    }
}

/// Normalizes the optimal occupancy into a policy: π(u | σ) = ρ(σ, u) / Σρ.
///
/// Covers every reachable state with z < d; states whose occupancy is below
/// [`OCCUPANCY_FLOOR`] get the uniform distribution, which is sound because
/// the induced chain reaches them with probability 0.
pub fn extract_policy(aug: &AugmentedMdp, lp: &OccupancyLp, rho: &[f64]) -> AugmentedPolicy {
    let mut policy = AugmentedPolicy::new(*aug.disc());
    for (i, s) in aug.states().iter().enumerate() {
        if aug.is_terminal(i) {
            continue;
        }
        let n_actions = aug.n_actions(i);
        let total = lp.occupancy(i, rho);
        let probs = if total > OCCUPANCY_FLOOR {
            // Zero out solver dust before normalizing; a vertex solution has
            // no genuine randomization at the 1e-12 scale.
            let mut raw: Vec<f64> = (0..n_actions)
                .map(|u| {
                    let p = rho[lp.rho_column(i, u)] / total;
                    if p > OCCUPANCY_FLOOR { p } else { 0.0 }
                })
                .collect();
            let kept: f64 = raw.iter().sum();
            for p in &mut raw {
                *p /= kept;
            }
            raw
        } else {
            vec![1.0 / n_actions as f64; n_actions]
        };
        policy.insert(s.x, s.y, s.z, probs);
    }
    policy
}

/// Forward-propagates β′ under a policy and reads the layer-d cost law.
///
/// This is the policy-evaluation inverse of the LP: feeding the extracted
/// optimal policy back in reproduces θ*.
pub fn induced_distribution(
    aug: &AugmentedMdp,
    policy: &AugmentedPolicy,
) -> Result<CostDistribution, SolverError> {
    let mut mass = aug.initial_mass();
    // States are indexed in BFS layer order, so a single forward pass visits
    // every state before its successors.
    for i in 0..aug.n_states() {
        if aug.is_terminal(i) || mass[i] == 0.0 {
            continue;
        }
        let s = aug.state(i);
        let probs = policy.get(s.x, s.y, s.z).ok_or_else(|| SolverError::PolicyGap {
            x: aug.mdp().state_name(s.x).to_string(),
            y: s.y,
            z: s.z,
        })?;
        let m = mass[i];
        for (u, &pu) in probs.iter().enumerate() {
            if pu == 0.0 {
                continue;
            }
            for &(j, p) in aug.successors(i, u) {
                mass[j] += m * pu * p;
            }
        }
        mass[i] = 0.0;
    }
    let zeta = aug.disc().zeta();
    let pairs: Vec<(f64, f64)> = aug
        .states()
        .iter()
        .enumerate()
        .filter(|&(i, _)| aug.is_terminal(i))
        .map(|(i, s)| (zeta * s.y as f64, mass[i]))
        .collect();
    Ok(CostDistribution::from_pairs(&pairs)?)
}

/// One policy row of the solution JSON: the state, the action, and its
/// probability. `y` and `z` are present for augmented policies and absent
/// for stationary ones (the baseline exporter leaves them out).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub x: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<u32>,
    pub action: String,
    pub prob: f64,
}

/// The solution JSON document.
///
/// Augmented solutions fill every field; stationary (baseline) exports keep
/// only `objective` and `policy`. The policy lists transient-state decisions
/// with positive occupancy; the absorbing state's single action is implied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionExport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u32>,
    /// Requested level count; with `d` and the model it reproduces the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_prime: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_star: Option<f64>,
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_bound: Option<f64>,
    pub policy: Vec<PolicyEntry>,
}

impl SolutionExport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("export types serialize");
        text.push('\n');
        text
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Renders the decisions of an augmented policy at states the optimal
/// occupancy actually visits, sorted by (z, y, x, action).
pub fn policy_rows(
    aug: &AugmentedMdp,
    lp: &OccupancyLp,
    rho: &[f64],
    policy: &AugmentedPolicy,
) -> Vec<PolicyEntry> {
    let mdp = aug.mdp();
    let mut rows = Vec::new();
    let mut indexed: Vec<(usize, (usize, u32, u32))> = aug
        .states()
        .iter()
        .enumerate()
        .filter(|&(i, s)| {
            !aug.is_terminal(i) && mdp.is_transient(s.x) && lp.occupancy(i, rho) > OCCUPANCY_FLOOR
        })
        .map(|(i, s)| (i, (s.x, s.y, s.z)))
        .collect();
    indexed.sort_by_key(|&(_, (x, y, z))| (z, y, x));
    for (_, (x, y, z)) in indexed {
        let Some(probs) = policy.get(x, y, z) else { continue };
        for (u, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                rows.push(PolicyEntry {
                    x: mdp.state_name(x).to_string(),
                    y: Some(y),
                    z: Some(z),
                    action: mdp.actions(x)[u].name().to_string(),
                    prob: p,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{build_augmented, discretization_step};
    use crate::mdp::Mdp;

    fn tiny2() -> Mdp {
        Mdp::builder()
            .state("A")
            .absorbing("xM")
            .action("A", "fast", 1.0, &[("xM", 0.5), ("A", 0.5)])
            .action("A", "slow", 2.0, &[("xM", 1.0)])
            .initial("A", 1.0)
            .build()
            .unwrap()
    }

    /// A policy that always picks the given action index at transient states.
    fn always(aug: &AugmentedMdp, action: usize) -> AugmentedPolicy {
        let mut policy = AugmentedPolicy::new(*aug.disc());
        for (i, s) in aug.states().iter().enumerate() {
            if aug.is_terminal(i) {
                continue;
            }
            let n = aug.n_actions(i);
            let mut probs = vec![0.0; n];
            probs[if n == 1 { 0 } else { action }] = 1.0;
            policy.insert(s.x, s.y, s.z, probs);
        }
        policy
    }

    #[test]
    fn test_lp_shape_matches_hand_count() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 3, 6).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        // 13 reachable states, two variables per A-state and one per
        // x_M-state: 17 occupancies plus 7 cost levels.
        assert_eq!(lp.n_rho(), 17);
        assert_eq!(lp.n_theta(), 7);
        assert_eq!(lp.n_constraints(), 13 + 7);
    }

    #[test]
    fn test_deterministic_chain_has_unit_occupancies() {
        let mdp = Mdp::builder()
            .state("A")
            .state("B")
            .absorbing("xM")
            .action("A", "go", 1.0, &[("B", 1.0)])
            .action("B", "go", 1.0, &[("xM", 1.0)])
            .initial("A", 1.0)
            .build()
            .unwrap();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 2, 2).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        let solved = solve_fixed_s(&lp, 0.5, 0.0, &Microlp).unwrap();
        for (i, &value) in solved.rho.iter().enumerate() {
            assert!((value - 1.0).abs() <= 1e-9, "rho[{i}] = {value}");
        }
        // Total cost is deterministically 2, so at s = 0 and τ = 0.5 the
        // objective is 2·E[cost] = 4.
        assert!((solved.objective - 4.0).abs() <= 1e-9);
    }

    #[test]
    fn test_fixed_s_at_var_matches_hand_solution() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 19, 38).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        let solved = solve_fixed_s(&lp, 0.5, 2.0, &Microlp).unwrap();
        // Slow puts all mass at cost 2; nothing exceeds s = 2.
        assert!((solved.objective - 2.0).abs() <= 1e-8, "objective {}", solved.objective);
    }

    #[test]
    fn test_fixed_s_at_zero_doubles_the_best_mean() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 19, 38).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        let solved = solve_fixed_s(&lp, 0.5, 0.0, &Microlp).unwrap();
        // At s = 0 the objective is 2·E[truncated cost], minimized by always
        // fast: E = 2 − 2^{−18}.
        let expected = 2.0 * (2.0 - 2f64.powi(-18));
        assert!(
            (solved.objective - expected).abs() <= 1e-8,
            "objective {} vs {expected}",
            solved.objective
        );
    }

    #[test]
    fn test_search_s_tiny2_selects_slow() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 19, 38).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        for tau in [0.5, 0.95] {
            let solution = search_s(&lp, tau, 1, &Microlp).unwrap();
            assert!((solution.s_star - 2.0).abs() <= 1e-12, "s* = {}", solution.s_star);
            assert!(
                (solution.objective - 2.0).abs() <= 1e-6,
                "objective {} at tau {tau}",
                solution.objective
            );
            assert_eq!(solution.theta_star.support(), &[2.0]);
            assert_eq!(solution.grid_slack, 0.0);

            let policy = extract_policy(&aug, &lp, &solution.rho_star);
            let a = mdp.state_index("A").unwrap();
            let probs = policy.get(a, 0, 0).unwrap();
            assert!(probs[1] > 1.0 - 1e-9, "slow should carry all mass, got {probs:?}");
        }
    }

    #[test]
    fn test_degenerate_horizon_objective_is_zero() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 0, 1).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        let solution = search_s(&lp, 0.5, 1, &Microlp).unwrap();
        assert_eq!(solution.objective, 0.0);
        assert_eq!(solution.theta_star.support(), &[0.0]);
    }

    #[test]
    fn test_induced_distribution_always_fast() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 3, 6).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let dist = induced_distribution(&aug, &always(&aug, 0)).unwrap();
        assert_eq!(dist.support(), &[1.0, 2.0, 3.0]);
        let expected = [0.5, 0.25, 0.25];
        for (m, e) in dist.masses().iter().zip(expected) {
            assert!((m - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn test_induced_distribution_always_slow_is_point_mass() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 5, 10).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let dist = induced_distribution(&aug, &always(&aug, 1)).unwrap();
        assert_eq!(dist.support(), &[2.0]);
        assert_eq!(dist.masses(), &[1.0]);
    }

    #[test]
    fn test_lp_policy_round_trip() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 7, 14).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        let solution = search_s(&lp, 0.8, 1, &Microlp).unwrap();
        let policy = extract_policy(&aug, &lp, &solution.rho_star);
        let replayed = induced_distribution(&aug, &policy).unwrap();
        // Compare as laws over the union of supports so that an atom one
        // side rounds away entirely still counts as a mass difference.
        let mut diff: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
        for (v, m) in replayed.iter() {
            *diff.entry(v.to_bits()).or_insert(0.0) += m;
        }
        for (v, m) in solution.theta_star.iter() {
            *diff.entry(v.to_bits()).or_insert(0.0) -= m;
        }
        for (bits, gap) in diff {
            assert!(
                gap.abs() <= 1e-8,
                "mass at {} differs by {gap}",
                f64::from_bits(bits)
            );
        }
    }

    #[test]
    fn test_extract_policy_normalizes_mixtures() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 2, 4).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        let mut rho = vec![0.0; lp.n_rho()];
        let a = mdp.state_index("A").unwrap();
        let root = aug.state_index(a, 0, 0).unwrap();
        rho[lp.rho_column(root, 0)] = 0.3;
        rho[lp.rho_column(root, 1)] = 0.3;
        let policy = extract_policy(&aug, &lp, &rho);
        let probs = policy.get(a, 0, 0).unwrap();
        assert!((probs[0] - 0.5).abs() <= 1e-12);
        assert!((probs[1] - 0.5).abs() <= 1e-12);
        // Zero-occupancy states fall back to uniform.
        if let Some(i) = aug.state_index(a, 1, 1) {
            let s = aug.state(i);
            let probs = policy.get(s.x, s.y, s.z).unwrap();
            assert_eq!(probs, &[0.5, 0.5]);
        }
    }

    #[test]
    fn test_theta_sums_to_one_across_s_grid() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 6, 12).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        for k in 0..=lp.n_theta() as u32 - 1 {
            let s = disc.zeta() * k as f64;
            if s > 2.0 * 6.0 {
                break;
            }
            let solved = solve_fixed_s(&lp, 0.6, s, &Microlp).unwrap();
            let total: f64 = solved.theta.iter().sum();
            assert!((total - 1.0).abs() <= 1e-9, "theta sums to {total} at s = {s}");
        }
    }

    #[test]
    fn test_solution_export_round_trip() {
        let export = SolutionExport {
            tau: Some(0.5),
            d: Some(19),
            n_prime: Some(38),
            zeta: Some(1.0),
            s_star: Some(2.0),
            objective: 2.0,
            theta: Some(vec![(2.0, 1.0)]),
            gap_bound: Some(0.0078125),
            policy: vec![PolicyEntry {
                x: "A".into(),
                y: Some(0),
                z: Some(0),
                action: "slow".into(),
                prob: 1.0,
            }],
        };
        let text = export.to_json();
        let back = SolutionExport::from_json_str(&text).unwrap();
        assert_eq!(back.objective, 2.0);
        assert_eq!(back.policy.len(), 1);
        assert_eq!(back.policy[0].action, "slow");
        assert_eq!(back.policy[0].y, Some(0));
    }

    #[test]
    fn test_stationary_export_round_trip_without_optional_fields() {
        let export = SolutionExport {
            tau: None,
            d: None,
            n_prime: None,
            zeta: None,
            s_star: None,
            objective: 1.8,
            theta: None,
            gap_bound: None,
            policy: vec![PolicyEntry {
                x: "A".into(),
                y: None,
                z: None,
                action: "fast".into(),
                prob: 1.0,
            }],
        };
        let text = export.to_json();
        assert!(!text.contains("\"tau\""), "omitted fields must not serialize");
        let back = SolutionExport::from_json_str(&text).unwrap();
        assert_eq!(back.objective, 1.8);
        assert_eq!(back.policy[0].y, None);
        assert_eq!(back.policy[0].z, None);
    }

    #[test]
    fn test_stride_subsampling_reports_slack() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 10, 20).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let lp = build_lp(&aug, &aug.initial_mass()).unwrap();
        let exact = search_s(&lp, 0.5, 1, &Microlp).unwrap();
        let coarse = search_s(&lp, 0.5, 3, &Microlp).unwrap();
        assert!(coarse.grid_slack > 0.0);
        assert!(coarse.objective + 1e-9 >= exact.objective);
        assert!(coarse.objective <= exact.objective + coarse.grid_slack + 1e-9);
    }
}
