//! Monte Carlo rollouts, exact trajectory enumeration, and batch statistics.
//!
//! Rollouts execute a policy on the original chain for up to d steps and
//! record the truncated total cost together with the absorption time (or a
//! timeout flag). Enumeration walks the same tree exhaustively, multiplying
//! probabilities along every (policy choice, successor) branch, and returns
//! the exact law; it is the brute-force oracle the LP pipeline is checked
//! against.
//!
//! Reproducibility: a batch is keyed by one root seed. Run i seeds a
//! ChaCha8 generator with the root seed and selects stream i, so any run can
//! be replayed in isolation and the batch is a deterministic reduction no
//! matter how runs are scheduled. A single [`rollout`] is exactly run 0.
//! Every step consumes two draws (action, then successor) even when the
//! choice is deterministic, so the stream layout does not depend on the
//! policy.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mdp::Mdp;
use crate::risk::{CostDistribution, RiskError};
use crate::solver::AugmentedPolicy;

/// Hard cap on enumeration leaves; past this the tree is no longer a
/// practical oracle and the caller should sample instead.
pub const MAX_ENUMERATION_LEAVES: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("policy has no decision rule for state {state} at cost level {y}, stage {z}")]
    PolicyGap { state: String, y: u32, z: u32 },
    #[error("trajectory tree exceeds the enumeration budget of {limit} leaves")]
    EnumerationBudget { limit: usize },
    #[error("runs must be at least 1")]
    NoRuns,
    #[error(transparent)]
    Risk(#[from] RiskError),
}

/// A policy a simulator can execute.
///
/// Stationary policies map a state to a distribution over its actions and
/// ignore accumulated cost and stage; augmented policies consult all three
/// coordinates and are what the LP pipeline produces.
#[derive(Debug, Clone)]
pub enum Policy {
    Stationary(HashMap<usize, Vec<f64>>),
    Augmented(AugmentedPolicy),
}

impl Policy {
    /// Wraps a per-state deterministic choice, e.g. a value-iteration
    /// policy, as one-hot distributions over every state's actions.
    pub fn stationary_deterministic(mdp: &Mdp, choice: &[usize]) -> Policy {
        let mut map = HashMap::new();
        for x in 0..mdp.n_states() {
            let n = mdp.actions(x).len();
            let mut probs = vec![0.0; n];
            probs[choice[x]] = 1.0;
            map.insert(x, probs);
        }
        Policy::Stationary(map)
    }

    fn action_distribution(&self, mdp: &Mdp, x: usize, y: u32, z: u32) -> Result<&[f64], SimError> {
        let probs = match self {
            Policy::Stationary(map) => map.get(&x).map(Vec::as_slice),
            Policy::Augmented(policy) => policy.get(x, y, z),
        };
        probs.ok_or_else(|| SimError::PolicyGap {
            state: mdp.state_name(x).to_string(),
            y,
            z,
        })
    }

    /// The cost level after paying `cost`, as the executing policy tracks it.
    /// Stationary policies do not track cost at all.
    fn advance_level(&self, y: u32, cost: f64) -> u32 {
        match self {
            Policy::Stationary(_) => y,
            Policy::Augmented(policy) => {
                let disc = policy.disc();
                (y + disc.increment(cost)).min(disc.n_levels())
            }
        }
    }
}

/// One simulated trajectory: truncated cost and absorption stage, with
/// `t_star` empty when the run timed out at stage d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub cost: f64,
    pub t_star: Option<u32>,
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if r < cum {
            return i;
        }
    }
    probs.len() - 1
}

fn rollout_with_rng(
    mdp: &Mdp,
    policy: &Policy,
    d: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, SimError> {
    let initial = mdp.initial();
    let r: f64 = rng.random();
    let mut cum = 0.0;
    let mut x = initial.len() - 1;
    for (i, &p) in initial.iter().enumerate() {
        cum += p;
        if r < cum {
            x = i;
            break;
        }
    }

    let mut cost = 0.0;
    let mut y: u32 = 0;
    let mut t: u32 = 0;
    loop {
        if x == mdp.absorbing() {
            return Ok(Rollout { cost, t_star: Some(t) });
        }
        if t == d {
            return Ok(Rollout { cost, t_star: None });
        }
        let probs = policy.action_distribution(mdp, x, y, t)?;
        let u = sample_index(probs, rng);
        let action = &mdp.actions(x)[u];
        cost += action.cost();
        y = policy.advance_level(y, action.cost());
        let transitions = action.transitions();
        let r: f64 = rng.random();
        let mut cum = 0.0;
        x = transitions[transitions.len() - 1].0;
        for &(j, p) in transitions {
            cum += p;
            if r < cum {
                x = j;
                break;
            }
        }
        t += 1;
    }
}

/// Simulates one trajectory for up to d steps. Deterministic given the seed,
/// and identical to run 0 of [`monte_carlo`] with the same seed.
pub fn rollout(mdp: &Mdp, policy: &Policy, d: u32, seed: u64) -> Result<Rollout, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rollout_with_rng(mdp, policy, d, &mut rng)
}

/// A batch of rollouts plus the statistics the experiments report.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    runs: Vec<Rollout>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn runs(&self) -> &[Rollout] {
        &self.runs
    }

    pub fn mean(&self) -> f64 {
        self.runs.iter().map(|r| r.cost).sum::<f64>() / self.runs.len() as f64
    }

    /// Runs whose cost strictly exceeds the threshold.
    pub fn exceedance_count(&self, threshold: f64) -> usize {
        self.runs.iter().filter(|r| r.cost > threshold).count()
    }

    /// Runs still unabsorbed after d steps.
    pub fn timeout_count(&self) -> usize {
        self.runs.iter().filter(|r| r.t_star.is_none()).count()
    }

    /// Runs absorbed later than the given stage, timeouts included.
    pub fn late_absorption_count(&self, stage: u32) -> usize {
        self.runs
            .iter()
            .filter(|r| match r.t_star {
                Some(t) => t > stage,
                None => true,
            })
            .count()
    }

    /// The empirical law: each distinct observed cost with mass count/M.
    pub fn empirical_distribution(&self) -> Result<CostDistribution, RiskError> {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for run in &self.runs {
            *counts.entry(run.cost.to_bits()).or_insert(0) += 1;
        }
        let m = self.runs.len() as f64;
        let pairs: Vec<(f64, f64)> = counts
            .into_iter()
            .map(|(bits, count)| (f64::from_bits(bits), count as f64 / m))
            .collect();
        CostDistribution::from_pairs(&pairs)
    }

    /// Per-run records: columns run, cost, t_star, timeout_flag. Timed-out
    /// runs print "timeout" in the t_star column and flag 1.
    pub fn to_batch_csv(&self) -> String {
        let mut out = String::from("run,cost,t_star,timeout_flag\n");
        for (i, run) in self.runs.iter().enumerate() {
            match run.t_star {
                Some(t) => writeln!(out, "{i},{},{t},0", run.cost).unwrap(),
                None => writeln!(out, "{i},{},timeout,1", run.cost).unwrap(),
            }
        }
        out
    }

    /// Observed-cost histogram: columns cost_bin, count, one row per
    /// distinct cost in increasing order.
    pub fn to_histogram_csv(&self) -> String {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for run in &self.runs {
            *counts.entry(run.cost.to_bits()).or_insert(0) += 1;
        }
        let mut out = String::from("cost_bin,count\n");
        for (bits, count) in counts {
            writeln!(out, "{},{count}", f64::from_bits(bits)).unwrap();
        }
        out
    }
}

/// Runs independent rollouts on per-run RNG streams derived from one root
/// seed. The batch is identical for a given (instance, policy, d, runs,
/// seed) regardless of scheduling.
pub fn monte_carlo(
    mdp: &Mdp,
    policy: &Policy,
    d: u32,
    runs: u64,
    seed: u64,
) -> Result<RolloutBatch, SimError> {
    if runs == 0 {
        return Err(SimError::NoRuns);
    }
    let mut batch = Vec::with_capacity(runs as usize);
    for i in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i);
        batch.push(rollout_with_rng(mdp, policy, d, &mut rng)?);
    }
    Ok(RolloutBatch { runs: batch })
}

struct Enumerator<'a> {
    mdp: &'a Mdp,
    policy: &'a Policy,
    d: u32,
    budget: usize,
    leaves: usize,
    law: BTreeMap<u64, f64>,
}

impl Enumerator<'_> {
    fn leaf(&mut self, cost: f64, prob: f64) -> Result<(), SimError> {
        self.leaves += 1;
        if self.leaves > self.budget {
            return Err(SimError::EnumerationBudget { limit: self.budget });
        }
        *self.law.entry(cost.to_bits()).or_insert(0.0) += prob;
        Ok(())
    }

    fn walk(&mut self, x: usize, y: u32, t: u32, cost: f64, prob: f64) -> Result<(), SimError> {
        if x == self.mdp.absorbing() || t == self.d {
            return self.leaf(cost, prob);
        }
        let probs = self.policy.action_distribution(self.mdp, x, y, t)?.to_vec();
        for (u, &pu) in probs.iter().enumerate() {
            if pu <= 0.0 {
                continue;
            }
            let action = &self.mdp.actions(x)[u];
            let next_cost = cost + action.cost();
            let next_y = self.policy.advance_level(y, action.cost());
            for &(j, p) in action.transitions() {
                if p > 0.0 {
                    self.walk(j, next_y, t + 1, next_cost, prob * pu * p)?;
                }
            }
        }
        Ok(())
    }
}

fn enumerate_with_budget(
    mdp: &Mdp,
    policy: &Policy,
    d: u32,
    budget: usize,
) -> Result<CostDistribution, SimError> {
    let mut enumerator = Enumerator {
        mdp,
        policy,
        d,
        budget,
        leaves: 0,
        law: BTreeMap::new(),
    };
    for (x, &mass) in mdp.initial().iter().enumerate() {
        if mass > 0.0 {
            enumerator.walk(x, 0, 0, 0.0, mass)?;
        }
    }
    let pairs: Vec<(f64, f64)> = enumerator
        .law
        .into_iter()
        .map(|(bits, m)| (f64::from_bits(bits), m))
        .collect();
    Ok(CostDistribution::from_pairs(&pairs)?)
}

/// Computes the exact law of the truncated cost by depth-first enumeration
/// of every (policy choice, successor) branch up to depth d.
///
/// Randomized policies branch per visit: each time the trajectory is at a
/// state, the policy's distribution there is expanded independently, which
/// is the same semantics [`rollout`] samples from and the occupancy LP
/// optimizes over. Costs are keyed by exact floating-point value, so two
/// paths merge only when their running sums agree bit for bit.
pub fn enumerate_trajectories(
    mdp: &Mdp,
    policy: &Policy,
    d: u32,
) -> Result<CostDistribution, SimError> {
    enumerate_with_budget(mdp, policy, d, MAX_ENUMERATION_LEAVES)
}
