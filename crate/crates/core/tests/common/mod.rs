//! Shared fixtures and independent oracles for the integration tests.
//!
//! Everything here recomputes results from first principles (exhaustive
//! enumeration, backward induction, direct quantile integration) without
//! touching the solver or risk internals, so agreement between a library
//! function and its counterpart here is meaningful evidence.

use avar_mdp::augment::AugmentedMdp;
use avar_mdp::mdp::Mdp;
use avar_mdp::risk::CostDistribution;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// Two states A and x_M; fast costs 1 and succeeds half the time, slow
/// costs 2 and always succeeds.
pub fn tiny2() -> Mdp {
    Mdp::builder()
        .state("A")
        .absorbing("xM")
        .action("A", "fast", 1.0, &[("xM", 0.5), ("A", 0.5)])
        .action("A", "slow", 2.0, &[("xM", 1.0)])
        .initial("A", 1.0)
        .build()
        .unwrap()
}

/// Tunables for the random instance family.
pub struct InstanceShape {
    /// Costs are multiples of a dyadic base with the base itself present,
    /// so the discretization step divides every cost exactly.
    pub dyadic_costs: bool,
    /// Every action keeps at least 1/8 probability on the absorbing state,
    /// which makes absorption reachable under every selection.
    pub force_absorption: bool,
}

/// Draws a small MDP: 1 to 3 transient states, 1 to 2 actions each, all
/// probabilities in eighths (exact in floating point).
pub fn random_mdp(rng: &mut ChaCha8Rng, shape: &InstanceShape) -> Mdp {
    let n_transient: usize = rng.random_range(1..=3);
    let names: Vec<String> = (0..n_transient).map(|i| format!("s{i}")).collect();
    let base = if rng.random::<bool>() { 0.5 } else { 1.0 };

    let mut builder = Mdp::builder();
    for name in &names {
        builder = builder.state(name);
    }
    builder = builder.absorbing("end");

    for (x, name) in names.iter().enumerate() {
        let n_actions: usize = rng.random_range(1..=2);
        for u in 0..n_actions {
            let cost = if shape.dyadic_costs {
                // Guarantee one unit-multiple action so the minimum cost
                // divides the rest.
                let mult = if x == 0 && u == 0 { 1 } else { rng.random_range(1..=3) };
                base * mult as f64
            } else {
                rng.random_range(0.1..3.0)
            };

            // Split eight probability units over targets.
            let mut eighths = vec![0u32; n_transient + 1];
            let mut remaining = 8u32;
            if shape.force_absorption {
                let to_end = rng.random_range(1..=remaining);
                eighths[n_transient] += to_end;
                remaining -= to_end;
            }
            while remaining > 0 {
                let target = rng.random_range(0..=n_transient);
                let chunk = rng.random_range(1..=remaining);
                eighths[target] += chunk;
                remaining -= chunk;
            }
            let transitions: Vec<(&str, f64)> = eighths
                .iter()
                .enumerate()
                .filter(|&(_, &e)| e > 0)
                .map(|(t, &e)| {
                    let target = if t == n_transient { "end" } else { names[t].as_str() };
                    (target, e as f64 / 8.0)
                })
                .collect();
            builder = builder.action(name, &format!("u{u}"), cost, &transitions);
        }
    }

    if n_transient >= 2 && rng.random::<bool>() {
        builder = builder.initial("s0", 0.5).initial("s1", 0.5);
    } else {
        builder = builder.initial("s0", 1.0);
    }
    builder.build().expect("generated instance is structurally valid")
}

/// Every deterministic stationary selection, as one action index per state.
pub fn all_selections(mdp: &Mdp) -> Vec<Vec<usize>> {
    let mut selections = vec![Vec::new()];
    for x in 0..mdp.n_states() {
        let n_u = mdp.actions(x).len();
        selections = selections
            .into_iter()
            .flat_map(|prefix| {
                (0..n_u).map(move |u| {
                    let mut next = prefix.clone();
                    next.push(u);
                    next
                })
            })
            .collect();
    }
    selections
}

/// States from which some selection never reaches the absorbing state,
/// found by checking reachability in every selection's digraph separately.
pub fn brute_avoid_set(mdp: &Mdp) -> Vec<String> {
    let n = mdp.n_states();
    let mut avoidable = vec![false; n];
    for selection in all_selections(mdp) {
        let mut reaches = vec![false; n];
        reaches[mdp.absorbing()] = true;
        loop {
            let mut changed = false;
            for x in 0..n {
                if reaches[x] || x == mdp.absorbing() {
                    continue;
                }
                let action = &mdp.actions(x)[selection[x]];
                if action.transitions().iter().any(|&(t, p)| p > 0.0 && reaches[t]) {
                    reaches[x] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for x in 0..n {
            if x != mdp.absorbing() && !reaches[x] {
                avoidable[x] = true;
            }
        }
    }
    (0..n).filter(|&x| avoidable[x]).map(|x| mdp.state_name(x).to_string()).collect()
}

fn min_path_under_selection(
    mdp: &Mdp,
    selection: &[usize],
    x: usize,
    product: f64,
    visited: &mut [bool],
    best: &mut f64,
) {
    visited[x] = true;
    for &(t, p) in mdp.actions(x)[selection[x]].transitions() {
        if p <= 0.0 {
            continue;
        }
        if t == mdp.absorbing() {
            *best = best.min(product * p);
        } else if !visited[t] {
            min_path_under_selection(mdp, selection, t, product * p, visited, best);
        }
    }
    visited[x] = false;
}

/// The double minimization over selections and simple paths, evaluated
/// literally: for every selection, the minimum path product from every
/// transient state, minimized over everything. Requires reachability.
pub fn brute_gamma(mdp: &Mdp) -> f64 {
    let n = mdp.n_states();
    let mut gamma = f64::INFINITY;
    for selection in all_selections(mdp) {
        for x in 0..n {
            if x == mdp.absorbing() {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut visited = vec![false; n];
            min_path_under_selection(mdp, &selection, x, 1.0, &mut visited, &mut best);
            gamma = gamma.min(best);
        }
    }
    if gamma.is_finite() {
        gamma
    } else {
        1.0
    }
}

/// Exact state distribution after `steps` transitions under one selection,
/// starting from a point mass.
pub fn propagate_selection(mdp: &Mdp, selection: &[usize], start: usize, steps: u32) -> Vec<f64> {
    let n = mdp.n_states();
    let mut mu = vec![0.0; n];
    mu[start] = 1.0;
    for _ in 0..steps {
        let mut next = vec![0.0; n];
        for x in 0..n {
            if mu[x] == 0.0 {
                continue;
            }
            for &(t, p) in mdp.actions(x)[selection[x]].transitions() {
                next[t] += mu[x] * p;
            }
        }
        mu = next;
    }
    mu
}

/// AVaR by direct integration of the quantile function: the average of
/// VaR_u over u ∈ (τ, 1], computed segment by segment from the sorted atoms.
pub fn avar_by_quantile_integration(dist: &CostDistribution, tau: f64) -> f64 {
    let mut acc = 0.0f64;
    let mut cum = 0.0f64;
    for (value, mass) in dist.iter() {
        let lo = cum.max(tau);
        let hi = (cum + mass).max(tau);
        acc += value * (hi - lo);
        cum += mass;
    }
    acc / (1.0 - tau)
}

/// Minimum AVaR achievable by a deterministic policy on the augmented
/// chain, by backward induction for each tail threshold on the level grid.
///
/// For fixed s the objective s + E[(ζ·y_d − s)⁺]/(1−τ) is an expectation of
/// a terminal function, so a backward sweep minimizing over actions yields
/// the exact deterministic optimum; minimizing over the grid of support
/// points then equals the unrestricted minimum over s.
pub fn best_deterministic_avar(aug: &AugmentedMdp, tau: f64) -> f64 {
    let disc = aug.disc();
    let beta = aug.initial_mass();
    let n = aug.n_states();
    let mut best = f64::INFINITY;
    for k in 0..=disc.n_levels() {
        let s = disc.zeta() * k as f64;
        let mut value = vec![0.0; n];
        // States are indexed in breadth-first layer order, so successors
        // always come after their predecessors.
        for i in (0..n).rev() {
            if aug.is_terminal(i) {
                value[i] = (disc.zeta() * aug.state(i).y as f64 - s).max(0.0) / (1.0 - tau);
            } else {
                value[i] = (0..aug.n_actions(i))
                    .map(|u| {
                        aug.successors(i, u).iter().map(|&(j, p)| p * value[j]).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
            }
        }
        let total: f64 = beta.iter().zip(&value).map(|(b, v)| b * v).sum();
        best = best.min(s + total);
    }
    best
}

/// The terminal cost law of one deterministic augmented policy, by forward
/// propagation over the chain (an assignment maps each non-terminal
/// augmented state index to an action).
pub fn deterministic_policy_law(aug: &AugmentedMdp, assignment: &[usize]) -> Vec<(f64, f64)> {
    let n = aug.n_states();
    let mut mass = aug.initial_mass();
    for i in 0..n {
        if aug.is_terminal(i) || mass[i] == 0.0 {
            continue;
        }
        for &(j, p) in aug.successors(i, assignment[i]) {
            mass[j] += mass[i] * p;
        }
        mass[i] = 0.0;
    }
    let zeta = aug.disc().zeta();
    (0..n)
        .filter(|&i| aug.is_terminal(i) && mass[i] > 0.0)
        .map(|i| (zeta * aug.state(i).y as f64, mass[i]))
        .collect()
}

/// Largest absolute mass difference between two laws, matched by exact
/// support value over the union of supports.
pub fn law_distance(a: &CostDistribution, b: &CostDistribution) -> f64 {
    let mut diff: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for (v, m) in a.iter() {
        *diff.entry(v.to_bits()).or_insert(0.0) += m;
    }
    for (v, m) in b.iter() {
        *diff.entry(v.to_bits()).or_insert(0.0) -= m;
    }
    diff.values().fold(0.0, |acc, gap| acc.max(gap.abs()))
}
