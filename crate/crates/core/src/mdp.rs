//! Transient total-cost MDP model and structural diagnostics.
//!
//! A model is a finite set of states containing one absorbing state x_M, a
//! nonempty action set U(x) per state, a transition kernel, per-pair costs,
//! and an initial distribution β. Two assumptions make the total cost well
//! behaved:
//!
//! * every transient state-action pair has strictly positive cost, and
//! * x_M is reached eventually no matter how actions are chosen.
//!
//! Under the second assumption the absorption probability within n steps is
//! bounded below by γ > 0, the smallest probability of any simple path to
//! x_M when each edge is weighted by its worst admissible action. This module
//! computes γ (exactly, or by the safe bound p_min^(n−1)) and uses it to pick
//! a surrogate horizon d whose truncation error is certifiably small.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::Deserialize;
use thiserror::Error;


/// Absolute tolerance for row-stochasticity and initial-mass checks.
///
/// Model files are authored or generated exactly, so a loose tolerance would
/// only mask bugs.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// One admissible action of a state: its name, its cost, and its sparse
/// successor distribution (state index, probability).
#[derive(Debug, Clone)]
pub struct Action {
    name: String,
    cost: f64,
    transitions: Vec<(usize, f64)>,
}

impl Action {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Successors with nonzero declared probability, as (state index, p).
    pub fn transitions(&self) -> &[(usize, f64)] {
        &self.transitions
    }
}

/// A transient total-cost MDP.
///
/// States are indexed densely in declaration order; the declaration order of
/// actions is preserved because deterministic tie-breaking depends on it.
/// Construction goes through [`MdpBuilder`] or [`Mdp::from_json_str`]; both
/// only check referential integrity. Semantic invariants (stochastic rows,
/// absorbing self-loop, cost positivity, β(x_M) = 0) are reported by
/// [`Mdp::validate`] as data rather than enforced at build time, so that
/// diagnostic tooling can inspect broken models.
#[derive(Debug, Clone)]
pub struct Mdp {
    states: Vec<String>,
    absorbing: usize,
    actions: Vec<Vec<Action>>,
    initial: Vec<f64>,
}

/// Extremes of the cost function over transient state-action pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBounds {
    /// Smallest transient cost (strictly positive on valid models).
    pub k_lower: f64,
    /// Largest transient cost.
    pub k_upper: f64,
}

/// Result of the absorption-reachability check.
///
/// `avoid_set` is the largest set of transient states from which the action
/// chooser can keep the process away from x_M forever; the assumption holds
/// exactly when it is empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachabilityReport {
    pub satisfied: bool,
    /// State names that can avoid absorption, sorted by state index.
    pub avoid_set: Vec<String>,
}

/// How γ was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaMethod {
    /// Depth-first enumeration of all simple paths to x_M, each edge weighted
    /// by the smallest positive probability any action assigns to it.
    /// Exponential in the worst case; intended for small state spaces.
    ExactEnumeration,
    /// p_min^(n−1) where p_min is the smallest strictly positive transition
    /// probability anywhere in the model. Always a valid lower bound because
    /// a simple path has at most n−1 edges.
    SafeLowerBound,
}

/// A lower bound on the n-step absorption probability, with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    pub value: f64,
    pub method: GammaMethod,
}

/// A broken model invariant, identifying the offending state or pair.
///
/// Violations are diagnostics, not errors: [`Mdp::validate`] returns all of
/// them so a user can fix a model file in one pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Σ_y Pr(y | x, u) differs from 1 beyond [`STOCHASTIC_TOL`].
    NonStochasticRow { state: String, action: String, sum: f64 },
    /// A declared transition probability is negative.
    NegativeTransition { state: String, action: String, target: String, p: f64 },
    /// A state has an empty action set.
    NoActions { state: String },
    /// The absorbing state must have exactly one action.
    AbsorbingActionCount { count: usize },
    /// The absorbing action must loop back with probability 1.
    AbsorbingNotSelfLoop { p_self: f64 },
    /// The absorbing action must cost 0.
    AbsorbingCostNonzero { cost: f64 },
    /// A transient state-action pair has cost ≤ 0 (positivity assumption).
    NonPositiveCost { state: String, action: String, cost: f64 },
    /// β places mass on the absorbing state.
    InitialMassOnAbsorbing { mass: f64 },
    /// A state has negative initial mass.
    NegativeInitialMass { state: String, mass: f64 },
    /// Σ_x β(x) differs from 1 beyond [`STOCHASTIC_TOL`].
    InitialMassSum { sum: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonStochasticRow { state, action, sum } => {
                write!(f, "transition row ({state}, {action}) sums to {sum}, expected 1")
            }
            Violation::NegativeTransition { state, action, target, p } => {
                write!(f, "Pr({target} | {state}, {action}) = {p} is negative")
            }
            Violation::NoActions { state } => write!(f, "state {state} has no actions"),
            Violation::AbsorbingActionCount { count } => {
                write!(f, "absorbing state has {count} actions, expected exactly 1")
            }
            Violation::AbsorbingNotSelfLoop { p_self } => {
                write!(f, "absorbing self-loop probability is {p_self}, expected 1")
            }
            Violation::AbsorbingCostNonzero { cost } => {
                write!(f, "absorbing action costs {cost}, expected 0")
            }
            Violation::NonPositiveCost { state, action, cost } => {
                write!(f, "cost({state}, {action}) = {cost} violates cost positivity")
            }
            Violation::InitialMassOnAbsorbing { mass } => {
                write!(f, "initial distribution puts mass {mass} on the absorbing state")
            }
            Violation::NegativeInitialMass { state, mass } => {
                write!(f, "initial mass of {state} is {mass}, expected nonnegative")
            }
            Violation::InitialMassSum { sum } => {
                write!(f, "initial distribution sums to {sum}, expected 1")
            }
        }
    }
}

/// Errors from model construction and the operations in this module.
#[derive(Debug, Error)]
pub enum MdpError {
    #[error("unknown state: {0}")]
    UnknownState(String),
    #[error("unknown action {action} on state {state}")]
    UnknownAction { state: String, action: String },
    #[error("state {0} declared twice")]
    DuplicateState(String),
    #[error("action {action} declared twice on state {state}")]
    DuplicateAction { state: String, action: String },
    #[error("transition ({state}, {action}) -> {target} declared twice")]
    DuplicateTransition { state: String, action: String, target: String },
    #[error("cost for ({state}, {action}) declared twice")]
    DuplicateCost { state: String, action: String },
    #[error("no cost declared for ({state}, {action})")]
    MissingCost { state: String, action: String },
    #[error("initial mass for {0} declared twice")]
    DuplicateInitial(String),
    #[error("no absorbing state declared")]
    MissingAbsorbing,
    #[error("model has no transient state-action pairs")]
    NoTransientPairs,
    #[error("cost({state}, {action}) = {cost} is not strictly positive")]
    NonPositiveTransientCost { state: String, action: String, cost: f64 },
    #[error("no positive-probability path from {state} to the absorbing state")]
    NoPathToAbsorbing { state: String },
    #[error("invalid {name}: {value} (expected {expected})")]
    InvalidParameter { name: &'static str, value: f64, expected: &'static str },
    #[error("horizon search did not terminate within 10^6 doubling steps")]
    HorizonSearchOverflow,
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Incremental construction of an [`Mdp`].
///
/// States are registered in first-mention order; `build` appends the
/// canonical zero-cost self-loop to the absorbing state unless actions were
/// declared for it explicitly.
#[derive(Debug, Default)]
pub struct MdpBuilder {
    states: Vec<String>,
    index: HashMap<String, usize>,
    absorbing: Option<usize>,
    actions: Vec<Vec<Action>>,
    initial: Vec<(usize, f64)>,
}

impl MdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.states.len();
        self.states.push(name.to_string());
        self.index.insert(name.to_string(), i);
        self.actions.push(Vec::new());
        i
    }

    /// Registers a state without declaring anything else about it. Useful to
    /// pin a specific state order; otherwise states appear as mentioned.
    pub fn state(mut self, name: &str) -> Self {
        self.intern(name);
        self
    }

    /// Declares which state is absorbing.
    pub fn absorbing(mut self, name: &str) -> Self {
        let i = self.intern(name);
        self.absorbing = Some(i);
        self
    }

    /// Declares an action of `state` with the given cost and sparse successor
    /// distribution. Declaration order is preserved and matters for
    /// deterministic tie-breaking.
    pub fn action(mut self, state: &str, name: &str, cost: f64, transitions: &[(&str, f64)]) -> Self {
        let x = self.intern(state);
        let transitions = transitions
            .iter()
            .map(|&(target, p)| (self.intern(target), p))
            .collect();
        self.actions[x].push(Action { name: name.to_string(), cost, transitions });
        self
    }

    /// Sets the initial mass of one state.
    pub fn initial(mut self, state: &str, mass: f64) -> Self {
        let x = self.intern(state);
        self.initial.push((x, mass));
        self
    }

    /// Checks referential integrity and assembles the model.
    pub fn build(self) -> Result<Mdp, MdpError> {
        let absorbing = self.absorbing.ok_or(MdpError::MissingAbsorbing)?;
        let mut actions = self.actions;
        if actions[absorbing].is_empty() {
            actions[absorbing].push(Action {
                name: "stay".to_string(),
                cost: 0.0,
                transitions: vec![(absorbing, 1.0)],
            });
        }
        for (x, list) in actions.iter().enumerate() {
            for (i, a) in list.iter().enumerate() {
                if list[..i].iter().any(|b| b.name == a.name) {
                    return Err(MdpError::DuplicateAction {
                        state: self.states[x].clone(),
                        action: a.name.clone(),
                    });
                }
                for (j, &(target, _)) in a.transitions.iter().enumerate() {
                    if a.transitions[..j].iter().any(|&(t, _)| t == target) {
                        return Err(MdpError::DuplicateTransition {
                            state: self.states[x].clone(),
                            action: a.name.clone(),
                            target: self.states[target].clone(),
                        });
                    }
                }
            }
        }
        let mut initial = vec![0.0; self.states.len()];
        let mut seen = vec![false; self.states.len()];
        for (x, mass) in self.initial {
            if seen[x] {
                return Err(MdpError::DuplicateInitial(self.states[x].clone()));
            }
            seen[x] = true;
            initial[x] = mass;
        }
        Ok(Mdp { states: self.states, absorbing, actions, initial })
    }
}

impl Mdp {
    pub fn builder() -> MdpBuilder {
        MdpBuilder::new()
    }

    /// Number of states, absorbing state included.
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_name(&self, x: usize) -> &str {
        &self.states[x]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn absorbing(&self) -> usize {
        self.absorbing
    }

    pub fn is_transient(&self, x: usize) -> bool {
        x != self.absorbing
    }

    pub fn actions(&self, x: usize) -> &[Action] {
        &self.actions[x]
    }

    /// Initial distribution β as a dense vector over state indices.
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Indices of all transient states in declaration order.
    pub fn transient_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.states.len()).filter(move |&x| x != self.absorbing)
    }

    /// Checks every model invariant and returns all violations found.
    ///
    /// An empty list means the model is valid: rows are stochastic, the
    /// absorbing state has exactly one zero-cost self-loop action, transient
    /// costs are strictly positive, and β is a distribution over transient
    /// states.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (x, list) in self.actions.iter().enumerate() {
            if list.is_empty() {
                out.push(Violation::NoActions { state: self.states[x].clone() });
                continue;
            }
            for a in list {
                let mut sum = 0.0;
                for &(target, p) in &a.transitions {
                    if p < 0.0 {
                        out.push(Violation::NegativeTransition {
                            state: self.states[x].clone(),
                            action: a.name.clone(),
                            target: self.states[target].clone(),
                            p,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(Violation::NonStochasticRow {
                        state: self.states[x].clone(),
                        action: a.name.clone(),
                        sum,
                    });
                }
                if x != self.absorbing && a.cost <= 0.0 {
                    out.push(Violation::NonPositiveCost {
                        state: self.states[x].clone(),
                        action: a.name.clone(),
                        cost: a.cost,
                    });
                }
            }
        }
        let abs_actions = &self.actions[self.absorbing];
        if abs_actions.len() != 1 {
            out.push(Violation::AbsorbingActionCount { count: abs_actions.len() });
        }
        if let Some(a) = abs_actions.first() {
            let p_self = a
                .transitions
                .iter()
                .find(|&&(t, _)| t == self.absorbing)
                .map_or(0.0, |&(_, p)| p);
            if (p_self - 1.0).abs() > STOCHASTIC_TOL {
                out.push(Violation::AbsorbingNotSelfLoop { p_self });
            }
            if a.cost != 0.0 {
                out.push(Violation::AbsorbingCostNonzero { cost: a.cost });
            }
        }
        if self.initial[self.absorbing] != 0.0 {
            out.push(Violation::InitialMassOnAbsorbing { mass: self.initial[self.absorbing] });
        }
        let mut sum = 0.0;
        for (x, &mass) in self.initial.iter().enumerate() {
            if mass < 0.0 {
                out.push(Violation::NegativeInitialMass {
                    state: self.states[x].clone(),
                    mass,
                });
            }
            sum += mass;
        }
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::InitialMassSum { sum });
        }
        out
    }

    /// Exact min and max of the cost function over transient pairs.
    pub fn cost_bounds(&self) -> Result<CostBounds, MdpError> {
        let mut bounds: Option<CostBounds> = None;
        for x in self.transient_states() {
            for a in &self.actions[x] {
                if a.cost <= 0.0 {
                    return Err(MdpError::NonPositiveTransientCost {
                        state: self.states[x].clone(),
                        action: a.name.clone(),
                        cost: a.cost,
                    });
                }
                let b = bounds.get_or_insert(CostBounds { k_lower: a.cost, k_upper: a.cost });
                b.k_lower = b.k_lower.min(a.cost);
                b.k_upper = b.k_upper.max(a.cost);
            }
        }
        bounds.ok_or(MdpError::NoTransientPairs)
    }

    /// Decides whether absorption is unavoidable from every transient state.
    ///
    /// Computes the greatest set S of transient states such that every x in S
    /// has some action whose whole support stays inside S, by fixpoint
    /// iteration: start from all transient states and repeatedly drop states
    /// whose every action leaks probability outside the current set. The
    /// survivors can avoid x_M forever; the assumption holds iff none survive.
    pub fn check_reachability(&self) -> ReachabilityReport {
        let n = self.states.len();
        let mut in_set = vec![false; n];
        for x in self.transient_states() {
            in_set[x] = true;
        }
        loop {
            let mut changed = false;
            for x in self.transient_states() {
                if !in_set[x] {
                    continue;
                }
                let can_stay = self.actions[x].iter().any(|a| {
                    a.transitions.iter().all(|&(t, p)| p <= 0.0 || in_set[t])
                });
                if !can_stay {
                    in_set[x] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let avoid_set: Vec<String> = (0..n)
            .filter(|&x| in_set[x])
            .map(|x| self.states[x].clone())
            .collect();
        ReachabilityReport { satisfied: avoid_set.is_empty(), avoid_set }
    }

    /// Lower-bounds the probability of absorption within n steps from any
    /// state under any action selection.
    ///
    /// Exact enumeration takes, for each ordered pair of adjacent states, the
    /// smallest positive probability any action assigns to that edge, and
    /// minimizes the edge-weight product over all simple paths to x_M by
    /// depth-first search. A simple path visits each state at most once, so
    /// the per-state minimizing actions form one admissible selection and the
    /// result equals the minimum over selections and paths.
    pub fn compute_gamma(&self, method: GammaMethod) -> Result<GammaEstimate, MdpError> {
        let value = match method {
            GammaMethod::SafeLowerBound => {
                let mut p_min = f64::INFINITY;
                for list in &self.actions {
                    for a in list {
                        for &(_, p) in &a.transitions {
                            if p > 0.0 {
                                p_min = p_min.min(p);
                            }
                        }
                    }
                }
                if !p_min.is_finite() {
                    return Err(MdpError::NoPathToAbsorbing {
                        state: self.states[self.absorbing].clone(),
                    });
                }
                p_min.powi(self.states.len() as i32 - 1)
            }
            GammaMethod::ExactEnumeration => {
                let n = self.states.len();
                // Worst-case weight of each edge: the least positive
                // probability over actions, or None when no action can take it.
                let mut weight = vec![vec![None::<f64>; n]; n];
                for x in self.transient_states() {
                    for a in &self.actions[x] {
                        for &(t, p) in &a.transitions {
                            if p > 0.0 {
                                let w = weight[x][t].get_or_insert(p);
                                *w = w.min(p);
                            }
                        }
                    }
                }
                let mut gamma = f64::INFINITY;
                let mut visited = vec![false; n];
                for start in self.transient_states() {
                    let mut best = f64::INFINITY;
                    self.min_path_product(start, 1.0, &weight, &mut visited, &mut best);
                    if !best.is_finite() {
                        return Err(MdpError::NoPathToAbsorbing {
                            state: self.states[start].clone(),
                        });
                    }
                    gamma = gamma.min(best);
                }
                if !gamma.is_finite() {
                    // No transient states at all: absorption is immediate.
                    gamma = 1.0;
                }
                gamma
            }
        };
        Ok(GammaEstimate { value, method })
    }

    fn min_path_product(
        &self,
        x: usize,
        product: f64,
        weight: &[Vec<Option<f64>>],
        visited: &mut [bool],
        best: &mut f64,
    ) {
        visited[x] = true;
        for t in 0..self.states.len() {
            let Some(w) = weight[x][t] else { continue };
            if t == self.absorbing {
                *best = best.min(product * w);
            } else if !visited[t] {
                self.min_path_product(t, product * w, weight, visited, best);
            }
        }
        visited[x] = false;
    }
}

/// Smallest horizon d ≥ 1 whose truncation bound is at most `epsilon`.
///
/// The bound n·K̄·(1−γ)^⌊(d+1)/n⌋ / (1−τ) decreases in steps of n, so the
/// search runs over the exponent k = ⌊(d+1)/n⌋ and maps back to the smallest
/// d reaching it. γ = 1 means absorption is certain within n steps and any
/// horizon from d = n on is exact.
pub fn choose_horizon(
    bounds: &CostBounds,
    n: usize,
    gamma: f64,
    tau: f64,
    epsilon: f64,
) -> Result<u32, MdpError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(MdpError::InvalidParameter {
            name: "gamma",
            value: gamma,
            expected: "a value in (0, 1]",
        });
    }
    if !(epsilon > 0.0) {
        return Err(MdpError::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            expected: "a strictly positive value",
        });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MdpError::InvalidParameter {
            name: "tau",
            value: tau,
            expected: "a value in (0, 1)",
        });
    }
    if gamma == 1.0 {
        return Ok(n as u32);
    }
    // Find the smallest exponent k with coeff·(1−γ)^k ≤ ε, then the smallest
    // d ≥ 1 whose exponent ⌊(d+1)/n⌋ reaches k, which is n·k − 1 for k ≥ 1.
    // powi keeps the arithmetic identical to suboptimality_gap.
    let coeff = n as f64 * bounds.k_upper / (1.0 - tau);
    let mut k: u32 = 0;
    while coeff * (1.0 - gamma).powi(k as i32) > epsilon {
        k += 1;
        if k > 1_000_000 {
            return Err(MdpError::HorizonSearchOverflow);
        }
    }
    Ok((n as u32 * k).saturating_sub(1).max(1))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRow {
    from: String,
    action: String,
    to: String,
    p: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostRow {
    state: String,
    action: String,
    c: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    states: Vec<String>,
    absorbing: String,
    actions: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    transitions: Vec<TransitionRow>,
    #[serde(default)]
    costs: Vec<CostRow>,
    initial: BTreeMap<String, f64>,
}

impl Mdp {
    /// Parses the JSON model format.
    ///
    /// Fields: `states` (ordered), `absorbing`, `actions` mapping each state
    /// to its ordered action-name list, `transitions` as rows
    /// `{from, action, to, p}` (unlisted entries are 0), `costs` as rows
    /// `{state, action, c}`, and `initial` mapping states to mass. The
    /// absorbing state may omit its action list; the canonical zero-cost
    /// self-loop is added. Referential errors (unknown names, duplicates,
    /// missing costs) fail here; semantic violations are left to
    /// [`Mdp::validate`].
    pub fn from_json_str(text: &str) -> Result<Mdp, MdpError> {
        let file: MdpFile = serde_json::from_str(text)?;
        let known = |name: &String| -> Result<(), MdpError> {
            if file.states.contains(name) {
                Ok(())
            } else {
                Err(MdpError::UnknownState(name.clone()))
            }
        };
        known(&file.absorbing)?;
        for (i, s) in file.states.iter().enumerate() {
            if file.states[..i].contains(s) {
                return Err(MdpError::DuplicateState(s.clone()));
            }
        }
        let mut builder = MdpBuilder::new();
        for s in &file.states {
            builder = builder.state(s);
        }
        builder = builder.absorbing(&file.absorbing);

        let declared = |state: &String, action: &String| -> Result<(), MdpError> {
            known(state)?;
            let names = file.actions.get(state).ok_or_else(|| MdpError::UnknownAction {
                state: state.clone(),
                action: action.clone(),
            })?;
            if names.contains(action) {
                Ok(())
            } else {
                Err(MdpError::UnknownAction { state: state.clone(), action: action.clone() })
            }
        };
        for row in &file.transitions {
            declared(&row.from, &row.action)?;
            known(&row.to)?;
        }
        for row in &file.costs {
            declared(&row.state, &row.action)?;
        }
        for state in file.actions.keys() {
            known(state)?;
        }

        for state in &file.states {
            let Some(names) = file.actions.get(state) else { continue };
            for name in names {
                let mut cost = None;
                for row in file.costs.iter().filter(|r| &r.state == state && &r.action == name) {
                    if cost.replace(row.c).is_some() {
                        return Err(MdpError::DuplicateCost {
                            state: state.clone(),
                            action: name.clone(),
                        });
                    }
                }
                let cost = cost.ok_or_else(|| MdpError::MissingCost {
                    state: state.clone(),
                    action: name.clone(),
                })?;
                let rows: Vec<(&str, f64)> = file
                    .transitions
                    .iter()
                    .filter(|r| &r.from == state && &r.action == name)
                    .map(|r| (r.to.as_str(), r.p))
                    .collect();
                builder = builder.action(state, name, cost, &rows);
            }
        }
        for (state, &mass) in &file.initial {
            known(state)?;
            builder = builder.initial(state, mass);
        }
        builder.build()
    }
}
