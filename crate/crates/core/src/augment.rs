//! Cost discretization and the surrogate stage-augmented chain.
//!
//! The solver cannot optimize over the law of a continuous accumulated cost,
//! so the cost axis is discretized with step ζ and the process is truncated
//! after d stages. An augmented state (x, y, z) carries the base state x, the
//! discretized accumulated cost index y, and the stage counter z. Taking
//! action u in (x, y, z) with z < d moves x stochastically as in the base
//! model and deterministically sets
//!
//! ```text
//! y' = y + ⌊cost(x, u) / ζ⌋   (capped at N),   z' = z + 1.
//! ```
//!
//! States in layer z = d are terminal: each trajectory reaches the layer
//! exactly once and its y there encodes the truncated total cost ζ·y, up to
//! the pathwise error |ζ·y_t − c_t| ≤ t·ζ.
//!
//! Choosing ζ = min{K̲, d·K̄/N′} (N′ is the requested level count) keeps every
//! transient increment at least 1 and the level count N = ⌈d·K̄/ζ⌉ finite.
//! Only states forward-reachable from the initial layer are materialized; the
//! dense product space is vastly larger than the reachable set.

use std::collections::HashMap;

use thiserror::Error;

use crate::mdp::{CostBounds, Mdp};

/// Errors from discretization and augmented-chain construction.
#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("cost lower bound {k_lower} is not strictly positive")]
    ZeroStep { k_lower: f64 },
    #[error("invalid {name}: {value} (expected {expected})")]
    InvalidParameter { name: &'static str, value: f64, expected: &'static str },
    #[error("cost({state}, {action}) = {cost} discretizes to a zero increment")]
    ZeroIncrement { state: String, action: String, cost: f64 },
}

/// The cost grid: step ζ, level count N, horizon d, and the requested level
/// count N′ that produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    zeta: f64,
    n_levels: u32,
    d: u32,
    n_prime: u32,
}

/// Relative slack when deciding that a cost ratio is an exact integer.
///
/// 0.3/0.1 evaluates to 2.9999999999999996 in binary floating point; without
/// snapping, the floor would lose a whole level.
const RATIO_SNAP: f64 = 1e-9;

fn snap_floor(ratio: f64) -> f64 {
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= RATIO_SNAP * ratio.abs().max(1.0) {
        nearest
    } else {
        ratio.floor()
    }
}

fn snap_ceil(ratio: f64) -> f64 {
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= RATIO_SNAP * ratio.abs().max(1.0) {
        nearest
    } else {
        ratio.ceil()
    }
}

/// Picks the cost step ζ = min{K̲, d·K̄/N′} and the level count N = ⌈d·K̄/ζ⌉.
///
/// ζ never exceeds K̲, so every transient action advances y by at least one
/// level; N can therefore exceed the requested N′. The degenerate horizon
/// d = 0 gets ζ = K̲ and a single level 0 (nothing accumulates in zero steps).
pub fn discretization_step(
    bounds: &CostBounds,
    d: u32,
    n_prime: u32,
) -> Result<Discretization, AugmentError> {
    if bounds.k_lower <= 0.0 {
        return Err(AugmentError::ZeroStep { k_lower: bounds.k_lower });
    }
    if n_prime == 0 {
        return Err(AugmentError::InvalidParameter {
            name: "n_prime",
            value: 0.0,
            expected: "at least one requested level",
        });
    }
    if d == 0 {
        return Ok(Discretization { zeta: bounds.k_lower, n_levels: 0, d, n_prime });
    }
    let span = d as f64 * bounds.k_upper;
    let zeta = bounds.k_lower.min(span / n_prime as f64);
    let n_levels = snap_ceil(span / zeta) as u32;
    Ok(Discretization { zeta, n_levels, d, n_prime })
}

impl Discretization {
    /// The cost step ζ.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// The largest level index N; levels run 0..=N.
    pub fn n_levels(&self) -> u32 {
        self.n_levels
    }

    /// The surrogate horizon d.
    pub fn d(&self) -> u32 {
        self.d
    }

    /// The requested level count N′.
    pub fn n_prime(&self) -> u32 {
        self.n_prime
    }

    /// The level increment ⌊cost / ζ⌋ of one action, with near-integer
    /// ratios snapped before flooring.
    pub fn increment(&self, cost: f64) -> u32 {
        snap_floor(cost / self.zeta) as u32
    }

    /// The cost value ζ·k represented by level k.
    pub fn level_cost(&self, k: u32) -> f64 {
        self.zeta * k as f64
    }
}

/// One reachable augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugState {
    /// Base state index.
    pub x: usize,
    /// Discretized accumulated cost level.
    pub y: u32,
    /// Stage counter, 0..=d.
    pub z: u32,
}

/// The reachable part of the stage-augmented chain, with precomputed sparse
/// transitions.
///
/// States are indexed in breadth-first discovery order, so all of layer z
/// precedes all of layer z + 1. Layer-d states are terminal and have no
/// outgoing transitions; conceptually every trajectory parks there (the trap
/// is implicit, which keeps the occupancy LP small).
#[derive(Debug)]
pub struct AugmentedMdp<'a> {
    mdp: &'a Mdp,
    disc: Discretization,
    states: Vec<AugState>,
    index: HashMap<(usize, u32, u32), usize>,
    /// transitions[i][u] lists (successor index, probability) for augmented
    /// state i under action u; empty outer Vec for terminal layer-d states.
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
}

/// Materializes the augmented chain reachable from the initial layer.
///
/// Breadth-first from (x, 0, 0) for every x in the support of β. Requires a
/// validated base model; transient actions whose cost discretizes to a zero
/// increment are rejected (impossible when ζ ≤ K̲, but checked because a
/// zero increment would silently break the cost accounting).
pub fn build_augmented<'a>(
    mdp: &'a Mdp,
    disc: &Discretization,
) -> Result<AugmentedMdp<'a>, AugmentError> {
    let n_levels = disc.n_levels;
    let d = disc.d;
    let mut states: Vec<AugState> = Vec::new();
    let mut index: HashMap<(usize, u32, u32), usize> = HashMap::new();
    let mut transitions: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();

    let intern = |states: &mut Vec<AugState>,
                      transitions: &mut Vec<Vec<Vec<(usize, f64)>>>,
                      index: &mut HashMap<(usize, u32, u32), usize>,
                      s: AugState| {
        *index.entry((s.x, s.y, s.z)).or_insert_with(|| {
            states.push(s);
            transitions.push(Vec::new());
            states.len() - 1
        })
    };

    for (x, &mass) in mdp.initial().iter().enumerate() {
        if mass > 0.0 {
            intern(&mut states, &mut transitions, &mut index, AugState { x, y: 0, z: 0 });
        }
    }

    let mut cursor = 0;
    while cursor < states.len() {
        let here = states[cursor];
        if here.z == d {
            cursor += 1;
            continue;
        }
        let mut per_action = Vec::with_capacity(mdp.actions(here.x).len());
        for action in mdp.actions(here.x) {
            let inc = disc.increment(action.cost());
            if inc == 0 && mdp.is_transient(here.x) {
                return Err(AugmentError::ZeroIncrement {
                    state: mdp.state_name(here.x).to_string(),
                    action: action.name().to_string(),
                    cost: action.cost(),
                });
            }
            debug_assert!(
                here.y + inc <= n_levels,
                "level overflow: {} + {} > {}",
                here.y,
                inc,
                n_levels
            );
            let y_next = (here.y + inc).min(n_levels);
            let z_next = here.z + 1;
            let mut successors = Vec::with_capacity(action.transitions().len());
            for &(x_next, p) in action.transitions() {
                if p <= 0.0 {
                    continue;
                }
                let j = intern(
                    &mut states,
                    &mut transitions,
                    &mut index,
                    AugState { x: x_next, y: y_next, z: z_next },
                );
                successors.push((j, p));
            }
            per_action.push(successors);
        }
        transitions[cursor] = per_action;
        cursor += 1;
    }

    Ok(AugmentedMdp { mdp, disc: *disc, states, index, transitions })
}

impl<'a> AugmentedMdp<'a> {
    pub fn mdp(&self) -> &'a Mdp {
        self.mdp
    }

    pub fn disc(&self) -> &Discretization {
        &self.disc
    }

    /// All materialized states in discovery order (layer by layer).
    pub fn states(&self) -> &[AugState] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, i: usize) -> AugState {
        self.states[i]
    }

    pub fn state_index(&self, x: usize, y: u32, z: u32) -> Option<usize> {
        self.index.get(&(x, y, z)).copied()
    }

    /// Number of actions available in augmented state i (inherited from the
    /// base state; layer-d states keep their action count for bookkeeping).
    pub fn n_actions(&self, i: usize) -> usize {
        self.mdp.actions(self.states[i].x).len()
    }

    /// Sparse successors of state i under action u. Empty for layer-d states.
    pub fn successors(&self, i: usize, u: usize) -> &[(usize, f64)] {
        &self.transitions[i][u]
    }

    pub fn is_terminal(&self, i: usize) -> bool {
        self.states[i].z == self.disc.d
    }

    /// The initial mass β′ over augmented states: β(x) at (x, 0, 0).
    pub fn initial_mass(&self) -> Vec<f64> {
        let mut beta = vec![0.0; self.states.len()];
        for (x, &mass) in self.mdp.initial().iter().enumerate() {
            if mass > 0.0 {
                let i = self.index[&(x, 0, 0)];
                beta[i] = mass;
            }
        }
        beta
    }

    /// State count per layer z = 0..=d, useful for size diagnostics.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.disc.d as usize + 1];
        for s in &self.states {
            sizes[s.z as usize] += 1;
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::GammaMethod;

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

    #[test]
    fn test_step_formula_basic() {
        let b = CostBounds { k_lower: 1.0, k_upper: 2.0 };
        let disc = discretization_step(&b, 10, 40).unwrap();
        assert_eq!(disc.zeta(), 0.5);
        assert_eq!(disc.n_levels(), 40);
    }

    #[test]
    fn test_step_formula_caps_at_k_lower() {
        let b = CostBounds { k_lower: 1.0, k_upper: 2.0 };
        let disc = discretization_step(&b, 3, 6).unwrap();
        assert_eq!(disc.zeta(), 1.0);
        assert_eq!(disc.n_levels(), 6);
    }

    #[test]
    fn test_step_formula_small_k_lower_inflates_levels() {
        let b = CostBounds { k_lower: 0.1, k_upper: 1.0 };
        let disc = discretization_step(&b, 5, 10).unwrap();
        assert_eq!(disc.zeta(), 0.1);
        // 5 / 0.1 rounds below 50 in floating point; the snap must not let
        // the ceiling land on 49 or 51.
        assert_eq!(disc.n_levels(), 50);
    }

    #[test]
    fn test_increment_snaps_near_integer_ratios() {
        let b = CostBounds { k_lower: 0.1, k_upper: 0.3 };
        let disc = discretization_step(&b, 4, 4).unwrap();
        assert_eq!(disc.zeta(), 0.1);
        // 0.3 / 0.1 = 2.9999999999999996 without snapping.
        assert_eq!(disc.increment(0.3), 3);
        assert_eq!(disc.increment(0.1), 1);
        assert_eq!(disc.increment(0.25), 2);
        assert_eq!(disc.increment(0.0), 0);
    }

    #[test]
    fn test_tiny2_reachable_layers() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 3, 6).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        assert_eq!(aug.layer_sizes(), vec![1, 3, 4, 5]);
        assert_eq!(aug.n_states(), 13);
        // Layer 1 spells out the two actions: absorbed cheaply, still at A,
        // or absorbed at the slow cost.
        let xm = mdp.absorbing();
        let a = mdp.state_index("A").unwrap();
        assert!(aug.state_index(xm, 1, 1).is_some());
        assert!(aug.state_index(a, 1, 1).is_some());
        assert!(aug.state_index(xm, 2, 1).is_some());
        // y freezes once absorbed.
        assert!(aug.state_index(xm, 1, 2).is_some());
        assert!(aug.state_index(xm, 1, 3).is_some());
    }

    #[test]
    fn test_single_chain_materializes_three_states() {
        let mdp = Mdp::builder()
            .state("A")
            .absorbing("xM")
            .action("A", "go", 1.0, &[("xM", 1.0)])
            .initial("A", 1.0)
            .build()
            .unwrap();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 2, 2).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        // (A,0,0) -> (xM,1,1) -> (xM,1,2); the layer-2 state is terminal and
        // the trap stays implicit.
        assert_eq!(aug.n_states(), 3);
        assert_eq!(aug.layer_sizes(), vec![1, 1, 1]);
        let last = aug.state_index(mdp.absorbing(), 1, 2).unwrap();
        assert!(aug.is_terminal(last));
    }

    #[test]
    fn test_degenerate_horizon_has_only_layer_zero() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 0, 1).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        assert_eq!(aug.n_states(), 1);
        assert!(aug.is_terminal(0));
        assert_eq!(aug.initial_mass(), vec![1.0]);
    }

    #[test]
    fn test_initial_mass_concentrates_on_layer_zero() {
        let mdp = tiny2();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 3, 6).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let beta = aug.initial_mass();
        let a = mdp.state_index("A").unwrap();
        let root = aug.state_index(a, 0, 0).unwrap();
        assert_eq!(beta[root], 1.0);
        assert_eq!(beta.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn test_initial_mass_splits_over_support() {
        let mdp = Mdp::builder()
            .state("A")
            .state("B")
            .absorbing("xM")
            .action("A", "go", 1.0, &[("xM", 1.0)])
            .action("B", "go", 1.0, &[("xM", 1.0)])
            .initial("A", 0.5)
            .initial("B", 0.5)
            .build()
            .unwrap();
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 2, 2).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();
        let beta = aug.initial_mass();
        let a = aug.state_index(mdp.state_index("A").unwrap(), 0, 0).unwrap();
        let b = aug.state_index(mdp.state_index("B").unwrap(), 0, 0).unwrap();
        assert_eq!(beta[a], 0.5);
        assert_eq!(beta[b], 0.5);
    }

    /// Forward-propagates β′ through the chain and checks mass conservation,
    /// monotone y, and the stage invariant z_t = min(t, d).
    #[test]
    fn test_forward_propagation_invariants() {
        let mdp = Mdp::builder()
            .state("A")
            .state("B")
            .absorbing("xM")
            .action("A", "risky", 0.5, &[("B", 0.6), ("A", 0.2), ("xM", 0.2)])
            .action("A", "steady", 1.5, &[("xM", 1.0)])
            .action("B", "go", 1.0, &[("xM", 0.7), ("B", 0.3)])
            .initial("A", 1.0)
            .build()
            .unwrap();
        assert!(mdp.validate().is_empty());
        let disc = discretization_step(&mdp.cost_bounds().unwrap(), 6, 18).unwrap();
        let aug = build_augmented(&mdp, &disc).unwrap();

        for (i, s) in aug.states().iter().enumerate() {
            if aug.is_terminal(i) {
                continue;
            }
            for u in 0..aug.n_actions(i) {
                for &(j, _) in aug.successors(i, u) {
                    let t = aug.state(j);
                    assert_eq!(t.z, s.z + 1, "stage must advance by one");
                    assert!(t.y >= s.y, "y must be nondecreasing");
                    if s.x == mdp.absorbing() {
                        assert_eq!(t.y, s.y, "y must freeze after absorption");
                    }
                }
            }
        }

        // Uniform policy: mass at each stage stays 1 within 1e-12.
        let mut mass = aug.initial_mass();
        for _stage in 0..disc.d() {
            let mut next = vec![0.0; aug.n_states()];
            for (i, &m) in mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                if aug.is_terminal(i) {
                    next[i] += m;
                    continue;
                }
                let k = aug.n_actions(i) as f64;
                for u in 0..aug.n_actions(i) {
                    for &(j, p) in aug.successors(i, u) {
                        next[j] += m * p / k;
                    }
                }
            }
            mass = next;
            let total: f64 = mass.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12, "stage mass drifted to {total}");
        }
        // After d stages everything sits in the terminal layer.
        for (i, &m) in mass.iter().enumerate() {
            if m > 0.0 {
                assert!(aug.is_terminal(i));
            }
        }
    }

    #[test]
    fn test_zero_increment_is_rejected() {
        let mdp = tiny2();
        // Hand-build a discretization with an oversized step so the cheap
        // action floors to zero levels.
        let disc = Discretization { zeta: 1.5, n_levels: 4, d: 3, n_prime: 4 };
        match build_augmented(&mdp, &disc) {
            Err(AugmentError::ZeroIncrement { state, action, .. }) => {
                assert_eq!(state, "A");
                assert_eq!(action, "fast");
            }
            other => panic!("expected ZeroIncrement, got {other:?}"),
        }
    }

    #[test]
    fn test_gamma_still_sane_on_augment_fixture() {
        // Guards the fixture used above: its exact γ must stay positive so
        // horizon selection terminates.
        let mdp = tiny2();
        let g = mdp.compute_gamma(GammaMethod::ExactEnumeration).unwrap();
        assert!(g.value > 0.0);
    }
}
