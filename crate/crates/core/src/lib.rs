//! Risk-averse planning for transient total-cost Markov decision processes.
//!
//! Instead of minimizing the expected total cost until absorption, this
//! library minimizes the Average Value at Risk (AVaR, also known as CVaR) of
//! the total cost at a confidence level τ, which trades a worse mean for a
//! lighter upper tail. The pipeline:
//!
//! 1. Validate the model and its structural assumptions ([`mdp`]): strictly
//!    positive transient costs and absorption reachable under every policy.
//! 2. Pick a surrogate horizon `d` after which the process is stopped, with a
//!    certified bound on the optimality loss ([`mdp::choose_horizon`],
//!    [`risk::suboptimality_gap`]).
//! 3. Discretize accumulated cost with step ζ and build the stage-augmented
//!    chain over states (x, y, z) ([`augment`]).
//! 4. Solve an occupancy-measure linear program for each tail threshold s on
//!    an exact breakpoint grid, keep the best, and extract the optimal
//!    randomized policy ([`solver`]).
//! 5. Evaluate policies by exact trajectory enumeration or reproducible
//!    Monte Carlo ([`sim`]), and compare against the risk-neutral value
//!    iteration baseline ([`baseline`]).
//!
//! The [`scenario`] module compiles timed-graph deployment problems, where
//! every hop offers fast-but-flaky and slow-but-reliable options, into MDPs.

pub mod augment;
pub mod baseline;
pub mod mdp;
pub mod risk;
pub mod scenario;
pub mod sim;
pub mod solver;

pub use augment::{build_augmented, discretization_step, AugmentedMdp, Discretization};
pub use baseline::{value_iteration, BaselineSolution};
pub use mdp::{CostBounds, GammaEstimate, GammaMethod, Mdp, MdpBuilder};
pub use risk::CostDistribution;
pub use scenario::{compile_deployment, generate_grid_instance, DeploymentGraph};
pub use sim::{enumerate_trajectories, monte_carlo, rollout, Policy, RolloutBatch};
pub use solver::{
    build_lp, extract_policy, induced_distribution, search_s, AugmentedPolicy, Microlp,
    OccupancyLp, OccupancySolution, SolutionExport,
};

