//! Rapid-deployment scenarios: timed graphs compiled into MDPs.
//!
//! A deployment graph is a directed graph with a start and a goal vertex.
//! Each edge offers speed options, a trade-off between duration and success
//! probability: attempting an option either traverses the edge or leaves the
//! robot where it was, with the full duration elapsed either way. Compiling
//! the graph yields an MDP whose total cost is the time to reach the goal,
//! ready for the risk-averse pipeline.
//!
//! The generator produces grid-shaped instances from a canonical option
//! palette (fast 1 time unit at 0.5, mid 2 at 0.8, slow 3 at 0.99), so
//! shorter always means riskier.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Mdp, MdpError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("graph has no vertices")]
    NoVertices,
    #[error("duplicate vertex {name}")]
    DuplicateVertex { name: String },
    #[error("{role} vertex {name} is not declared")]
    UnknownVertex { role: &'static str, name: String },
    #[error("start and goal must differ")]
    StartIsGoal,
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: String, to: String },
    #[error("edge {vertex} -> {vertex} would trap the robot in place")]
    SelfLoop { vertex: String },
    #[error("edge {from} -> {to} has no speed options")]
    NoOptions { from: String, to: String },
    #[error("option {label} on {from} -> {to} has duration {duration} (must be > 0)")]
    BadDuration { from: String, to: String, label: String, duration: f64 },
    #[error("option {label} on {from} -> {to} has success probability {p} (must be in (0, 1])")]
    BadProbability { from: String, to: String, label: String, p: f64 },
    #[error("goal is unreachable from {}", vertices.join(", "))]
    GoalUnreachable { vertices: Vec<String> },
    #[error("invalid {name}: {value} (expected {expected})")]
    InvalidParameter { name: &'static str, value: u64, expected: &'static str },
    #[error(transparent)]
    Build(#[from] MdpError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One way to attempt an edge: spend `duration` time units and traverse
/// with probability `p`, otherwise stay put.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedOption {
    pub label: String,
    pub duration: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub options: Vec<SpeedOption>,
}

/// A deployment problem: reach `goal` from `start` over directed edges with
/// speed options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentGraph {
    pub vertices: Vec<String>,
    pub start: String,
    pub goal: String,
    pub edges: Vec<Edge>,
}

impl DeploymentGraph {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("graph types serialize");
        text.push('\n');
        text
    }

    /// Checks the structural rules compilation relies on: known and distinct
    /// vertices, positive durations, probabilities in (0, 1], at least one
    /// option per edge, no self-loops or duplicate edges, and the goal
    /// reachable from every vertex.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.vertices.is_empty() {
            return Err(ScenarioError::NoVertices);
        }
        let mut seen = HashSet::new();
        for v in &self.vertices {
            if !seen.insert(v.as_str()) {
                return Err(ScenarioError::DuplicateVertex { name: v.clone() });
            }
        }
        for (role, name) in [("start", &self.start), ("goal", &self.goal)] {
            if !seen.contains(name.as_str()) {
                return Err(ScenarioError::UnknownVertex { role, name: name.clone() });
            }
        }
        if self.start == self.goal {
            return Err(ScenarioError::StartIsGoal);
        }
        let mut pairs = HashSet::new();
        for edge in &self.edges {
            for (role, name) in [("edge source", &edge.from), ("edge target", &edge.to)] {
                if !seen.contains(name.as_str()) {
                    return Err(ScenarioError::UnknownVertex { role, name: name.clone() });
                }
            }
            if edge.from == edge.to {
                return Err(ScenarioError::SelfLoop { vertex: edge.from.clone() });
            }
            if !pairs.insert((edge.from.as_str(), edge.to.as_str())) {
                return Err(ScenarioError::DuplicateEdge {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                });
            }
            if edge.options.is_empty() {
                return Err(ScenarioError::NoOptions {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                });
            }
            for option in &edge.options {
                if !(option.duration > 0.0) || !option.duration.is_finite() {
                    return Err(ScenarioError::BadDuration {
                        from: edge.from.clone(),
                        to: edge.to.clone(),
                        label: option.label.clone(),
                        duration: option.duration,
                    });
                }
                if !(option.p > 0.0 && option.p <= 1.0) {
                    return Err(ScenarioError::BadProbability {
                        from: edge.from.clone(),
                        to: edge.to.clone(),
                        label: option.label.clone(),
                        p: option.p,
                    });
                }
            }
        }

        // Reverse breadth-first search from the goal; every vertex must be
        // able to reach it, or some policy would wander forever.
        let mut incoming: HashMap<&str, Vec<&str>> = HashMap::new();
        for edge in &self.edges {
            incoming.entry(edge.to.as_str()).or_default().push(edge.from.as_str());
        }
        let mut reaches: HashSet<&str> = HashSet::new();
        reaches.insert(self.goal.as_str());
        let mut queue = VecDeque::from([self.goal.as_str()]);
        while let Some(v) = queue.pop_front() {
            for &u in incoming.get(v).into_iter().flatten() {
                if reaches.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        let stranded: Vec<String> = self
            .vertices
            .iter()
            .filter(|v| !reaches.contains(v.as_str()))
            .cloned()
            .collect();
        if !stranded.is_empty() {
            return Err(ScenarioError::GoalUnreachable { vertices: stranded });
        }
        Ok(())
    }
}

/// Compiles a deployment graph into an MDP.
///
/// States are the vertices with the goal absorbing; each (edge, option)
/// pair becomes one action named `label:target` costing the duration, with
/// the success probability on the target and the rest on staying put.
/// Out-edges of the goal are ignored: deployment ends on arrival. Durations
/// are the strictly positive transient costs, and every action moves toward
/// the goal with positive probability, so the compiled MDP satisfies the
/// transience assumptions by construction.
pub fn compile_deployment(graph: &DeploymentGraph) -> Result<Mdp, ScenarioError> {
    graph.validate()?;
    let mut builder = Mdp::builder();
    for v in &graph.vertices {
        if *v == graph.goal {
            builder = builder.absorbing(v);
        } else {
            builder = builder.state(v);
        }
    }
    for edge in &graph.edges {
        if edge.from == graph.goal {
            continue;
        }
        for option in &edge.options {
            let name = format!("{}:{}", option.label, edge.to);
            let mut transitions = vec![(edge.to.as_str(), option.p)];
            if option.p < 1.0 {
                transitions.push((edge.from.as_str(), 1.0 - option.p));
            }
            builder = builder.action(&edge.from, &name, option.duration, &transitions);
        }
    }
    builder = builder.initial(&graph.start, 1.0);
    Ok(builder.build()?)
}

/// The generator's palette: shorter durations come with lower success
/// probabilities, so no option dominates another.
const PALETTE: [(&str, f64, f64); 3] = [("fast", 1.0, 0.5), ("mid", 2.0, 0.8), ("slow", 3.0, 0.99)];

/// Generates a width × height grid with edges pointing right and down,
/// start at the top-left corner and goal at the bottom-right. Each edge
/// carries `options_per_edge` options sampled from the palette (all three
/// when asked for three). Deterministic given the seed.
pub fn generate_grid_instance(
    width: u32,
    height: u32,
    options_per_edge: u32,
    seed: u64,
) -> Result<DeploymentGraph, ScenarioError> {
    if width < 2 {
        return Err(ScenarioError::InvalidParameter {
            name: "width",
            value: width as u64,
            expected: "at least 2",
        });
    }
    if height < 2 {
        return Err(ScenarioError::InvalidParameter {
            name: "height",
            value: height as u64,
            expected: "at least 2",
        });
    }
    if !(1..=PALETTE.len() as u32).contains(&options_per_edge) {
        return Err(ScenarioError::InvalidParameter {
            name: "options_per_edge",
            value: options_per_edge as u64,
            expected: "between 1 and 3",
        });
    }

    let name = |r: u32, c: u32| format!("v{r}_{c}");
    let mut vertices = Vec::new();
    for r in 0..height {
        for c in 0..width {
            vertices.push(name(r, c));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let mut targets = Vec::new();
            if c + 1 < width {
                targets.push(name(r, c + 1));
            }
            if r + 1 < height {
                targets.push(name(r + 1, c));
            }
            for to in targets {
                let mut picks: Vec<usize> =
                    rand::seq::index::sample(&mut rng, PALETTE.len(), options_per_edge as usize)
                        .into_vec();
                picks.sort_unstable();
                let options = picks
                    .into_iter()
                    .map(|i| {
                        let (label, duration, p) = PALETTE[i];
                        SpeedOption { label: label.to_string(), duration, p }
                    })
                    .collect();
                edges.push(Edge { from: name(r, c), to, options });
            }
        }
    }

    Ok(DeploymentGraph {
        vertices,
        start: name(0, 0),
        goal: name(height - 1, width - 1),
        edges,
    })
}
