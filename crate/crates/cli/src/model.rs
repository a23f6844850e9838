//! Input loading. The CLI accepts either an MDP file or a deployment graph
//! and tells them apart by their JSON keys instead of a flag, so every
//! subcommand works on both.

use std::path::Path;

use avar_mdp::scenario::ScenarioError;
use avar_mdp::{compile_deployment, DeploymentGraph, Mdp};

use crate::Failure;

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Reads a model file and compiles it to an MDP. A document with a
/// `vertices` key is a deployment graph; one with a `states` key is an MDP
/// taken as is. Anything else is rejected.
pub fn load_model(path: &Path) -> Result<Mdp, Failure> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    if value.get("vertices").is_some() {
        let graph =
            DeploymentGraph::from_json_str(&text).map_err(|e| scenario_failure(path, e))?;
        compile_deployment(&graph).map_err(|e| scenario_failure(path, e))
    } else if value.get("states").is_some() {
        Mdp::from_json_str(&text)
            .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
    } else {
        Err(Failure::invalid(format!(
            "{}: neither an MDP file (expected a \"states\" key) nor a deployment graph \
             (expected a \"vertices\" key)",
            path.display()
        )))
    }
}

/// Graph defects that break the solver's standing assumptions (unreachable
/// goal, nonpositive durations, vanishing success probabilities) exit with
/// the assumption-violation code; structural defects are input errors.
fn scenario_failure(path: &Path, e: ScenarioError) -> Failure {
    let message = format!("{}: {e}", path.display());
    match e {
        ScenarioError::GoalUnreachable { .. }
        | ScenarioError::BadDuration { .. }
        | ScenarioError::BadProbability { .. } => Failure::assumption(message),
        _ => Failure::invalid(message),
    }
}
