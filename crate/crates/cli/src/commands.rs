//! The five subcommands. Each resolves its flags against the optional
//! config file, loads the model, and maps library errors onto the
//! documented exit codes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use avar_mdp::mdp::choose_horizon;
use avar_mdp::risk::suboptimality_gap;
use avar_mdp::solver::{policy_rows, PolicyEntry};
use avar_mdp::{
    build_augmented, build_lp, discretization_step, extract_policy, monte_carlo, search_s,
    value_iteration, AugmentedPolicy, CostBounds, GammaEstimate, GammaMethod, Mdp, Microlp,
    OccupancySolution, Policy, RolloutBatch, SolutionExport,
};

use crate::model::{load_model, read_text, write_text};
use crate::{
    resolve_horizon_choice, resolve_runs, resolve_stride, resolve_tau, CompareArgs, Failure,
    FileConfig, GenerateArgs, HorizonChoice, SimulateArgs, SolveArgs, ValidateArgs,
};

/// Exact enumeration visits every simple path to the absorbing state, which
/// is exponential in the worst case; past this many states the safe product
/// bound takes over.
const EXACT_GAMMA_LIMIT: usize = 12;

fn default_gamma(mdp: &Mdp) -> Result<GammaEstimate, Failure> {
    let method = if mdp.n_states() <= EXACT_GAMMA_LIMIT {
        GammaMethod::ExactEnumeration
    } else {
        GammaMethod::SafeLowerBound
    };
    Ok(mdp.compute_gamma(method)?)
}

fn method_label(method: GammaMethod) -> &'static str {
    match method {
        GammaMethod::ExactEnumeration => "exact enumeration",
        GammaMethod::SafeLowerBound => "safe lower bound",
    }
}

/// Fails with the assumption-violation code unless the model passes both
/// validators.
fn check_assumptions(mdp: &Mdp) -> Result<(), Failure> {
    let violations = mdp.validate();
    if !violations.is_empty() {
        let listing: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Failure::assumption(listing.join("; ")));
    }
    let reach = mdp.check_reachability();
    if !reach.satisfied {
        return Err(Failure::assumption(format!(
            "absorption is avoidable from {}",
            reach.avoid_set.join(", ")
        )));
    }
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.config.as_deref())?;
    let tau = resolve_tau(args.tau.or(file.tau))?;
    let mdp = load_model(&args.input)?;
    let n = mdp.n_states();
    println!(
        "model: {} states ({} transient), absorbing state {}",
        n,
        n - 1,
        mdp.state_name(mdp.absorbing())
    );
    let violations = mdp.validate();
    if !violations.is_empty() {
        for v in &violations {
            println!("violation: {v}");
        }
        let listing: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Failure::assumption(listing.join("; ")));
    }
    println!("validation: ok");
    let reach = mdp.check_reachability();
    if !reach.satisfied {
        println!("reachability: violated by {}", reach.avoid_set.join(", "));
        return Err(Failure::assumption(format!(
            "absorption is avoidable from {}",
            reach.avoid_set.join(", ")
        )));
    }
    println!("reachability: satisfied");
    let bounds = mdp.cost_bounds()?;
    println!("cost bounds: [{}, {}]", bounds.k_lower, bounds.k_upper);
    let gamma = default_gamma(&mdp)?;
    println!("gamma: {} ({})", gamma.value, method_label(gamma.method));
    println!("suboptimality gap bounds at tau = {tau}:");
    // The bound steps down once per n horizon stages, so list the last
    // horizon of each of the first ten stages.
    for k in 1..=10u32 {
        let d = n as u32 * k - 1;
        let gap = suboptimality_gap(n, bounds.k_upper, gamma.value, tau, d)?;
        println!("  d = {d:>4}: {gap}");
    }
    Ok(())
}

/// Everything `solve` produces that `compare` also needs.
pub struct SolveOutcome {
    pub d: u32,
    pub n_levels: u32,
    pub zeta: f64,
    pub gap_bound: Option<f64>,
    pub solution: OccupancySolution,
    pub policy: AugmentedPolicy,
    pub export: SolutionExport,
}

/// The full pipeline: assumptions, horizon, discretization, LP, policy.
pub fn solve_model(
    mdp: &Mdp,
    tau: f64,
    choice: &HorizonChoice,
    levels: Option<u32>,
    stride: u32,
) -> Result<SolveOutcome, Failure> {
    check_assumptions(mdp)?;
    let bounds = mdp.cost_bounds()?;
    let gamma = default_gamma(mdp)?;
    let d = match *choice {
        HorizonChoice::Fixed(d) => d,
        HorizonChoice::Epsilon(epsilon) => {
            choose_horizon(&bounds, mdp.n_states(), gamma.value, tau, epsilon)?
        }
    };
    if d == 0 {
        eprintln!("warning: horizon 0 stops before any cost accrues, the objective degenerates to 0");
    }
    let n_prime = levels.unwrap_or_else(|| default_levels(&bounds, d));
    let disc = discretization_step(&bounds, d, n_prime)?;
    let aug = build_augmented(mdp, &disc)?;
    let lp = build_lp(&aug, &aug.initial_mass())?;
    let solution = search_s(&lp, tau, stride, &Microlp)?;
    let policy = extract_policy(&aug, &lp, &solution.rho_star);
    // The truncation bound is only derived for d >= 1; the degenerate solve
    // still goes through, it just has no certificate.
    let gap_bound = if d >= 1 {
        Some(suboptimality_gap(mdp.n_states(), bounds.k_upper, gamma.value, tau, d)?)
    } else {
        None
    };
    let export = SolutionExport {
        tau: Some(tau),
        d: Some(d),
        n_prime: Some(n_prime),
        zeta: Some(disc.zeta()),
        s_star: Some(solution.s_star),
        objective: solution.objective,
        theta: Some(solution.theta_star.iter().collect()),
        gap_bound,
        policy: policy_rows(&aug, &lp, &solution.rho_star, &policy),
    };
    Ok(SolveOutcome {
        d,
        n_levels: disc.n_levels(),
        zeta: disc.zeta(),
        gap_bound,
        solution,
        policy,
        export,
    })
}

/// Enough levels for the grid step to reach its floor of K_lower.
fn default_levels(bounds: &CostBounds, d: u32) -> u32 {
    ((d as f64 * bounds.k_upper / bounds.k_lower).ceil() as u32).max(1)
}

pub fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.config.as_deref())?;
    let tau = resolve_tau(args.tau.or(file.tau))?;
    let choice = resolve_horizon_choice(args.epsilon, args.horizon, file.epsilon, file.horizon)?;
    let stride = resolve_stride(args.stride.or(file.stride))?;
    let levels = args.levels.or(file.levels);
    let mdp = load_model(&args.input)?;
    let outcome = solve_model(&mdp, tau, &choice, levels, stride)?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("solution.json"));
    let theta_path = theta_csv_path(&out);
    write_text(&out, &outcome.export.to_json())?;
    write_text(&theta_path, &outcome.solution.theta_star.to_csv())?;
    println!("objective: {}", outcome.solution.objective);
    println!("s*: {}", outcome.solution.s_star);
    println!("horizon d: {}", outcome.d);
    println!("zeta: {} ({} levels)", outcome.zeta, outcome.n_levels);
    if let Some(gap) = outcome.gap_bound {
        println!("gap bound: {gap}");
    }
    if outcome.solution.grid_slack > 0.0 {
        println!("grid slack: {}", outcome.solution.grid_slack);
    }
    println!("wrote {} and {}", out.display(), theta_path.display());
    Ok(())
}

/// `solution.json` gets a sibling `solution.theta.csv`; outputs without a
/// `.json` suffix just grow the full suffix.
fn theta_csv_path(out: &Path) -> PathBuf {
    if out.extension().and_then(|e| e.to_str()) == Some("json") {
        out.with_extension("theta.csv")
    } else {
        suffixed(out, ".theta.csv")
    }
}

fn suffixed(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.config.as_deref())?;
    let tau = resolve_tau(args.tau.or(file.tau))?;
    let runs = resolve_runs(args.runs.or(file.runs))?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let deadline = args.deadline.or(file.deadline);
    let solution_path = args.solution.clone().or(file.solution).ok_or_else(|| {
        Failure::invalid("simulate needs --solution pointing at an exported policy")
    })?;
    let mdp = load_model(&args.input)?;
    let text = read_text(&solution_path)?;
    let export = SolutionExport::from_json_str(&text)
        .map_err(|e| Failure::invalid(format!("{}: {e}", solution_path.display())))?;
    let (policy, d) = rebuild_policy(&mdp, &export, args.horizon.or(file.horizon), &solution_path)?;
    let batch = monte_carlo(&mdp, &policy, d, runs, seed)?;
    let dist = batch.empirical_distribution()?;
    println!("runs: {}", batch.len());
    println!("horizon d: {d}");
    println!("mean: {}", batch.mean());
    println!("VaR[{tau}]: {}", dist.var(tau)?);
    println!("AVaR[{tau}]: {}", dist.avar(tau)?);
    println!("timeouts: {}", batch.timeout_count());
    if let Some(t) = deadline {
        println!("exceedances beyond {}: {}", t, batch.exceedance_count(t));
    }
    let base = args
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("simulation"));
    let batch_path = suffixed(&base, ".batch.csv");
    let hist_path = suffixed(&base, ".histogram.csv");
    write_text(&batch_path, &batch_csv(&batch))?;
    write_text(&hist_path, &dist.to_csv())?;
    println!("wrote {} and {}", batch_path.display(), hist_path.display());
    Ok(())
}

/// Turns an exported policy back into an executable one.
///
/// Augmented rows carry a cost level and a stage, so the grid is rebuilt
/// from the exported `d` and `n_prime` against this model's cost bounds; a
/// grid-step mismatch means the solution belongs to a different model.
/// Stationary rows (no level, no stage) need an explicit horizon to know
/// when a rollout times out.
fn rebuild_policy(
    mdp: &Mdp,
    export: &SolutionExport,
    horizon: Option<u32>,
    path: &Path,
) -> Result<(Policy, u32), Failure> {
    if export.policy.is_empty() {
        return Err(Failure::invalid(format!("{}: the policy has no rows", path.display())));
    }
    let augmented = export.policy.iter().any(|e| e.y.is_some() || e.z.is_some());
    if augmented {
        let d = export.d.ok_or_else(|| {
            Failure::invalid(format!("{}: augmented policy without a horizon d", path.display()))
        })?;
        let n_prime = export.n_prime.ok_or_else(|| {
            Failure::invalid(format!("{}: augmented policy without a level count", path.display()))
        })?;
        let bounds = mdp.cost_bounds()?;
        let disc = discretization_step(&bounds, d, n_prime)?;
        if let Some(zeta) = export.zeta {
            if (disc.zeta() - zeta).abs() > 1e-9 * zeta.max(1.0) {
                return Err(Failure::invalid(format!(
                    "{}: exported grid step {} does not match this model's {}; \
                     was the solution produced for a different model?",
                    path.display(),
                    zeta,
                    disc.zeta()
                )));
            }
        }
        let mut slots: BTreeMap<(usize, u32, u32), Vec<f64>> = BTreeMap::new();
        for entry in &export.policy {
            let (x, u) = entry_indices(mdp, entry, path)?;
            let (Some(y), Some(z)) = (entry.y, entry.z) else {
                return Err(Failure::invalid(format!(
                    "{}: mixes stationary and augmented policy rows",
                    path.display()
                )));
            };
            let probs = slots
                .entry((x, y, z))
                .or_insert_with(|| vec![0.0; mdp.actions(x).len()]);
            probs[u] += entry.prob;
        }
        let mut policy = AugmentedPolicy::new(disc);
        for ((x, y, z), probs) in slots {
            check_row_sum(mdp.state_name(x), &probs, path)?;
            policy.insert(x, y, z, probs);
        }
        Ok((Policy::Augmented(policy), horizon.unwrap_or(d)))
    } else {
        let d = horizon.ok_or_else(|| {
            Failure::invalid("a stationary policy sets no horizon; pass --horizon")
        })?;
        let mut slots: HashMap<usize, Vec<f64>> = HashMap::new();
        for entry in &export.policy {
            let (x, u) = entry_indices(mdp, entry, path)?;
            let probs = slots
                .entry(x)
                .or_insert_with(|| vec![0.0; mdp.actions(x).len()]);
            probs[u] += entry.prob;
        }
        for (&x, probs) in &slots {
            check_row_sum(mdp.state_name(x), probs, path)?;
        }
        Ok((Policy::Stationary(slots), d))
    }
}

fn entry_indices(mdp: &Mdp, entry: &PolicyEntry, path: &Path) -> Result<(usize, usize), Failure> {
    let x = mdp.state_index(&entry.x).ok_or_else(|| {
        Failure::invalid(format!("{}: unknown state {}", path.display(), entry.x))
    })?;
    let u = mdp
        .actions(x)
        .iter()
        .position(|a| a.name() == entry.action)
        .ok_or_else(|| {
            Failure::invalid(format!(
                "{}: state {} has no action {}",
                path.display(),
                entry.x,
                entry.action
            ))
        })?;
    if !(entry.prob >= 0.0) {
        return Err(Failure::invalid(format!(
            "{}: negative probability {} on ({}, {})",
            path.display(),
            entry.prob,
            entry.x,
            entry.action
        )));
    }
    Ok((x, u))
}

fn check_row_sum(state: &str, probs: &[f64], path: &Path) -> Result<(), Failure> {
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Failure::invalid(format!(
            "{}: policy rows for state {state} sum to {total}, expected 1",
            path.display()
        )));
    }
    Ok(())
}

fn batch_csv(batch: &RolloutBatch) -> String {
    let mut text = String::from("run,cost,absorbed_at\n");
    for (i, r) in batch.runs().iter().enumerate() {
        match r.t_star {
            Some(t) => writeln!(text, "{i},{},{t}", r.cost).expect("string writes succeed"),
            None => writeln!(text, "{i},{},timeout", r.cost).expect("string writes succeed"),
        }
    }
    text
}

pub fn compare(args: &CompareArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.config.as_deref())?;
    let tau = resolve_tau(args.tau.or(file.tau))?;
    let choice = resolve_horizon_choice(args.epsilon, args.horizon, file.epsilon, file.horizon)?;
    let stride = resolve_stride(args.stride.or(file.stride))?;
    let levels = args.levels.or(file.levels);
    let runs = resolve_runs(args.runs.or(file.runs))?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let deadline = args.deadline.or(file.deadline);
    let taus = if args.taus.is_empty() {
        file.taus.clone().unwrap_or_default()
    } else {
        args.taus.clone()
    };
    let mdp = load_model(&args.input)?;

    let outcome = solve_model(&mdp, tau, &choice, levels, stride)?;
    let baseline = value_iteration(&mdp, 1e-10)?;
    let neutral = Policy::stationary_deterministic(&mdp, &baseline.policy);
    let averse = Policy::Augmented(outcome.policy.clone());
    let d = outcome.d;
    let neutral_batch = monte_carlo(&mdp, &neutral, d, runs, seed)?;
    let averse_batch = monte_carlo(&mdp, &averse, d, runs, seed)?;
    let neutral_dist = neutral_batch.empirical_distribution()?;
    let averse_dist = averse_batch.empirical_distribution()?;

    println!("horizon d: {d}, runs per policy: {runs}, shared seed: {seed}");
    println!("expected total cost (baseline solve): {}", baseline.initial_value(&mdp));
    println!("AVaR[{tau}] objective (risk-averse solve): {}", outcome.solution.objective);
    println!("{:<28} {:>16} {:>16}", "", "baseline", "risk-averse");
    row("empirical mean", neutral_batch.mean(), averse_batch.mean());
    row(
        &format!("empirical VaR[{tau}]"),
        neutral_dist.var(tau)?,
        averse_dist.var(tau)?,
    );
    row(
        &format!("empirical AVaR[{tau}]"),
        neutral_dist.avar(tau)?,
        averse_dist.avar(tau)?,
    );
    println!(
        "{:<28} {:>16} {:>16}",
        "timeouts",
        neutral_batch.timeout_count(),
        averse_batch.timeout_count()
    );
    if let Some(t) = deadline {
        println!(
            "{:<28} {:>16} {:>16}",
            format!("exceedances beyond {t}"),
            neutral_batch.exceedance_count(t),
            averse_batch.exceedance_count(t)
        );
    }

    let base = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("compare"));
    let baseline_path = suffixed(&base, ".baseline.json");
    let averse_path = suffixed(&base, ".averse.json");
    write_text(&baseline_path, &baseline_export(&mdp, &baseline.policy, &baseline).to_json())?;
    write_text(&averse_path, &outcome.export.to_json())?;
    println!("wrote {} and {}", baseline_path.display(), averse_path.display());

    for &t in &taus {
        let (objective, csv) = if t == tau {
            (outcome.solution.objective, outcome.solution.theta_star.to_csv())
        } else {
            let sweep = solve_model(&mdp, resolve_tau(Some(t))?, &choice, levels, stride)?;
            (sweep.solution.objective, sweep.solution.theta_star.to_csv())
        };
        let path = suffixed(&base, &format!(".tau{t}.theta.csv"));
        write_text(&path, &csv)?;
        println!("AVaR[{t}] objective: {objective} ({})", path.display());
    }
    Ok(())
}

fn row(label: &str, left: f64, right: f64) {
    println!("{label:<28} {left:>16} {right:>16}");
}

fn baseline_export(
    mdp: &Mdp,
    choice: &[usize],
    baseline: &avar_mdp::BaselineSolution,
) -> SolutionExport {
    let policy = mdp
        .transient_states()
        .map(|x| PolicyEntry {
            x: mdp.state_name(x).to_string(),
            y: None,
            z: None,
            action: mdp.actions(x)[choice[x]].name().to_string(),
            prob: 1.0,
        })
        .collect();
    SolutionExport {
        tau: None,
        d: None,
        n_prime: None,
        zeta: None,
        s_star: None,
        objective: baseline.initial_value(mdp),
        theta: None,
        gap_bound: None,
        policy,
    }
}

pub fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.config.as_deref())?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let graph = avar_mdp::generate_grid_instance(args.width, args.height, args.options, seed)
        .map_err(|e| Failure::invalid(e.to_string()))?;
    let text = graph.to_json();
    match args.out.clone().or(file.out) {
        Some(path) => {
            write_text(&path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
