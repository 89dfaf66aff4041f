use std::collections::BTreeSet;
use std::path::Path;

use serde_json::{json, Value};

use super::manifest::{self, LoadedScenario, RunManifest};
use super::output::{num, Outputs, Table};
use super::{strip_out, Cli, CliError, Command, Common, GridFlags, LearnFlags, SweepFlags, SweepKind};
use crate::learn::{run_q_learning, LearnConfig, LearnOutcome, Tracked};
use crate::model::{ActionId, Policy, SmdpModel, StateId};
use crate::risk::sweeps::{sweep_intelligence, sweep_persistence, SweepPoint, SweepPolicy};
use crate::risk::{
    attraction_efficiency_for, build_generator, default_grid, first_passage, limiting_occupancy, mfpt, point_mass,
    transient_occupancy, Generator, RiskError,
};
use crate::sim::{
    censor_horizon, estimate_hitting_times, estimate_utility, sample_trajectory, tail_horizon, RngSeed, SimEnvironment,
};
use crate::solver::{policy_evaluation, solve, tradeoff_surface, value_iteration, BellmanOperands};

pub(super) fn dispatch(command: Command, args: &[String]) -> Result<(), CliError> {
    match command {
        Command::Solve { common, tol, max_iter } => cmd_solve(&common, tol, max_iter, args),
        Command::Analyze {
            common,
            policy,
            start,
            target,
            times,
            horizon,
            points,
        } => cmd_analyze(&common, &policy.policy, start, target, times, horizon, points, args),
        Command::Sweep { kind } => match kind {
            SweepKind::Persistence(f) => cmd_sweep_criteria(&f, Criteria::Persistence, args),
            SweepKind::Intelligence(f) => cmd_sweep_criteria(&f, Criteria::Intelligence, args),
            SweepKind::Tradeoff {
                common,
                penetration,
                reward,
                target,
            } => cmd_tradeoff(&common, &penetration, &reward, target, args),
        },
        Command::Simulate {
            common,
            policy,
            start,
            target,
            samples,
            hitting_samples,
            trajectories,
            horizon_epochs,
            censor_cap,
        } => cmd_simulate(
            &common,
            &policy.policy,
            SimFlags {
                start,
                target,
                samples,
                hitting_samples,
                trajectories,
                horizon_epochs,
                censor_cap,
            },
            args,
        ),
        Command::Learn { common, flags } => cmd_learn(&common, &flags, args),
        Command::Replay { manifest, out } => cmd_replay(&manifest, out.as_deref()),
    }
}

fn base_seed(common: &Common) -> RngSeed {
    RngSeed::new(common.seed.unwrap_or(0))
}

fn command_name(args: &[String]) -> String {
    args.iter()
        .take_while(|a| !a.starts_with('-'))
        .cloned()
        .collect::<Vec<_>>()
        .join(" ")
}

fn finish(
    mut outputs: Outputs,
    common: &Common,
    loaded: &LoadedScenario,
    seed: RngSeed,
    args: &[String],
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command_name(args),
        scenario_path: common.scenario.display().to_string(),
        scenario_sha256: loaded.sha256.clone(),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        parameter_overrides: loaded.overrides.clone(),
        output_dir: common.out.display().to_string(),
        args: strip_out(args),
        outputs: outputs.names().map(str::to_string).collect(),
    };
    outputs.add_json("manifest.json", &manifest);
    outputs.write_to(&common.out)?;
    Ok(())
}

fn short(a: ActionId) -> &'static str {
    &a.name()[..1]
}

fn policy_code(p: &Policy) -> String {
    p.actions().iter().map(|&a| short(a)).collect()
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn state_arg(model: &SmdpModel, s: Option<usize>, what: &str) -> Result<Option<StateId>, CliError> {
    match s {
        Some(i) if i >= model.state_count() => Err(CliError::config(format!(
            "--{what} {i} is out of range (scenario has {} states)",
            model.state_count()
        ))),
        Some(i) => Ok(Some(StateId(i))),
        None => Ok(None),
    }
}

fn default_start(model: &SmdpModel, s: Option<usize>) -> Result<StateId, CliError> {
    Ok(state_arg(model, s, "start")?.or(model.normal()).unwrap_or(StateId(0)))
}

fn resolve_target(model: &SmdpModel, t: Option<usize>) -> Result<Option<StateId>, CliError> {
    let target = state_arg(model, t, "target")?.or(model.target());
    if let Some(t) = target {
        if t == model.absorbing() {
            return Err(CliError::config("the absorbing state cannot be a target"));
        }
    }
    Ok(target)
}

fn load_policy(model: &SmdpModel, source: &str) -> Result<Policy, CliError> {
    if source == "solve" {
        return Ok(solve(model)?.policy);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let policy = serde_json::from_str::<Policy>(&text)
        .or_else(|_| serde_json::from_str::<Vec<ActionId>>(&text).map(Policy::from_vec_unchecked))
        .map_err(|e| CliError::config(format!("{source}: not a policy file: {e}")))?;
    policy.check(model).map_err(|e| CliError::config(format!("{source}: {e}")))?;
    Ok(policy)
}

fn cmd_solve(common: &Common, tol: f64, max_iter: usize, args: &[String]) -> Result<(), CliError> {
    let loaded = manifest::load(&common.scenario, &common.set)?;
    let model = &loaded.model;
    let sol = value_iteration(model, tol, max_iter)?;
    let ops = BellmanOperands::new(model);
    let q = ops.q_values(&sol.values);

    let mut values = Table::new(["state", "name", "kind", "action", "value"]);
    let mut beta = Table::new(["state", "action", "beta"]);
    let mut states = Vec::new();
    for s in model.states() {
        let kind = serde_json::to_value(model.kind(s)).expect("serializable");
        let kind_str = kind.as_str().unwrap_or_default().to_string();
        values.row([
            s.to_string(),
            model.node_name(s).to_string(),
            kind_str.clone(),
            sol.policy.action(s).to_string(),
            num(sol.values.get(s)),
        ]);
        let mut qs = serde_json::Map::new();
        let mut bs = serde_json::Map::new();
        for (a, v) in &q[s.0] {
            qs.insert(a.to_string(), json!(v));
            let b = ops.pair(s, *a).expect("admissible").beta;
            bs.insert(a.to_string(), json!(b));
            beta.row([s.to_string(), a.to_string(), num(b)]);
        }
        states.push(json!({
            "state": s,
            "name": model.node_name(s),
            "kind": kind_str,
            "action": sol.policy.action(s),
            "value": sol.values.get(s),
            "q": qs,
            "beta": bs,
        }));
    }
    let mut residuals = Table::new(["iteration", "residual"]);
    for (i, r) in sol.residual_trace.iter().enumerate() {
        residuals.row([(i + 1).to_string(), num(*r)]);
    }
    let high: Vec<StateId> =
        model.states().filter(|&s| sol.policy.action(s) == ActionId::HighInteract).collect();
    let report = json!({
        "scenario": model.name(),
        "gamma": model.gamma(),
        "iterations": sol.iterations,
        "bellman_residual": sol.bellman_residual,
        "beta_max": sol.beta_max,
        "policy": policy_code(&sol.policy),
        "high_interaction_states": high,
        "states": states,
        "residual_trace": sol.residual_trace,
    });

    let mut out = Outputs::default();
    out.add_json("solve.json", &report);
    out.add_json("policy.json", &sol.policy);
    out.add_table("values.csv", values);
    out.add_table("beta.csv", beta);
    out.add_table("residuals.csv", residuals);
    finish(out, common, &loaded, base_seed(common), args)
}

fn mfpt_column(gen: &Generator, target: StateId) -> Result<Vec<f64>, CliError> {
    Ok(mfpt(gen, &[target].into())?.times)
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    common: &Common,
    policy_src: &str,
    start: Option<usize>,
    target: Option<usize>,
    times: Option<Vec<f64>>,
    horizon: Option<f64>,
    points: usize,
    args: &[String],
) -> Result<(), CliError> {
    let loaded = manifest::load(&common.scenario, &common.set)?;
    let model = &loaded.model;
    let policy = load_policy(model, policy_src)?;
    let start = default_start(model, start)?;
    let target = resolve_target(model, target)?;
    let normal = model.normal();
    let gen = build_generator(model, &policy)?;
    let n = model.state_count();

    let from_normal_to_target = match (normal, target) {
        (Some(nz), Some(t)) if nz != t => Some(mfpt(&gen, &[t].into())?.get(nz)),
        _ => None,
    };
    let grid = match times {
        Some(t) => t,
        None => {
            if points == 0 {
                return Err(CliError::config("--points must be positive"));
            }
            let h = horizon
                .or(from_normal_to_target.filter(|m| m.is_finite()))
                .unwrap_or(100.0);
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::config("--horizon must be positive"));
            }
            let mut g = vec![0.0];
            g.extend(default_grid(h, points));
            g
        }
    };
    let curve = transient_occupancy(&gen, &point_mass(n, start), &grid)?;
    let limit = limiting_occupancy(&gen, &point_mass(n, start))?;

    let mut occupancy = Table::new(std::iter::once("time".to_string()).chain((0..n).map(|j| format!("p_{j}"))));
    for (t, p) in curve.times.iter().zip(&curve.dist) {
        occupancy.row(std::iter::once(num(*t)).chain(p.iter().map(|x| num(*x))));
    }
    let mut limiting = Table::new(["state", "name", "probability"]);
    for s in model.states() {
        limiting.row([s.to_string(), model.node_name(s).to_string(), num(limit.distribution[s.0])]);
    }

    let mut out = Outputs::default();
    let mut summary = serde_json::Map::new();
    summary.insert("policy".into(), json!(policy));
    summary.insert("policy_code".into(), json!(policy_code(&policy)));
    summary.insert("start".into(), json!(start));
    summary.insert("target".into(), json!(target));
    summary.insert("normal".into(), json!(normal));
    summary.insert("limiting".into(), json!(limit));

    let to_normal = normal.map(|nz| mfpt_column(&gen, nz)).transpose()?;
    let to_target = target.map(|t| mfpt_column(&gen, t)).transpose()?;
    let from_normal: Option<Vec<f64>> = match normal {
        Some(nz) => Some(
            model
                .states()
                .map(|j| Ok(if j == nz { 0.0 } else { mfpt(&gen, &[j].into())?.get(nz) }))
                .collect::<Result<_, RiskError>>()?,
        ),
        None => None,
    };
    let mut mfpt_table = Table::new(["state", "name", "from_normal", "to_normal", "to_target"]);
    let cell = |v: &Option<Vec<f64>>, s: StateId| v.as_ref().map_or(String::new(), |c| num(c[s.0]));
    for s in model.states() {
        mfpt_table.row([
            s.to_string(),
            model.node_name(s).to_string(),
            cell(&from_normal, s),
            cell(&to_normal, s),
            cell(&to_target, s),
        ]);
    }
    let nulls = |v: &Option<Vec<f64>>| v.as_ref().map(|c| c.iter().map(|x| finite_or_null(*x)).collect::<Vec<_>>());
    let infinite = |v: &Option<Vec<f64>>| {
        v.as_ref()
            .map(|c| c.iter().enumerate().filter(|(_, x)| !x.is_finite()).map(|(i, _)| i).collect::<Vec<_>>())
    };
    summary.insert("mfpt_from_normal".into(), json!(nulls(&from_normal)));
    summary.insert("mfpt_from_normal_infinite".into(), json!(infinite(&from_normal)));
    summary.insert("mfpt_to_normal".into(), json!(nulls(&to_normal)));
    summary.insert("mfpt_to_normal_infinite".into(), json!(infinite(&to_normal)));
    summary.insert("mfpt_to_target".into(), json!(nulls(&to_target)));
    summary.insert("mfpt_to_target_infinite".into(), json!(infinite(&to_target)));

    match (normal, target) {
        (Some(nz), Some(t)) if nz != t => {
            let targets: BTreeSet<StateId> = [t].into();
            let fpt = first_passage(&gen, nz, &targets, &grid)?;
            let mut fpt_table = Table::new(["time", "cdf", "density"]);
            for ((t, c), d) in grid.iter().zip(&fpt.cdf).zip(&fpt.density) {
                fpt_table.row([num(*t), num(*c), num(*d)]);
            }
            out.add_table("fpt.csv", fpt_table);
            summary.insert("fpt_mean".into(), finite_or_null(fpt.mean));
            summary.insert("fpt_absorption_certain".into(), json!(fpt.absorption_certain));
            match attraction_efficiency_for(&gen, nz, t) {
                Ok(eff) => {
                    summary.insert("attraction_efficiency".into(), json!(eff));
                    summary.insert("attraction_unreachable".into(), json!(false));
                }
                Err(RiskError::Unreachable { .. }) => {
                    summary.insert("attraction_efficiency".into(), Value::Null);
                    summary.insert("attraction_unreachable".into(), json!(true));
                }
                Err(e) => return Err(e.into()),
            }
        }
        _ => {
            summary.insert("attraction_efficiency".into(), Value::Null);
            summary.insert("attraction_unreachable".into(), json!(true));
        }
    }

    out.add_table("occupancy.csv", occupancy);
    out.add_table("limiting.csv", limiting);
    out.add_table("mfpt.csv", mfpt_table);
    out.add_json("summary.json", &Value::Object(summary));
    finish(out, common, &loaded, base_seed(common), args)
}

#[derive(Clone, Copy)]
enum Criteria {
    Persistence,
    Intelligence,
}

fn grid_from(flags: &GridFlags, default: (f64, f64, usize)) -> Result<Vec<f64>, CliError> {
    if let Some(g) = &flags.grid {
        if flags.from.is_some() || flags.to.is_some() || flags.points.is_some() {
            return Err(CliError::config("--grid cannot be combined with --from/--to/--points"));
        }
        if g.is_empty() {
            return Err(CliError::config("--grid is empty"));
        }
        return Ok(g.clone());
    }
    let from = flags.from.unwrap_or(default.0);
    let to = flags.to.unwrap_or(default.1);
    let points = flags.points.unwrap_or(default.2);
    if points == 0 || !(from <= to) {
        return Err(CliError::config(format!("invalid grid {from}..{to} with {points} points")));
    }
    if points == 1 {
        return Ok(vec![from]);
    }
    Ok((0..points).map(|k| from + (to - from) * k as f64 / (points - 1) as f64).collect())
}

fn cmd_sweep_criteria(flags: &SweepFlags, kind: Criteria, args: &[String]) -> Result<(), CliError> {
    let common = &flags.common;
    let loaded = manifest::load(&common.scenario, &common.set)?;
    let model = &loaded.model;
    let (label, default) = match kind {
        Criteria::Persistence => ("persistence", (0.25, 2.5, 10)),
        Criteria::Intelligence => ("intelligence", (0.0, 1.0, 11)),
    };
    let grid = grid_from(&flags.grid, default)?;
    let policy = match &flags.fixed_policy {
        Some(p) => SweepPolicy::Fixed(load_policy(model, &p.display().to_string())?),
        None => SweepPolicy::Resolve,
    };
    let start = default_start(model, flags.start)?;
    if start == model.absorbing() {
        return Err(CliError::config("--start cannot be the absorbing state"));
    }
    let points: Vec<SweepPoint> = match kind {
        Criteria::Persistence => sweep_persistence(model, &policy, &grid)?,
        Criteria::Intelligence => sweep_intelligence(model, &policy, &grid)?,
    };

    let mut main = Table::new([
        "param",
        "stationary_normal",
        "v_normal",
        "expected_utility",
        "degenerate",
        "decomposed",
        "policy",
    ]);
    let mut by_start = Table::new(["param", "start", "name", "stationary_normal", "v_normal", "expected_utility"]);
    for p in &points {
        let r = p.row(start).expect("one row per non-absorbing state");
        main.row([
            num(p.param),
            num(r.stationary_normal),
            num(r.v_normal),
            num(r.expected_utility),
            p.degenerate.to_string(),
            p.decomposed.to_string(),
            policy_code(&p.policy),
        ]);
        for r in &p.rows {
            by_start.row([
                num(p.param),
                r.start.to_string(),
                model.node_name(r.start).to_string(),
                num(r.stationary_normal),
                num(r.v_normal),
                num(r.expected_utility),
            ]);
        }
    }
    let mut out = Outputs::default();
    out.add_table(&format!("sweep_{label}.csv"), main);
    out.add_table(&format!("sweep_{label}_by_start.csv"), by_start);
    finish(out, common, &loaded, base_seed(common), args)
}

fn cmd_tradeoff(
    common: &Common,
    penetration: &[f64],
    reward: &[f64],
    target: Option<usize>,
    args: &[String],
) -> Result<(), CliError> {
    let loaded = manifest::load(&common.scenario, &common.set)?;
    let model = &loaded.model;
    let target = resolve_target(model, target)?
        .ok_or_else(|| CliError::config("no target: pass --target or set `target` in the scenario"))?;
    let cells = tradeoff_surface(model, penetration, reward, &model.bridges(), target)?;
    let mut table = Table::new(["penetration", "reward", "value"]);
    for c in &cells {
        table.row([num(c.penetration), num(c.reward), num(c.value)]);
    }
    let mut out = Outputs::default();
    out.add_table("tradeoff.csv", table);
    finish(out, common, &loaded, base_seed(common), args)
}

struct SimFlags {
    start: Option<usize>,
    target: Option<usize>,
    samples: usize,
    hitting_samples: usize,
    trajectories: usize,
    horizon_epochs: Option<usize>,
    censor_cap: f64,
}

/// Disjoint substream blocks per estimate.
const STREAM_BLOCK: u64 = 1 << 40;

fn cmd_simulate(common: &Common, policy_src: &str, f: SimFlags, args: &[String]) -> Result<(), CliError> {
    let loaded = manifest::load(&common.scenario, &common.set)?;
    let model = &loaded.model;
    let policy = load_policy(model, policy_src)?;
    let start = default_start(model, f.start)?;
    let target = resolve_target(model, f.target)?;
    if !(f.censor_cap > 0.0) {
        return Err(CliError::config("--censor-cap must be positive"));
    }
    let seed = base_seed(common);
    let horizon = f.horizon_epochs.unwrap_or_else(|| tail_horizon(model, 1e-6));
    let analytic = policy_evaluation(model, &policy)?.get(start);
    let utility = estimate_utility(model, &policy, start, horizon, f.samples, seed);

    let mut log = Vec::new();
    let n = model.state_count();
    let mut time_in = vec![0.0; n];
    for i in 0..f.trajectories {
        let mut rng = RngSeed {
            seed: seed.seed,
            stream: STREAM_BLOCK + i as u64,
        }
        .rng();
        for ev in sample_trajectory(model, &policy, start, horizon, &mut rng) {
            time_in[ev.state.0] += ev.sojourn;
            log.extend(serde_json::to_vec(&ev).expect("serializable"));
            log.push(b'\n');
        }
    }
    let total: f64 = time_in.iter().sum();
    let occupancy: Vec<f64> = time_in.iter().map(|t| if total > 0.0 { t / total } else { 0.0 }).collect();

    let gen = build_generator(model, &policy)?;
    let mut hitting = Table::new(["target", "source", "name", "n", "mean", "se", "censored", "analytic"]);
    let mut hitting_json = Vec::new();
    let mut sets: Vec<StateId> = Vec::new();
    if let Some(t) = target {
        sets.push(t);
    }
    if let Some(nz) = model.normal() {
        if Some(nz) != target {
            sets.push(nz);
        }
    }
    if f.hitting_samples > 0 {
        for (k, &t) in sets.iter().enumerate() {
            let targets: BTreeSet<StateId> = [t].into();
            let means = mfpt(&gen, &targets)?;
            for s in model.states().filter(|&s| s != t && s != model.absorbing()) {
                let stream = STREAM_BLOCK * (2 + (k * n + s.0) as u64);
                let h = estimate_hitting_times(
                    model,
                    &policy,
                    s,
                    &targets,
                    f.hitting_samples,
                    censor_horizon(means.get(s), f.censor_cap),
                    RngSeed { seed: seed.seed, stream },
                );
                hitting.row([
                    t.to_string(),
                    s.to_string(),
                    model.node_name(s).to_string(),
                    h.n.to_string(),
                    num(h.stats.mean),
                    num(h.stats.se),
                    h.censored.to_string(),
                    num(means.get(s)),
                ]);
                hitting_json.push(json!({
                    "target": t,
                    "source": s,
                    "n": h.n,
                    "mean": finite_or_null(h.stats.mean),
                    "se": finite_or_null(h.stats.se),
                    "censored": h.censored,
                    "analytic": finite_or_null(means.get(s)),
                }));
            }
        }
    }

    let summary = json!({
        "policy": policy,
        "start": start,
        "horizon_epochs": horizon,
        "utility": {
            "n": utility.n,
            "mean": finite_or_null(utility.mean),
            "variance": finite_or_null(utility.variance),
            "se": finite_or_null(utility.se),
            "policy_evaluation": analytic,
        },
        "empirical_occupancy": occupancy,
        "hitting": hitting_json,
    });
    let mut out = Outputs::default();
    out.add("trajectories.jsonl", log);
    out.add_table("hitting.csv", hitting);
    out.add_json("summary.json", &summary);
    finish(out, common, &loaded, seed, args)
}

/// Defaults, then the scenario's `learn` block, then command-line flags.
fn learn_config(common: &Common, flags: &LearnFlags, loaded: &LoadedScenario) -> Result<LearnConfig, CliError> {
    let mut v = serde_json::to_value(LearnConfig::default()).expect("serializable");
    if let Some(block) = &loaded.doc.learn {
        let Value::Object(map) = block else {
            return Err(CliError::config("scenario `learn` block must be an object"));
        };
        for (k, x) in map {
            v[k.as_str()] = x.clone();
        }
    }
    if let Some(seed) = common.seed {
        v["seed"] = json!({"seed": seed, "stream": 0});
    }
    let set = |v: &mut Value, k: &str, x: Value| v[k] = x;
    if let Some(x) = flags.kc {
        set(&mut v, "kc", json!(x));
    }
    if let Some(x) = flags.epsilon {
        set(&mut v, "epsilon", json!(x));
    }
    if let Some(x) = flags.steps {
        set(&mut v, "steps", json!(x));
    }
    if let Some(x) = flags.replications {
        set(&mut v, "replications", json!(x));
    }
    if flags.decay_start.is_some() || flags.decay_end.is_some() {
        let cur = v["epsilon_decay"].clone();
        let start = flags.decay_start.map(|x| json!(x)).unwrap_or_else(|| cur["start_step"].clone());
        let end = flags.decay_end.map(|x| json!(x)).unwrap_or_else(|| cur.get("end_value").cloned().unwrap_or(json!(0.0)));
        if start.is_null() {
            return Err(CliError::config("--decay-end needs --decay-start"));
        }
        set(&mut v, "epsilon_decay", json!({"start_step": start, "end_value": end}));
    }
    if flags.forbid_eject {
        set(&mut v, "forbid_eject_exploration", json!(true));
    }
    if let Some(x) = flags.start {
        set(&mut v, "start", json!(x));
    }
    if flags.track_state.is_some() || flags.track_action.is_some() {
        let state = flags
            .track_state
            .or(v["tracked"]["state"].as_u64().map(|s| s as usize))
            .ok_or_else(|| CliError::config("--track-action needs --track-state"))?;
        let action = match &flags.track_action {
            Some(a) => Some(a.parse::<ActionId>().map_err(CliError::config)?),
            None => None,
        };
        set(&mut v, "tracked", json!({"state": state, "action": action}));
    }
    let mut cfg: LearnConfig = serde_path_to_error::deserialize(v)
        .map_err(|e| CliError::config(format!("learn.{}: {}", e.path(), e.inner())))?;
    if cfg.start.is_none() {
        cfg.start = loaded.model.normal();
    }
    cfg.validate()?;
    let model = &loaded.model;
    for s in cfg.start.iter().chain(cfg.tracked.as_ref().map(|t| &t.state)) {
        if s.0 >= model.state_count() {
            return Err(CliError::config(format!("learn: state {s} out of range")));
        }
    }
    Ok(cfg)
}

struct WindowStats {
    first_variance: f64,
    final_variance: f64,
    final_mean: f64,
    mae: f64,
    mae_se: f64,
}

fn window_stats(out: &LearnOutcome, reference: f64, window: u64) -> Option<WindowStats> {
    let steps = out.mean.len();
    let w = (window as usize).min(steps);
    if w == 0 {
        return None;
    }
    let avg = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let errs: Vec<f64> = out
        .replications
        .iter()
        .map(|r| (r.trace[steps - w..].iter().map(|t| t.tracked_q).sum::<f64>() / w as f64 - reference).abs())
        .collect();
    let stats = crate::sim::SampleStats::from_samples(&errs);
    Some(WindowStats {
        first_variance: avg(&out.variance[..w]),
        final_variance: avg(&out.variance[steps - w..]),
        final_mean: avg(&out.mean[steps - w..]),
        mae: stats.mean,
        mae_se: stats.se,
    })
}

fn cmd_learn(common: &Common, flags: &LearnFlags, args: &[String]) -> Result<(), CliError> {
    let loaded = manifest::load(&common.scenario, &common.set)?;
    let model = &loaded.model;
    let cfg = learn_config(common, flags, &loaded)?;
    if let Some(kcs) = &flags.compare_kc {
        if let Some(&bad) = kcs.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
            return Err(CliError::config(format!("--compare-kc value {bad} must be positive")));
        }
    }
    let make_env = |seed| SimEnvironment::new(model, seed);
    let outcome = run_q_learning(make_env, &cfg)?;

    let sol = solve(model)?;
    let ops = BellmanOperands::new(model);
    let tracked: Tracked = outcome.tracked;
    let reference = match tracked.action {
        Some(a) => ops.q_value(tracked.state, a, &sol.values),
        None => sol.values.get(tracked.state),
    };
    let mean_table = outcome.mean_table();
    let greedy = crate::learn::greedy_policy(&mean_table);
    let greedy_value = policy_evaluation(model, &greedy)?;
    let win = window_stats(&outcome, reference, flags.window);

    let mut trace = Table::new(["step", "replication", "tracked_q", "epsilon", "state", "action", "sojourn"]);
    for r in &outcome.replications {
        for row in &r.trace {
            trace.row([
                row.step.to_string(),
                row.replication.to_string(),
                num(row.tracked_q),
                num(row.epsilon),
                row.state.to_string(),
                row.action.to_string(),
                num(row.sojourn),
            ]);
        }
    }
    let mut summary = Table::new(["step", "mean_q", "var_q"]);
    for (k, (m, v)) in outcome.mean.iter().zip(&outcome.variance).enumerate() {
        summary.row([(k + 1).to_string(), num(*m), num(*v)]);
    }

    let mut out = Outputs::default();
    if let Some(kcs) = &flags.compare_kc {
        let mut table = Table::new(["kc", "final_window_mae", "se", "final_window_mean", "reference"]);
        for &kc in kcs {
            let run = run_q_learning(make_env, &LearnConfig { kc, ..cfg.clone() })?;
            if let Some(w) = window_stats(&run, reference, flags.window) {
                table.row([num(kc), num(w.mae), num(w.mae_se), num(w.final_mean), num(reference)]);
            }
        }
        out.add_table("kc_sensitivity.csv", table);
    }
    let report = json!({
        "config": cfg,
        "start": outcome.start,
        "tracked": tracked,
        "reference_value": reference,
        "window": flags.window,
        "first_window_variance": win.as_ref().map(|w| w.first_variance),
        "final_window_variance": win.as_ref().map(|w| w.final_variance),
        "final_window_mean": win.as_ref().map(|w| w.final_mean),
        "final_window_mae": win.as_ref().map(|w| w.mae),
        "final_window_mae_se": win.as_ref().map(|w| w.mae_se),
        "absorptions": outcome.total_absorptions(),
        "greedy_policy": greedy,
        "greedy_policy_code": policy_code(&greedy),
        "greedy_value": greedy_value.get(outcome.start),
        "optimal_value": sol.values.get(outcome.start),
        "mean_table": mean_table,
    });
    out.add_table("trace.csv", trace);
    out.add_table("summary.csv", summary);
    out.add_json("learn.json", &report);
    finish(out, common, &loaded, cfg.seed, args)
}

fn cmd_replay(path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: not a run manifest: {e}", path.display())))?;
    if m.args.first().map(String::as_str) == Some("replay") {
        return Err(CliError::config("a replay manifest cannot be replayed"));
    }
    let scenario = Path::new(&m.scenario_path);
    let bytes = std::fs::read(scenario).map_err(|e| CliError::io(scenario, e))?;
    let sha = manifest::sha256_hex(&bytes);
    if sha != m.scenario_sha256 {
        return Err(CliError::config(format!(
            "{} changed since the recorded run (sha256 {sha}, recorded {})",
            m.scenario_path, m.scenario_sha256
        )));
    }
    let dir = out.map(|p| p.display().to_string()).unwrap_or(m.output_dir.clone());
    let mut argv = vec!["honeynet".to_string()];
    argv.extend(m.args.iter().cloned());
    argv.push("--out".into());
    argv.push(dir);
    use clap::Parser;
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::config(format!("recorded arguments no longer parse: {e}")))?;
    dispatch(cli.command, &argv[1..])
}
