//! Model-free SMDP Q-learning against a sampled environment.

use rand::{Rng, RngExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ActionId, Policy, StateId};
use crate::sim::{RngSeed, TrajectoryEvent};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LearnError {
    #[error("invalid learning configuration: {0}")]
    InvalidConfig(String),
    #[error("no action left to explore at state {state}")]
    EmptyExploration { state: StateId },
}

/// What a learner may see of the world: admissible actions, termination and
/// sampled transitions. Transition probabilities and rates stay hidden.
pub trait Environment {
    fn state_count(&self) -> usize;
    fn actions(&self, s: StateId) -> &'static [ActionId];
    fn is_terminal(&self, s: StateId) -> bool;
    fn gamma(&self) -> f64;
    fn step(&mut self, s: StateId, a: ActionId) -> TrajectoryEvent;
}

/// Q-values and visit counts over admissible pairs, indexed by state then by
/// position in the state's admissible action list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub actions: Vec<Vec<ActionId>>,
    pub q: Vec<Vec<f64>>,
    pub visits: Vec<Vec<u64>>,
}

impl QTable {
    pub fn zeros(actions: Vec<Vec<ActionId>>) -> Self {
        let q = actions.iter().map(|a| vec![0.0; a.len()]).collect();
        let visits = actions.iter().map(|a| vec![0; a.len()]).collect();
        QTable { actions, q, visits }
    }

    pub fn for_env<E: Environment + ?Sized>(env: &E) -> Self {
        Self::zeros((0..env.state_count()).map(|s| env.actions(StateId(s)).to_vec()).collect())
    }

    fn slot(&self, s: StateId, a: ActionId) -> usize {
        self.actions[s.0]
            .iter()
            .position(|&x| x == a)
            .unwrap_or_else(|| panic!("{a} is not admissible at state {s}"))
    }

    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.q[s.0][self.slot(s, a)]
    }

    pub fn set(&mut self, s: StateId, a: ActionId, value: f64) {
        let i = self.slot(s, a);
        self.q[s.0][i] = value;
    }

    pub fn visit_count(&self, s: StateId, a: ActionId) -> u64 {
        self.visits[s.0][self.slot(s, a)]
    }

    /// Greedy action and its value; ties go to the lower-ordered action.
    pub fn best(&self, s: StateId) -> (ActionId, f64) {
        let mut best = (self.actions[s.0][0], self.q[s.0][0]);
        for (&a, &v) in self.actions[s.0].iter().zip(&self.q[s.0]).skip(1) {
            if v > best.1 || (v == best.1 && a < best.0) {
                best = (a, v);
            }
        }
        best
    }

    pub fn max_q(&self, s: StateId) -> f64 {
        self.best(s).1
    }

    pub fn state_count(&self) -> usize {
        self.q.len()
    }
}

/// `kc / (k - 1 + kc)` for the `k`-th visit.
pub fn learning_rate(kc: f64, visit_count: u64) -> Result<f64, LearnError> {
    if !(kc > 0.0 && kc.is_finite()) {
        return Err(LearnError::InvalidConfig(format!("kc must be positive, got {kc}")));
    }
    if visit_count == 0 {
        return Err(LearnError::InvalidConfig("visit count must include the current visit".into()));
    }
    Ok(kc / ((visit_count - 1) as f64 + kc))
}

/// Sampled SMDP target `r1 + r2 (1 - e^{-γτ})/γ + e^{-γτ} max Q(s')`.
pub fn td_target(table: &QTable, event: &TrajectoryEvent, gamma: f64, terminal: bool) -> f64 {
    let d = (-gamma * event.sojourn).exp();
    let cont = if terminal { 0.0 } else { table.max_q(event.next_state) };
    event.jump_reward_obs + event.rate_reward_obs * (1.0 - d) / gamma + d * cont
}

/// One update of the visited entry. The continuation of a terminal successor
/// is zero.
pub fn q_update(table: &mut QTable, event: &TrajectoryEvent, gamma: f64, kc: f64, next_terminal: bool) -> Result<(), LearnError> {
    let i = table.slot(event.state, event.action);
    let s = event.state.0;
    table.visits[s][i] += 1;
    let alpha = learning_rate(kc, table.visits[s][i])?;
    let target = td_target(table, event, gamma, next_terminal);
    table.q[s][i] = (1.0 - alpha) * table.q[s][i] + alpha * target;
    Ok(())
}

/// ε-greedy choice. Exploration is uniform over the admissible actions, minus
/// Eject when `forbid_eject` is set and the state still admits others.
pub fn select_action<R: Rng + ?Sized>(
    table: &QTable,
    state: StateId,
    epsilon: f64,
    forbid_eject: bool,
    rng: &mut R,
) -> Result<ActionId, LearnError> {
    let explore = epsilon > 0.0 && rng.random::<f64>() < epsilon;
    if !explore {
        return Ok(table.best(state).0);
    }
    let allowed: Vec<ActionId> = table.actions[state.0]
        .iter()
        .copied()
        .filter(|&a| !(forbid_eject && a == ActionId::Eject))
        .collect();
    if allowed.is_empty() {
        return Err(LearnError::EmptyExploration { state });
    }
    Ok(allowed[rng.random_range(0..allowed.len())])
}

pub fn greedy_policy(table: &QTable) -> Policy {
    Policy::from_vec_unchecked((0..table.state_count()).map(|s| table.best(StateId(s)).0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonDecay {
    /// Step at which decay begins; ε falls linearly to `end_value` at the
    /// final step.
    pub start_step: u64,
    #[serde(default)]
    pub end_value: f64,
}

/// Quantity recorded after each step. Without an action it is
/// `max_a Q(state, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tracked {
    pub state: StateId,
    #[serde(default)]
    pub action: Option<ActionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub kc: f64,
    pub epsilon: f64,
    pub steps: u64,
    pub replications: usize,
    pub seed: RngSeed,
    #[serde(default)]
    pub epsilon_decay: Option<EpsilonDecay>,
    #[serde(default)]
    pub forbid_eject_exploration: bool,
    /// Reset state; the first non-terminal state when absent.
    #[serde(default)]
    pub start: Option<StateId>,
    #[serde(default)]
    pub tracked: Option<Tracked>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            kc: 1.0,
            epsilon: 0.2,
            steps: 5000,
            replications: 100,
            seed: RngSeed::new(0),
            epsilon_decay: None,
            forbid_eject_exploration: false,
            start: None,
            tracked: None,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::InvalidConfig(m));
        if !(self.kc > 0.0 && self.kc.is_finite()) {
            return bad(format!("kc must be positive, got {}", self.kc));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must lie in (0,1], got {}", self.epsilon));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if let Some(d) = self.epsilon_decay {
            if !(0.0..=1.0).contains(&d.end_value) {
                return bad(format!("epsilon_decay.end_value must lie in [0,1], got {}", d.end_value));
            }
        }
        Ok(())
    }

    /// Exploration rate used at 0-based step `k`.
    pub fn epsilon_at(&self, k: u64) -> f64 {
        match self.epsilon_decay {
            None => self.epsilon,
            Some(d) if k < d.start_step => self.epsilon,
            Some(d) => {
                let last = self.steps.saturating_sub(1);
                if last <= d.start_step {
                    return d.end_value;
                }
                let frac = (k - d.start_step) as f64 / (last - d.start_step) as f64;
                self.epsilon + (d.end_value - self.epsilon) * frac.min(1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    /// 1-based step index; the value is recorded after that step's update.
    pub step: u64,
    pub replication: usize,
    pub tracked_q: f64,
    pub epsilon: f64,
    pub state: StateId,
    pub action: ActionId,
    pub sojourn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub table: QTable,
    pub trace: Vec<TraceRow>,
    pub absorptions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnOutcome {
    pub start: StateId,
    pub tracked: Tracked,
    pub replications: Vec<Replication>,
    /// Across-replication mean of the tracked value per step.
    pub mean: Vec<f64>,
    /// Across-replication sample variance per step (0 for one replication).
    pub variance: Vec<f64>,
}

impl LearnOutcome {
    /// Entrywise mean of the replication tables (visit counts summed).
    pub fn mean_table(&self) -> QTable {
        let mut out = self.replications[0].table.clone();
        let n = self.replications.len() as f64;
        for (s, row) in out.q.iter_mut().enumerate() {
            for (i, q) in row.iter_mut().enumerate() {
                *q = self.replications.iter().map(|r| r.table.q[s][i]).sum::<f64>() / n;
                out.visits[s][i] = self.replications.iter().map(|r| r.table.visits[s][i]).sum();
            }
        }
        out
    }

    pub fn total_absorptions(&self) -> u64 {
        self.replications.iter().map(|r| r.absorptions).sum()
    }

    /// Tracked value of each replication for 1-based `step`.
    pub fn tracked_at(&self, step: u64) -> Vec<f64> {
        self.replications.iter().map(|r| r.trace[step as usize - 1].tracked_q).collect()
    }
}

fn tracked_value(table: &QTable, tracked: Tracked) -> f64 {
    match tracked.action {
        Some(a) => table.get(tracked.state, a),
        None => table.max_q(tracked.state),
    }
}

fn run_replication<E: Environment>(
    env: &mut E,
    config: &LearnConfig,
    start: StateId,
    tracked: Tracked,
    index: usize,
    seed: RngSeed,
) -> Result<Replication, LearnError> {
    let mut rng = seed.rng();
    let mut table = QTable::for_env(env);
    let gamma = env.gamma();
    let mut trace = Vec::with_capacity(config.steps as usize);
    let mut absorptions = 0;
    let mut s = start;
    for k in 0..config.steps {
        let eps = config.epsilon_at(k);
        let a = select_action(&table, s, eps, config.forbid_eject_exploration, &mut rng)?;
        let ev = env.step(s, a);
        let terminal = env.is_terminal(ev.next_state);
        q_update(&mut table, &ev, gamma, config.kc, terminal)?;
        trace.push(TraceRow {
            step: k + 1,
            replication: index,
            tracked_q: tracked_value(&table, tracked),
            epsilon: eps,
            state: s,
            action: a,
            sojourn: ev.sojourn,
        });
        s = if terminal {
            absorptions += 1;
            start
        } else {
            ev.next_state
        };
    }
    Ok(Replication {
        table,
        trace,
        absorptions,
    })
}

/// Runs independent replications. Replication `i` builds its environment from
/// substream `2i` of the configured seed and explores with substream `2i+1`,
/// so results do not depend on scheduling.
pub fn run_q_learning<E, F>(make_env: F, config: &LearnConfig) -> Result<LearnOutcome, LearnError>
where
    E: Environment,
    F: Fn(RngSeed) -> E + Sync,
{
    config.validate()?;
    let probe = make_env(config.seed);
    let n = probe.state_count();
    let start = match config.start {
        Some(s) if s.0 >= n => return Err(LearnError::InvalidConfig(format!("start state {s} out of range"))),
        Some(s) if probe.is_terminal(s) => {
            return Err(LearnError::InvalidConfig(format!("start state {s} is terminal")))
        }
        Some(s) => s,
        None => (0..n)
            .map(StateId)
            .find(|&s| !probe.is_terminal(s))
            .ok_or_else(|| LearnError::InvalidConfig("environment has no non-terminal state".into()))?,
    };
    let tracked = config.tracked.unwrap_or(Tracked { state: start, action: None });
    if tracked.state.0 >= n {
        return Err(LearnError::InvalidConfig(format!("tracked state {} out of range", tracked.state)));
    }
    if let Some(a) = tracked.action {
        if !probe.actions(tracked.state).contains(&a) {
            return Err(LearnError::InvalidConfig(format!(
                "tracked action {a} is not admissible at state {}",
                tracked.state
            )));
        }
    }
    drop(probe);

    let replications: Vec<Replication> = (0..config.replications)
        .into_par_iter()
        .map(|i| {
            let mut env = make_env(config.seed.substream(2 * i as u64));
            run_replication(&mut env, config, start, tracked, i, config.seed.substream(2 * i as u64 + 1))
        })
        .collect::<Result<_, _>>()?;

    let steps = config.steps as usize;
    let r = replications.len() as f64;
    let mut mean = Vec::with_capacity(steps);
    let mut variance = Vec::with_capacity(steps);
    for k in 0..steps {
        let m = replications.iter().map(|x| x.trace[k].tracked_q).sum::<f64>() / r;
        let v = if replications.len() > 1 {
            replications.iter().map(|x| (x.trace[k].tracked_q - m).powi(2)).sum::<f64>() / (r - 1.0)
        } else {
            0.0
        };
        mean.push(m);
        variance.push(v);
    }
    Ok(LearnOutcome {
        start,
        tracked,
        replications,
        mean,
        variance,
    })
}
