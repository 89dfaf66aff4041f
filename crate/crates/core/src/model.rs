//! SMDP problem instances: states, structural action sets, the sparse
//! transition kernel with exponential sojourn rates, rewards and discount.
//!
//! State layout is fixed: honeypots occupy `0..N`, the normal zone (when
//! present) is `N`, and the virtual absorbing state is always the last index.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::solver::laplace_sojourn;

/// Row sums of the transition kernel must equal one within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;
/// `check_regulation` passes iff every effective discount is `<= 1 - REGULATION_MARGIN`.
pub const REGULATION_MARGIN: f64 = 1e-9;
/// Sojourn rate assigned to the absorbing self-loop when the document omits it.
pub const DEFAULT_ABSORBING_RATE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl StateId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Defender actions. The derived ordering is the tie-break order used by every
/// argmax in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionId {
    #[serde(alias = "E", alias = "eject")]
    Eject,
    #[serde(alias = "P", alias = "passive")]
    Passive,
    #[serde(alias = "L", alias = "low")]
    LowInteract,
    #[serde(alias = "H", alias = "high")]
    HighInteract,
    #[serde(alias = "A", alias = "attract")]
    Attract,
}

impl ActionId {
    pub const ALL: [ActionId; 5] = [
        ActionId::Eject,
        ActionId::Passive,
        ActionId::LowInteract,
        ActionId::HighInteract,
        ActionId::Attract,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionId::Eject => "Eject",
            ActionId::Passive => "Passive",
            ActionId::LowInteract => "LowInteract",
            ActionId::HighInteract => "HighInteract",
            ActionId::Attract => "Attract",
        }
    }

    /// Stable small-integer code, shared with the C interface.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ActionId> {
        ActionId::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Eject" | "E" | "eject" => Ok(ActionId::Eject),
            "Passive" | "P" | "passive" => Ok(ActionId::Passive),
            "LowInteract" | "L" | "low" => Ok(ActionId::LowInteract),
            "HighInteract" | "H" | "high" => Ok(ActionId::HighInteract),
            "Attract" | "A" | "attract" => Ok(ActionId::Attract),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

const HONEYPOT_ACTIONS: [ActionId; 4] = [
    ActionId::Eject,
    ActionId::Passive,
    ActionId::LowInteract,
    ActionId::HighInteract,
];
const NORMAL_ACTIONS: [ActionId; 2] = [ActionId::Eject, ActionId::Attract];
const ABSORBING_ACTIONS: [ActionId; 1] = [ActionId::Eject];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Honeypot,
    Normal,
    Absorbing,
}

impl NodeKind {
    /// Admissible actions, in tie-break order.
    pub fn actions(self) -> &'static [ActionId] {
        match self {
            NodeKind::Honeypot => &HONEYPOT_ACTIONS,
            NodeKind::Normal => &NORMAL_ACTIONS,
            NodeKind::Absorbing => &ABSORBING_ACTIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: usize,
    pub name: String,
    pub kind: NodeKind,
}

/// Directed links between the honeypots and the normal zone. The absorbing
/// state is virtual and not part of the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, ModelError> {
        let edges: BTreeSet<_> = edges.into_iter().collect();
        for (i, &(j, l)) in edges.iter().enumerate() {
            if j >= node_count || l >= node_count {
                return Err(ModelError::Schema {
                    path: format!("edges[{i}]"),
                    message: format!("edge ({j}, {l}) references a node outside 0..{node_count}"),
                });
            }
        }
        Ok(Topology { node_count, edges })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn contains(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub(crate) fn insert(&mut self, from: usize, to: usize) {
        self.edges.insert((from, to));
    }
}

/// One successor of a state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub to: StateId,
    pub prob: f64,
    /// Exponential sojourn parameter for this triple.
    pub rate: f64,
    pub reward_jump: f64,
}

/// Sparse transition row plus rewards for one admissible action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionModel {
    pub action: ActionId,
    /// Sorted by successor; only positive-probability entries are stored.
    pub outcomes: Vec<Outcome>,
    /// Constant reward rate while sojourning.
    pub reward_rate: f64,
}

impl ActionModel {
    pub fn prob(&self, to: StateId) -> f64 {
        self.outcome(to).map_or(0.0, |o| o.prob)
    }

    pub fn outcome(&self, to: StateId) -> Option<&Outcome> {
        self.outcomes.iter().find(|o| o.to == to)
    }

    pub fn outcome_mut(&mut self, to: StateId) -> Option<&mut Outcome> {
        self.outcomes.iter_mut().find(|o| o.to == to)
    }

    /// Equivalent one-stage reward `r1 + r2/γ (1 - z)` for a successor.
    pub fn equivalent_reward(&self, outcome: &Outcome, gamma: f64) -> f64 {
        outcome.reward_jump + self.reward_rate / gamma * (1.0 - laplace_sojourn(outcome.rate, gamma))
    }

    /// Effective stage discount `Σ tr · z`.
    pub fn effective_discount(&self, gamma: f64) -> f64 {
        self.outcomes
            .iter()
            .map(|o| o.prob * laplace_sojourn(o.rate, gamma))
            .sum()
    }

    pub(crate) fn sort_outcomes(&mut self) {
        self.outcomes.sort_by_key(|o| o.to);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("scenario schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("transition row for state {state} action {action} sums to {sum} (expected 1)")]
    Stochasticity { state: StateId, action: ActionId, sum: f64 },
    #[error("transition from state {state} to {to} under {action} is not an edge of the topology")]
    Topology { state: StateId, action: ActionId, to: StateId },
    #[error("regulation condition fails for {} state-action pair(s): {}", pairs.len(), format_pairs(pairs))]
    Regulation { pairs: Vec<(StateId, ActionId, f64)> },
    #[error("gamma must be strictly positive and finite, got {0}")]
    Gamma(f64),
    #[error("{0}")]
    Invalid(String),
}

fn format_pairs(pairs: &[(StateId, ActionId, f64)]) -> String {
    pairs
        .iter()
        .map(|(s, a, b)| format!("({s}, {a}) beta={b}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Effective discount `β(s,a)` for every admissible pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulationReport {
    /// `beta[s]` lists `(action, β(s,a))` in admissible order.
    pub beta: Vec<Vec<(ActionId, f64)>>,
    pub beta_max: f64,
}

impl RegulationReport {
    pub fn passes(&self) -> bool {
        self.beta_max <= 1.0 - REGULATION_MARGIN
    }

    pub fn get(&self, state: StateId, action: ActionId) -> Option<f64> {
        self.beta
            .get(state.0)?
            .iter()
            .find(|(a, _)| *a == action)
            .map(|(_, b)| *b)
    }
}

/// Validated SMDP instance. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct SmdpModel {
    name: Option<String>,
    nodes: Vec<Node>,
    topology: Topology,
    gamma: f64,
    noise_sigma: f64,
    reward_bound: f64,
    pub(crate) actions: Vec<Vec<ActionModel>>,
    target: Option<StateId>,
}

impl SmdpModel {
    pub fn state_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.nodes.len()).map(StateId)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn node_name(&self, s: StateId) -> &str {
        &self.nodes[s.0].name
    }

    pub fn kind(&self, s: StateId) -> NodeKind {
        self.nodes[s.0].kind
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    /// Optional designated target honeypot carried by the scenario file.
    pub fn target(&self) -> Option<StateId> {
        self.target
    }

    pub fn absorbing(&self) -> StateId {
        StateId(self.nodes.len() - 1)
    }

    pub fn normal(&self) -> Option<StateId> {
        self.nodes
            .iter()
            .position(|n| n.kind == NodeKind::Normal)
            .map(StateId)
    }

    pub fn honeypots(&self) -> impl Iterator<Item = StateId> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Honeypot)
            .map(|n| StateId(n.id))
    }

    /// Honeypots linked to the normal zone in either direction.
    pub fn bridges(&self) -> Vec<StateId> {
        let Some(normal) = self.normal() else {
            return Vec::new();
        };
        self.honeypots()
            .filter(|h| self.topology.contains(h.0, normal.0) || self.topology.contains(normal.0, h.0))
            .collect()
    }

    pub fn admissible(&self, s: StateId) -> &'static [ActionId] {
        self.kind(s).actions()
    }

    pub fn is_admissible(&self, s: StateId, a: ActionId) -> bool {
        s.0 < self.nodes.len() && self.admissible(s).contains(&a)
    }

    /// Per-state action models in admissible order.
    pub fn action_models(&self, s: StateId) -> &[ActionModel] {
        &self.actions[s.0]
    }

    pub fn action_model(&self, s: StateId, a: ActionId) -> Option<&ActionModel> {
        self.actions.get(s.0)?.iter().find(|m| m.action == a)
    }

    pub(crate) fn action_model_mut(&mut self, s: StateId, a: ActionId) -> Option<&mut ActionModel> {
        self.actions.get_mut(s.0)?.iter_mut().find(|m| m.action == a)
    }

    pub(crate) fn topology_mut(&mut self) -> &mut Topology {
        &mut self.topology
    }

    pub(crate) fn set_reward_bound(&mut self, bound: f64) {
        self.reward_bound = bound;
    }

    pub fn transition(&self, s: StateId, a: ActionId, to: StateId) -> f64 {
        self.action_model(s, a).map_or(0.0, |m| m.prob(to))
    }

    pub fn rate(&self, s: StateId, a: ActionId, to: StateId) -> Option<f64> {
        self.action_model(s, a)?.outcome(to).map(|o| o.rate)
    }

    /// Checks every structural and probabilistic invariant.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ModelError::Gamma(self.gamma));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.reward_bound > 0.0 && self.reward_bound.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "reward_bound must be positive, got {}",
                self.reward_bound
            )));
        }
        let n = self.nodes.len();
        let absorbing = self.absorbing();
        for s in self.states() {
            let models = &self.actions[s.0];
            let expected = self.admissible(s);
            if models.len() != expected.len() || models.iter().zip(expected).any(|(m, a)| m.action != *a) {
                return Err(ModelError::Invalid(format!(
                    "state {s} must define exactly the actions {expected:?}"
                )));
            }
            for m in models {
                let mut sum = 0.0;
                for o in &m.outcomes {
                    if o.to.0 >= n {
                        return Err(ModelError::Invalid(format!(
                            "state {s} action {} transitions to unknown state {}",
                            m.action, o.to
                        )));
                    }
                    if !(o.prob > 0.0 && o.prob <= 1.0 + STOCHASTIC_TOL) {
                        return Err(ModelError::Stochasticity {
                            state: s,
                            action: m.action,
                            sum: o.prob,
                        });
                    }
                    if !(o.rate > 0.0) || o.rate.is_nan() {
                        return Err(ModelError::Invalid(format!(
                            "rate for ({s}, {}, {}) must be strictly positive, got {}",
                            m.action, o.to, o.rate
                        )));
                    }
                    let allowed = s == absorbing || o.to == absorbing || self.topology.contains(s.0, o.to.0);
                    if !allowed {
                        return Err(ModelError::Topology {
                            state: s,
                            action: m.action,
                            to: o.to,
                        });
                    }
                    if !(o.reward_jump.abs() <= self.reward_bound) {
                        return Err(ModelError::Invalid(format!(
                            "|r1({s}, {}, {})| = {} exceeds reward_bound {}",
                            m.action,
                            o.to,
                            o.reward_jump.abs(),
                            self.reward_bound
                        )));
                    }
                    let eq = m.equivalent_reward(o, self.gamma);
                    if !(eq.abs() <= self.reward_bound) {
                        return Err(ModelError::Invalid(format!(
                            "|equivalent reward({s}, {}, {})| = {} exceeds reward_bound {}",
                            m.action,
                            o.to,
                            eq.abs(),
                            self.reward_bound
                        )));
                    }
                    sum += o.prob;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(ModelError::Stochasticity {
                        state: s,
                        action: m.action,
                        sum,
                    });
                }
                if !m.reward_rate.is_finite() {
                    return Err(ModelError::Invalid(format!(
                        "reward rate for ({s}, {}) is not finite",
                        m.action
                    )));
                }
                if m.outcomes.windows(2).any(|w| w[0].to >= w[1].to) {
                    return Err(ModelError::Invalid(format!(
                        "duplicate or unsorted successors for ({s}, {})",
                        m.action
                    )));
                }
            }
        }
        let abs = &self.actions[absorbing.0][0];
        if abs.outcomes.len() != 1 || abs.outcomes[0].to != absorbing {
            return Err(ModelError::Invalid(
                "absorbing state must self-loop with probability 1".into(),
            ));
        }
        if abs.reward_rate != 0.0 || abs.outcomes[0].reward_jump != 0.0 {
            return Err(ModelError::Invalid("absorbing state must carry zero rewards".into()));
        }
        if let Some(t) = self.target {
            if t.0 >= n || self.kind(t) != NodeKind::Honeypot {
                return Err(ModelError::Schema {
                    path: "target".into(),
                    message: format!("target {t} is not a honeypot"),
                });
            }
        }
        Ok(())
    }

    /// Effective discount of every admissible pair.
    pub fn regulation_report(&self) -> RegulationReport {
        let beta: Vec<Vec<(ActionId, f64)>> = self
            .actions
            .iter()
            .map(|models| {
                models
                    .iter()
                    .map(|m| (m.action, m.effective_discount(self.gamma)))
                    .collect()
            })
            .collect();
        let beta_max = beta
            .iter()
            .flatten()
            .map(|(_, b)| *b)
            .fold(0.0_f64, f64::max);
        RegulationReport { beta, beta_max }
    }

    /// Regulation condition: every effective discount strictly below one.
    pub fn check_regulation(&self) -> Result<RegulationReport, ModelError> {
        let report = self.regulation_report();
        if report.passes() {
            return Ok(report);
        }
        let pairs = self
            .states()
            .flat_map(|s| {
                report.beta[s.0]
                    .iter()
                    .filter(|(_, b)| *b > 1.0 - REGULATION_MARGIN)
                    .map(move |(a, b)| (s, *a, *b))
            })
            .collect();
        Err(ModelError::Regulation { pairs })
    }

    /// Serializes back into the scenario document form.
    pub fn to_document(&self) -> ScenarioDoc {
        let mut transitions = Vec::new();
        let mut rates = Vec::new();
        let mut rewards = Vec::new();
        for s in self.states() {
            for m in &self.actions[s.0] {
                transitions.push(TransitionDoc {
                    state: s.0,
                    action: m.action,
                    dist: m.outcomes.iter().map(|o| (o.to.0, o.prob)).collect(),
                });
                for o in &m.outcomes {
                    rates.push(RateDoc {
                        state: s.0,
                        action: m.action,
                        to: o.to.0,
                        lambda: o.rate,
                    });
                    if o.reward_jump != 0.0 {
                        rewards.push(RewardDoc {
                            state: s.0,
                            action: m.action,
                            to: Some(o.to.0),
                            r1: Some(o.reward_jump),
                            r2: None,
                        });
                    }
                }
                if m.reward_rate != 0.0 {
                    rewards.push(RewardDoc {
                        state: s.0,
                        action: m.action,
                        to: None,
                        r1: None,
                        r2: Some(m.reward_rate),
                    });
                }
            }
        }
        ScenarioDoc {
            name: self.name.clone(),
            description: None,
            gamma: self.gamma,
            noise_sigma: self.noise_sigma,
            reward_bound: self.reward_bound,
            nodes: self.nodes.clone(),
            edges: self.topology.edges().map(|(a, b)| [a, b]).collect(),
            transitions,
            rates,
            rewards,
            target: self.target.map(|t| t.0),
            learn: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDoc {
    pub state: usize,
    pub action: ActionId,
    pub dist: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateDoc {
    pub state: usize,
    pub action: ActionId,
    pub to: usize,
    pub lambda: f64,
}

/// `r1` with `to` targets one successor; `r1` without `to` applies to every
/// successor of the pair. `r2` is per pair and must not name a successor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardDoc {
    pub state: usize,
    pub action: ActionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub reward_bound: f64,
    pub nodes: Vec<Node>,
    pub edges: Vec<[usize; 2]>,
    pub transitions: Vec<TransitionDoc>,
    pub rates: Vec<RateDoc>,
    pub rewards: Vec<RewardDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    /// Learning configuration block, interpreted by the `learn` module.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn: Option<serde_json::Value>,
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ModelError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ModelError> {
        serde_path_to_error::deserialize(value).map_err(|e| ModelError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario documents always serialize")
    }

    /// Builds and validates the model, including the regulation condition.
    pub fn build(&self) -> Result<SmdpModel, ModelError> {
        let n = self.nodes.len();
        if n < 2 {
            return Err(schema("nodes", "at least one honeypot or normal zone plus the absorbing state"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(schema(
                    &format!("nodes[{i}].id"),
                    &format!("node ids must be 0..{n} in order, found {}", node.id),
                ));
            }
        }
        let normals: Vec<_> = self.nodes.iter().filter(|n| n.kind == NodeKind::Normal).collect();
        let absorbing: Vec<_> = self.nodes.iter().filter(|n| n.kind == NodeKind::Absorbing).collect();
        if absorbing.len() != 1 || absorbing[0].id != n - 1 {
            return Err(schema("nodes", "exactly one absorbing node, placed last"));
        }
        if normals.len() > 1 || normals.first().is_some_and(|m| m.id != n - 2) {
            return Err(schema("nodes", "at most one normal node, placed just before the absorbing node"));
        }
        let abs = n - 1;
        let topology = Topology::new(n - 1, self.edges.iter().map(|e| (e[0], e[1])))?;

        let mut actions: Vec<Vec<ActionModel>> = self
            .nodes
            .iter()
            .map(|node| {
                node.kind
                    .actions()
                    .iter()
                    .map(|&a| ActionModel {
                        action: a,
                        outcomes: Vec::new(),
                        reward_rate: 0.0,
                    })
                    .collect()
            })
            .collect();
        let mut defined: BTreeSet<(usize, ActionId)> = BTreeSet::new();

        let lookup = |actions: &mut Vec<Vec<ActionModel>>, path: &str, state: usize, action: ActionId| {
            if state >= n {
                return Err(schema(&format!("{path}.state"), &format!("unknown state {state}")));
            }
            actions[state]
                .iter_mut()
                .position(|m| m.action == action)
                .ok_or_else(|| {
                    schema(
                        &format!("{path}.action"),
                        &format!("{action} is not admissible at state {state}"),
                    )
                })
        };

        for (i, t) in self.transitions.iter().enumerate() {
            let path = format!("transitions[{i}]");
            let idx = lookup(&mut actions, &path, t.state, t.action)?;
            if !defined.insert((t.state, t.action)) {
                return Err(schema(&path, &format!("duplicate row for state {} action {}", t.state, t.action)));
            }
            let model = &mut actions[t.state][idx];
            for (&to, &p) in &t.dist {
                if to >= n {
                    return Err(schema(&format!("{path}.dist.{to}"), "unknown successor state"));
                }
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(schema(&format!("{path}.dist.{to}"), "probability must be nonnegative"));
                }
                if p > 0.0 {
                    model.outcomes.push(Outcome {
                        to: StateId(to),
                        prob: p,
                        rate: f64::NAN,
                        reward_jump: 0.0,
                    });
                }
            }
            let sum: f64 = t.dist.values().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ModelError::Stochasticity {
                    state: StateId(t.state),
                    action: t.action,
                    sum,
                });
            }
        }
        if !defined.contains(&(abs, ActionId::Eject)) {
            actions[abs][0].outcomes.push(Outcome {
                to: StateId(abs),
                prob: 1.0,
                rate: DEFAULT_ABSORBING_RATE,
                reward_jump: 0.0,
            });
        }
        for (s, models) in actions.iter().enumerate() {
            for m in models {
                if m.outcomes.is_empty() {
                    return Err(schema(
                        "transitions",
                        &format!("missing transition row for state {s} action {}", m.action),
                    ));
                }
            }
        }

        for (i, r) in self.rates.iter().enumerate() {
            let path = format!("rates[{i}]");
            let idx = lookup(&mut actions, &path, r.state, r.action)?;
            let outcome = actions[r.state][idx]
                .outcome_mut(StateId(r.to))
                .ok_or_else(|| {
                    schema(
                        &format!("{path}.to"),
                        &format!("no positive-probability transition ({}, {}, {})", r.state, r.action, r.to),
                    )
                })?;
            if !outcome.rate.is_nan() && !(r.state == abs && !defined.contains(&(abs, ActionId::Eject))) {
                return Err(schema(&path, "duplicate rate entry"));
            }
            if !(r.lambda > 0.0 && r.lambda.is_finite()) {
                return Err(schema(&format!("{path}.lambda"), "rate must be strictly positive and finite"));
            }
            outcome.rate = r.lambda;
        }
        for (s, models) in actions.iter().enumerate() {
            for m in models {
                if let Some(o) = m.outcomes.iter().find(|o| o.rate.is_nan()) {
                    return Err(schema(
                        "rates",
                        &format!("missing rate for ({s}, {}, {})", m.action, o.to),
                    ));
                }
            }
        }

        let mut jump_set: BTreeSet<(usize, ActionId, usize)> = BTreeSet::new();
        let mut rate_set: BTreeSet<(usize, ActionId)> = BTreeSet::new();
        for (i, r) in self.rewards.iter().enumerate() {
            let path = format!("rewards[{i}]");
            let idx = lookup(&mut actions, &path, r.state, r.action)?;
            let model = &mut actions[r.state][idx];
            if r.r1.is_none() && r.r2.is_none() {
                return Err(schema(&path, "reward entry must set r1 or r2"));
            }
            if let Some(r2) = r.r2 {
                if r.to.is_some() {
                    return Err(schema(&format!("{path}.r2"), "r2 is per state-action and cannot name `to`"));
                }
                if !rate_set.insert((r.state, r.action)) {
                    return Err(schema(&path, "duplicate r2 entry"));
                }
                model.reward_rate = r2;
            }
            if let Some(r1) = r.r1 {
                let targets: Vec<usize> = match r.to {
                    Some(to) => {
                        if model.outcome(StateId(to)).is_none() {
                            return Err(schema(
                                &format!("{path}.to"),
                                &format!("no positive-probability transition ({}, {}, {to})", r.state, r.action),
                            ));
                        }
                        vec![to]
                    }
                    None => model.outcomes.iter().map(|o| o.to.0).collect(),
                };
                for to in targets {
                    if !jump_set.insert((r.state, r.action, to)) {
                        return Err(schema(&path, "duplicate r1 entry"));
                    }
                    model.outcome_mut(StateId(to)).expect("checked above").reward_jump = r1;
                }
            }
        }
        for models in &mut actions {
            for m in models {
                m.sort_outcomes();
            }
        }

        let model = SmdpModel {
            name: self.name.clone(),
            nodes: self.nodes.clone(),
            topology,
            gamma: self.gamma,
            noise_sigma: self.noise_sigma,
            reward_bound: self.reward_bound,
            actions,
            target: self.target.map(StateId),
        };
        model.validate()?;
        model.check_regulation()?;
        Ok(model)
    }
}

fn schema(path: &str, message: &str) -> ModelError {
    ModelError::Schema {
        path: path.to_string(),
        message: message.to_string(),
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(document: &str) -> Result<SmdpModel, ModelError> {
    ScenarioDoc::parse(document)?.build()
}

/// Deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    choice: Vec<ActionId>,
}

impl Policy {
    /// Checks admissibility against the model.
    pub fn new(model: &SmdpModel, choice: Vec<ActionId>) -> Result<Self, ModelError> {
        let policy = Policy { choice };
        policy.check(model)?;
        Ok(policy)
    }

    pub(crate) fn from_vec_unchecked(choice: Vec<ActionId>) -> Self {
        Policy { choice }
    }

    /// Every state takes its first admissible action.
    pub fn lowest(model: &SmdpModel) -> Self {
        Policy {
            choice: model.states().map(|s| model.admissible(s)[0]).collect(),
        }
    }

    pub fn check(&self, model: &SmdpModel) -> Result<(), ModelError> {
        if self.choice.len() != model.state_count() {
            return Err(ModelError::Invalid(format!(
                "policy covers {} states, model has {}",
                self.choice.len(),
                model.state_count()
            )));
        }
        for (s, &a) in self.choice.iter().enumerate() {
            if !model.is_admissible(StateId(s), a) {
                return Err(ModelError::Invalid(format!("{a} is not admissible at state {s}")));
            }
        }
        Ok(())
    }

    pub fn action(&self, s: StateId) -> ActionId {
        self.choice[s.0]
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.choice
    }

    pub fn len(&self) -> usize {
        self.choice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice.is_empty()
    }

    pub fn with(&self, s: StateId, a: ActionId) -> Policy {
        let mut choice = self.choice.clone();
        choice[s.0] = a;
        Policy { choice }
    }
}

/// State-value vector; `values[absorbing] == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(n: usize) -> Self {
        ValueFunction { values: vec![0.0; n] }
    }

    pub fn get(&self, s: StateId) -> f64 {
        self.values[s.0]
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
