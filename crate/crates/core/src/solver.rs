//! Equivalent discounted MDP and its dynamic-programming solvers.
//!
//! A discounted SMDP with exponential sojourns becomes an MDP whose stage
//! discount `z = λ/(λ+γ)` varies per transition and whose one-stage reward is
//! `r1 + r2/γ (1 - z)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{ActionId, ModelError, NodeKind, Policy, SmdpModel, StateId, ValueFunction};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("value iteration did not converge in {iterations} sweeps (last difference {residual})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("policy evaluation system is singular")]
    Singular,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Laplace transform of an exponential sojourn density at discount rate `gamma`.
pub fn laplace_sojourn(lambda: f64, gamma: f64) -> f64 {
    lambda / (lambda + gamma)
}

/// Checked variant of [`laplace_sojourn`].
pub fn try_laplace_sojourn(lambda: f64, gamma: f64) -> Result<f64, SolverError> {
    if !(lambda > 0.0 && gamma > 0.0) {
        return Err(SolverError::InvalidArgument(format!(
            "laplace_sojourn requires positive inputs, got lambda={lambda} gamma={gamma}"
        )));
    }
    Ok(laplace_sojourn(lambda, gamma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub to: StateId,
    pub prob: f64,
    pub z_gamma: f64,
    pub r_gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOperands {
    pub action: ActionId,
    pub terms: Vec<Term>,
    /// `Σ tr · z`
    pub beta: f64,
    /// `Σ tr · r^γ`
    pub expected_reward: f64,
}

/// Precomputed `z^γ`, `r^γ` and `β` for every admissible triple.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanOperands {
    pub pairs: Vec<Vec<PairOperands>>,
    pub beta_max: f64,
    pub absorbing: StateId,
}

impl BellmanOperands {
    pub fn new(model: &SmdpModel) -> Self {
        let gamma = model.gamma();
        let pairs: Vec<Vec<PairOperands>> = model
            .states()
            .map(|s| {
                model
                    .action_models(s)
                    .iter()
                    .map(|m| {
                        let terms: Vec<Term> = m
                            .outcomes
                            .iter()
                            .map(|o| Term {
                                to: o.to,
                                prob: o.prob,
                                z_gamma: laplace_sojourn(o.rate, gamma),
                                r_gamma: m.equivalent_reward(o, gamma),
                            })
                            .collect();
                        PairOperands {
                            action: m.action,
                            beta: terms.iter().map(|t| t.prob * t.z_gamma).sum(),
                            expected_reward: terms.iter().map(|t| t.prob * t.r_gamma).sum(),
                            terms,
                        }
                    })
                    .collect()
            })
            .collect();
        let beta_max = pairs.iter().flatten().map(|p| p.beta).fold(0.0, f64::max);
        BellmanOperands {
            pairs,
            beta_max,
            absorbing: model.absorbing(),
        }
    }

    pub fn pair(&self, s: StateId, a: ActionId) -> Option<&PairOperands> {
        self.pairs.get(s.0)?.iter().find(|p| p.action == a)
    }

    /// One-step lookahead value of `(s, a)` against `v`.
    pub fn q_value(&self, s: StateId, a: ActionId, v: &ValueFunction) -> f64 {
        let pair = self.pair(s, a).expect("admissible pair");
        pair_value(pair, v)
    }

    /// Optimal action values `Q*(s,a)` induced by `v`.
    pub fn q_values(&self, v: &ValueFunction) -> Vec<Vec<(ActionId, f64)>> {
        self.pairs
            .iter()
            .map(|ps| ps.iter().map(|p| (p.action, pair_value(p, v))).collect())
            .collect()
    }
}

fn pair_value(pair: &PairOperands, v: &ValueFunction) -> f64 {
    pair.terms
        .iter()
        .map(|t| t.prob * (t.r_gamma + t.z_gamma * v.values[t.to.0]))
        .sum()
}

/// Applies the Bellman optimality operator once. Ties go to the earlier action;
/// the absorbing state is pinned to zero.
pub fn bellman_backup(operands: &BellmanOperands, v: &ValueFunction) -> (ValueFunction, Policy) {
    let mut values = Vec::with_capacity(operands.pairs.len());
    let mut choice = Vec::with_capacity(operands.pairs.len());
    for (s, pairs) in operands.pairs.iter().enumerate() {
        if s == operands.absorbing.0 {
            values.push(0.0);
            choice.push(pairs[0].action);
            continue;
        }
        let mut best = (pairs[0].action, pair_value(&pairs[0], v));
        for p in &pairs[1..] {
            let q = pair_value(p, v);
            if q > best.1 {
                best = (p.action, q);
            }
        }
        values.push(best.1);
        choice.push(best.0);
    }
    (ValueFunction { values }, Policy::from_vec_unchecked(choice))
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Policy,
    /// Sup-norm difference between successive iterates.
    pub residual_trace: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm Bellman residual `‖T v - v‖` of the returned values.
    pub bellman_residual: f64,
    pub beta_max: f64,
}

/// Value iteration from `v ≡ 0`, stopped by the `β_max`-weighted sup-norm rule
/// so the returned values have Bellman residual at most `tol`.
pub fn value_iteration(model: &SmdpModel, tol: f64, max_iter: usize) -> Result<Solution, SolverError> {
    if !(tol > 0.0) {
        return Err(SolverError::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    model.check_regulation()?;
    let operands = BellmanOperands::new(model);
    let beta = operands.beta_max;
    let threshold = if beta > 0.0 { tol * (1.0 - beta) / (2.0 * beta) } else { f64::INFINITY };
    let mut v = ValueFunction::zeros(model.state_count());
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        let (next, _) = bellman_backup(&operands, &v);
        let diff = next.sup_distance(&v);
        trace.push(diff);
        v = next;
        if diff <= threshold {
            let (after, policy) = bellman_backup(&operands, &v);
            return Ok(Solution {
                bellman_residual: after.sup_distance(&v),
                values: v,
                policy,
                residual_trace: trace,
                iterations: it,
                beta_max: beta,
            });
        }
    }
    Err(SolverError::NonConvergence {
        iterations: max_iter,
        residual: trace.last().copied().unwrap_or(f64::NAN),
    })
}

pub fn solve(model: &SmdpModel) -> Result<Solution, SolverError> {
    value_iteration(model, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Exact value of a fixed policy from the dense system `(I - B_π) v = r_π`.
pub fn policy_evaluation(model: &SmdpModel, policy: &Policy) -> Result<ValueFunction, SolverError> {
    policy.check(model)?;
    let operands = BellmanOperands::new(model);
    policy_evaluation_with(&operands, policy)
}

pub fn policy_evaluation_with(operands: &BellmanOperands, policy: &Policy) -> Result<ValueFunction, SolverError> {
    let n = operands.pairs.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let pair = operands
            .pair(StateId(s), policy.action(StateId(s)))
            .ok_or_else(|| SolverError::InvalidArgument(format!("inadmissible action at state {s}")))?;
        b[s] = pair.expected_reward;
        for t in &pair.terms {
            a[(s, t.to.0)] -= t.prob * t.z_gamma;
        }
    }
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(SolverError::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Singular);
    }
    Ok(ValueFunction {
        values: x.iter().copied().collect(),
    })
}

/// Copy of `model` with bridge penetration probability set to `p` under every
/// non-ejecting action; the remaining mass keeps its relative proportions.
pub fn with_penetration(model: &SmdpModel, bridges: &[StateId], p: f64) -> Result<SmdpModel, SolverError> {
    if !(0.0..1.0).contains(&p) {
        return Err(SolverError::InvalidArgument(format!("penetration probability {p} outside [0,1)")));
    }
    let normal = model
        .normal()
        .ok_or_else(|| SolverError::InvalidArgument("scenario has no normal zone".into()))?;
    let mut out = model.clone();
    for &s in bridges {
        if model.kind(s) != NodeKind::Honeypot {
            return Err(SolverError::InvalidArgument(format!("bridge {s} is not a honeypot")));
        }
        for &a in model.admissible(s).iter().filter(|&&a| a != ActionId::Eject) {
            let m = out.action_model_mut(s, a).expect("admissible");
            let base = m.prob(normal);
            let rest = 1.0 - base;
            if rest <= 0.0 {
                return Err(SolverError::InvalidArgument(format!(
                    "row ({s}, {a}) has no non-penetration mass to renormalize"
                )));
            }
            let scale = (1.0 - p) / rest;
            let mean_rate = m.outcomes.iter().map(|o| o.prob * o.rate).sum::<f64>();
            for o in m.outcomes.iter_mut().filter(|o| o.to != normal) {
                o.prob *= scale;
            }
            match m.outcome_mut(normal) {
                Some(o) => o.prob = p,
                None => {
                    m.outcomes.push(crate::model::Outcome {
                        to: normal,
                        prob: p,
                        rate: mean_rate,
                        reward_jump: 0.0,
                    });
                    m.sort_outcomes();
                }
            }
            m.outcomes.retain(|o| o.prob > 0.0);
        }
        out.topology_mut().insert(s.0, normal.0);
    }
    out.validate()?;
    Ok(out)
}

/// Copy of `model` whose honeypot equivalent rewards all equal `r`
/// (jump reward `r`, zero reward rate).
pub fn with_investigation_reward(model: &SmdpModel, r: f64) -> Result<SmdpModel, SolverError> {
    if !r.is_finite() {
        return Err(SolverError::InvalidArgument(format!("reward {r} is not finite")));
    }
    let mut out = model.clone();
    let honeypots: Vec<StateId> = model.honeypots().collect();
    for s in honeypots {
        for &a in model.admissible(s) {
            let m = out.action_model_mut(s, a).expect("admissible");
            m.reward_rate = 0.0;
            for o in &mut m.outcomes {
                o.reward_jump = r;
            }
        }
    }
    out.set_reward_bound(model.reward_bound().max(r.abs()));
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffCell {
    pub penetration: f64,
    pub reward: f64,
    pub value: f64,
}

/// `v(target)` over a penetration × investigation-reward grid.
pub fn tradeoff_surface(
    model: &SmdpModel,
    penetration_grid: &[f64],
    reward_grid: &[f64],
    bridges: &[StateId],
    target: StateId,
) -> Result<Vec<TradeoffCell>, SolverError> {
    if penetration_grid.is_empty() || reward_grid.is_empty() {
        return Err(SolverError::InvalidArgument("grids must be nonempty".into()));
    }
    if target.0 >= model.state_count() {
        return Err(SolverError::InvalidArgument(format!("unknown target {target}")));
    }
    let normal = model
        .normal()
        .ok_or_else(|| SolverError::InvalidArgument("scenario has no normal zone".into()))?;
    for &b in bridges {
        if !(model.topology().contains(b.0, normal.0) || model.topology().contains(normal.0, b.0)) {
            return Err(SolverError::InvalidArgument(format!("{b} is not adjacent to the normal zone")));
        }
    }
    let cells: Vec<(f64, f64)> = penetration_grid
        .iter()
        .flat_map(|&p| reward_grid.iter().map(move |&r| (p, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(p, r)| {
            let m = with_penetration(&with_investigation_reward(model, r)?, bridges, p)?;
            let sol = solve(&m)?;
            Ok(TradeoffCell {
                penetration: p,
                reward: r,
                value: sol.values.get(target),
            })
        })
        .collect()
}
