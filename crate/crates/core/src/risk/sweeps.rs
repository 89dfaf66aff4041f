//! Engagement criteria under perturbed attacker persistence and intelligence.

use rayon::prelude::*;
use serde::Serialize;

use super::{build_generator, limiting_occupancy, point_mass, RiskError};
use crate::model::{ActionId, Outcome, Policy, SmdpModel, StateId, ValueFunction};
use crate::solver::{policy_evaluation, solve};

/// How each perturbed model obtains its policy.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepPolicy {
    /// Re-solve the perturbed SMDP and analyze its optimal policy.
    Resolve,
    /// Keep this policy and evaluate it exactly on each perturbed model.
    Fixed(Policy),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriteriaRow {
    pub param: f64,
    pub start: StateId,
    /// `p_{start,normal}(∞)`
    pub stationary_normal: f64,
    /// `v(normal)`
    pub v_normal: f64,
    /// `Σ_j p_{start,j}(∞) v(j)`
    pub expected_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: f64,
    pub policy: Policy,
    pub values: ValueFunction,
    /// One row per non-absorbing start state.
    pub rows: Vec<CriteriaRow>,
    /// No honeypot is reachable from the normal zone under the policy.
    pub degenerate: bool,
    /// Some start state's limit mixes several non-trivial closed classes.
    pub decomposed: bool,
}

impl SweepPoint {
    pub fn row(&self, start: StateId) -> Option<&CriteriaRow> {
        self.rows.iter().find(|r| r.start == start)
    }
}

fn require_normal(model: &SmdpModel) -> Result<StateId, RiskError> {
    model
        .normal()
        .ok_or_else(|| RiskError::InvalidArgument("scenario has no normal zone".into()))
}

/// Copy of `model` whose attraction rates from the normal zone to every
/// bridge honeypot equal `lambda`.
pub fn with_attraction_rate(model: &SmdpModel, lambda: f64) -> Result<SmdpModel, RiskError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(RiskError::InvalidArgument(format!("persistence level {lambda} must be positive")));
    }
    let normal = require_normal(model)?;
    let bridges = model.bridges();
    let mut out = model.clone();
    let m = out.action_model_mut(normal, ActionId::Attract).expect("normal zone admits Attract");
    for o in m.outcomes.iter_mut().filter(|o| bridges.contains(&o.to)) {
        o.rate = lambda;
    }
    out.validate()?;
    Ok(out)
}

/// Copy of `model` where the attraction action fails with probability `p`.
///
/// The failure mass is split between staying in the normal zone and
/// termination in the base proportions (all on staying when the base has
/// none); the success mass `1 - p` keeps the base proportions over honeypots.
pub fn with_attraction_failure(model: &SmdpModel, p: f64) -> Result<SmdpModel, RiskError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(RiskError::InvalidArgument(format!("intelligence level {p} outside [0,1]")));
    }
    let normal = require_normal(model)?;
    let absorbing = model.absorbing();
    let mut out = model.clone();
    let m = out.action_model_mut(normal, ActionId::Attract).expect("normal zone admits Attract");
    let is_stay = |o: &Outcome| o.to == normal || o.to == absorbing;
    let stay: f64 = m.outcomes.iter().filter(|o| is_stay(o)).map(|o| o.prob).sum();
    let attract = 1.0 - stay;
    if p < 1.0 && attract <= 0.0 {
        return Err(RiskError::InvalidArgument(
            "attraction row has no honeypot mass to rescale".into(),
        ));
    }
    let mean_rate: f64 = m.outcomes.iter().map(|o| o.prob * o.rate).sum();
    let mut add_self_loop = false;
    for o in m.outcomes.iter_mut() {
        if is_stay(o) {
            o.prob *= if stay > 0.0 { p / stay } else { 0.0 };
        } else {
            o.prob *= (1.0 - p) / attract;
        }
    }
    if stay <= 0.0 && p > 0.0 {
        m.outcomes.push(Outcome {
            to: normal,
            prob: p,
            rate: mean_rate,
            reward_jump: m.outcomes.first().map_or(0.0, |o| o.reward_jump),
        });
        m.sort_outcomes();
        add_self_loop = true;
    }
    m.outcomes.retain(|o| o.prob > 0.0);
    if add_self_loop {
        out.topology_mut().insert(normal.0, normal.0);
    }
    out.validate()?;
    Ok(out)
}

/// The three engagement criteria for every non-absorbing start state.
pub fn engagement_criteria(
    model: &SmdpModel,
    policy: &Policy,
    values: &ValueFunction,
    param: f64,
) -> Result<(Vec<CriteriaRow>, bool), RiskError> {
    let normal = require_normal(model)?;
    let gen = build_generator(model, policy)?;
    let n = model.state_count();
    let mut decomposed = false;
    let mut rows = Vec::new();
    for start in model.states().filter(|&s| s != model.absorbing()) {
        let lim = limiting_occupancy(&gen, &point_mass(n, start))?;
        decomposed |= lim.decomposed;
        rows.push(CriteriaRow {
            param,
            start,
            stationary_normal: lim.distribution[normal.0],
            v_normal: values.get(normal),
            expected_utility: lim.distribution.iter().zip(&values.values).map(|(p, v)| p * v).sum(),
        });
    }
    Ok((rows, decomposed))
}

/// Solves (or evaluates) and analyzes one perturbed model.
pub fn analyze_point(model: &SmdpModel, policy: &SweepPolicy, param: f64) -> Result<SweepPoint, RiskError> {
    let normal = require_normal(model)?;
    let (policy, values) = match policy {
        SweepPolicy::Resolve => {
            let sol = solve(model)?;
            (sol.policy, sol.values)
        }
        SweepPolicy::Fixed(p) => (p.clone(), policy_evaluation(model, p)?),
    };
    let (rows, decomposed) = engagement_criteria(model, &policy, &values, param)?;
    let gen = build_generator(model, &policy)?;
    let degenerate = !gen.reachable_from([normal]).iter().any(|&s| model.honeypots().any(|h| h == s));
    Ok(SweepPoint {
        param,
        policy,
        values,
        rows,
        degenerate,
        decomposed,
    })
}

/// Criteria as the attacker's response rate to attraction varies.
pub fn sweep_persistence(
    model: &SmdpModel,
    policy: &SweepPolicy,
    lambda_grid: &[f64],
) -> Result<Vec<SweepPoint>, RiskError> {
    if let Some(&bad) = lambda_grid.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(RiskError::InvalidArgument(format!("persistence grid value {bad} must be positive")));
    }
    lambda_grid
        .par_iter()
        .map(|&lambda| analyze_point(&with_attraction_rate(model, lambda)?, policy, lambda))
        .collect()
}

/// Criteria as the attraction failure probability varies.
pub fn sweep_intelligence(
    model: &SmdpModel,
    policy: &SweepPolicy,
    p_grid: &[f64],
) -> Result<Vec<SweepPoint>, RiskError> {
    if let Some(&bad) = p_grid.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
        return Err(RiskError::InvalidArgument(format!("intelligence grid value {bad} outside [0,1]")));
    }
    p_grid
        .par_iter()
        .map(|&p| analyze_point(&with_attraction_failure(model, p)?, policy, p))
        .collect()
}

/// Failure mass of the base model's attraction action.
pub fn base_attraction_failure(model: &SmdpModel) -> Option<f64> {
    let normal = model.normal()?;
    let m = model.action_model(normal, ActionId::Attract)?;
    Some(m.prob(normal) + m.prob(model.absorbing()))
}
