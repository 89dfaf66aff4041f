//! Risk analytics on the continuous-time Markov chain induced by a fixed
//! engagement policy: occupancy evolution, limiting occupancy, first-passage
//! distributions and mean first-passage times.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::model::{ModelError, Policy, SmdpModel, StateId};
use crate::solver::SolverError;

pub mod sweeps;

/// Poisson tail mass discarded by uniformization.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;
/// Row sums of a generator must vanish within this tolerance.
pub const GENERATOR_TOL: f64 = 1e-9;
const DISTRIBUTION_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid generator: {0}")]
    Generator(String),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("time grid must be sorted in nondecreasing order")]
    UnsortedTimes,
    #[error("initial vector is not a probability distribution: {0}")]
    NotDistribution(String),
    #[error("target set {targets:?} is unreachable from state {source_state}")]
    Unreachable { source_state: StateId, targets: Vec<StateId> },
    #[error("linear system is singular")]
    Singular,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Infinitesimal generator of a finite CTMC.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    q: DMatrix<f64>,
}

impl Generator {
    /// Validates nonnegative off-diagonals and zero row sums.
    pub fn from_matrix(q: DMatrix<f64>) -> Result<Self, RiskError> {
        if q.nrows() != q.ncols() || q.nrows() == 0 {
            return Err(RiskError::Generator("matrix must be square and nonempty".into()));
        }
        for i in 0..q.nrows() {
            let mut sum = 0.0;
            for j in 0..q.ncols() {
                let v = q[(i, j)];
                if !v.is_finite() {
                    return Err(RiskError::Generator(format!("entry ({i},{j}) is not finite")));
                }
                if i != j && v < 0.0 {
                    return Err(RiskError::Generator(format!("negative off-diagonal at ({i},{j})")));
                }
                sum += v;
            }
            if sum.abs() > GENERATOR_TOL * (1.0 + q[(i, i)].abs()) {
                return Err(RiskError::Generator(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Generator { q })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, RiskError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(RiskError::Generator("rows must all have length n".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn size(&self) -> usize {
        self.q.nrows()
    }

    pub fn rate(&self, i: StateId, j: StateId) -> f64 {
        self.q[(i.0, j.0)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn exit_rate(&self, i: StateId) -> f64 {
        -self.q[(i.0, i.0)]
    }

    /// Copy with the rows of `targets` zeroed, making them absorbing.
    pub fn with_absorbing(&self, targets: &BTreeSet<StateId>) -> Generator {
        let mut q = self.q.clone();
        for t in targets {
            q.row_mut(t.0).fill(0.0);
        }
        Generator { q }
    }

    fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.size()).filter(move |&j| j != i && self.q[(i, j)] > 0.0)
    }

    fn graph(&self) -> DiGraph<(), ()> {
        let n = self.size();
        let mut g = DiGraph::with_capacity(n, n * 2);
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for i in 0..n {
            for j in self.successors(i) {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
        g
    }

    /// States reachable from `from` along positive-rate jumps (including `from`).
    pub fn reachable_from(&self, from: impl IntoIterator<Item = StateId>) -> BTreeSet<StateId> {
        let mut seen = vec![false; self.size()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for s in from {
            if !seen[s.0] {
                seen[s.0] = true;
                queue.push_back(s.0);
            }
        }
        while let Some(i) = queue.pop_front() {
            for j in self.successors(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        (0..self.size()).filter(|&i| seen[i]).map(StateId).collect()
    }
}

/// Generator of the policy-induced chain: `q_ij = λ_ij(π(i)) tr(j|i,π(i))` for
/// `j != i`. Self-loops are invisible to the chain and the absorbing row is zero.
pub fn build_generator(model: &SmdpModel, policy: &Policy) -> Result<Generator, RiskError> {
    policy.check(model)?;
    let n = model.state_count();
    let absorbing = model.absorbing();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for s in model.states().filter(|&s| s != absorbing) {
        let m = model.action_model(s, policy.action(s)).expect("admissible");
        for o in m.outcomes.iter().filter(|o| o.to != s) {
            q[(s.0, o.to.0)] += o.rate * o.prob;
        }
        let out: f64 = (0..n).filter(|&j| j != s.0).map(|j| q[(s.0, j)]).sum();
        q[(s.0, s.0)] = -out;
    }
    Ok(Generator { q })
}

fn check_distribution(p0: &[f64], n: usize) -> Result<(), RiskError> {
    if p0.len() != n {
        return Err(RiskError::NotDistribution(format!("length {} != {n}", p0.len())));
    }
    if p0.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(RiskError::NotDistribution("negative or non-finite entry".into()));
    }
    let sum: f64 = p0.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(RiskError::NotDistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

pub fn point_mass(n: usize, s: StateId) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[s.0] = 1.0;
    p
}

/// Truncated, normalized Poisson(mean) weights `(left, w[left..=right])`.
///
/// Weights are generated outward from the mode so large means neither
/// underflow nor overflow; each side is cut once its geometric tail bound
/// falls below `tail_tol / 2` of the accumulated mass.
fn poisson_weights(mean: f64, tail_tol: f64) -> (usize, Vec<f64>) {
    let mode = mean.floor() as usize;
    let mut right = vec![1.0_f64];
    let mut k = mode;
    loop {
        let ratio = mean / (k as f64 + 1.0);
        let next = right[right.len() - 1] * ratio;
        k += 1;
        right.push(next);
        let r = mean / (k as f64 + 1.0);
        if r < 1.0 && next * r / (1.0 - r) < 0.5 * tail_tol || next == 0.0 {
            break;
        }
    }
    let mut left = Vec::new();
    let mut k = mode;
    let mut w = 1.0_f64;
    while k > 0 {
        w *= k as f64 / mean;
        k -= 1;
        left.push(w);
        let r = k as f64 / mean;
        if r < 1.0 && w * r / (1.0 - r) < 0.5 * tail_tol || w == 0.0 {
            break;
        }
    }
    let first = mode - left.len();
    let mut weights: Vec<f64> = left.into_iter().rev().chain(right).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (first, weights)
}

struct Uniformized {
    rate: f64,
    /// Transpose of `I + Q/Λ`, so `p ← M^T p` advances a column distribution.
    step_t: DMatrix<f64>,
}

impl Uniformized {
    fn new(gen: &Generator) -> Self {
        let n = gen.size();
        let rate = (0..n).map(|i| -gen.q[(i, i)]).fold(0.0, f64::max);
        let step = if rate > 0.0 {
            DMatrix::identity(n, n) + &gen.q / rate
        } else {
            DMatrix::identity(n, n)
        };
        Uniformized {
            rate,
            step_t: step.transpose(),
        }
    }

    fn advance(&self, p: &DVector<f64>, dt: f64, tail_tol: f64) -> DVector<f64> {
        let mean = self.rate * dt;
        if mean == 0.0 {
            return p.clone();
        }
        let (first, weights) = poisson_weights(mean, tail_tol);
        let last = first + weights.len() - 1;
        let mut v = p.clone();
        let mut scratch = DVector::zeros(p.len());
        let mut acc = DVector::zeros(p.len());
        for k in 0..=last {
            if k >= first {
                acc.axpy(weights[k - first], &v, 1.0);
            }
            if k < last {
                scratch.gemv(1.0, &self.step_t, &v, 0.0);
                std::mem::swap(&mut v, &mut scratch);
            }
        }
        acc
    }
}

/// Probability vectors `p(t) = p0 e^{Q t}` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyCurve {
    pub times: Vec<f64>,
    pub dist: Vec<Vec<f64>>,
}

/// Uniformization with the default tail tolerance.
pub fn transient_occupancy(gen: &Generator, p0: &[f64], times: &[f64]) -> Result<OccupancyCurve, RiskError> {
    transient_occupancy_with_tol(gen, p0, times, DEFAULT_TAIL_TOL)
}

/// Uniformization stepping along the sorted grid using the semigroup
/// property; each step discards at most `tail_tol` of Poisson mass.
pub fn transient_occupancy_with_tol(
    gen: &Generator,
    p0: &[f64],
    times: &[f64],
    tail_tol: f64,
) -> Result<OccupancyCurve, RiskError> {
    check_distribution(p0, gen.size())?;
    if let Some(&t) = times.iter().find(|&&t| !(t >= 0.0)) {
        return Err(RiskError::NegativeTime(t));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(RiskError::UnsortedTimes);
    }
    let uni = Uniformized::new(gen);
    let mut p = DVector::from_column_slice(p0);
    let mut prev = 0.0;
    let mut dist = Vec::with_capacity(times.len());
    for &t in times {
        p = uni.advance(&p, t - prev, tail_tol);
        prev = t;
        dist.push(p.iter().copied().collect());
    }
    Ok(OccupancyCurve {
        times: times.to_vec(),
        dist,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedClass {
    pub states: Vec<StateId>,
    /// Probability of eventually entering this class from `p0`.
    pub weight: f64,
    /// Stationary distribution of the class, embedded in the full state space.
    pub stationary: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitingOccupancy {
    /// `lim_{t→∞} p(t)`.
    pub distribution: Vec<f64>,
    /// Closed classes reachable from the support of `p0`.
    pub classes: Vec<ClosedClass>,
    /// Set when the limit mixes several closed classes of which at least one
    /// is not a single absorbing state; `classes` then carries the decomposition.
    pub decomposed: bool,
}

/// Limit of the occupancy distribution via closed-class decomposition.
pub fn limiting_occupancy(gen: &Generator, p0: &[f64]) -> Result<LimitingOccupancy, RiskError> {
    let n = gen.size();
    check_distribution(p0, n)?;
    let support = (0..n).filter(|&i| p0[i] > 0.0).map(StateId);
    let reachable = gen.reachable_from(support);

    let graph = gen.graph();
    let mut class_of = vec![usize::MAX; n];
    let sccs: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
            v.sort_unstable();
            v
        })
        .filter(|c| reachable.contains(&StateId(c[0])))
        .collect();
    for (k, c) in sccs.iter().enumerate() {
        for &i in c {
            class_of[i] = k;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(k, c)| c.iter().all(|&i| gen.successors(i).all(|j| class_of[j] == *k)))
        .map(|(_, c)| c.clone())
        .collect();
    closed.sort();

    let in_closed: BTreeSet<usize> = closed.iter().flatten().copied().collect();
    let transient: Vec<usize> = reachable
        .iter()
        .map(|s| s.0)
        .filter(|i| !in_closed.contains(i))
        .collect();
    let t_index = |i: usize| transient.iter().position(|&x| x == i);

    let lu = if transient.is_empty() {
        None
    } else {
        let m = transient.len();
        let a = DMatrix::from_fn(m, m, |r, c| gen.q[(transient[r], transient[c])]);
        Some(a.lu())
    };

    let mut classes = Vec::with_capacity(closed.len());
    let mut distribution = vec![0.0; n];
    for c in &closed {
        let mut weight: f64 = c.iter().map(|&i| p0[i]).sum();
        if let Some(lu) = &lu {
            // Q_TT h = -Q_TC 1
            let rhs = DVector::from_fn(transient.len(), |r, _| -c.iter().map(|&j| gen.q[(transient[r], j)]).sum::<f64>());
            let h = lu.solve(&rhs).ok_or(RiskError::Singular)?;
            weight += transient
                .iter()
                .map(|&i| p0[i] * h[t_index(i).expect("transient")])
                .sum::<f64>();
        }
        let stationary = class_stationary(gen, c)?;
        for (i, &p) in stationary.iter().enumerate() {
            distribution[i] += weight * p;
        }
        classes.push(ClosedClass {
            states: c.iter().copied().map(StateId).collect(),
            weight,
            stationary,
        });
    }
    let decomposed = classes.len() > 1 && classes.iter().any(|c| c.states.len() > 1);
    Ok(LimitingOccupancy {
        distribution,
        classes,
        decomposed,
    })
}

/// Stationary vector of an irreducible closed class: `π Q_CC = 0`, `Σ π = 1`.
fn class_stationary(gen: &Generator, class: &[usize]) -> Result<Vec<f64>, RiskError> {
    let n = gen.size();
    let mut full = vec![0.0; n];
    if class.len() == 1 {
        full[class[0]] = 1.0;
        return Ok(full);
    }
    let m = class.len();
    let mut a = DMatrix::from_fn(m, m, |r, c| gen.q[(class[c], class[r])]);
    a.row_mut(m - 1).fill(1.0);
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(RiskError::Singular)?;
    for (k, &i) in class.iter().enumerate() {
        full[i] = pi[k].max(0.0);
    }
    Ok(full)
}

/// Mean first-passage times into a target set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mfpt {
    /// `f64::INFINITY` where passage into the targets is not certain.
    pub times: Vec<f64>,
    pub infinite: Vec<StateId>,
}

impl Mfpt {
    pub fn get(&self, s: StateId) -> f64 {
        self.times[s.0]
    }

    /// Finite times as `Some`, infinite as `None`.
    pub fn finite(&self, s: StateId) -> Option<f64> {
        let t = self.times[s.0];
        t.is_finite().then_some(t)
    }
}

/// Solves `t_i = 0` on the targets and `1 + Σ_l q_il t_l = 0` elsewhere.
/// States that can escape to a region never reaching the targets are flagged
/// infinite and excluded from the solve.
pub fn mfpt(gen: &Generator, targets: &BTreeSet<StateId>) -> Result<Mfpt, RiskError> {
    let n = gen.size();
    if targets.is_empty() || targets.iter().any(|t| t.0 >= n) {
        return Err(RiskError::InvalidArgument("target set must be nonempty and in range".into()));
    }
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in gen.successors(i) {
            preds[j].push(i);
        }
    }
    let is_target = |i: usize| targets.contains(&StateId(i));
    // states that can reach the targets
    let mut reach = vec![false; n];
    let mut queue: VecDeque<usize> = targets.iter().map(|t| t.0).collect();
    for t in targets {
        reach[t.0] = true;
    }
    while let Some(j) = queue.pop_front() {
        for &i in &preds[j] {
            if !reach[i] && !is_target(i) {
                reach[i] = true;
                queue.push_back(i);
            }
        }
    }
    // states that can reach a dead region while avoiding the targets
    let mut escape = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| !reach[i]).collect();
    for &i in &queue {
        escape[i] = true;
    }
    while let Some(j) = queue.pop_front() {
        for &i in &preds[j] {
            if !escape[i] && !is_target(i) {
                escape[i] = true;
                queue.push_back(i);
            }
        }
    }
    let finite: Vec<usize> = (0..n).filter(|&i| !is_target(i) && !escape[i]).collect();
    let mut times = vec![0.0; n];
    let infinite: Vec<StateId> = (0..n).filter(|&i| escape[i]).map(StateId).collect();
    for s in &infinite {
        times[s.0] = f64::INFINITY;
    }
    if !finite.is_empty() {
        let m = finite.len();
        let a = DMatrix::from_fn(m, m, |r, c| gen.q[(finite[r], finite[c])]);
        let b = DVector::from_element(m, -1.0);
        let x = a.lu().solve(&b).ok_or(RiskError::Singular)?;
        for (k, &i) in finite.iter().enumerate() {
            if !x[k].is_finite() || x[k] < 0.0 {
                return Err(RiskError::Singular);
            }
            times[i] = x[k];
        }
    }
    Ok(Mfpt { times, infinite })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FptResult {
    pub source: StateId,
    pub targets: Vec<StateId>,
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    pub density: Vec<f64>,
    /// Infinite when passage is not certain.
    pub mean: f64,
    pub absorption_certain: bool,
}

/// First-passage distribution via the absorbing-set construction: targets are
/// made absorbing and the cdf is the mass they hold at each time.
pub fn first_passage(
    gen: &Generator,
    source: StateId,
    targets: &BTreeSet<StateId>,
    grid: &[f64],
) -> Result<FptResult, RiskError> {
    if targets.contains(&source) {
        return Err(RiskError::InvalidArgument(format!("source {source} is in the target set")));
    }
    let means = mfpt(gen, targets)?;
    let modified = gen.with_absorbing(targets);
    let curve = transient_occupancy(&modified, &point_mass(gen.size(), source), grid)?;
    let inflow: Vec<f64> = (0..gen.size())
        .map(|l| {
            if targets.contains(&StateId(l)) {
                0.0
            } else {
                targets.iter().map(|d| gen.q[(l, d.0)]).sum()
            }
        })
        .collect();
    let mut cdf = Vec::with_capacity(grid.len());
    let mut density = Vec::with_capacity(grid.len());
    for p in &curve.dist {
        cdf.push(targets.iter().map(|d| p[d.0]).sum::<f64>().clamp(0.0, 1.0));
        density.push(p.iter().zip(&inflow).map(|(a, b)| a * b).sum::<f64>().max(0.0));
    }
    // enforce monotone cdf against rounding
    for k in 1..cdf.len() {
        if cdf[k] < cdf[k - 1] {
            cdf[k] = cdf[k - 1];
        }
    }
    let mean = means.get(source);
    Ok(FptResult {
        source,
        targets: targets.iter().copied().collect(),
        grid: grid.to_vec(),
        cdf,
        density,
        mean,
        absorption_certain: mean.is_finite(),
    })
}

/// First-passage cdf evaluated at arbitrary (unsorted) times.
pub fn fpt_cdf_at(
    gen: &Generator,
    source: StateId,
    targets: &BTreeSet<StateId>,
    times: &[f64],
) -> Result<Vec<f64>, RiskError> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let modified = gen.with_absorbing(targets);
    let curve = transient_occupancy(&modified, &point_mass(gen.size(), source), &sorted)?;
    let mut out = vec![0.0; times.len()];
    let mut running = 0.0_f64;
    for (k, &i) in order.iter().enumerate() {
        let c: f64 = targets.iter().map(|d| curve.dist[k][d.0]).sum();
        running = running.max(c.clamp(0.0, 1.0));
        out[i] = running;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttractionEfficiency {
    /// Mean first-passage time, used as the threshold.
    pub threshold: f64,
    /// `P(T ≤ threshold)`.
    pub probability: f64,
}

pub fn attraction_efficiency_for(
    gen: &Generator,
    source: StateId,
    target: StateId,
) -> Result<AttractionEfficiency, RiskError> {
    let targets: BTreeSet<StateId> = [target].into();
    if source == target {
        return Err(RiskError::InvalidArgument("source equals target".into()));
    }
    let threshold = mfpt(gen, &targets)?.get(source);
    if !threshold.is_finite() {
        return Err(RiskError::Unreachable {
            source_state: source,
            targets: vec![target],
        });
    }
    let probability = fpt_cdf_at(gen, source, &targets, &[threshold])?[0];
    Ok(AttractionEfficiency { threshold, probability })
}

/// Probability that the first passage from `source` to `target` beats its own mean.
pub fn attraction_efficiency(
    model: &SmdpModel,
    policy: &Policy,
    source: StateId,
    target: StateId,
) -> Result<AttractionEfficiency, RiskError> {
    let gen = build_generator(model, policy)?;
    attraction_efficiency_for(&gen, source, target)
}

/// `points` log-spaced times from 1e-2 to `5 * horizon`.
pub fn default_grid(horizon: f64, points: usize) -> Vec<f64> {
    let lo: f64 = 1e-2;
    let hi = (5.0 * horizon).max(lo * 10.0);
    if points <= 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_scenario, ActionId};
    use crate::test_support::{desk_doc, rk45_occupancy, two_state_doc};

    fn two_state(lambda: f64) -> Generator {
        Generator::from_rows(&[vec![-lambda, lambda], vec![0.0, 0.0]]).unwrap()
    }

    fn desk_chain() -> (SmdpModel, Policy, Generator) {
        let model = load_scenario(&desk_doc()).unwrap();
        let policy = Policy::new(&model, vec![ActionId::LowInteract, ActionId::Attract, ActionId::Eject]).unwrap();
        let gen = build_generator(&model, &policy).unwrap();
        (model, policy, gen)
    }

    fn irreducible3() -> Generator {
        Generator::from_rows(&[
            vec![-0.7, 0.4, 0.3],
            vec![0.2, -0.5, 0.3],
            vec![0.9, 0.1, -1.0],
        ])
        .unwrap()
    }

    #[test]
    fn two_state_generator() {
        let model = load_scenario(&two_state_doc(0.5, 0.1)).unwrap();
        let gen = build_generator(&model, &Policy::lowest(&model)).unwrap();
        assert_eq!(gen.matrix().as_slice(), DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.0, 0.0]).as_slice());
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let (_, _, gen) = desk_chain();
        for i in 0..gen.size() {
            assert!(gen.matrix().row(i).sum().abs() < 1e-15);
        }
        assert_eq!(gen.matrix().row(2).amax(), 0.0);
    }

    #[test]
    fn generator_matches_semigroup_finite_difference() {
        let (_, _, gen) = desk_chain();
        let h = 1e-5;
        for i in 0..3 {
            let p = transient_occupancy(&gen, &point_mass(3, StateId(i)), &[h]).unwrap();
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                let fd = (p.dist[0][j] - delta) / h;
                assert!((fd - gen.rate(StateId(i), StateId(j))).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn occupancy_at_zero_is_initial() {
        let gen = irreducible3();
        let p0 = [0.2, 0.3, 0.5];
        let c = transient_occupancy(&gen, &p0, &[0.0]).unwrap();
        assert_eq!(c.dist[0], p0.to_vec());
    }

    #[test]
    fn occupancy_closed_form_decay() {
        let lambda = 0.37;
        let gen = two_state(lambda);
        let times: Vec<f64> = (0..50).map(|k| 0.3 * k as f64).collect();
        let c = transient_occupancy(&gen, &[1.0, 0.0], &times).unwrap();
        for (t, p) in times.iter().zip(&c.dist) {
            assert!((p[0] - (-lambda * t).exp()).abs() < 1e-12);
            assert!((p[1] - (1.0 - (-lambda * t).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn desk_occupancy_matches_ode_oracle() {
        let (_, _, gen) = desk_chain();
        let rows: Vec<Vec<f64>> = (0..3).map(|i| gen.matrix().row(i).iter().copied().collect()).collect();
        let p0 = [0.0, 1.0, 0.0];
        let c = transient_occupancy(&gen, &p0, &[1.0, 5.0, 10.0]).unwrap();
        for (k, &t) in [1.0, 5.0, 10.0].iter().enumerate() {
            let ode = rk45_occupancy(&rows, &p0, t, 1e-12);
            for (j, (a, b)) in c.dist[k].iter().zip(&ode).enumerate() {
                assert!((a - b).abs() < 1e-8, "t={t} j={j}");
            }
        }
    }

    #[test]
    fn occupancy_errors() {
        let gen = irreducible3();
        assert!(matches!(transient_occupancy(&gen, &[1.0, 0.0, 0.0], &[-1.0]), Err(RiskError::NegativeTime(_))));
        assert!(matches!(
            transient_occupancy(&gen, &[0.5, 0.0, 0.0], &[1.0]),
            Err(RiskError::NotDistribution(_))
        ));
        assert!(matches!(transient_occupancy(&gen, &[1.0, 0.0, 0.0], &[2.0, 1.0]), Err(RiskError::UnsortedTimes)));
    }

    #[test]
    fn semigroup_composition() {
        let gen = irreducible3();
        let p0 = [1.0, 0.0, 0.0];
        let direct = transient_occupancy(&gen, &p0, &[7.5]).unwrap();
        let mid = transient_occupancy(&gen, &p0, &[3.0]).unwrap();
        let composed = transient_occupancy(&gen, &mid.dist[0], &[4.5]).unwrap();
        for j in 0..3 {
            assert!((direct.dist[0][j] - composed.dist[0][j]).abs() < 1e-8);
        }
    }

    #[test]
    fn large_poisson_means_are_stable() {
        let (w0, w) = poisson_weights(2.5e6, 1e-12);
        assert!(w0 > 2_400_000);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (z0, z) = poisson_weights(0.3, 1e-12);
        assert_eq!(z0, 0);
        assert!((z[0] - (-0.3f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn limiting_only_absorbing_class() {
        let gen = two_state(0.4);
        let lim = limiting_occupancy(&gen, &[1.0, 0.0]).unwrap();
        assert_eq!(lim.distribution, vec![0.0, 1.0]);
        assert!(!lim.decomposed);
    }

    #[test]
    fn limiting_symmetric_pair() {
        let gen = Generator::from_rows(&[vec![-0.3, 0.3], vec![0.3, -0.3]]).unwrap();
        let lim = limiting_occupancy(&gen, &[1.0, 0.0]).unwrap();
        assert!((lim.distribution[0] - 0.5).abs() < 1e-15);
        assert!((lim.distribution[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn limiting_matches_long_horizon() {
        let gen = irreducible3();
        let p0 = [0.0, 0.0, 1.0];
        let lim = limiting_occupancy(&gen, &p0).unwrap();
        let far = transient_occupancy(&gen, &p0, &[1e6]).unwrap();
        for j in 0..3 {
            assert!((lim.distribution[j] - far.dist[0][j]).abs() < 1e-6);
        }
    }

    #[test]
    fn limiting_mixture_is_flagged() {
        // 0 is transient, {1,2} closed, {3} absorbing
        let gen = Generator::from_rows(&[
            vec![-1.0, 0.25, 0.0, 0.75],
            vec![0.0, -1.0, 1.0, 0.0],
            vec![0.0, 2.0, -2.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let lim = limiting_occupancy(&gen, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(lim.decomposed);
        assert_eq!(lim.classes.len(), 2);
        let expect = [0.0, 0.25 * 2.0 / 3.0, 0.25 / 3.0, 0.75];
        for (a, b) in lim.distribution.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mfpt_basics() {
        let gen = two_state(0.25);
        let m = mfpt(&gen, &[StateId(1)].into()).unwrap();
        assert_eq!(m.get(StateId(1)), 0.0);
        assert!((m.get(StateId(0)) - 4.0).abs() < 1e-12);
        // all successors of 0 as targets -> first jump
        let gen = irreducible3();
        let m = mfpt(&gen, &[StateId(1), StateId(2)].into()).unwrap();
        assert!((m.get(StateId(0)) - 1.0 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn mfpt_is_asymmetric() {
        let gen = irreducible3();
        let to1 = mfpt(&gen, &[StateId(1)].into()).unwrap();
        let to0 = mfpt(&gen, &[StateId(0)].into()).unwrap();
        assert!((to1.get(StateId(0)) - to0.get(StateId(1))).abs() > 0.1);
    }

    #[test]
    fn mfpt_flags_uncertain_passage() {
        // 0 -> 1 or 0 -> 2, 2 absorbing and not a target
        let gen = Generator::from_rows(&[vec![-1.0, 0.5, 0.5], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let m = mfpt(&gen, &[StateId(1)].into()).unwrap();
        assert!(m.get(StateId(0)).is_infinite());
        assert_eq!(m.infinite, vec![StateId(0), StateId(2)]);
        assert!(matches!(
            attraction_efficiency_for(&gen, StateId(0), StateId(1)),
            Err(RiskError::Unreachable { .. })
        ));
    }

    #[test]
    fn exponential_first_passage() {
        let lambda = 0.8;
        let gen = two_state(lambda);
        let grid: Vec<f64> = (1..40).map(|k| 0.1 * k as f64).collect();
        let f = first_passage(&gen, StateId(0), &[StateId(1)].into(), &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            assert!((f.density[k] - lambda * (-lambda * t).exp()).abs() < 1e-12);
            assert!((f.cdf[k] - (1.0 - (-lambda * t).exp())).abs() < 1e-12);
        }
        assert!((f.mean - 1.0 / lambda).abs() < 1e-12);
    }

    #[test]
    fn first_passage_rejects_source_in_targets() {
        let gen = two_state(1.0);
        assert!(first_passage(&gen, StateId(0), &[StateId(0)].into(), &[1.0]).is_err());
    }

    #[test]
    fn attraction_efficiency_at_exponential_mean() {
        let gen = two_state(1.7);
        let a = attraction_efficiency_for(&gen, StateId(0), StateId(1)).unwrap();
        assert!((a.threshold - 1.0 / 1.7).abs() < 1e-12);
        assert!((a.probability - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn cdf_integrates_density() {
        let (_, _, gen) = desk_chain();
        let grid: Vec<f64> = (0..=4000).map(|k| 0.01 * k as f64).collect();
        let f = first_passage(&gen, StateId(1), &[StateId(0)].into(), &grid).unwrap();
        let mut integral = 0.0;
        for k in 1..grid.len() {
            integral += 0.5 * (f.density[k] + f.density[k - 1]) * (grid[k] - grid[k - 1]);
            assert!((integral - f.cdf[k]).abs() < 1e-4);
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid(20.0, 200);
        assert_eq!(g.len(), 200);
        assert!((g[0] - 1e-2).abs() < 1e-15);
        assert!((g[199] - 100.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
