//! Semi-Markov trajectory sampling. Every step draws the successor first and
//! then the successor-conditioned exponential sojourn.

use std::collections::BTreeSet;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::learn::Environment;
use crate::model::{ActionId, Policy, SmdpModel, StateId};

/// Portable PRNG seed: ChaCha8 keyed by `seed`, on substream `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        RngSeed { seed, stream: 0 }
    }

    pub fn substream(self, offset: u64) -> Self {
        RngSeed {
            seed: self.seed,
            stream: self.stream.wrapping_add(offset),
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// One simulated decision epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub epoch: u64,
    pub state: StateId,
    pub action: ActionId,
    pub sojourn: f64,
    pub next_state: StateId,
    pub jump_reward_obs: f64,
    pub rate_reward_obs: f64,
}

/// Samples one transition of the semi-Markov process.
///
/// Panics if `action` is not admissible at `state`.
pub fn step<R: Rng + ?Sized>(model: &SmdpModel, state: StateId, action: ActionId, rng: &mut R) -> TrajectoryEvent {
    let m = model
        .action_model(state, action)
        .unwrap_or_else(|| panic!("{action} is not admissible at state {state}"));
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = m.outcomes.last().expect("nonempty row");
    for o in &m.outcomes {
        acc += o.prob;
        if u < acc {
            chosen = o;
            break;
        }
    }
    let sojourn = loop {
        let x: f64 = Exp::new(chosen.rate).expect("positive rate").sample(rng);
        if x > 0.0 {
            break x;
        }
    };
    let sigma = model.noise_sigma();
    let noise = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    };
    TrajectoryEvent {
        epoch: 0,
        state,
        action,
        sojourn,
        next_state: chosen.to,
        jump_reward_obs: chosen.reward_jump,
        rate_reward_obs: m.reward_rate + noise,
    }
}

/// Discounted reward of one epoch starting at absolute time `t`:
/// `e^{-γt} r1 + r2 (e^{-γt} - e^{-γ(t+τ)}) / γ`.
pub fn epoch_utility(event: &TrajectoryEvent, t: f64, gamma: f64) -> f64 {
    let d0 = (-gamma * t).exp();
    let d1 = (-gamma * (t + event.sojourn)).exp();
    d0 * event.jump_reward_obs + event.rate_reward_obs * (d0 - d1) / gamma
}

/// Epoch count after which `reward_bound · β_max^H < eps`.
pub fn tail_horizon(model: &SmdpModel, eps: f64) -> usize {
    let beta = model.regulation_report().beta_max;
    if beta <= 0.0 {
        return 1;
    }
    let h = (eps / model.reward_bound()).ln() / beta.ln();
    h.ceil().max(1.0) as usize + 1
}

/// Samples one path under `policy` and returns its discounted utility.
pub fn rollout_discounted_utility<R: Rng + ?Sized>(
    model: &SmdpModel,
    policy: &Policy,
    start: StateId,
    horizon_epochs: usize,
    rng: &mut R,
) -> f64 {
    let gamma = model.gamma();
    let absorbing = model.absorbing();
    let mut s = start;
    let mut t = 0.0;
    let mut total = 0.0;
    for _ in 0..horizon_epochs {
        if s == absorbing {
            break;
        }
        let ev = step(model, s, policy.action(s), rng);
        total += epoch_utility(&ev, t, gamma);
        t += ev.sojourn;
        s = ev.next_state;
    }
    total
}

/// Events of one path, stopping at absorption or after `horizon_epochs`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    model: &SmdpModel,
    policy: &Policy,
    start: StateId,
    horizon_epochs: usize,
    rng: &mut R,
) -> Vec<TrajectoryEvent> {
    let absorbing = model.absorbing();
    let mut s = start;
    let mut events = Vec::new();
    for k in 0..horizon_epochs {
        if s == absorbing {
            break;
        }
        let mut ev = step(model, s, policy.action(s), rng);
        ev.epoch = k as u64;
        s = ev.next_state;
        events.push(ev);
    }
    events
}

pub fn trajectory_utility(events: &[TrajectoryEvent], gamma: f64) -> f64 {
    let mut t = 0.0;
    let mut total = 0.0;
    for ev in events {
        total += epoch_utility(ev, t, gamma);
        t += ev.sojourn;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean.
    pub se: f64,
}

impl SampleStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return SampleStats {
                n,
                mean: f64::NAN,
                variance: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        SampleStats {
            n,
            mean,
            variance,
            se: (variance / n as f64).sqrt(),
        }
    }

    /// `|mean - reference|` measured in standard errors.
    pub fn z_score(&self, reference: f64) -> f64 {
        if self.se == 0.0 {
            if self.mean == reference {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - reference).abs() / self.se
        }
    }
}

/// Monte Carlo estimate of `u(start, π)`; replication `i` uses substream `i`.
pub fn estimate_utility(
    model: &SmdpModel,
    policy: &Policy,
    start: StateId,
    horizon_epochs: usize,
    n: usize,
    seed: RngSeed,
) -> SampleStats {
    let samples: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.substream(i).rng();
            rollout_discounted_utility(model, policy, start, horizon_epochs, &mut rng)
        })
        .collect();
    SampleStats::from_samples(&samples)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingStats {
    pub n: usize,
    /// Sorted hitting times of the uncensored samples.
    pub samples: Vec<f64>,
    pub censored: usize,
    /// Moments of the uncensored samples.
    pub stats: SampleStats,
}

impl HittingStats {
    /// Empirical `P(T ≤ t)` counting censored samples as not hit.
    pub fn ecdf(&self, t: f64) -> f64 {
        let k = self.samples.partition_point(|&x| x <= t);
        k as f64 / self.n as f64
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n as f64
    }
}

/// Censoring horizon: 50× the analytic mean when finite, else `cap`.
pub fn censor_horizon(mean: f64, cap: f64) -> f64 {
    if mean.is_finite() && mean > 0.0 {
        50.0 * mean
    } else {
        cap
    }
}

/// Simulated first-passage times into `targets`. Paths that absorb outside
/// the targets or exceed `censor_time` are censored.
pub fn estimate_hitting_times(
    model: &SmdpModel,
    policy: &Policy,
    source: StateId,
    targets: &BTreeSet<StateId>,
    n: usize,
    censor_time: f64,
    seed: RngSeed,
) -> HittingStats {
    let absorbing = model.absorbing();
    let draws: Vec<Option<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            if targets.contains(&source) {
                return Some(0.0);
            }
            let mut rng = seed.substream(i).rng();
            let mut s = source;
            let mut t = 0.0;
            loop {
                if s == absorbing {
                    return None;
                }
                let ev = step(model, s, policy.action(s), &mut rng);
                t += ev.sojourn;
                if t > censor_time {
                    return None;
                }
                if targets.contains(&ev.next_state) {
                    return Some(t);
                }
                s = ev.next_state;
            }
        })
        .collect();
    let mut samples: Vec<f64> = draws.iter().flatten().copied().collect();
    let censored = n - samples.len();
    let stats = SampleStats::from_samples(&samples);
    samples.sort_by(f64::total_cmp);
    HittingStats {
        n,
        samples,
        censored,
        stats,
    }
}

/// A model-backed environment exposing only sampled transitions.
pub struct SimEnvironment<'m> {
    model: &'m SmdpModel,
    rng: ChaCha8Rng,
}

impl<'m> SimEnvironment<'m> {
    pub fn new(model: &'m SmdpModel, seed: RngSeed) -> Self {
        SimEnvironment { model, rng: seed.rng() }
    }
}

impl Environment for SimEnvironment<'_> {
    fn state_count(&self) -> usize {
        self.model.state_count()
    }

    fn actions(&self, s: StateId) -> &'static [ActionId] {
        self.model.admissible(s)
    }

    fn is_terminal(&self, s: StateId) -> bool {
        s == self.model.absorbing()
    }

    fn gamma(&self) -> f64 {
        self.model.gamma()
    }

    fn step(&mut self, s: StateId, a: ActionId) -> TrajectoryEvent {
        step(self.model, s, a, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;
    use crate::solver::policy_evaluation;
    use crate::test_support::{desk_doc, honeynet_doc, ks_critical_1pct, ks_statistic, self_loop_doc, two_state_doc};

    #[test]
    fn same_seed_same_events() {
        let model = load_scenario(&desk_doc()).unwrap();
        let policy = Policy::new(&model, vec![ActionId::Passive, ActionId::Attract, ActionId::Eject]).unwrap();
        let a = sample_trajectory(&model, &policy, StateId(1), 200, &mut RngSeed::new(9).rng());
        let b = sample_trajectory(&model, &policy, StateId(1), 200, &mut RngSeed::new(9).rng());
        assert_eq!(a, b);
        let c = sample_trajectory(&model, &policy, StateId(1), 200, &mut RngSeed::new(9).substream(1).rng());
        assert_ne!(a, c);
    }

    #[test]
    fn deterministic_transition_sojourn_mean() {
        let lambda = 0.5;
        let model = load_scenario(&two_state_doc(lambda, 0.1)).unwrap();
        let mut rng = RngSeed::new(1).rng();
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                let ev = step(&model, StateId(0), ActionId::Passive, &mut rng);
                assert_eq!(ev.next_state, StateId(1));
                assert!(ev.sojourn > 0.0);
                ev.sojourn
            })
            .collect();
        let st = SampleStats::from_samples(&xs);
        assert!(st.z_score(1.0 / lambda) < 3.0, "{st:?}");
    }

    #[test]
    fn zero_noise_reports_exact_rate_reward() {
        let model = load_scenario(&self_loop_doc(0.3, 0.1, 0.0, 1.25)).unwrap();
        let mut rng = RngSeed::new(3).rng();
        for _ in 0..100 {
            let ev = step(&model, StateId(0), ActionId::Passive, &mut rng);
            assert_eq!(ev.rate_reward_obs, 1.25);
        }
    }

    #[test]
    fn empirical_transition_frequencies() {
        let model = load_scenario(&desk_doc()).unwrap();
        let mut rng = RngSeed::new(5).rng();
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[step(&model, StateId(0), ActionId::LowInteract, &mut rng).next_state.0] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            let p = model.transition(StateId(0), ActionId::LowInteract, StateId(j));
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * se, "state {j}");
        }
    }

    #[test]
    fn zero_reward_rollout_is_zero() {
        let model = load_scenario(&two_state_doc(0.5, 0.1)).unwrap();
        let policy = Policy::lowest(&model);
        let u = rollout_discounted_utility(&model, &policy, StateId(0), 10, &mut RngSeed::new(0).rng());
        assert_eq!(u, 0.0);
    }

    #[test]
    fn constant_income_rollout_mean() {
        let (gamma, c) = (0.1, 1.5);
        let model = load_scenario(&self_loop_doc(0.4, gamma, 0.0, c)).unwrap();
        let policy = Policy::new(&model, vec![ActionId::Passive, ActionId::Eject]).unwrap();
        let h = tail_horizon(&model, 1e-9);
        let st = estimate_utility(&model, &policy, StateId(0), h, 100_000, RngSeed::new(11));
        assert!(st.z_score(c / gamma) < 3.0, "{st:?}");
    }

    #[test]
    fn desk_rollouts_match_policy_evaluation() {
        let model = load_scenario(&desk_doc()).unwrap();
        let policy = Policy::new(&model, vec![ActionId::HighInteract, ActionId::Attract, ActionId::Eject]).unwrap();
        let v = policy_evaluation(&model, &policy).unwrap();
        let h = tail_horizon(&model, 1e-6);
        let st = estimate_utility(&model, &policy, StateId(1), h, 100_000, RngSeed::new(12));
        assert!(st.z_score(v.get(StateId(1))) < 3.0, "{st:?} vs {}", v.get(StateId(1)));
    }

    #[test]
    fn source_in_targets_hits_at_zero() {
        let model = load_scenario(&desk_doc()).unwrap();
        let policy = Policy::lowest(&model);
        let h = estimate_hitting_times(&model, &policy, StateId(0), &[StateId(0)].into(), 50, 1e3, RngSeed::new(1));
        assert!(h.samples.iter().all(|&t| t == 0.0));
        assert_eq!(h.censored, 0);
    }

    #[test]
    fn exponential_hitting_time_mean() {
        let lambda = 0.7;
        let model = load_scenario(&two_state_doc(lambda, 0.1)).unwrap();
        let policy = Policy::new(
            &model,
            vec![ActionId::LowInteract, ActionId::Eject],
        )
        .unwrap();
        let h = estimate_hitting_times(&model, &policy, StateId(0), &[StateId(1)].into(), 100_000, 1e6, RngSeed::new(2));
        assert!(h.stats.z_score(1.0 / lambda) < 3.0);
    }

    #[test]
    fn honeynet_hitting_times_match_mfpt() {
        use crate::risk::{build_generator, fpt_cdf_at, mfpt};
        let model = load_scenario(&honeynet_doc()).unwrap();
        let policy = crate::solver::solve(&model).unwrap().policy;
        let gen = build_generator(&model, &policy).unwrap();
        let target = model.target().unwrap();
        let targets: BTreeSet<StateId> = [target].into();
        let means = mfpt(&gen, &targets).unwrap();
        for s in model.states() {
            if s == target || s == model.absorbing() {
                continue;
            }
            let h = estimate_hitting_times(&model, &policy, s, &targets, 20_000, 1e6, RngSeed::new(6).substream((s.0 as u64) << 32));
            assert_eq!(h.censored, 0);
            assert!(h.stats.z_score(means.get(s)) < 3.0, "state {s}");
        }
        let h = estimate_hitting_times(&model, &policy, model.normal().unwrap(), &targets, 20_000, 1e6, RngSeed::new(7));
        let cdf = fpt_cdf_at(&gen, model.normal().unwrap(), &targets, &h.samples).unwrap();
        assert!(ks_statistic(&h.samples, &cdf) < ks_critical_1pct(h.n));
        let eff = crate::risk::attraction_efficiency_for(&gen, model.normal().unwrap(), target).unwrap();
        let below: Vec<f64> = h.samples.iter().map(|&t| f64::from(u8::from(t <= eff.threshold))).collect();
        assert!(SampleStats::from_samples(&below).z_score(eff.probability) < 3.0);
    }

    #[test]
    fn substreams_are_order_independent() {
        let model = load_scenario(&desk_doc()).unwrap();
        let policy = Policy::lowest(&model);
        let a = estimate_utility(&model, &policy, StateId(0), 50, 1000, RngSeed::new(4));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_utility(&model, &policy, StateId(0), 50, 1000, RngSeed::new(4)));
        assert_eq!(a, b);
    }
}
