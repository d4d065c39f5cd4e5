//! Policy evaluation: rolling policies through episodes, normalizing their
//! quadratic loads against the day-ahead optimum, comparing policies with
//! a paired rank test, and packaging experiment runs into reports.

pub mod experiments;
pub mod report;
pub mod wilcoxon;
pub mod windows;

pub use experiments::{
    credit_learners, evaluate_baselines, evaluate_greedy, observability_learners, run_experiment,
    EpisodeLoad, ExperimentOutcome, LearnerOutcome, LearnerSpec, PairwiseTest, PolicyEval,
    SplitOutcome,
};
pub use report::write_report;
pub use wilcoxon::{
    wilcoxon_signed_rank, wilcoxon_signed_rank_with, WilcoxonMethod, WilcoxonResult,
};
pub use windows::{increasing_windows, rolling_windows, SplitSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costs::PowerProfile;
use crate::environment::{action_at_index, ActionCounts, ParkState, Repr, Scaling};
use crate::error::{Error, Result};
use crate::qlearn::fqi::greedy_action_from_counts;
use crate::qlearn::QNetwork;
use crate::sessions::{Episode, SlotConfig};

/// An online decision rule: one action per state.
pub trait Policy {
    fn name(&self) -> String;
    fn act(&mut self, state: &ParkState, cfg: &SlotConfig) -> Result<ActionCounts>;
}

/// Charge every connected car every slot (what uncoordinated chargers do).
pub struct ChargeAllPolicy;

impl Policy for ChargeAllPolicy {
    fn name(&self) -> String {
        "bau".into()
    }

    fn act(&mut self, state: &ParkState, cfg: &SlotConfig) -> Result<ActionCounts> {
        Ok(ActionCounts(state.flex_counts(cfg).0))
    }
}

/// Uniform-random action choice, seeded.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    cap: u64,
}

impl RandomPolicy {
    /// A policy whose choices are a deterministic function of (seed,
    /// stream); pass the episode's position as the stream to make whole
    /// evaluations order-independent.
    pub fn new(seed: u64, stream: u64, cap: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, cap }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&mut self, state: &ParkState, cfg: &SlotConfig) -> Result<ActionCounts> {
        let flex = state.flex_counts(cfg);
        let size = flex.action_space_size();
        if size > u128::from(self.cap) {
            return Err(Error::ActionSpaceExceeded {
                t: state.t,
                size,
                cap: self.cap,
            });
        }
        let idx = self.rng.random_range(0..size as u64);
        Ok(action_at_index(&flex, idx))
    }
}

/// The greedy policy of a fitted Q-network.
pub struct GreedyQPolicy<'a> {
    pub label: String,
    pub net: &'a QNetwork,
    pub repr: Repr,
    pub scaling: Scaling,
    pub cap: u64,
}

impl Policy for GreedyQPolicy<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn act(&mut self, state: &ParkState, cfg: &SlotConfig) -> Result<ActionCounts> {
        let flex = state.flex_counts(cfg);
        let counts = match self.repr {
            Repr::Matrix => state.matrix_counts(cfg),
            Repr::Vector => flex.0.clone(),
        };
        greedy_action_from_counts(
            self.net,
            state.t,
            &counts,
            &flex,
            self.repr,
            self.scaling,
            cfg.slots_per_episode,
            cfg.max_stations,
            self.cap,
        )
    }
}

/// Run a policy through one episode and record the per-slot power drawn.
pub fn rollout<P: Policy + ?Sized>(
    policy: &mut P,
    episode: &Episode,
    cfg: &SlotConfig,
) -> Result<PowerProfile> {
    let mut state = ParkState::new(episode, cfg)?;
    let mut power = Vec::with_capacity(cfg.slots_per_episode);
    while !state.is_terminal(cfg) {
        let action = policy.act(&state, cfg)?;
        let (next, drawn) = state.step(&action, cfg)?;
        power.push(f64::from(drawn));
        state = next;
    }
    Ok(PowerProfile {
        episode_id: episode.episode_id,
        power,
    })
}

/// Episode quadratic load relative to the optimum. An idle day (both loads
/// zero) counts as 1; a positive load against a zero optimum is impossible
/// for feasible episodes and is reported as an error.
pub fn normalized_load(load: f64, optimal_load: f64) -> Result<f64> {
    if optimal_load == 0.0 {
        if load == 0.0 {
            return Ok(1.0);
        }
        return Err(Error::Stats(format!(
            "positive load {load} against a zero optimal load"
        )));
    }
    Ok(load / optimal_load)
}

/// Median of a non-empty slice (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::bau_schedule;
    use crate::environment::tests::{tiny_cfg, tiny_episode};
    use crate::oracle::squared_load;
    use crate::oracle::tests::random_episode;

    #[test]
    fn charge_all_rollout_equals_the_bau_schedule() {
        let cfg = SlotConfig::new(2.0, 6, 7, 6, 6.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..100 {
            let episode = random_episode(&mut rng, 6, 6);
            let from_rollout = rollout(&mut ChargeAllPolicy, &episode, &cfg).unwrap();
            let from_schedule = bau_schedule(&episode).profile(episode.episode_id, 6);
            assert_eq!(from_rollout, from_schedule);
        }
    }

    #[test]
    fn bau_rollout_matches_the_worked_example() {
        let profile = rollout(&mut ChargeAllPolicy, &tiny_episode(), &tiny_cfg()).unwrap();
        assert_eq!(profile.power, vec![3.0, 2.0, 0.0]);
        assert_eq!(squared_load(&profile), 13.0);
    }

    #[test]
    fn random_rollouts_fulfill_demand_and_are_seeded() {
        let cfg = tiny_cfg();
        let episode = tiny_episode();
        let total_required: f64 = episode
            .sessions
            .iter()
            .map(|s| s.required_slots as f64)
            .sum();
        let a = rollout(&mut RandomPolicy::new(5, 0, 1000), &episode, &cfg).unwrap();
        let b = rollout(&mut RandomPolicy::new(5, 0, 1000), &episode, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total(), total_required);
        let c = rollout(&mut RandomPolicy::new(6, 0, 1000), &episode, &cfg).unwrap();
        assert_eq!(c.total(), total_required);
    }

    #[test]
    fn greedy_policy_fulfills_demand() {
        let cfg = tiny_cfg();
        let episode = tiny_episode();
        let net = QNetwork::new(crate::qlearn::encoded_width(Repr::Vector, 3), 3);
        let mut policy = GreedyQPolicy {
            label: "rl".into(),
            net: &net,
            repr: Repr::Vector,
            scaling: Scaling::Local,
            cap: 10_000,
        };
        let profile = rollout(&mut policy, &episode, &cfg).unwrap();
        assert_eq!(profile.total(), 5.0);
    }

    #[test]
    fn normalized_load_handles_edge_cases() {
        assert_eq!(normalized_load(13.0, 9.0).unwrap(), 13.0 / 9.0);
        assert_eq!(normalized_load(0.0, 0.0).unwrap(), 1.0);
        assert!(normalized_load(1.0, 0.0).is_err());
        assert_eq!(normalized_load(9.0, 9.0).unwrap(), 1.0);
    }

    #[test]
    fn median_of_even_and_odd_sets() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[5.0]), 5.0);
    }
}
