//! Day-ahead oracle: given every session of an episode up front, schedule
//! each car's charging slots inside its connection window so that the sum of
//! squared slot loads is minimal.
//!
//! The problem is an assignment with a separable convex objective: session
//! demands flow to slots, at most one unit per (session, slot), and the k-th
//! unit landing in a slot costs `2k - 1` (the increment of `load^2`). That
//! makes successive shortest-path min-cost flow exact: each unit of demand is
//! routed along the cheapest residual path, which also captures the chain
//! re-assignments a plain greedy would miss. A brute-force enumerator over
//! all feasible schedules double-checks the solver in tests.

use rayon::prelude::*;

use crate::costs::PowerProfile;
use crate::error::{Error, Result};
use crate::sessions::{Episode, SlotConfig};

/// A charging plan: for every session (in episode order) the sorted slots in
/// which it charges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub charges: Vec<Vec<usize>>,
}

impl Schedule {
    /// Slot loads induced by this plan.
    pub fn profile(&self, episode_id: i64, slots: usize) -> PowerProfile {
        let mut power = vec![0.0; slots];
        for session in &self.charges {
            for &slot in session {
                power[slot] += 1.0;
            }
        }
        PowerProfile { episode_id, power }
    }

    /// Check the plan against its episode: right number of slots per
    /// session, all inside the connection window, no slot used twice.
    pub fn validate(&self, episode: &Episode, cfg: &SlotConfig) -> Result<()> {
        if self.charges.len() != episode.sessions.len() {
            return Err(Error::Infeasible(format!(
                "schedule covers {} sessions, episode has {}",
                self.charges.len(),
                episode.sessions.len()
            )));
        }
        for (slots, session) in self.charges.iter().zip(&episode.sessions) {
            if slots.len() != session.required_slots {
                return Err(Error::Infeasible(format!(
                    "session at {} gets {} charging slots, needs {}",
                    session.station_id,
                    slots.len(),
                    session.required_slots
                )));
            }
            for w in slots.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Infeasible(format!(
                        "session at {} charges slot {} twice or out of order",
                        session.station_id, w[1]
                    )));
                }
            }
            if slots
                .iter()
                .any(|&s| s < session.arrival_slot || s >= session.depart_slot)
            {
                return Err(Error::Infeasible(format!(
                    "session at {} charges outside its window",
                    session.station_id
                )));
            }
            let _ = cfg;
        }
        Ok(())
    }
}

/// Sum of squared slot loads, the objective both solvers minimize.
pub fn squared_load(profile: &PowerProfile) -> f64 {
    profile.power.iter().map(|p| p * p).sum()
}

// ---------------------------------------------------------------------------
// Min-cost-flow solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: i64,
    cost: i64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: i64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.adj[from].push(id);
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[to].push(id + 1);
        id
    }

    /// Bellman-Ford over the residual graph with a fixed edge order, so the
    /// chosen augmenting path (and hence the final schedule) is
    /// deterministic. Returns per-node predecessor edges into a shortest
    /// path tree rooted at `source`, or None where unreachable.
    fn shortest_paths(&self, source: usize) -> (Vec<i64>, Vec<usize>) {
        const UNREACHED: i64 = i64::MAX / 4;
        let n = self.adj.len();
        let mut dist = vec![UNREACHED; n];
        let mut parent_edge = vec![usize::MAX; n];
        dist[source] = 0;
        for _ in 0..n {
            let mut changed = false;
            for from in 0..n {
                if dist[from] >= UNREACHED {
                    continue;
                }
                for &eid in &self.adj[from] {
                    let e = &self.edges[eid];
                    if e.cap > 0 && dist[from] + e.cost < dist[e.to] {
                        dist[e.to] = dist[from] + e.cost;
                        parent_edge[e.to] = eid;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        (dist, parent_edge)
    }

    /// Push one unit along the predecessor path into `to`.
    fn augment_unit(&mut self, source: usize, to: usize, parent_edge: &[usize]) {
        let mut node = to;
        while node != source {
            let eid = parent_edge[node];
            self.edges[eid].cap -= 1;
            self.edges[eid ^ 1].cap += 1;
            node = self.edges[eid ^ 1].to;
        }
    }
}

/// Exact minimum of the squared-load objective, with the schedule that
/// attains it. Deterministic: equal-cost alternatives resolve by fixed node
/// and edge order (sessions in episode order, slots ascending).
pub fn solve_optimal(episode: &Episode, cfg: &SlotConfig) -> Result<(Schedule, PowerProfile)> {
    episode.validate(cfg)?;
    let n_sessions = episode.sessions.len();
    let slots = cfg.slots_per_episode;
    let source = 0;
    let session_node = |i: usize| 1 + i;
    let slot_node = |s: usize| 1 + n_sessions + s;
    let sink = 1 + n_sessions + slots;

    let mut graph = FlowGraph::new(sink + 1);
    let mut session_edges: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n_sessions);
    for (i, s) in episode.sessions.iter().enumerate() {
        graph.add_edge(source, session_node(i), s.required_slots as i64, 0);
        let mut edges = Vec::with_capacity(s.window());
        for slot in s.arrival_slot..s.depart_slot {
            edges.push((graph.add_edge(session_node(i), slot_node(slot), 1, 0), slot));
        }
        session_edges.push(edges);
    }
    // The k-th unit in a slot raises load^2 by 2k - 1: one unit arc per step.
    for slot in 0..slots {
        for k in 1..=n_sessions as i64 {
            graph.add_edge(slot_node(slot), sink, 1, 2 * k - 1);
        }
    }

    let units: usize = episode.total_required();
    for _ in 0..units {
        let (dist, parent_edge) = graph.shortest_paths(source);
        if parent_edge[sink] == usize::MAX {
            return Err(Error::Infeasible(format!(
                "episode {}: demand cannot be scheduled",
                episode.episode_id
            )));
        }
        debug_assert!(dist[sink] >= 0);
        graph.augment_unit(source, sink, &parent_edge);
    }

    let charges: Vec<Vec<usize>> = session_edges
        .iter()
        .map(|edges| {
            let mut slots: Vec<usize> = edges
                .iter()
                .filter(|&&(eid, _)| graph.edges[eid].cap == 0)
                .map(|&(_, slot)| slot)
                .collect();
            slots.sort_unstable();
            slots
        })
        .collect();
    let schedule = Schedule { charges };
    debug_assert!(schedule.validate(episode, cfg).is_ok());
    let profile = schedule.profile(episode.episode_id, slots);
    Ok((schedule, profile))
}

/// Optimal profiles for a batch of episodes, in input order.
pub fn optimal_profiles(episodes: &[Episode], cfg: &SlotConfig) -> Result<Vec<PowerProfile>> {
    episodes
        .par_iter()
        .map(|ep| solve_optimal(ep, cfg).map(|(_, profile)| profile))
        .collect()
}

// ---------------------------------------------------------------------------
// Brute force
// ---------------------------------------------------------------------------

/// Exact minimum squared load by enumerating every feasible schedule.
/// Errors when the search space exceeds `guard` combinations.
pub fn brute_force_optimal(episode: &Episode, cfg: &SlotConfig, guard: u64) -> Result<f64> {
    for s in &episode.sessions {
        s.validate(cfg)?;
    }
    let combos: Vec<Vec<Vec<usize>>> = episode
        .sessions
        .iter()
        .map(|s| {
            let window: Vec<usize> = (s.arrival_slot..s.depart_slot).collect();
            combinations(&window, s.required_slots)
        })
        .collect();
    let total: u128 = combos.iter().map(|c| c.len() as u128).product();
    if total > u128::from(guard) {
        return Err(Error::Infeasible(format!(
            "brute force would enumerate {total} schedules (guard {guard})"
        )));
    }
    let mut loads = vec![0i64; cfg.slots_per_episode];
    let mut best = i64::MAX;
    fn dfs(combos: &[Vec<Vec<usize>>], loads: &mut [i64], best: &mut i64) {
        match combos.split_first() {
            None => {
                let value: i64 = loads.iter().map(|&l| l * l).sum();
                *best = (*best).min(value);
            }
            Some((first, rest)) => {
                for choice in first {
                    for &slot in choice {
                        loads[slot] += 1;
                    }
                    dfs(rest, loads, best);
                    for &slot in choice {
                        loads[slot] -= 1;
                    }
                }
            }
        }
    }
    dfs(&combos, &mut loads, &mut best);
    Ok(best as f64)
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k > items.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(
        items: &[usize],
        k: usize,
        start: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        let needed = k - current.len();
        for i in start..=items.len().saturating_sub(needed) {
            current.push(items[i]);
            rec(items, k, i + 1, current, out);
            current.pop();
        }
    }
    rec(items, k, 0, &mut current, &mut out);
    out
}

/// True if moving a single charging unit of any session to another feasible
/// slot lowers the squared load. An optimal schedule never admits such a
/// move (the converse needs chains, which the solver handles).
pub fn single_move_improves(schedule: &Schedule, episode: &Episode, cfg: &SlotConfig) -> bool {
    let profile = schedule.profile(episode.episode_id, cfg.slots_per_episode);
    let loads = &profile.power;
    for (slots, session) in schedule.charges.iter().zip(&episode.sessions) {
        for &from in slots {
            for to in session.arrival_slot..session.depart_slot {
                if slots.contains(&to) {
                    continue;
                }
                // Removing a unit from `from` saves 2*load-1; adding one to
                // `to` costs 2*load+1.
                if 2.0 * loads[from] - 1.0 > 2.0 * loads[to] + 1.0 {
                    return true;
                }
            }
        }
    }
    false
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sessions::SessionRecord;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn episode(sessions: Vec<(usize, usize, usize)>) -> Episode {
        Episode {
            episode_id: 0,
            is_weekday: true,
            sessions: sessions
                .into_iter()
                .enumerate()
                .map(|(i, (arrival, depart, required))| SessionRecord {
                    station_id: format!("S{i}"),
                    arrival_slot: arrival,
                    depart_slot: depart,
                    required_slots: required,
                })
                .collect(),
        }
    }

    /// Random feasible episode for cross-checking the two solvers.
    pub(crate) fn random_episode(
        rng: &mut ChaCha8Rng,
        max_sessions: usize,
        s_max: usize,
    ) -> Episode {
        let n = rng.random_range(0..=max_sessions);
        episode(
            (0..n)
                .map(|_| {
                    let arrival = rng.random_range(0..s_max);
                    let depart = rng.random_range(arrival + 1..=s_max);
                    let required = rng.random_range(1..=depart - arrival);
                    (arrival, depart, required)
                })
                .collect(),
        )
    }

    #[test]
    fn brute_force_handles_forced_schedules() {
        // window == required for both sessions: only one schedule exists.
        let cfg = SlotConfig::new(2.0, 3, 7, 5, 6.6).unwrap();
        let ep = episode(vec![(0, 2, 2), (1, 3, 2)]);
        // loads (1, 2, 1) -> 1 + 4 + 1
        assert_eq!(brute_force_optimal(&ep, &cfg, 1000).unwrap(), 6.0);
    }

    #[test]
    fn brute_force_finds_the_worked_example_optimum() {
        let cfg = SlotConfig::new(2.0, 3, 7, 5, 6.6).unwrap();
        let ep = episode(vec![(0, 3, 2), (0, 2, 1), (0, 2, 2)]);
        assert_eq!(brute_force_optimal(&ep, &cfg, 1000).unwrap(), 9.0);
    }

    #[test]
    fn brute_force_respects_the_guard() {
        let cfg = SlotConfig::desk_default();
        let ep = episode(vec![(0, 12, 6); 8]);
        assert!(brute_force_optimal(&ep, &cfg, 1000).is_err());
    }

    #[test]
    fn solver_matches_the_worked_example() {
        let cfg = SlotConfig::new(2.0, 3, 7, 5, 6.6).unwrap();
        let ep = episode(vec![(0, 3, 2), (0, 2, 1), (0, 2, 2)]);
        let (schedule, profile) = solve_optimal(&ep, &cfg).unwrap();
        schedule.validate(&ep, &cfg).unwrap();
        assert_eq!(squared_load(&profile), 9.0);
        let mut loads = profile.power.clone();
        loads.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(loads, vec![2.0, 2.0, 1.0]);
        assert_eq!(profile.total(), 5.0);
    }

    #[test]
    fn solver_agrees_with_brute_force_on_random_instances() {
        let cfg = SlotConfig::new(2.0, 5, 7, 8, 6.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let ep = random_episode(&mut rng, 5, 5);
            let (schedule, profile) = solve_optimal(&ep, &cfg).unwrap();
            schedule.validate(&ep, &cfg).unwrap();
            let exact = brute_force_optimal(&ep, &cfg, 1_000_000).unwrap();
            assert_eq!(
                squared_load(&profile),
                exact,
                "solver {} != brute force {exact} on {ep:?}",
                squared_load(&profile)
            );
        }
    }

    #[test]
    fn solver_resists_single_unit_improvements() {
        let cfg = SlotConfig::new(2.0, 6, 7, 8, 6.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let ep = random_episode(&mut rng, 6, 6);
            let (schedule, _) = solve_optimal(&ep, &cfg).unwrap();
            assert!(!single_move_improves(&schedule, &ep, &cfg));
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let cfg = SlotConfig::new(2.0, 6, 7, 8, 6.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ep = random_episode(&mut rng, 6, 6);
            let a = solve_optimal(&ep, &cfg).unwrap();
            let b = solve_optimal(&ep, &cfg).unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn solver_conserves_demand() {
        let cfg = SlotConfig::new(2.0, 6, 7, 8, 6.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let ep = random_episode(&mut rng, 6, 6);
            let (_, profile) = solve_optimal(&ep, &cfg).unwrap();
            assert_eq!(profile.total() as usize, ep.total_required());
        }
    }

    #[test]
    fn empty_episode_solves_to_zero() {
        let cfg = SlotConfig::desk_default();
        let ep = episode(vec![]);
        let (schedule, profile) = solve_optimal(&ep, &cfg).unwrap();
        assert!(schedule.charges.is_empty());
        assert_eq!(squared_load(&profile), 0.0);
        assert_eq!(brute_force_optimal(&ep, &cfg, 10).unwrap(), 0.0);
    }

    #[test]
    fn chain_reassignments_are_found() {
        // One car can only use slot 0 or 1, the other only slot 1 or 2, and
        // two fixed cars sit in slot 0. Greedy placement of the first car
        // into slot 1 forces the second into slot 1 too unless the solver
        // re-routes through the chain.
        let cfg = SlotConfig::new(2.0, 3, 7, 8, 6.6).unwrap();
        let ep = episode(vec![(0, 1, 1), (0, 1, 1), (0, 2, 1), (1, 3, 1)]);
        let (_, profile) = solve_optimal(&ep, &cfg).unwrap();
        assert_eq!(squared_load(&profile), 4.0 + 1.0 + 1.0);
        assert_eq!(
            brute_force_optimal(&ep, &cfg, 1000).unwrap(),
            squared_load(&profile)
        );
    }
}
