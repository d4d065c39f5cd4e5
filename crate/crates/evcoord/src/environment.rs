//! The charging park as a discrete-time decision process.
//!
//! State: the slot index plus the multiset of connected cars, each reduced to
//! (slots until departure, charging slots still needed). Cars with equal
//! flexibility (departure minus need) are interchangeable for the
//! coordinator, so actions say how many cars of each flexibility level to
//! charge this slot; within a level the environment charges the most urgent
//! cars first. Zero-flexibility cars are always charged, which makes every
//! valid action safe: no car can leave short of energy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sessions::{Episode, SlotConfig};

/// State representation fed to the Q-function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repr {
    /// Full (departure, need) occupancy grid.
    Matrix,
    /// Occupancy aggregated per flexibility level.
    Vector,
}

/// How action counts are normalized before entering the Q-function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Per level: fraction of that level's cars charged (0/0 reads as 0).
    Local,
    /// Per level: charged count over the fleet size.
    Global,
}

/// One connected car.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectedEv {
    pub ev_id: u32,
    /// Slots until the car leaves; at least 1 while connected.
    pub depart_remaining: usize,
    /// Charging slots still needed; at least 1 while connected.
    pub charge_remaining: usize,
}

impl ConnectedEv {
    /// Slack between departure and need. Never negative under valid actions.
    pub fn flexibility(&self) -> usize {
        debug_assert!(self.depart_remaining >= self.charge_remaining);
        self.depart_remaining - self.charge_remaining
    }
}

/// Number of connected cars per flexibility level (index = levels 0..S_max-1).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlexCounts(pub Vec<u32>);

impl FlexCounts {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Number of distinct actions available: every flexibility level above
    /// zero contributes an independent choice of 0..=count cars.
    pub fn action_space_size(&self) -> u128 {
        self.0[1..].iter().map(|&n| n as u128 + 1).product()
    }
}

/// Cars to charge this slot, per flexibility level. Level 0 is forced: all
/// zero-flexibility cars must charge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionCounts(pub Vec<u32>);

impl ActionCounts {
    pub fn total_charged(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn validate(&self, flex: &FlexCounts) -> Result<()> {
        if self.0.len() != flex.0.len() {
            return Err(Error::Action(format!(
                "action has {} levels, state has {}",
                self.0.len(),
                flex.0.len()
            )));
        }
        if self.0[0] != flex.0[0] {
            return Err(Error::Action(format!(
                "level 0 charges {} cars but all {} zero-flexibility cars must charge",
                self.0[0], flex.0[0]
            )));
        }
        for (d, (&u, &n)) in self.0.iter().zip(&flex.0).enumerate() {
            if u > n {
                return Err(Error::Action(format!(
                    "level {d} charges {u} cars but only {n} are connected"
                )));
            }
        }
        Ok(())
    }
}

/// Action counts normalized for the Q-function input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledAction {
    pub values: Vec<f64>,
}

/// Normalize action counts. Local scaling divides by the level's own count
/// (empty levels read as 0), global scaling by the fleet size.
pub fn scale_action(
    action: &ActionCounts,
    flex: &FlexCounts,
    scaling: Scaling,
    max_stations: usize,
) -> ScaledAction {
    let values = match scaling {
        Scaling::Local => action
            .0
            .iter()
            .zip(&flex.0)
            .map(|(&u, &n)| {
                if n == 0 {
                    0.0
                } else {
                    f64::from(u) / f64::from(n)
                }
            })
            .collect(),
        Scaling::Global => action
            .0
            .iter()
            .map(|&u| f64::from(u) / max_stations as f64)
            .collect(),
    };
    ScaledAction { values }
}

/// Visit every valid action in lexicographic order (level-0 count fixed,
/// later levels vary fastest). The visitor receives a reusable buffer.
/// Errors if the action space exceeds `cap`.
pub fn for_each_action<F: FnMut(&[u32])>(
    flex: &FlexCounts,
    cap: u64,
    t: usize,
    mut visit: F,
) -> Result<()> {
    let size = flex.action_space_size();
    if size > u128::from(cap) {
        return Err(Error::ActionSpaceExceeded { t, size, cap });
    }
    let mut u: Vec<u32> = vec![0; flex.0.len()];
    u[0] = flex.0[0];
    loop {
        visit(&u);
        // Odometer increment over levels 1.., last level fastest.
        let mut d = flex.0.len();
        loop {
            if d == 1 {
                return Ok(());
            }
            d -= 1;
            if u[d] < flex.0[d] {
                u[d] += 1;
                break;
            }
            u[d] = 0;
        }
    }
}

/// All valid actions in lexicographic order.
pub fn enumerate_actions(flex: &FlexCounts, cap: u64, t: usize) -> Result<Vec<ActionCounts>> {
    let mut out = Vec::new();
    for_each_action(flex, cap, t, |u| out.push(ActionCounts(u.to_vec())))?;
    Ok(out)
}

/// The action at position `idx` of the lexicographic enumeration, by
/// mixed-radix decoding (level-0 count fixed, last level varies fastest).
pub fn action_at_index(flex: &FlexCounts, mut idx: u64) -> ActionCounts {
    debug_assert!(u128::from(idx) < flex.action_space_size());
    let mut u = vec![0u32; flex.0.len()];
    u[0] = flex.0[0];
    for d in (1..flex.0.len()).rev() {
        let base = u64::from(flex.0[d]) + 1;
        u[d] = (idx % base) as u32;
        idx /= base;
    }
    ActionCounts(u)
}

/// Occupancy grid: cell (i, j) holds the share of the fleet that departs in
/// i slots and still needs j slots, for i, j in 1..=S_max (stored row-major
/// at `grid[(i-1) * s_max + (j-1)]`). Cells with j > i are unreachable and
/// stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixObservation {
    pub t: usize,
    pub s_max: usize,
    pub grid: Vec<f64>,
}

/// Occupancy per flexibility level: entry d holds the share of the fleet
/// with flexibility d.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorObservation {
    pub t: usize,
    pub bins: Vec<f64>,
}

/// Either representation, as produced by [`ParkState::observe`].
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Matrix(MatrixObservation),
    Vector(VectorObservation),
}

impl Observation {
    pub fn t(&self) -> usize {
        match self {
            Observation::Matrix(m) => m.t,
            Observation::Vector(v) => v.t,
        }
    }
}

/// Full simulator state: slot index, connected cars, and the episode's
/// not-yet-arrived sessions (shared, immutable).
#[derive(Debug, Clone)]
pub struct ParkState {
    pub t: usize,
    pub connected: Vec<ConnectedEv>,
    pending: Arc<Vec<Vec<ConnectedEv>>>,
    pub episode_id: i64,
}

impl ParkState {
    /// Initial state at slot 0, with slot-0 arrivals already connected.
    pub fn new(episode: &Episode, cfg: &SlotConfig) -> Result<Self> {
        episode.validate(cfg)?;
        let mut pending: Vec<Vec<ConnectedEv>> = vec![Vec::new(); cfg.slots_per_episode];
        for (ev_id, s) in episode.sessions.iter().enumerate() {
            pending[s.arrival_slot].push(ConnectedEv {
                ev_id: ev_id as u32,
                depart_remaining: s.depart_slot - s.arrival_slot,
                charge_remaining: s.required_slots,
            });
        }
        let mut state = Self {
            t: 0,
            connected: Vec::new(),
            pending: Arc::new(pending),
            episode_id: episode.episode_id,
        };
        state.admit(0);
        Ok(state)
    }

    fn admit(&mut self, slot: usize) {
        if let Some(arrivals) = self.pending.get(slot) {
            self.connected.extend_from_slice(arrivals);
        }
    }

    /// Episode over: the horizon is exhausted and every car has left.
    pub fn is_terminal(&self, cfg: &SlotConfig) -> bool {
        let done = self.t >= cfg.slots_per_episode;
        debug_assert!(!done || self.connected.is_empty());
        done
    }

    /// Connected cars per flexibility level.
    pub fn flex_counts(&self, cfg: &SlotConfig) -> FlexCounts {
        let mut counts = vec![0u32; cfg.slots_per_episode];
        for ev in &self.connected {
            counts[ev.flexibility()] += 1;
        }
        FlexCounts(counts)
    }

    /// Raw occupancy grid counts, row-major (see [`MatrixObservation`]).
    pub fn matrix_counts(&self, cfg: &SlotConfig) -> Vec<u32> {
        let s = cfg.slots_per_episode;
        let mut grid = vec![0u32; s * s];
        for ev in &self.connected {
            grid[(ev.depart_remaining - 1) * s + (ev.charge_remaining - 1)] += 1;
        }
        grid
    }

    pub fn observe_matrix(&self, cfg: &SlotConfig) -> MatrixObservation {
        let n = cfg.max_stations as f64;
        MatrixObservation {
            t: self.t,
            s_max: cfg.slots_per_episode,
            grid: self
                .matrix_counts(cfg)
                .into_iter()
                .map(|c| f64::from(c) / n)
                .collect(),
        }
    }

    pub fn observe_vector(&self, cfg: &SlotConfig) -> VectorObservation {
        let n = cfg.max_stations as f64;
        VectorObservation {
            t: self.t,
            bins: self
                .flex_counts(cfg)
                .0
                .into_iter()
                .map(|c| f64::from(c) / n)
                .collect(),
        }
    }

    pub fn observe(&self, repr: Repr, cfg: &SlotConfig) -> Observation {
        match repr {
            Repr::Matrix => Observation::Matrix(self.observe_matrix(cfg)),
            Repr::Vector => Observation::Vector(self.observe_vector(cfg)),
        }
    }

    /// Advance one slot. Within each flexibility level the requested number
    /// of cars is charged most-urgent-first (earliest departure, then car
    /// id). Charged cars consume one needed slot; all connected cars consume
    /// one departure slot; finished and departing cars leave; the next
    /// slot's arrivals are admitted. Returns the new state and the number of
    /// cars charged (the slot's power draw in charger units).
    pub fn step(&self, action: &ActionCounts, cfg: &SlotConfig) -> Result<(ParkState, u32)> {
        if self.is_terminal(cfg) {
            return Err(Error::Action(format!(
                "episode {} is already over",
                self.episode_id
            )));
        }
        let flex = self.flex_counts(cfg);
        action.validate(&flex)?;

        // Most urgent cars first within each level.
        let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); cfg.slots_per_episode];
        for (idx, ev) in self.connected.iter().enumerate() {
            by_level[ev.flexibility()].push(idx);
        }
        let mut charged = vec![false; self.connected.len()];
        for (d, members) in by_level.iter_mut().enumerate() {
            members.sort_by_key(|&idx| {
                (
                    self.connected[idx].depart_remaining,
                    self.connected[idx].ev_id,
                )
            });
            for &idx in members.iter().take(action.0[d] as usize) {
                charged[idx] = true;
            }
        }

        let power = action.total_charged();
        let mut next = ParkState {
            t: self.t + 1,
            connected: Vec::with_capacity(self.connected.len()),
            pending: Arc::clone(&self.pending),
            episode_id: self.episode_id,
        };
        for (idx, ev) in self.connected.iter().enumerate() {
            let charge_remaining = ev.charge_remaining - usize::from(charged[idx]);
            let depart_remaining = ev.depart_remaining - 1;
            if charge_remaining == 0 || depart_remaining == 0 {
                continue;
            }
            next.connected.push(ConnectedEv {
                ev_id: ev.ev_id,
                depart_remaining,
                charge_remaining,
            });
        }
        next.admit(next.t);
        Ok((next, power))
    }
}
