//! Uncoordinated reference schedules.
//!
//! Business-as-usual charges every car immediately on arrival until its
//! demand is met. The spread-out heuristic distributes each car's charging
//! slots as evenly as possible over its own connection window, without any
//! fleet-level coordination.

use crate::oracle::Schedule;
use crate::sessions::Episode;

/// Charge from arrival until done: session `(arrival, depart, required)`
/// charges slots `arrival..arrival + required`.
pub fn bau_schedule(episode: &Episode) -> Schedule {
    Schedule {
        charges: episode
            .sessions
            .iter()
            .map(|s| (s.arrival_slot..s.arrival_slot + s.required_slots).collect())
            .collect(),
    }
}

/// Spread each session's `c` charging slots evenly over its `d`-slot window:
/// window offset `j` charges exactly when `floor((j+1)c/d) - floor(jc/d) = 1`,
/// which delivers `c` slots at an even cadence for any `c <= d`.
pub fn heuristic_schedule(episode: &Episode) -> Schedule {
    Schedule {
        charges: episode
            .sessions
            .iter()
            .map(|s| {
                let c = s.required_slots;
                let d = s.window();
                (0..d)
                    .filter(|&j| ((j + 1) * c / d) - (j * c / d) == 1)
                    .map(|j| s.arrival_slot + j)
                    .collect()
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{brute_force_optimal, squared_load};
    use crate::sessions::{Episode, SessionRecord, SlotConfig};
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

    #[test]
    fn bau_matches_the_worked_example() {
        let cfg = SlotConfig::new(2.0, 3, 7, 5, 6.6).unwrap();
        let ep = episode(vec![(0, 3, 2), (0, 2, 1), (0, 2, 2)]);
        let schedule = bau_schedule(&ep);
        schedule.validate(&ep, &cfg).unwrap();
        let profile = schedule.profile(0, 3);
        assert_eq!(profile.power, vec![3.0, 2.0, 0.0]);
        assert_eq!(squared_load(&profile), 13.0);
    }

    #[test]
    fn heuristic_spreads_two_of_three() {
        // c=2, d=3: charge at window offsets 1 and 2.
        let ep = episode(vec![(0, 3, 2)]);
        assert_eq!(heuristic_schedule(&ep).charges, vec![vec![1, 2]]);
    }

    #[test]
    fn heuristic_places_a_single_slot_late() {
        // c=1, d=4: the only charge lands at offset 3.
        let ep = episode(vec![(2, 6, 1)]);
        assert_eq!(heuristic_schedule(&ep).charges, vec![vec![5]]);
    }

    #[test]
    fn heuristic_with_no_slack_charges_everywhere() {
        let ep = episode(vec![(1, 4, 3)]);
        assert_eq!(heuristic_schedule(&ep).charges, vec![vec![1, 2, 3]]);
    }

    #[test]
    fn heuristic_alternates_for_half_demand() {
        // c=3, d=6: offsets with a floor step are 1, 3, 5.
        let ep = episode(vec![(0, 6, 3)]);
        assert_eq!(heuristic_schedule(&ep).charges, vec![vec![1, 3, 5]]);
    }

    #[test]
    fn both_baselines_always_fulfill_demand() {
        let cfg = SlotConfig::new(2.0, 12, 7, 30, 6.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let ep = crate::oracle::tests::random_episode(&mut rng, 8, 12);
            for schedule in [bau_schedule(&ep), heuristic_schedule(&ep)] {
                schedule.validate(&ep, &cfg).unwrap();
                let profile = schedule.profile(0, 12);
                assert_eq!(profile.total() as usize, ep.total_required());
            }
        }
    }

    #[test]
    fn baselines_never_beat_the_optimum() {
        let cfg = SlotConfig::new(2.0, 5, 7, 8, 6.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let ep = crate::oracle::tests::random_episode(&mut rng, 5, 5);
            let best = brute_force_optimal(&ep, &cfg, 1_000_000).unwrap();
            for schedule in [bau_schedule(&ep), heuristic_schedule(&ep)] {
                let load = squared_load(&schedule.profile(0, 5));
                assert!(load >= best, "baseline beat the optimum on {ep:?}");
            }
        }
    }
}
