//! Cost signals for the coordinator.
//!
//! The immediate power draw of a slot is the number of cars charged (all
//! chargers are identical, so counts are the natural power unit). On top of
//! that sit two signal families: the quadratic cost (squared power, whose
//! episode sum the day-ahead oracle minimizes) and linear deviation costs
//! that penalize distance from a statistic of recent optimal day profiles.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::environment::ActionCounts;
use crate::error::{Error, Result};

/// Power drawn in one slot per episode slot, in charger units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub episode_id: i64,
    pub power: Vec<f64>,
}

impl PowerProfile {
    /// Total energy in charger-slot units.
    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }
}

/// Power drawn when an action charges its cars: one charger unit per car.
pub fn power_drawn(action: &ActionCounts) -> f64 {
    f64::from(action.total_charged())
}

/// Squared power: high slots cost disproportionately, so minimizing the
/// episode sum flattens the profile.
pub fn cost_quadratic(power: f64) -> f64 {
    power * power
}

/// Absolute deviation from a reference power level.
pub fn cost_linear(power: f64, reference: f64) -> f64 {
    (power - reference).abs()
}

/// Statistic condensing a set of reference powers into one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileStat {
    Average,
    Median,
}

/// Which immediate cost a learner is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostKind {
    /// Squared slot power.
    Quadratic,
    /// Deviation from the average of the preceding `window` optimal profiles.
    LinearAverage { window: usize },
    /// Deviation from their median.
    LinearMedian { window: usize },
}

impl CostKind {
    /// Reference statistic and window for the linear kinds.
    pub fn reference(&self) -> Option<(ProfileStat, usize)> {
        match *self {
            CostKind::Quadratic => None,
            CostKind::LinearAverage { window } => Some((ProfileStat::Average, window)),
            CostKind::LinearMedian { window } => Some((ProfileStat::Median, window)),
        }
    }

    /// Short name safe for file and directory paths.
    pub fn label(&self) -> String {
        match *self {
            CostKind::Quadratic => "quadratic".into(),
            CostKind::LinearAverage { window } => format!("linear_average_w{window}"),
            CostKind::LinearMedian { window } => format!("linear_median_w{window}"),
        }
    }
}

/// The reference powers for one slot: the optimal-profile values at slot `t`
/// of up to `window` episodes preceding episode `e_index` in a fixed episode
/// ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalProfileSet {
    pub t: usize,
    pub e_index: usize,
    pub window: usize,
    pub values: Vec<f64>,
}

impl OptimalProfileSet {
    pub fn stat(&self, stat: ProfileStat) -> f64 {
        profile_stat(&self.values, stat)
    }
}

/// Average or median of a non-empty set; the median of an even-sized set is
/// the mean of the two middle values.
pub fn profile_stat(values: &[f64], stat: ProfileStat) -> f64 {
    debug_assert!(!values.is_empty());
    match stat {
        ProfileStat::Average => values.iter().sum::<f64>() / values.len() as f64,
        ProfileStat::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite powers"));
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            }
        }
    }
}

/// Reference set for slot `t` of the episode at position `e_index` within
/// `profiles` (an ordered run of optimal day profiles). Uses the up-to-
/// `window` immediately preceding profiles; errors if there are none, and
/// logs when the history is shorter than requested.
pub fn build_profile_set(
    profiles: &[PowerProfile],
    e_index: usize,
    t: usize,
    window: usize,
) -> Result<OptimalProfileSet> {
    if window == 0 {
        return Err(Error::Config("profile window must be positive".into()));
    }
    if e_index == 0 {
        return Err(Error::Experiment(format!(
            "episode at position 0 has no preceding optimal profiles (window {window})"
        )));
    }
    let from = e_index.saturating_sub(window);
    let values: Vec<f64> = profiles[from..e_index]
        .iter()
        .map(|p| {
            p.power.get(t).copied().ok_or_else(|| {
                Error::Experiment(format!(
                    "profile for episode {} has no slot {t}",
                    p.episode_id
                ))
            })
        })
        .collect::<Result<_>>()?;
    if values.len() < window {
        log::warn!(
            "episode position {e_index}: only {} preceding profiles for a window of {window}",
            values.len()
        );
    }
    Ok(OptimalProfileSet {
        t,
        e_index,
        window,
        values,
    })
}

/// Per-slot reference levels for one episode: `stat` of the preceding
/// optimal profiles at every slot.
pub fn linear_targets(
    profiles: &[PowerProfile],
    e_index: usize,
    window: usize,
    stat: ProfileStat,
    slots: usize,
) -> Result<Vec<f64>> {
    (0..slots)
        .map(|t| Ok(build_profile_set(profiles, e_index, t, window)?.stat(stat)))
        .collect()
}

/// Write profiles as JSON lines: `{"episode_id":..,"power":[..]}`.
pub fn write_profiles_jsonl<W: Write>(mut writer: W, profiles: &[PowerProfile]) -> Result<()> {
    for p in profiles {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_profiles_jsonl<R: BufRead>(reader: R) -> Result<Vec<PowerProfile>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PowerProfile = serde_json::from_str(&line)
            .map_err(|e| Error::Experiment(format!("profile line {}: {e}", i + 1)))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: i64, power: &[f64]) -> PowerProfile {
        PowerProfile {
            episode_id: id,
            power: power.to_vec(),
        }
    }

    #[test]
    fn power_is_the_number_of_cars_charged() {
        assert_eq!(power_drawn(&ActionCounts(vec![2, 1, 0])), 3.0);
        assert_eq!(power_drawn(&ActionCounts(vec![0, 0, 0])), 0.0);
    }

    #[test]
    fn quadratic_cost_squares_power() {
        assert_eq!(cost_quadratic(3.0), 9.0);
        assert_eq!(cost_quadratic(0.0), 0.0);
    }

    #[test]
    fn linear_cost_is_absolute_deviation() {
        assert_eq!(cost_linear(3.0, 2.5), 0.5);
        assert_eq!(cost_linear(1.0, 2.5), 1.5);
        assert_eq!(cost_linear(2.5, 2.5), 0.0);
    }

    #[test]
    fn median_of_even_sets_averages_the_middle_pair() {
        assert_eq!(
            profile_stat(&[1.0, 2.0, 3.0, 4.0], ProfileStat::Median),
            2.5
        );
        assert_eq!(profile_stat(&[4.0, 1.0, 3.0], ProfileStat::Median), 3.0);
        assert_eq!(
            profile_stat(&[1.0, 2.0, 4.0], ProfileStat::Average),
            7.0 / 3.0
        );
    }

    #[test]
    fn profile_set_takes_the_preceding_window() {
        let profiles: Vec<PowerProfile> = (0..6)
            .map(|e| profile(e, &[e as f64, 10.0 + e as f64]))
            .collect();
        let set = build_profile_set(&profiles, 5, 1, 3).unwrap();
        assert_eq!(set.values, vec![12.0, 13.0, 14.0]);
        // Shorter history than the window: keeps what exists.
        let set = build_profile_set(&profiles, 2, 0, 10).unwrap();
        assert_eq!(set.values, vec![0.0, 1.0]);
        // No history at all is an error.
        assert!(build_profile_set(&profiles, 0, 0, 10).is_err());
    }

    #[test]
    fn linear_targets_follow_the_statistic() {
        let profiles = vec![
            profile(0, &[1.0, 4.0]),
            profile(1, &[2.0, 2.0]),
            profile(2, &[9.0, 9.0]),
        ];
        let avg = linear_targets(&profiles, 2, 2, ProfileStat::Average, 2).unwrap();
        assert_eq!(avg, vec![1.5, 3.0]);
        let med = linear_targets(&profiles, 2, 2, ProfileStat::Median, 2).unwrap();
        assert_eq!(med, vec![1.5, 3.0]);
    }

    #[test]
    fn profiles_round_trip_as_jsonl() {
        let ps = vec![profile(3, &[1.0, 0.0, 2.5])];
        let mut buf = Vec::new();
        write_profiles_jsonl(&mut buf, &ps).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"episode_id\":3,\"power\":[1.0,0.0,2.5]}\n"
        );
        assert_eq!(read_profiles_jsonl(&buf[..]).unwrap(), ps);
    }
}
