//! Charging-session data: slot discretization, CSV ingestion, synthetic
//! generation, and the JSONL episode format shared by the CLI tools.
//!
//! An episode is one operating day, starting at a fixed wall-clock hour and
//! split into `slots_per_episode` equal slots. Sessions are reduced to whole
//! slots: arrivals round down (the car is there for the remainder of the
//! slot), departures round up (it may leave mid-slot), and the energy demand
//! becomes a whole number of charging slots at the configured charger power.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use chrono::{NaiveDateTime, Timelike};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot grid and fleet-size parameters shared by every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotConfig {
    /// Length of one slot in hours.
    pub slot_hours: f64,
    /// Number of slots in one episode (the decision horizon).
    pub slots_per_episode: usize,
    /// Wall-clock hour at which an episode starts (0..24).
    pub episode_start_hour: u32,
    /// Maximum number of simultaneously connected cars (charging points).
    pub max_stations: usize,
    /// Charger power in kW, used to convert kWh demands into charging slots.
    pub charger_kw: f64,
}

impl SlotConfig {
    pub fn new(
        slot_hours: f64,
        slots_per_episode: usize,
        episode_start_hour: u32,
        max_stations: usize,
        charger_kw: f64,
    ) -> Result<Self> {
        let cfg = Self {
            slot_hours,
            slots_per_episode,
            episode_start_hour,
            max_stations,
            charger_kw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 2-hour slots over a full day starting at 07:00, ten charging points,
    /// 6.6 kW chargers.
    pub fn desk_default() -> Self {
        Self {
            slot_hours: 2.0,
            slots_per_episode: 12,
            episode_start_hour: 7,
            max_stations: 10,
            charger_kw: 6.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_hours.is_nan() || self.slot_hours <= 0.0 {
            return Err(Error::Config("slot_hours must be positive".into()));
        }
        if self.slots_per_episode == 0 {
            return Err(Error::Config("slots_per_episode must be positive".into()));
        }
        if self.episode_start_hour >= 24 {
            return Err(Error::Config("episode_start_hour must be in 0..24".into()));
        }
        if self.max_stations == 0 {
            return Err(Error::Config("max_stations must be positive".into()));
        }
        if self.charger_kw.is_nan() || self.charger_kw <= 0.0 {
            return Err(Error::Config("charger_kw must be positive".into()));
        }
        let horizon = self.slot_hours * self.slots_per_episode as f64;
        if horizon > 24.0 + 1e-9 {
            return Err(Error::Config(format!(
                "episode horizon {horizon} h exceeds one day"
            )));
        }
        Ok(())
    }

    /// Energy delivered by one charging slot, in kWh.
    pub fn kwh_per_slot(&self) -> f64 {
        self.charger_kw * self.slot_hours
    }
}

/// One discretized charging session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    #[serde(rename = "station")]
    pub station_id: String,
    /// First slot the car is connected (it can charge during this slot).
    pub arrival_slot: usize,
    /// Slot index at which the car is gone; it can charge in
    /// `arrival_slot..depart_slot`.
    pub depart_slot: usize,
    /// Whole charging slots needed to cover the session's energy demand.
    pub required_slots: usize,
}

impl SessionRecord {
    /// Connection window length in slots.
    pub fn window(&self) -> usize {
        self.depart_slot - self.arrival_slot
    }

    pub fn validate(&self, cfg: &SlotConfig) -> Result<()> {
        if self.depart_slot <= self.arrival_slot {
            return Err(Error::Session(format!(
                "session at {} departs (slot {}) no later than it arrives (slot {})",
                self.station_id, self.depart_slot, self.arrival_slot
            )));
        }
        if self.depart_slot > cfg.slots_per_episode {
            return Err(Error::Session(format!(
                "session at {} departs at slot {} beyond the {}-slot horizon",
                self.station_id, self.depart_slot, cfg.slots_per_episode
            )));
        }
        if self.required_slots == 0 || self.required_slots > self.window() {
            return Err(Error::Session(format!(
                "session at {} requires {} slots but is connected for {}",
                self.station_id,
                self.required_slots,
                self.window()
            )));
        }
        Ok(())
    }
}

/// One operating day of sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: i64,
    pub is_weekday: bool,
    pub sessions: Vec<SessionRecord>,
}

impl Episode {
    /// Number of connected cars during each slot.
    pub fn concurrency(&self, cfg: &SlotConfig) -> Vec<usize> {
        let mut counts = vec![0usize; cfg.slots_per_episode];
        for s in &self.sessions {
            let end = s.depart_slot.min(cfg.slots_per_episode);
            for c in &mut counts[s.arrival_slot..end] {
                *c += 1;
            }
        }
        counts
    }

    /// Total charging demand over the episode, in slots.
    pub fn total_required(&self) -> usize {
        self.sessions.iter().map(|s| s.required_slots).sum()
    }

    pub fn validate(&self, cfg: &SlotConfig) -> Result<()> {
        for s in &self.sessions {
            s.validate(cfg)?;
        }
        if let Some((slot, &n)) = self
            .concurrency(cfg)
            .iter()
            .enumerate()
            .find(|(_, &n)| n > cfg.max_stations)
        {
            return Err(Error::Session(format!(
                "episode {}: {} cars connected during slot {} but only {} stations",
                self.episode_id, n, slot, cfg.max_stations
            )));
        }
        Ok(())
    }
}

/// Validate a whole dataset, reporting the first violation per episode.
pub fn validate_episodes(episodes: &[Episode], cfg: &SlotConfig) -> Result<()> {
    for ep in episodes {
        ep.validate(cfg)?;
    }
    Ok(())
}

/// Keep weekday episodes, preserving order.
pub fn weekday_filter(episodes: &[Episode]) -> Vec<Episode> {
    episodes.iter().filter(|e| e.is_weekday).cloned().collect()
}

// ---------------------------------------------------------------------------
// Raw transactions and CSV ingestion
// ---------------------------------------------------------------------------

/// An undiscretized charging transaction as found in metering exports.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTransaction {
    pub station_id: String,
    pub arrival: NaiveDateTime,
    pub departure: NaiveDateTime,
    pub energy_kwh: f64,
}

/// Outcome counters for one ingestion run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub malformed_rows: usize,
    pub nonpositive_duration: usize,
    pub zero_required_dropped: usize,
    pub demand_clamped: usize,
    pub departure_clamped: usize,
    pub sessions_kept: usize,
}

/// Parse a transaction CSV with header `station_id,arrival,departure,energy_kwh`
/// (ISO-8601 timestamps). Malformed rows are counted and skipped.
pub fn parse_transactions_csv<R: std::io::Read>(
    reader: R,
    report: &mut IngestReport,
) -> Result<Vec<RawTransaction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    {
        let headers = rdr.headers()?;
        let expect = ["station_id", "arrival", "departure", "energy_kwh"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(Error::Session(format!(
                "unexpected CSV header {got:?}, expected {expect:?}"
            )));
        }
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        report.rows_read += 1;
        let parsed = (|| -> Option<RawTransaction> {
            let station_id = record.get(0)?.trim();
            if station_id.is_empty() {
                return None;
            }
            let arrival = parse_timestamp(record.get(1)?)?;
            let departure = parse_timestamp(record.get(2)?)?;
            let energy_kwh: f64 = record.get(3)?.trim().parse().ok()?;
            if !energy_kwh.is_finite() || energy_kwh < 0.0 {
                return None;
            }
            Some(RawTransaction {
                station_id: station_id.to_string(),
                arrival,
                departure,
                energy_kwh,
            })
        })();
        match parsed {
            Some(tx) => out.push(tx),
            None => report.malformed_rows += 1,
        }
    }
    Ok(out)
}

/// Accept `2015-03-09T08:30:00`, with optional fractional seconds, optional
/// trailing `Z` or `+hh:mm` offset (offsets are applied, result is naive UTC).
fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    None
}

/// Transactions per station, busiest first; ties broken by lexicographic id
/// so the selection is stable.
pub fn select_busiest_stations(transactions: &[RawTransaction], k: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for tx in transactions {
        *counts.entry(tx.station_id.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if ranked.len() < k {
        log::warn!(
            "requested {k} busiest stations but the data only has {}",
            ranked.len()
        );
    }
    ranked
        .into_iter()
        .take(k)
        .map(|(id, _)| id.to_string())
        .collect()
}

/// Map raw transactions onto the slot grid, grouped into episodes.
///
/// A transaction belongs to the episode whose start-hour window contains its
/// arrival. Arrivals round down to slots, departures round up (clamped to the
/// horizon), and the demand becomes `ceil(energy / kwh_per_slot)` clamped to
/// the connection window. Sessions that round to zero demand or to an empty
/// window are dropped and counted in the report.
pub fn discretize(
    transactions: &[RawTransaction],
    cfg: &SlotConfig,
    report: &mut IngestReport,
) -> Result<Vec<Episode>> {
    cfg.validate()?;
    let mut by_episode: BTreeMap<i64, Vec<SessionRecord>> = BTreeMap::new();
    for tx in transactions {
        if tx.departure <= tx.arrival {
            report.nonpositive_duration += 1;
            continue;
        }
        let (episode_id, offset_hours) = episode_of(tx.arrival, cfg.episode_start_hour);
        let arrival_slot = (offset_hours / cfg.slot_hours).floor() as usize;
        let depart_offset =
            offset_hours + (tx.departure - tx.arrival).num_seconds() as f64 / 3600.0;
        let mut depart_slot = (depart_offset / cfg.slot_hours).ceil() as usize;
        if depart_slot > cfg.slots_per_episode {
            depart_slot = cfg.slots_per_episode;
            report.departure_clamped += 1;
        }
        if depart_slot <= arrival_slot {
            // Arrived in the final slot and clamped down to an empty window.
            report.zero_required_dropped += 1;
            continue;
        }
        let window = depart_slot - arrival_slot;
        let required = (tx.energy_kwh / cfg.kwh_per_slot()).ceil() as usize;
        if required == 0 {
            report.zero_required_dropped += 1;
            continue;
        }
        let required_slots = if required > window {
            report.demand_clamped += 1;
            window
        } else {
            required
        };
        report.sessions_kept += 1;
        by_episode
            .entry(episode_id)
            .or_default()
            .push(SessionRecord {
                station_id: tx.station_id.clone(),
                arrival_slot,
                depart_slot,
                required_slots,
            });
    }
    Ok(by_episode
        .into_iter()
        .map(|(episode_id, mut sessions)| {
            sessions.sort_by(|a, b| {
                (a.arrival_slot, &a.station_id, a.depart_slot).cmp(&(
                    b.arrival_slot,
                    &b.station_id,
                    b.depart_slot,
                ))
            });
            Episode {
                episode_id,
                is_weekday: weekday_of_episode(episode_id, cfg.episode_start_hour),
                sessions,
            }
        })
        .collect())
}

/// Episode index (days since the Unix epoch of the shifted clock) and the
/// arrival's offset in hours from that episode's start.
fn episode_of(arrival: NaiveDateTime, start_hour: u32) -> (i64, f64) {
    let shifted = arrival - chrono::Duration::hours(start_hour as i64);
    let secs = shifted.and_utc().timestamp();
    let episode_id = secs.div_euclid(86_400);
    let into =
        secs.rem_euclid(86_400) as f64 / 3600.0 + f64::from(shifted.time().nanosecond()) / 3.6e12;
    (episode_id, into)
}

fn weekday_of_episode(episode_id: i64, _start_hour: u32) -> bool {
    // Episode ids count days from 1970-01-01 (a Thursday); Monday..Friday.
    let weekday = (episode_id.rem_euclid(7) + 3) % 7; // 0 = Monday
    weekday < 5
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Parameters of the synthetic session generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    /// Mean number of arrivals per slot (length `slots_per_episode`).
    pub arrival_rate_per_slot: Vec<f64>,
    /// Weights for connection durations of 1, 2, ... slots.
    pub duration_weights: Vec<f64>,
    /// Weights for demands of 1, 2, ... slots (clamped to the window).
    pub demand_weights: Vec<f64>,
}

impl GenParams {
    /// Bimodal weekday-commuter pattern: morning and early-evening arrival
    /// peaks, connection times well above the charging need so the
    /// coordinator has room to shift load.
    pub fn desk_default() -> Self {
        Self {
            arrival_rate_per_slot: vec![
                1.6, 2.0, 1.1, 0.7, 0.7, 1.5, 1.9, 1.0, 0.4, 0.15, 0.1, 0.25,
            ],
            duration_weights: vec![
                0.04, 0.16, 0.22, 0.20, 0.13, 0.09, 0.06, 0.04, 0.03, 0.015, 0.01, 0.005,
            ],
            demand_weights: vec![
                0.30, 0.34, 0.22, 0.09, 0.03, 0.01, 0.004, 0.003, 0.002, 0.001, 0.0, 0.0,
            ],
        }
    }

    pub fn validate(&self, cfg: &SlotConfig) -> Result<()> {
        if self.arrival_rate_per_slot.len() != cfg.slots_per_episode {
            return Err(Error::Config(format!(
                "arrival_rate_per_slot has {} entries, expected {}",
                self.arrival_rate_per_slot.len(),
                cfg.slots_per_episode
            )));
        }
        if self
            .arrival_rate_per_slot
            .iter()
            .any(|r| r.is_nan() || *r < 0.0)
        {
            return Err(Error::Config("arrival rates must be non-negative".into()));
        }
        for (name, w) in [
            ("duration_weights", &self.duration_weights),
            ("demand_weights", &self.demand_weights),
        ] {
            if w.is_empty() || w.len() > cfg.slots_per_episode {
                return Err(Error::Config(format!(
                    "{name} must have between 1 and {} entries",
                    cfg.slots_per_episode
                )));
            }
            if w.iter().any(|x| x.is_nan() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be non-negative with positive sum"
                )));
            }
        }
        Ok(())
    }
}

/// Generate `n_episodes` synthetic episodes. Fully determined by `seed`:
/// every episode draws from its own ChaCha stream, so regenerating any prefix
/// or subset yields identical sessions.
///
/// Arrivals are Poisson per slot; a car is admitted only if a station is free
/// for its whole connection window, which keeps concurrency within
/// `max_stations` by construction. Weekday flags cycle 5 weekdays + 2 weekend
/// days starting from episode 0 (a Monday).
pub fn generate_synthetic(
    cfg: &SlotConfig,
    params: &GenParams,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    cfg.validate()?;
    params.validate(cfg)?;
    let duration_dist = WeightedIndex::new(&params.duration_weights)
        .map_err(|e| Error::Config(format!("duration_weights: {e}")))?;
    let demand_dist = WeightedIndex::new(&params.demand_weights)
        .map_err(|e| Error::Config(format!("demand_weights: {e}")))?;

    let mut episodes = Vec::with_capacity(n_episodes);
    for episode_id in 0..n_episodes as i64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode_id as u64);
        let mut sessions = Vec::new();
        // Which slots each station is already booked for.
        let mut station_busy = vec![0u32; cfg.max_stations];
        for slot in 0..cfg.slots_per_episode {
            let rate = params.arrival_rate_per_slot[slot];
            let arrivals = if rate > 0.0 {
                let poisson = rand_distr::Poisson::new(rate)
                    .map_err(|e| Error::Config(format!("arrival rate {rate}: {e}")))?;
                poisson.sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..arrivals {
                let duration = 1 + duration_dist.sample(&mut rng);
                let demand = 1 + demand_dist.sample(&mut rng);
                let depart_slot = (slot + duration).min(cfg.slots_per_episode);
                let window = depart_slot - slot;
                let required_slots = demand.min(window);
                let window_mask = mask(slot, depart_slot);
                let station = (0..cfg.max_stations).find(|&s| station_busy[s] & window_mask == 0);
                let Some(station) = station else {
                    continue; // park is full somewhere in the window
                };
                station_busy[station] |= window_mask;
                sessions.push(SessionRecord {
                    station_id: format!("ST{station:02}"),
                    arrival_slot: slot,
                    depart_slot,
                    required_slots,
                });
            }
        }
        episodes.push(Episode {
            episode_id,
            is_weekday: episode_id.rem_euclid(7) < 5,
            sessions,
        });
    }
    Ok(episodes)
}

fn mask(from: usize, to: usize) -> u32 {
    debug_assert!(to <= 32);
    ((1u64 << to) - (1u64 << from)) as u32
}

// ---------------------------------------------------------------------------
// JSONL episode files
// ---------------------------------------------------------------------------

/// Write one episode per line.
pub fn write_episodes_jsonl<W: Write>(mut writer: W, episodes: &[Episode]) -> Result<()> {
    for ep in episodes {
        serde_json::to_writer(&mut writer, ep)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read episodes from a JSONL reader; blank lines are ignored.
pub fn read_episodes_jsonl<R: BufRead>(reader: R) -> Result<Vec<Episode>> {
    let mut episodes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ep: Episode = serde_json::from_str(&line)
            .map_err(|e| Error::Session(format!("line {}: {e}", i + 1)))?;
        episodes.push(ep);
    }
    Ok(episodes)
}

pub fn load_episodes(path: &std::path::Path) -> Result<Vec<Episode>> {
    let file = std::fs::File::open(path)?;
    read_episodes_jsonl(std::io::BufReader::new(file))
}

pub fn save_episodes(path: &std::path::Path, episodes: &[Episode]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_episodes_jsonl(&mut file, episodes)?;
    file.flush()?;
    Ok(())
}
