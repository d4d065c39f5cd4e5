//! Fitted Q-iteration over a batch of experience, and the greedy policy
//! read off the fitted network.
//!
//! Iteration 1 regresses the immediate cost; iteration k regresses cost
//! plus the previous network's best successor value (terminal transitions
//! keep the bare cost). The horizon is finite and short, so values are
//! undiscounted. Each iteration trains from the previous network's weights
//! (a warm start), which cuts epochs sharply once the targets stop moving.
//!
//! The expensive part is evaluating min over successor actions. Identical
//! successor states are shared between tuples (uniform rollouts revisit
//! them constantly), so the minimum is computed once per distinct state on
//! batched network forwards.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{
    action_at_index, for_each_action, ActionCounts, FlexCounts, Repr, Scaling,
};
use crate::error::{Error, Result};

use super::encode::{encode_row, encode_state_into, encoded_width, state_width};
use super::experience::{dedupe_successors, ExperienceSet};
use super::net::{train_network, QNetwork, TrainParams, TrainStats};

/// Knobs for a full fitted-Q run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FqiConfig {
    /// Fitted-Q iterations (the horizon length is the natural choice).
    pub iterations: usize,
    /// Random trajectories rolled per training episode.
    pub trajectories: usize,
    /// Epoch cap per iteration.
    pub epochs: usize,
    pub min_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub huber_delta: f64,
    /// Relative epoch-loss improvement under which an epoch counts as
    /// stalled.
    pub early_stop_tolerance: f64,
    /// Stalled epochs tolerated before an iteration stops training.
    pub early_stop_patience: usize,
    /// Refuse states whose action space exceeds this.
    pub action_cap: u64,
    pub seed: u64,
}

impl Default for FqiConfig {
    fn default() -> Self {
        Self {
            iterations: 12,
            trajectories: 200,
            epochs: 12,
            // Keeps the stop from firing inside the optimizer's warm-up.
            min_epochs: 4,
            batch_size: 512,
            learning_rate: 1e-3,
            huber_delta: 1.0,
            early_stop_tolerance: 1e-3,
            early_stop_patience: 2,
            action_cap: 50_000,
            seed: 7,
        }
    }
}

impl FqiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("trajectories must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.huber_delta.is_nan()
            || self.huber_delta <= 0.0
        {
            return Err(Error::Config(
                "learning_rate and huber_delta must be positive".into(),
            ));
        }
        if self.action_cap == 0 {
            return Err(Error::Config("action_cap must be positive".into()));
        }
        Ok(())
    }

    fn train_params(&self, iteration: usize) -> TrainParams {
        TrainParams {
            epochs: self.epochs,
            min_epochs: self.min_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            huber_delta: self.huber_delta,
            early_stop_tolerance: self.early_stop_tolerance,
            early_stop_patience: self.early_stop_patience,
            seed: self.seed.wrapping_add(1 + iteration as u64),
        }
    }
}

/// Wall-clock cost of a run, per iteration and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqiTiming {
    pub per_iteration_seconds: Vec<f64>,
    pub total_seconds: f64,
}

/// Everything a fitted-Q run produces: the network after each iteration
/// (index k holds the (k+1)-step network), training stats, and timing.
#[derive(Debug)]
pub struct FqiResult {
    pub nets: Vec<QNetwork>,
    pub train_stats: Vec<TrainStats>,
    pub timing: FqiTiming,
}

impl FqiResult {
    /// The final iteration's network.
    pub fn last(&self) -> &QNetwork {
        self.nets.last().expect("at least one iteration")
    }
}

/// Run fitted Q-iteration on a batch of experience.
pub fn fqi(set: &ExperienceSet, cfg: &FqiConfig) -> Result<FqiResult> {
    cfg.validate()?;
    if set.tuples.is_empty() {
        return Err(Error::Training("experience set is empty".into()));
    }
    let width = encoded_width(set.repr, set.s_max);
    let n = set.tuples.len();

    let mut x = Array2::<f64>::zeros((n, width));
    for (mut row, tuple) in x.rows_mut().into_iter().zip(&set.tuples) {
        encode_row(
            row.as_slice_mut().expect("row-major layout"),
            set.repr,
            set.s_max,
            set.n_max,
            tuple.t,
            &tuple.obs,
            &tuple.action_scaled,
        );
    }
    let (representatives, group_of) = dedupe_successors(&set.tuples);
    log::info!(
        "fitted-Q on {n} tuples ({} distinct successors, input width {width})",
        representatives.len()
    );

    let mut nets: Vec<QNetwork> = Vec::with_capacity(cfg.iterations);
    let mut train_stats = Vec::with_capacity(cfg.iterations);
    let mut per_iteration_seconds = Vec::with_capacity(cfg.iterations);
    let mut y = vec![0.0; n];
    let total_start = Instant::now();
    for k in 0..cfg.iterations {
        let start = Instant::now();
        if k == 0 {
            for (target, tuple) in y.iter_mut().zip(&set.tuples) {
                *target = tuple.cost;
            }
        } else {
            let minq = min_q_per_group(&nets[k - 1], set, &representatives)?;
            for (i, (target, tuple)) in y.iter_mut().zip(&set.tuples).enumerate() {
                *target = match group_of[i] {
                    None => tuple.cost,
                    Some(g) => tuple.cost + minq[g as usize],
                };
            }
        }
        let mut net = if k == 0 {
            QNetwork::new(width, cfg.seed)
        } else {
            nets[k - 1].clone()
        };
        let stats = train_network(&mut net, &x.view(), &y, &cfg.train_params(k))?;
        log::debug!(
            "iteration {}: {} epochs, loss {:.6}",
            k + 1,
            stats.epochs_run,
            stats.final_loss
        );
        nets.push(net);
        train_stats.push(stats);
        per_iteration_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(FqiResult {
        nets,
        train_stats,
        timing: FqiTiming {
            total_seconds: total_start.elapsed().as_secs_f64(),
            per_iteration_seconds,
        },
    })
}

/// Best (lowest) Q-value over the actions of each representative successor
/// state, batched per chunk of states.
pub(crate) fn min_q_per_group(
    net: &QNetwork,
    set: &ExperienceSet,
    representatives: &[usize],
) -> Result<Vec<f64>> {
    const CHUNK: usize = 128;
    let width = encoded_width(set.repr, set.s_max);
    let prefix = state_width(set.repr, set.s_max);
    let chunks: Vec<Vec<f64>> = representatives
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<f64>> {
            let mut rows: Vec<f64> = Vec::new();
            let mut actions_per_state = Vec::with_capacity(chunk.len());
            let mut template = vec![0.0; width];
            for &rep in chunk {
                let tuple = &set.tuples[rep];
                encode_state_into(
                    &mut template[..prefix],
                    set.repr,
                    set.s_max,
                    set.n_max,
                    tuple.next_t,
                    &tuple.next_obs,
                );
                let flex = &tuple.next_flex;
                let mut count = 0usize;
                // Experience collection already enforced the configured cap
                // on every stored state, so no cap is re-applied here.
                for_each_action(&FlexCounts(flex.clone()), u64::MAX, tuple.next_t, |u| {
                    for (slot, (&uu, &nn)) in
                        template[prefix..].iter_mut().zip(u.iter().zip(flex.iter()))
                    {
                        *slot = scale_component(uu, nn, set.scaling, set.n_max);
                    }
                    rows.extend_from_slice(&template);
                    count += 1;
                })?;
                actions_per_state.push(count);
            }
            let matrix = Array2::from_shape_vec((rows.len() / width, width), rows)
                .expect("row count times width");
            let values = net.forward_batch(&matrix.view());
            let mut out = Vec::with_capacity(chunk.len());
            let mut offset = 0usize;
            for count in actions_per_state {
                let mut best = f64::INFINITY;
                for v in values.iter().skip(offset).take(count) {
                    if *v < best {
                        best = *v;
                    }
                }
                offset += count;
                out.push(best);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[inline]
fn scale_component(u: u32, n: u32, scaling: Scaling, n_max: usize) -> f64 {
    match scaling {
        Scaling::Local => {
            if n == 0 {
                0.0
            } else {
                f64::from(u) / f64::from(n)
            }
        }
        Scaling::Global => f64::from(u) / n_max as f64,
    }
}

/// The greedy action of `net` at an arbitrary state: the first action (in
/// enumeration order) attaining the lowest predicted Q-value.
#[allow(clippy::too_many_arguments)]
pub fn greedy_action_from_counts(
    net: &QNetwork,
    t: usize,
    obs_counts: &[u32],
    flex: &FlexCounts,
    repr: Repr,
    scaling: Scaling,
    s_max: usize,
    n_max: usize,
    cap: u64,
) -> Result<ActionCounts> {
    let width = encoded_width(repr, s_max);
    let prefix = state_width(repr, s_max);
    let mut template = vec![0.0; width];
    encode_state_into(&mut template[..prefix], repr, s_max, n_max, t, obs_counts);
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for_each_action(flex, cap, t, |u| {
        for (slot, (&uu, &nn)) in template[prefix..]
            .iter_mut()
            .zip(u.iter().zip(flex.0.iter()))
        {
            *slot = scale_component(uu, nn, scaling, n_max);
        }
        rows.extend_from_slice(&template);
        count += 1;
    })?;
    let matrix = Array2::from_shape_vec((count, width), rows).expect("row count times width");
    let values = net.forward_batch(&matrix.view());
    let mut best = 0usize;
    for i in 1..count {
        if values[i] < values[best] {
            best = i;
        }
    }
    Ok(action_at_index(flex, best as u64))
}
