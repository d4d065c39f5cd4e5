//! Turning an observation plus a scaled action into the Q-network's input
//! row.
//!
//! The layout is `[t / S] ++ state features ++ scaled action`. For the
//! vector representation the state features are the S flexibility bins, so
//! the row has 2S + 1 entries. For the matrix representation the occupancy
//! grid is flattened over departures 1..=S and needed charge 1..=S-1; the
//! lone reachable cell outside that range, (S, S), is folded into (S, S-1),
//! which keeps every dropped column structurally empty and the row at
//! S^2 + 1 entries (145 for the standard 12-slot day). Cars in those two
//! cells are equivalent one slot later, so the fold loses nothing the
//! learner could act on.

use crate::environment::{Observation, Repr, ScaledAction};

/// Network input width for a representation at horizon `s_max`.
pub fn encoded_width(repr: Repr, s_max: usize) -> usize {
    match repr {
        Repr::Matrix => s_max * s_max + 1,
        Repr::Vector => 2 * s_max + 1,
    }
}

/// Width of the state prefix (everything except the action tail).
pub fn state_width(repr: Repr, s_max: usize) -> usize {
    encoded_width(repr, s_max) - s_max
}

/// Fill `buf` (length `state_width`) with the scaled state prefix from raw
/// occupancy counts: the grid (row-major, length s_max^2) for the matrix
/// representation or the flexibility bins (length s_max) for the vector one.
pub fn encode_state_into(
    buf: &mut [f64],
    repr: Repr,
    s_max: usize,
    n_max: usize,
    t: usize,
    counts: &[u32],
) {
    debug_assert_eq!(buf.len(), state_width(repr, s_max));
    let n = n_max as f64;
    buf[0] = t as f64 / s_max as f64;
    match repr {
        Repr::Matrix => {
            debug_assert_eq!(counts.len(), s_max * s_max);
            let cols = s_max - 1;
            for i in 0..s_max {
                for j in 0..cols {
                    buf[1 + i * cols + j] = f64::from(counts[i * s_max + j]) / n;
                }
            }
            // Fold (S, S) into (S, S-1).
            buf[1 + (s_max - 1) * cols + (cols - 1)] += f64::from(counts[s_max * s_max - 1]) / n;
        }
        Repr::Vector => {
            debug_assert_eq!(counts.len(), s_max);
            for (out, &c) in buf[1..].iter_mut().zip(counts) {
                *out = f64::from(c) / n;
            }
        }
    }
}

/// Fill the action tail of a full input row (the last `s_max` entries).
pub fn encode_action_into(buf: &mut [f64], action_scaled: &[f64]) {
    let start = buf.len() - action_scaled.len();
    buf[start..].copy_from_slice(action_scaled);
}

/// One complete input row from raw counts.
pub fn encode_row(
    buf: &mut [f64],
    repr: Repr,
    s_max: usize,
    n_max: usize,
    t: usize,
    counts: &[u32],
    action_scaled: &[f64],
) {
    debug_assert_eq!(buf.len(), encoded_width(repr, s_max));
    debug_assert_eq!(action_scaled.len(), s_max);
    encode_state_into(
        &mut buf[..state_width(repr, s_max)],
        repr,
        s_max,
        n_max,
        t,
        counts,
    );
    encode_action_into(buf, action_scaled);
}

/// One complete input row from an already-scaled observation.
pub fn encode_input(obs: &Observation, action: &ScaledAction) -> Vec<f64> {
    match obs {
        Observation::Matrix(m) => {
            let s = m.s_max;
            debug_assert_eq!(m.grid.len(), s * s);
            debug_assert_eq!(action.values.len(), s);
            let mut row = Vec::with_capacity(encoded_width(Repr::Matrix, s));
            row.push(m.t as f64 / s as f64);
            let cols = s - 1;
            for i in 0..s {
                row.extend_from_slice(&m.grid[i * s..i * s + cols]);
            }
            let fold_at = 1 + (s - 1) * cols + (cols - 1);
            row[fold_at] += m.grid[s * s - 1];
            row.extend_from_slice(&action.values);
            row
        }
        Observation::Vector(v) => {
            let s = v.bins.len();
            debug_assert_eq!(action.values.len(), s);
            let mut row = Vec::with_capacity(encoded_width(Repr::Vector, s));
            row.push(v.t as f64 / s as f64);
            row.extend_from_slice(&v.bins);
            row.extend_from_slice(&action.values);
            row
        }
    }
}
