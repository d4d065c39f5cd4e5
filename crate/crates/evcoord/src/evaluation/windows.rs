//! Train/test splits over an ordered run of episodes.
//!
//! Two layouts: increasing windows (grow the training prefix by a fixed
//! step, always testing on the episodes right after it) and rolling windows
//! over weekdays only (fixed-length train and test windows sliding by a
//! stride). Both return index lists into the caller's episode slice, so
//! they compose with any episode source.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sessions::Episode;

/// One train/test split, as indices into the episode list it was built
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Prefix splits: train on the first `step`, `2*step`, ... episodes, each
/// time testing on the following `test_len`.
pub fn increasing_windows(total: usize, step: usize, test_len: usize) -> Result<Vec<SplitSpec>> {
    if step == 0 || test_len == 0 {
        return Err(Error::Config(
            "window step and test length must be positive".into(),
        ));
    }
    let mut out = Vec::new();
    let mut train_len = step;
    while train_len + test_len <= total {
        out.push(SplitSpec {
            name: format!("inc{train_len:03}"),
            train: (0..train_len).collect(),
            test: (train_len..train_len + test_len).collect(),
        });
        train_len += step;
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "{total} episodes cannot fit a {step}-train/{test_len}-test split"
        )));
    }
    Ok(out)
}

/// Sliding splits over weekdays only: `train_len` weekday episodes followed
/// by `test_len`, advancing by `stride` weekday episodes. Indices refer to
/// the full episode list.
pub fn rolling_windows(
    episodes: &[Episode],
    train_len: usize,
    test_len: usize,
    stride: usize,
) -> Result<Vec<SplitSpec>> {
    if train_len == 0 || test_len == 0 || stride == 0 {
        return Err(Error::Config(
            "window lengths and stride must be positive".into(),
        ));
    }
    let weekdays: Vec<usize> = episodes
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_weekday)
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + train_len + test_len <= weekdays.len() {
        out.push(SplitSpec {
            name: format!("roll{start:03}"),
            train: weekdays[start..start + train_len].to_vec(),
            test: weekdays[start + train_len..start + train_len + test_len].to_vec(),
        });
        start += stride;
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "{} weekday episodes cannot fit a {train_len}-train/{test_len}-test rolling split",
            weekdays.len()
        )));
    }
    Ok(out)
}
