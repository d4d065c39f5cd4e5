//! Two-sided Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are dropped; absolute differences are ranked with
//! average ranks on ties. With 12 or fewer usable pairs the p-value comes
//! from exhaustive enumeration of all sign assignments (ranks are scaled by
//! two so tied half-ranks stay integral); larger samples use the normal
//! approximation with tie-corrected variance and a continuity correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sample for which the exact distribution is enumerated.
pub const EXACT_LIMIT: usize = 12;

/// Smallest number of nonzero differences the test accepts.
pub const MIN_NONZERO: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Number of nonzero differences actually tested.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// The test statistic min(W+, W-).
    pub statistic: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Test whether paired samples `xs` and `ys` differ in location.
pub fn wilcoxon_signed_rank(xs: &[f64], ys: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(xs, ys, None)
}

/// Like [`wilcoxon_signed_rank`], but with the p-value method forced
/// (useful for comparing exact enumeration against the approximation on
/// the same data). `None` picks by sample size.
pub fn wilcoxon_signed_rank_with(
    xs: &[f64],
    ys: &[f64],
    force: Option<WilcoxonMethod>,
) -> Result<WilcoxonResult> {
    if xs.len() != ys.len() {
        return Err(Error::Stats(format!(
            "paired test on unequal lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let diffs: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Stats("non-finite difference".into()));
    }
    let n = diffs.len();
    if n < MIN_NONZERO {
        return Err(Error::Stats(format!(
            "only {n} nonzero differences; at least {MIN_NONZERO} needed"
        )));
    }

    // Rank |d| ascending; ties get the average of the ranks they span.
    // Doubled ranks stay integral (average ranks are multiples of 1/2).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().partial_cmp(&diffs[b].abs()).expect("finite"));
    let mut rank2 = vec![0u64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && diffs[order[j]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // Positions i..j share ranks i+1 ..= j; their average, doubled,
        // is (i + 1 + j).
        let avg2 = (i + 1 + j) as u64;
        for &idx in &order[i..j] {
            rank2[idx] = avg2;
        }
        tie_sizes.push(j - i);
        i = j;
    }

    let w2_plus: u64 = diffs
        .iter()
        .zip(&rank2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let w2_total: u64 = rank2.iter().sum();
    debug_assert_eq!(w2_total, (n * (n + 1)) as u64);
    let w_plus = w2_plus as f64 / 2.0;
    let w_minus = (w2_total - w2_plus) as f64 / 2.0;
    let statistic = w_plus.min(w_minus);

    let method = match force {
        Some(WilcoxonMethod::Exact) if n > EXACT_LIMIT => {
            return Err(Error::Stats(format!(
                "exact enumeration supports at most {EXACT_LIMIT} pairs, got {n}"
            )));
        }
        Some(m) => m,
        None if n <= EXACT_LIMIT => WilcoxonMethod::Exact,
        None => WilcoxonMethod::NormalApproximation,
    };
    let p_value = match method {
        WilcoxonMethod::Exact => exact_two_sided(&rank2, w2_plus),
        WilcoxonMethod::NormalApproximation => approximate_two_sided(n, statistic, &tie_sizes)?,
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic,
        p_value,
        method,
    })
}

/// Exact two-sided p-value: enumerate every sign assignment of the doubled
/// ranks and double the smaller tail of the observed W+.
pub(crate) fn exact_two_sided(rank2: &[u64], w2_plus: u64) -> f64 {
    let n = rank2.len();
    debug_assert!(n <= EXACT_LIMIT);
    let total = 1u64 << n;
    let mut at_most = 0u64;
    let mut at_least = 0u64;
    for subset in 0..total {
        let mut w2 = 0u64;
        for (bit, &r) in rank2.iter().enumerate() {
            if subset & (1 << bit) != 0 {
                w2 += r;
            }
        }
        if w2 <= w2_plus {
            at_most += 1;
        }
        if w2 >= w2_plus {
            at_least += 1;
        }
    }
    let tail = at_most.min(at_least) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

/// Normal approximation with continuity correction and tie-corrected
/// variance.
fn approximate_two_sided(n: usize, statistic: f64, tie_sizes: &[usize]) -> Result<f64> {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if variance <= 0.0 {
        return Err(Error::Stats(
            "degenerate rank variance; all differences tie".into(),
        ));
    }
    // The statistic is the smaller of W+ and W-, so it sits at or below the
    // mean; the half-step continuity correction moves it toward the mean.
    let z = (statistic - mean + 0.5) / variance.sqrt();
    Ok((2.0 * standard_normal_cdf(z)).min(1.0))
}

/// Φ(z) via the Abramowitz-Stegun 7.1.26 polynomial for erf (absolute
/// error below 1.5e-7).
pub(crate) fn standard_normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    0.5 * (1.0 + erf(x))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    const A1: f64 = 0.254829592;
    const A2: f64 = -0.284496736;
    const A3: f64 = 1.421413741;
    const A4: f64 = -1.453152027;
    const A5: f64 = 1.061405429;
    const P: f64 = 0.3275911;
    let t = 1.0 / (1.0 + P * x);
    let poly = ((((A5 * t + A4) * t + A3) * t + A2) * t + A1) * t;
    sign * (1.0 - poly * (-x * x).exp())
}
