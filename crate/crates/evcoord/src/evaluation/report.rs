//! Persisting an experiment outcome to disk.
//!
//! Layout under `out_root/<experiment-name>/`:
//!
//! - `manifest.json`: configuration echo, training wall-clock times, and a
//!   fingerprint of every other written file. Timing lives only here so the
//!   CSVs stay byte-identical across reruns of the same configuration.
//! - `<split>/loads.csv`: per-episode loads of baselines and final learner
//!   policies (`split,policy,episode_id,load,optimal_load,normalized`).
//! - `<split>/curve.csv`: learner quality per training iteration
//!   (`split,policy,iteration,mean_normalized,median_normalized`).
//! - `<split>/iteration_loads.csv`: per-episode normalized loads for every
//!   iteration (`split,policy,iteration,episode_id,normalized`).
//! - `<split>/wilcoxon.csv`: pairwise signed-rank results
//!   (`split,policy_a,policy_b,n,w_plus,w_minus,statistic,method,p_value`).
//!   Comparisons with too few differing pairs are recorded with method
//!   `degenerate` and a p-value of 1.
//!
//! Iterations are numbered from 1 in every file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::digest::fnv1a64_hex;
use crate::error::{Error, Result};
use crate::qlearn::{FqiConfig, FqiTiming};
use crate::sessions::SlotConfig;

use super::experiments::{ExperimentOutcome, LearnerSpec, PolicyEval, SplitOutcome};
use super::wilcoxon::WilcoxonMethod;
use super::windows::SplitSpec;

#[derive(Serialize)]
struct LoadRow<'a> {
    split: &'a str,
    policy: &'a str,
    episode_id: i64,
    load: f64,
    optimal_load: f64,
    normalized: f64,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    split: &'a str,
    policy: &'a str,
    iteration: usize,
    mean_normalized: f64,
    median_normalized: f64,
}

#[derive(Serialize)]
struct IterationLoadRow<'a> {
    split: &'a str,
    policy: &'a str,
    iteration: usize,
    episode_id: i64,
    normalized: f64,
}

#[derive(Serialize)]
struct WilcoxonRow<'a> {
    split: &'a str,
    policy_a: &'a str,
    policy_b: &'a str,
    n: usize,
    w_plus: f64,
    w_minus: f64,
    statistic: f64,
    method: &'a str,
    p_value: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    slot: &'a SlotConfig,
    fqi: &'a FqiConfig,
    learners: Vec<&'a LearnerSpec>,
    splits: Vec<&'a SplitSpec>,
    /// split name -> learner label -> wall-clock training cost.
    timing: BTreeMap<&'a str, BTreeMap<&'a str, &'a FqiTiming>>,
    /// Relative path -> FNV-1a fingerprint of the written bytes.
    files: BTreeMap<String, String>,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Experiment(format!("flushing csv: {e}")))
}

fn method_label(method: WilcoxonMethod) -> &'static str {
    match method {
        WilcoxonMethod::Exact => "exact",
        WilcoxonMethod::NormalApproximation => "normal_approximation",
    }
}

fn loads_csv(split: &SplitOutcome) -> Result<Vec<u8>> {
    let name = split.split.name.as_str();
    let finals: Vec<&PolicyEval> = split
        .baselines
        .iter()
        .chain(split.learners.iter().map(|l| l.final_eval()))
        .collect();
    csv_bytes(finals.iter().flat_map(|eval| {
        eval.per_episode.iter().map(move |e| LoadRow {
            split: name,
            policy: &eval.label,
            episode_id: e.episode_id,
            load: e.load,
            optimal_load: e.optimal_load,
            normalized: e.normalized,
        })
    }))
}

fn curve_csv(split: &SplitOutcome) -> Result<Vec<u8>> {
    let name = split.split.name.as_str();
    csv_bytes(split.learners.iter().flat_map(|learner| {
        learner
            .iteration_evals
            .iter()
            .enumerate()
            .map(move |(k, eval)| CurveRow {
                split: name,
                policy: &learner.spec.label,
                iteration: k + 1,
                mean_normalized: eval.mean_normalized(),
                median_normalized: eval.median_normalized(),
            })
    }))
}

fn iteration_loads_csv(split: &SplitOutcome) -> Result<Vec<u8>> {
    let name = split.split.name.as_str();
    csv_bytes(split.learners.iter().flat_map(|learner| {
        learner
            .iteration_evals
            .iter()
            .enumerate()
            .flat_map(move |(k, eval)| {
                eval.per_episode.iter().map(move |e| IterationLoadRow {
                    split: name,
                    policy: &learner.spec.label,
                    iteration: k + 1,
                    episode_id: e.episode_id,
                    normalized: e.normalized,
                })
            })
    }))
}

fn wilcoxon_csv(split: &SplitOutcome) -> Result<Vec<u8>> {
    let name = split.split.name.as_str();
    csv_bytes(split.tests.iter().map(|test| match &test.outcome {
        Some(r) => WilcoxonRow {
            split: name,
            policy_a: &test.a,
            policy_b: &test.b,
            n: r.n,
            w_plus: r.w_plus,
            w_minus: r.w_minus,
            statistic: r.statistic,
            method: method_label(r.method),
            p_value: r.p_value,
        },
        None => WilcoxonRow {
            split: name,
            policy_a: &test.a,
            policy_b: &test.b,
            n: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            statistic: 0.0,
            method: "degenerate",
            p_value: 1.0,
        },
    }))
}

/// Write the full report tree for `outcome` under `out_root`, returning the
/// experiment directory.
pub fn write_report(outcome: &ExperimentOutcome, out_root: &Path) -> Result<PathBuf> {
    let dir = out_root.join(&outcome.name);
    fs::create_dir_all(&dir)?;

    let mut files = BTreeMap::new();
    let mut write_file = |rel: String, bytes: &[u8]| -> Result<()> {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        files.insert(rel, fnv1a64_hex(bytes));
        Ok(())
    };

    for split in &outcome.splits {
        let name = &split.split.name;
        write_file(format!("{name}/loads.csv"), &loads_csv(split)?)?;
        write_file(format!("{name}/curve.csv"), &curve_csv(split)?)?;
        write_file(
            format!("{name}/iteration_loads.csv"),
            &iteration_loads_csv(split)?,
        )?;
        write_file(format!("{name}/wilcoxon.csv"), &wilcoxon_csv(split)?)?;
    }

    let learners: Vec<&LearnerSpec> = outcome
        .splits
        .first()
        .map(|s| s.learners.iter().map(|l| &l.spec).collect())
        .unwrap_or_default();
    let timing: BTreeMap<&str, BTreeMap<&str, &FqiTiming>> = outcome
        .splits
        .iter()
        .map(|s| {
            (
                s.split.name.as_str(),
                s.learners
                    .iter()
                    .map(|l| (l.spec.label.as_str(), &l.timing))
                    .collect(),
            )
        })
        .collect();
    let manifest = Manifest {
        experiment: &outcome.name,
        slot: &outcome.slot,
        fqi: &outcome.fqi,
        learners,
        splits: outcome.splits.iter().map(|s| &s.split).collect(),
        timing,
        files,
    };
    let mut body = serde_json::to_vec_pretty(&manifest)?;
    body.push(b'\n');
    fs::write(dir.join("manifest.json"), body)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::super::experiments::tests::tiny_episodes;
    use super::super::experiments::{credit_learners, run_experiment};
    use super::super::windows::SplitSpec;
    use super::*;
    use crate::environment::tests::tiny_cfg;

    fn run_tiny() -> ExperimentOutcome {
        let episodes = tiny_episodes(10);
        let fqi_cfg = FqiConfig {
            iterations: 2,
            trajectories: 6,
            epochs: 3,
            min_epochs: 3,
            batch_size: 32,
            action_cap: 10_000,
            ..FqiConfig::default()
        };
        let split = SplitSpec {
            name: "unit".into(),
            train: vec![0, 1, 2, 3],
            test: vec![4, 5, 6, 7, 8, 9],
        };
        run_experiment(
            "tiny",
            &episodes,
            &tiny_cfg(),
            &fqi_cfg,
            &credit_learners(&[1]),
            &[split],
        )
        .unwrap()
    }

    #[test]
    fn the_report_tree_is_complete_and_fingerprinted() {
        let outcome = run_tiny();
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_report(&outcome, tmp.path()).unwrap();
        assert_eq!(dir, tmp.path().join("tiny"));
        for file in [
            "loads.csv",
            "curve.csv",
            "iteration_loads.csv",
            "wilcoxon.csv",
        ] {
            assert!(dir.join("unit").join(file).is_file(), "missing {file}");
        }
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["experiment"], "tiny");
        let files = manifest["files"].as_object().unwrap();
        assert_eq!(files.len(), 4);
        for (rel, digest) in files {
            let bytes = std::fs::read(dir.join(rel)).unwrap();
            assert_eq!(digest.as_str().unwrap(), fnv1a64_hex(&bytes), "{rel}");
        }
        assert!(manifest["timing"]["unit"]["rl_q"]["total_seconds"].is_number());
    }

    #[test]
    fn csv_output_is_byte_identical_across_reruns() {
        let tmp_a = tempfile::tempdir().unwrap();
        let tmp_b = tempfile::tempdir().unwrap();
        let dir_a = write_report(&run_tiny(), tmp_a.path()).unwrap();
        let dir_b = write_report(&run_tiny(), tmp_b.path()).unwrap();
        for file in [
            "loads.csv",
            "curve.csv",
            "iteration_loads.csv",
            "wilcoxon.csv",
        ] {
            let a = std::fs::read(dir_a.join("unit").join(file)).unwrap();
            let b = std::fs::read(dir_b.join("unit").join(file)).unwrap();
            assert!(!a.is_empty());
            assert_eq!(a, b, "{file} differs between reruns");
        }
    }

    #[test]
    fn csv_headers_match_the_documented_schemas() {
        let outcome = run_tiny();
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_report(&outcome, tmp.path()).unwrap();
        let header = |file: &str| {
            let text = std::fs::read_to_string(dir.join("unit").join(file)).unwrap();
            text.lines().next().unwrap().to_string()
        };
        assert_eq!(
            header("loads.csv"),
            "split,policy,episode_id,load,optimal_load,normalized"
        );
        assert_eq!(
            header("curve.csv"),
            "split,policy,iteration,mean_normalized,median_normalized"
        );
        assert_eq!(
            header("iteration_loads.csv"),
            "split,policy,iteration,episode_id,normalized"
        );
        assert_eq!(
            header("wilcoxon.csv"),
            "split,policy_a,policy_b,n,w_plus,w_minus,statistic,method,p_value"
        );
    }
}
