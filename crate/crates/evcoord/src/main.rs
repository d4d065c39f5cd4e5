//! Command-line front end for the charging coordinator: synthetic data,
//! CSV ingestion, oracle profiles, baselines, Q-function training, and the
//! bundled comparison experiments.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use evcoord::config::AppConfig;
use evcoord::costs::{write_profiles_jsonl, CostKind};
use evcoord::environment::{Repr, Scaling};
use evcoord::evaluation::{
    credit_learners, evaluate_baselines, observability_learners, run_experiment, write_report,
    ExperimentOutcome, LearnerSpec, SplitSpec,
};
use evcoord::oracle::{optimal_profiles, squared_load};
use evcoord::qlearn::{fqi, generate_or_load};
use evcoord::sessions::{
    discretize, generate_synthetic, load_episodes, parse_transactions_csv, save_episodes,
    select_busiest_stations, validate_episodes, weekday_filter, Episode, IngestReport,
};

#[derive(Parser)]
#[command(
    name = "evcoord",
    version,
    about = "Joint EV charging coordination: data, oracle, baselines, batch RL",
    arg_required_else_help = true
)]
struct Cli {
    /// JSON configuration file; every field is optional and defaults to the
    /// ten-station desk setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic episodes and write them as JSONL.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Number of episodes (default: the configured count).
        #[arg(long)]
        episodes: Option<usize>,
        /// Generator seed (default: the configured data seed).
        #[arg(long)]
        seed: Option<u64>,
    },

    /// Discretize a transaction CSV (station_id,arrival,departure,energy_kwh)
    /// into episodes.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the K busiest stations before discretizing.
        #[arg(long)]
        stations: Option<usize>,
        /// Drop weekend episodes.
        #[arg(long)]
        weekdays_only: bool,
    },

    /// Compute optimal day-ahead profiles (minimum sum of squared loads).
    Oracle {
        #[arg(long)]
        episodes: PathBuf,
        /// Write the profiles as JSONL.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Evaluate the non-learned baselines against the oracle.
    Baseline {
        #[arg(long)]
        episodes: PathBuf,
    },

    /// Fit a Q-function on an episode file and save the network as JSON.
    Train {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long, value_enum, default_value_t = ReprArg::Vector)]
        repr: ReprArg,
        #[arg(long, value_enum, default_value_t = ScalingArg::Local)]
        scaling: ScalingArg,
        #[arg(long, value_enum, default_value_t = CostArg::Quadratic)]
        cost: CostArg,
        /// Profile window (preceding episodes) for the linear costs.
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[arg(long, default_value = "qnet.json")]
        out: PathBuf,
        /// Cache directory for experience sets.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },

    /// Run a bundled experiment and write its CSV report.
    Experiment {
        #[command(subcommand)]
        which: ExperimentKind,
    },

    /// Check an episode file against the slot-grid invariants.
    Validate {
        #[arg(long)]
        episodes: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Compare state representations and action scalings on the quadratic
    /// cost (learners rl_ml, rl_mg, rl_vl, rl_vg).
    Obs(ExperimentArgs),
    /// Compare cost signals: quadratic rl_q against linear costs with
    /// average and median references over the configured windows.
    Credit(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    episodes: PathBuf,
    /// Report root; the experiment writes to <out>/<name>/.
    #[arg(long)]
    out: PathBuf,
    /// Experiment (and directory) name; defaults to the subcommand's.
    #[arg(long)]
    name: Option<String>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

/// Training knobs that override the configuration file when given.
#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    trajectories: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut AppConfig) {
        if let Some(seed) = self.seed {
            cfg.fqi.seed = seed;
        }
        if let Some(iterations) = self.iterations {
            cfg.fqi.iterations = iterations;
        }
        if let Some(trajectories) = self.trajectories {
            cfg.fqi.trajectories = trajectories;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReprArg {
    Matrix,
    Vector,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    Local,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Quadratic,
    LinearAverage,
    LinearMedian,
}

impl CostArg {
    fn to_kind(self, window: usize) -> CostKind {
        match self {
            CostArg::Quadratic => CostKind::Quadratic,
            CostArg::LinearAverage => CostKind::LinearAverage { window },
            CostArg::LinearMedian => CostKind::LinearMedian { window },
        }
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("setting worker thread count")?;
    }
    let cfg = match &cli.config {
        Some(path) => {
            AppConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => AppConfig::default(),
    };

    match cli.command {
        Command::Generate {
            out,
            episodes,
            seed,
        } => {
            let n = episodes.unwrap_or(cfg.episodes);
            let seed = seed.unwrap_or(cfg.data_seed);
            let eps = generate_synthetic(&cfg.slot, &cfg.generator, n, seed)?;
            save_episodes(&out, &eps)?;
            let sessions: usize = eps.iter().map(|e| e.sessions.len()).sum();
            println!(
                "wrote {} episodes ({} sessions, seed {seed}) to {}",
                eps.len(),
                sessions,
                out.display()
            );
        }

        Command::Ingest {
            input,
            out,
            stations,
            weekdays_only,
        } => {
            let mut report = IngestReport::default();
            let file =
                File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let mut txs = parse_transactions_csv(BufReader::new(file), &mut report)?;
            if let Some(k) = stations {
                let keep = select_busiest_stations(&txs, k);
                txs.retain(|tx| keep.contains(&tx.station_id));
            }
            let mut episodes = discretize(&txs, &cfg.slot, &mut report)?;
            if weekdays_only {
                episodes = weekday_filter(&episodes);
            }
            save_episodes(&out, &episodes)?;
            println!(
                "rows read {}, malformed {}, sessions kept {}, episodes {}",
                report.rows_read,
                report.malformed_rows,
                report.sessions_kept,
                episodes.len()
            );
            println!("wrote {}", out.display());
        }

        Command::Oracle { episodes, out } => {
            let eps = load_episodes(&episodes)?;
            let profiles = optimal_profiles(&eps, &cfg.slot)?;
            let loads: Vec<f64> = profiles.iter().map(squared_load).collect();
            let mean = loads.iter().sum::<f64>() / loads.len().max(1) as f64;
            println!(
                "optimal profiles for {} episodes, mean squared load {mean:.3}",
                eps.len()
            );
            if let Some(path) = out {
                let file = File::create(&path)?;
                write_profiles_jsonl(BufWriter::new(file), &profiles)?;
                println!("wrote {}", path.display());
            }
        }

        Command::Baseline { episodes } => {
            let eps = load_episodes(&episodes)?;
            let profiles = optimal_profiles(&eps, &cfg.slot)?;
            let loads: Vec<f64> = profiles.iter().map(squared_load).collect();
            let evals =
                evaluate_baselines(&eps, &cfg.slot, &loads, cfg.fqi.seed, cfg.fqi.action_cap)?;
            println!(
                "policy      median    mean   (normalized load, {} episodes)",
                eps.len()
            );
            for eval in &evals {
                println!(
                    "{:<10} {:>7.4} {:>7.4}",
                    eval.label,
                    eval.median_normalized(),
                    eval.mean_normalized()
                );
            }
        }

        Command::Train {
            episodes,
            repr,
            scaling,
            cost,
            window,
            out,
            cache,
            overrides,
        } => {
            let mut cfg = cfg;
            overrides.apply(&mut cfg);
            let eps = load_episodes(&episodes)?;
            let repr = match repr {
                ReprArg::Matrix => Repr::Matrix,
                ReprArg::Vector => Repr::Vector,
            };
            let scaling = match scaling {
                ScalingArg::Local => Scaling::Local,
                ScalingArg::Global => Scaling::Global,
            };
            let cost = cost.to_kind(window);
            let profiles = if cost.reference().is_some() {
                Some(optimal_profiles(&eps, &cfg.slot)?)
            } else {
                None
            };
            let set = generate_or_load(
                cache.as_deref(),
                &eps,
                &cfg.slot,
                repr,
                scaling,
                cost,
                profiles.as_deref(),
                cfg.fqi.trajectories,
                cfg.fqi.seed,
                cfg.fqi.action_cap,
            )?;
            println!(
                "{} transitions ({} skipped episodes)",
                set.tuples.len(),
                set.skipped_episodes
            );
            let result = fqi(&set, &cfg.fqi)?;
            for (k, (stats, secs)) in result
                .train_stats
                .iter()
                .zip(&result.timing.per_iteration_seconds)
                .enumerate()
            {
                println!(
                    "iteration {:>2}: {} epochs, loss {:.6}, {secs:.1}s",
                    k + 1,
                    stats.epochs_run,
                    stats.final_loss
                );
            }
            result.last().save_json(&out)?;
            println!(
                "saved Q-network to {} ({:.1}s total)",
                out.display(),
                result.timing.total_seconds
            );
        }

        Command::Experiment { which } => {
            let (args, default_name, learners): (&ExperimentArgs, &str, Vec<LearnerSpec>) =
                match &which {
                    ExperimentKind::Obs(args) => (args, "obs", observability_learners()),
                    ExperimentKind::Credit(args) => {
                        (args, "credit", credit_learners(&cfg.credit_windows))
                    }
                };
            let mut cfg = cfg.clone();
            args.overrides.apply(&mut cfg);
            let name = args
                .name
                .clone()
                .unwrap_or_else(|| default_name.to_string());
            let eps = load_episodes(&args.episodes)?;
            let split = desk_split(&eps, &cfg)?;
            let outcome = run_experiment(&name, &eps, &cfg.slot, &cfg.fqi, &learners, &[split])?;
            let dir = write_report(&outcome, &args.out)?;
            print_summary(&outcome);
            println!("report written to {}", dir.display());
        }

        Command::Validate { episodes } => {
            let eps = load_episodes(&episodes)?;
            validate_episodes(&eps, &cfg.slot)?;
            let sessions: usize = eps.iter().map(|e| e.sessions.len()).sum();
            println!(
                "{} episodes, {} sessions: all invariants hold",
                eps.len(),
                sessions
            );
        }
    }
    Ok(())
}

/// The configured train/test layout: training block from the front of the
/// file, evaluation on the episodes right after it.
fn desk_split(episodes: &[Episode], cfg: &AppConfig) -> anyhow::Result<SplitSpec> {
    let need = cfg.train_episodes + cfg.test_episodes;
    if episodes.len() < need {
        bail!(
            "need {} episodes ({} train + {} test) but the file has {}",
            need,
            cfg.train_episodes,
            cfg.test_episodes,
            episodes.len()
        );
    }
    Ok(SplitSpec {
        name: "desk".into(),
        train: (0..cfg.train_episodes).collect(),
        test: (cfg.train_episodes..need).collect(),
    })
}

fn print_summary(outcome: &ExperimentOutcome) {
    for split in &outcome.splits {
        println!("split {}: median normalized load", split.split.name);
        for eval in &split.baselines {
            println!("  {:<12} {:>7.4}", eval.label, eval.median_normalized());
        }
        for learner in &split.learners {
            println!(
                "  {:<12} {:>7.4}  ({} iterations, {:.1}s)",
                learner.spec.label,
                learner.final_eval().median_normalized(),
                learner.iteration_evals.len(),
                learner.timing.total_seconds
            );
        }
    }
}
