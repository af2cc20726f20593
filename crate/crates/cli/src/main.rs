//! Command-line front end for the transient stability boundary toolkit.
//!
//! Exit codes: 0 on success, 2 for usage and configuration problems,
//! 3 for infeasible or degenerate inputs, 4 for numerical failures.

mod commands;
mod config;
mod export;
mod io;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use commands::{ContArgs, Ctx, Strategy};
use config::CliConfig;
use export::ExportKind;

#[derive(Parser, Debug)]
#[command(
    name = "tsb",
    version,
    about = "Transient stability boundary search, classification, and monitoring"
)]
struct Cli {
    /// Grid case file (JSON).
    #[arg(long, global = true)]
    case: Option<PathBuf>,

    /// Override the sampler RNG seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for generated artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for lattice and pool evaluation; 0 keeps the default.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// JSON config with simulation, sampler, and threshold settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Label every lattice point by full simulation, with checkpointing.
    Oracle {
        #[command(flatten)]
        cont: ContArgs,
        /// Lattice spacing, MW.
        #[arg(long, default_value_t = 5.0)]
        interval: f64,
        /// Lower corner of the lattice, e.g. "10,10" (defaults to dispatch limits).
        #[arg(long)]
        mins: Option<String>,
        /// Upper corner of the lattice (defaults to dispatch limits).
        #[arg(long)]
        maxs: Option<String>,
        /// Discard any existing checkpoint and start over.
        #[arg(long)]
        fresh: bool,
    },
    /// Generate a labeled dataset near the stability boundary.
    Sample {
        #[command(flatten)]
        cont: ContArgs,
        /// Search strategy for dataset generation.
        #[arg(long, value_enum, default_value_t = Strategy::Guided)]
        strategy: Strategy,
    },
    /// Train the boundary classifier from a sample set.
    Train {
        /// samples.jsonl (its sidecar samples_meta.json must sit alongside).
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Soft-margin penalty.
        #[arg(long)]
        c: Option<f64>,
        /// Kernel width; defaults to the median heuristic.
        #[arg(long)]
        gamma: Option<f64>,
        /// Force cross-validated hyperparameter selection on or off.
        #[arg(long)]
        cv: Option<bool>,
    },
    /// Propose gap-filling sample candidates for an existing model.
    Resample {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of candidates (defaults to the config's per-round count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Cluster a pool of operating points under one contingency.
    ClusterOps {
        #[command(flatten)]
        cont: ContArgs,
        /// Pool file: JSON array of dispatch vectors or {gen_p, load_scale} objects.
        #[arg(long)]
        pool: PathBuf,
    },
    /// Cluster contingencies by agreement of their operating-point partitions.
    ClusterContingencies {
        /// JSON array of contingency descriptors.
        #[arg(long)]
        contingencies: PathBuf,
        #[arg(long)]
        pool: PathBuf,
    },
    /// Fit one Gaussian per operating-point cluster.
    FitGaussians {
        #[arg(long)]
        pool: PathBuf,
        /// Cluster file from cluster-ops (defaults to op_clusters.json).
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Match a dispatch to its cluster and most critical generators.
    Match {
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// Dispatch vector, e.g. "120,100".
        #[arg(long)]
        op: String,
    },
    /// Run the full offline stage: screen, simulate, cluster, rank.
    Offline {
        #[arg(long)]
        contingencies: PathBuf,
        #[arg(long)]
        pool: PathBuf,
    },
    /// Periodic refresh of local boundary models over a load schedule.
    Refresh {
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        contingencies: PathBuf,
        #[arg(long)]
        op: String,
        /// Schedule file: {period, load_profile, search_box}.
        #[arg(long)]
        schedule: PathBuf,
        /// Simulated-time horizon, seconds (defaults to the profile's last point).
        #[arg(long)]
        horizon: Option<f64>,
        /// Run a single pass at this simulated time instead of a series.
        #[arg(long, conflicts_with = "horizon")]
        at: Option<f64>,
    },
    /// Grade a dispatch against one or more trained boundary models.
    Assess {
        /// Model file; repeat for multiple contingencies.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        op: String,
        /// Fixed margin threshold on the decision value.
        #[arg(long)]
        margin: Option<f64>,
        /// Sample set to calibrate the margin from when none is fixed.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Timestamp recorded in the report.
        #[arg(long, default_value_t = 0.0)]
        at: f64,
    },
    /// Write plot-ready CSVs from stored artifacts.
    Export {
        #[arg(long, value_enum)]
        kind: ExportKind,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// refresh_series.json path for the refresh_series kind.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Faulted bus (gradient_field only).
        #[arg(long)]
        fault_bus: Option<u32>,
        /// Tripped branch endpoints (gradient_field only).
        #[arg(long, value_parser = config::parse_branch)]
        trip: Option<(u32, u32)>,
        #[arg(long)]
        t_clear: Option<f64>,
        #[arg(long)]
        id: Option<String>,
        /// Lattice spacing for lattice-based kinds, MW.
        #[arg(long)]
        interval: Option<f64>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.sampler.rng_seed = seed;
    }
    let ctx = Ctx {
        case_path: cli.case,
        out: cli.out,
        cfg,
    };
    match cli.cmd {
        Cmd::Oracle {
            cont,
            interval,
            mins,
            maxs,
            fresh,
        } => commands::oracle(&ctx, &cont, interval, mins.as_deref(), maxs.as_deref(), fresh),
        Cmd::Sample { cont, strategy } => commands::sample(&ctx, &cont, strategy),
        Cmd::Train {
            samples,
            c,
            gamma,
            cv,
        } => commands::train(&ctx, samples.as_deref(), c, gamma, cv),
        Cmd::Resample {
            samples,
            model,
            count,
        } => commands::resample(&ctx, samples.as_deref(), model.as_deref(), count),
        Cmd::ClusterOps { cont, pool } => commands::cluster_ops(&ctx, &cont, &pool),
        Cmd::ClusterContingencies {
            contingencies,
            pool,
        } => commands::cluster_contingencies(&ctx, &contingencies, &pool),
        Cmd::FitGaussians { pool, clusters } => {
            commands::fit_gaussians(&ctx, &pool, clusters.as_deref())
        }
        Cmd::Match { artifacts, op } => commands::match_cmd(&ctx, artifacts.as_deref(), &op),
        Cmd::Offline {
            contingencies,
            pool,
        } => commands::offline(&ctx, &contingencies, &pool),
        Cmd::Refresh {
            artifacts,
            contingencies,
            op,
            schedule,
            horizon,
            at,
        } => commands::refresh(
            &ctx,
            artifacts.as_deref(),
            &contingencies,
            &op,
            &schedule,
            horizon,
            at,
        ),
        Cmd::Assess {
            models,
            op,
            margin,
            samples,
            at,
        } => commands::assess_cmd(&ctx, &models, &op, margin, samples.as_deref(), at),
        Cmd::Export {
            kind,
            samples,
            model,
            artifacts,
            series,
            fault_bus,
            trip,
            t_clear,
            id,
            interval,
        } => {
            let cont = match (fault_bus, trip) {
                (Some(fault_bus), Some(trip)) => Some(ContArgs {
                    fault_bus,
                    trip,
                    t_clear: t_clear.unwrap_or(0.2),
                    id,
                }),
                _ => None,
            };
            export::run(
                &ctx,
                kind,
                samples.as_deref(),
                model.as_deref(),
                artifacts.as_deref(),
                series.as_deref(),
                cont.as_ref(),
                interval,
            )
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> i32 {
    use tsb_core::error::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::CaseParse(_)) | Some(E::CaseValidation(_)) | Some(E::Config(_)) => 2,
        Some(E::Contract(_))
        | Some(E::Infeasible(_))
        | Some(E::Topology(_))
        | Some(E::NoBoundary(_)) => 3,
        Some(E::Numerical(_)) | Some(E::StationaryGradient) | Some(E::BisectionAborted(_)) => 4,
        // IO, JSON, and argument plumbing errors are usage problems.
        None => 2,
    }
}

fn main() {
    // Die quietly when a downstream pipe closes instead of panicking on
    // the next print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code_for(&e));
    }
}
