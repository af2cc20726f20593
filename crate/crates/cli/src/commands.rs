//! Implementations of every subcommand except `export`.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tsb_core::boundary::{self, BoundaryModel, GridSpec, TrainOptions};
use tsb_core::grid::{GridCase, OperatingPoint};
use tsb_core::monitor::{
    assess, calibrate_margin, run_offline, run_refresh, AssessmentReport, OfflineArtifacts,
    RefreshOutcome, RefreshSchedule,
};
use tsb_core::oracle::brute_force_oracle;
use tsb_core::sampler::{
    check_termination, generate_dataset, lhs_dataset, random_dataset, resample_gaps, SampleSet,
    SamplerConfig,
};
use tsb_core::scenario::{
    build_sensitivity_matrix, cluster_contingencies as cluster_conts, fit_cluster_gaussian,
    match_op, spearman_matrix, spectral_cluster, ClusterGaussian, Partition,
};
use tsb_core::tds::Contingency;

use crate::config::{self, CliConfig};
use crate::io::{out_path, write_atomic, write_json};

/// Loaded global state shared by every subcommand.
pub struct Ctx {
    pub case_path: Option<PathBuf>,
    pub out: PathBuf,
    pub cfg: CliConfig,
}

impl Ctx {
    pub fn case(&self) -> Result<GridCase> {
        let path = self
            .case_path
            .as_ref()
            .context("this command needs --case <file>")?;
        config::load_case(path)
    }
}

/// Contingency flags shared by the single-contingency commands.
#[derive(clap::Args, Debug, Clone)]
pub struct ContArgs {
    /// Faulted bus id.
    #[arg(long)]
    pub fault_bus: u32,
    /// Endpoints of the branch opened at clearing, e.g. 5-7.
    #[arg(long, value_parser = config::parse_branch)]
    pub trip: (u32, u32),
    /// Clearing time, seconds after the fault.
    #[arg(long, default_value_t = 0.2)]
    pub t_clear: f64,
    /// Contingency id recorded in artifacts.
    #[arg(long)]
    pub id: Option<String>,
}

impl ContArgs {
    pub fn resolve(&self, case: &GridCase) -> Result<Contingency> {
        let id = self.id.clone().unwrap_or_else(|| {
            format!(
                "fault-bus{}-trip{}-{}",
                self.fault_bus, self.trip.0, self.trip.1
            )
        });
        Ok(Contingency::by_endpoints(
            case,
            &id,
            self.fault_bus,
            self.trip.0,
            self.trip.1,
            self.t_clear,
        )?)
    }
}

/// Sampling strategy for the `sample` command.
#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Gradient-guided boundary search with gap re-sampling.
    Guided,
    /// Uniform random baseline at the same budget.
    Random,
    /// Latin hypercube baseline at the same budget.
    Lhs,
}

pub fn oracle(
    ctx: &Ctx,
    cont: &ContArgs,
    interval: f64,
    mins: Option<&str>,
    maxs: Option<&str>,
    fresh: bool,
) -> Result<()> {
    let case = ctx.case()?;
    let cont = cont.resolve(&case)?;
    let (lo, hi) = (case.u_min(), case.u_max());
    let mins = match mins {
        Some(s) => config::parse_op_vector(s)?,
        None => lo,
    };
    let maxs = match maxs {
        Some(s) => config::parse_op_vector(s)?,
        None => hi,
    };
    let spec = GridSpec {
        intervals: vec![interval; mins.len()],
        mins,
        maxs,
    };
    let checkpoint = out_path(&ctx.out, "oracle_checkpoint.json");
    if fresh && checkpoint.exists() {
        fs::remove_file(&checkpoint)
            .with_context(|| format!("removing {}", checkpoint.display()))?;
    }
    fs::create_dir_all(&ctx.out)?;
    let (result, stats) =
        brute_force_oracle(&case, &cont, &spec, &ctx.cfg.sim, Some(&checkpoint))?;
    write_json(
        &out_path(&ctx.out, "oracle_grid.json"),
        &serde_json::json!({ "result": result, "stats": stats }),
    )?;
    if checkpoint.exists() {
        fs::remove_file(&checkpoint)?;
    }
    println!(
        "oracle: {} lattice points, {} feasible ({} stable, {} unstable), {} simulated this run -> {}",
        stats.n_lattice,
        stats.n_feasible,
        stats.n_stable,
        stats.n_unstable,
        stats.n_evaluated,
        out_path(&ctx.out, "oracle_grid.json").display()
    );
    Ok(())
}

fn write_sample_set(ctx: &Ctx, set: &SampleSet) -> Result<()> {
    let mut buf = Vec::new();
    set.write_jsonl(&mut buf)?;
    write_atomic(&out_path(&ctx.out, "samples.jsonl"), &buf)?;
    write_atomic(
        &out_path(&ctx.out, "samples_meta.json"),
        format!("{}\n", set.meta_json()).as_bytes(),
    )
}

pub fn sample(ctx: &Ctx, cont: &ContArgs, strategy: Strategy) -> Result<()> {
    let case = ctx.case()?;
    let cont = cont.resolve(&case)?;
    let sc = &ctx.cfg.sampler;
    match strategy {
        Strategy::Guided => {
            let (set, report) = generate_dataset(&case, &cont, &ctx.cfg.sim, sc)?;
            write_sample_set(ctx, &set)?;
            write_json(&out_path(&ctx.out, "sampler_report.json"), &report)?;
            println!(
                "sample: {} samples ({} feasible, {} critical) from {} simulations -> {}",
                report.n_samples,
                report.n_feasible,
                report.n_critical,
                report.tds_evaluations,
                out_path(&ctx.out, "samples.jsonl").display()
            );
        }
        Strategy::Random | Strategy::Lhs => {
            let set = if strategy == Strategy::Random {
                random_dataset(
                    &case,
                    &cont,
                    &ctx.cfg.sim,
                    sc.load_band,
                    sc.tds_budget,
                    sc.rng_seed,
                )?
            } else {
                lhs_dataset(
                    &case,
                    &cont,
                    &ctx.cfg.sim,
                    sc.load_band,
                    sc.tds_budget,
                    sc.rng_seed,
                )?
            };
            write_sample_set(ctx, &set)?;
            println!(
                "sample: {} baseline samples -> {}",
                set.samples.len(),
                out_path(&ctx.out, "samples.jsonl").display()
            );
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct SampleMeta {
    case_ref: String,
    config: SamplerConfig,
}

pub fn load_samples(dir_or_file: &Path) -> Result<SampleSet> {
    let (jsonl, meta) = if dir_or_file.is_dir() {
        (
            dir_or_file.join("samples.jsonl"),
            dir_or_file.join("samples_meta.json"),
        )
    } else {
        let meta = dir_or_file
            .parent()
            .map(|d| d.join("samples_meta.json"))
            .unwrap_or_else(|| PathBuf::from("samples_meta.json"));
        (dir_or_file.to_path_buf(), meta)
    };
    let meta_text = fs::read_to_string(&meta)
        .with_context(|| format!("reading sample sidecar {}", meta.display()))?;
    let meta: SampleMeta = serde_json::from_str(&meta_text)
        .with_context(|| format!("parsing sample sidecar {}", meta.display()))?;
    let f =
        fs::File::open(&jsonl).with_context(|| format!("reading samples {}", jsonl.display()))?;
    Ok(SampleSet::read_jsonl(
        BufReader::new(f),
        meta.case_ref,
        meta.config,
    )?)
}

pub fn train(
    ctx: &Ctx,
    samples: Option<&Path>,
    c: Option<f64>,
    gamma: Option<f64>,
    cv: Option<bool>,
) -> Result<()> {
    let default = out_path(&ctx.out, "samples.jsonl");
    let set = load_samples(samples.unwrap_or(&default))?;
    let mut opts = TrainOptions::default();
    if let Some(c) = c {
        opts.c = c;
    }
    opts.gamma = gamma.or(opts.gamma);
    opts.cross_validate = cv.or(opts.cross_validate);
    let model = boundary::train(&set, &opts)?;
    write_json(&out_path(&ctx.out, "boundary_model.json"), &model)?;
    println!(
        "train: {} supports, training accuracy {:.4} -> {}",
        model.supports.len(),
        model.training_accuracy,
        out_path(&ctx.out, "boundary_model.json").display()
    );
    Ok(())
}

pub fn load_model(path: &Path) -> Result<BoundaryModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

pub fn resample(
    ctx: &Ctx,
    samples: Option<&Path>,
    model: Option<&Path>,
    count: Option<usize>,
) -> Result<()> {
    let case = ctx.case()?;
    let default_samples = out_path(&ctx.out, "samples.jsonl");
    let default_model = out_path(&ctx.out, "boundary_model.json");
    let set = load_samples(samples.unwrap_or(&default_samples))?;
    let model = load_model(model.unwrap_or(&default_model))?;
    let n_new = count.unwrap_or(ctx.cfg.sampler.resample_per_round);
    let phi_cri = ctx.cfg.sampler.resolved_phi_cri(&ctx.cfg.sim);
    let load_scale = set
        .feasible()
        .next()
        .map(|s| s.load_scale.clone())
        .unwrap_or_else(|| vec![1.0; case.loads.len()]);
    let candidates = resample_gaps(
        &set,
        &model,
        n_new,
        ctx.cfg.sampler.rng_seed,
        phi_cri,
        &case.u_min(),
        &case.u_max(),
        &load_scale,
    )?;
    let gammas: Vec<f64> = candidates.iter().map(|c| c.gamma).collect();
    let gamma_cri = ctx.cfg.sampler.resolved_gamma_cri(&case.u_max());
    let terminate = check_termination(&gammas, gamma_cri)?;
    write_json(
        &out_path(&ctx.out, "resample_candidates.json"),
        &serde_json::json!({
            "candidates": candidates,
            "gamma_cri": gamma_cri,
            "terminate": terminate,
        }),
    )?;
    println!(
        "resample: {} candidates, min gap {:.4}, terminate = {terminate} -> {}",
        candidates.len(),
        gammas.iter().fold(f64::INFINITY, |a, &b| a.min(b)),
        out_path(&ctx.out, "resample_candidates.json").display()
    );
    Ok(())
}

/// Stage output of `cluster-ops`: everything later stages need to chain
/// without re-simulating.
#[derive(Debug, Serialize, Deserialize)]
pub struct OpClusters {
    pub contingency_id: String,
    /// Pool indices that survived the feasibility screen.
    pub op_refs: Vec<usize>,
    pub excluded: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub spearman: Vec<Vec<f64>>,
    /// Rows with zero rank variance, correlated as zero off-diagonal.
    pub constant_rows: Vec<usize>,
    pub partition: Partition,
    pub eigenvalues: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn cluster_ops(ctx: &Ctx, cont: &ContArgs, pool: &Path) -> Result<()> {
    let case = ctx.case()?;
    let cont = cont.resolve(&case)?;
    let ops = config::load_pool(pool, &case)?;
    let build = build_sensitivity_matrix(&case, &ops, &cont, &ctx.cfg.sim)?;
    let (sc, constant_rows) = spearman_matrix(&build.matrix)?;
    let affinity: Vec<Vec<f64>> = sc
        .iter()
        .map(|r| r.iter().map(|&v| (1.0 + v) / 2.0).collect())
        .collect();
    let outcome = spectral_cluster(&affinity, None)?;
    let result = OpClusters {
        contingency_id: cont.id.clone(),
        op_refs: build.matrix.op_refs.clone(),
        excluded: build.excluded.clone(),
        rows: build.matrix.rows.clone(),
        spearman: sc,
        constant_rows,
        partition: outcome.partition,
        eigenvalues: outcome.eigenvalues,
        warnings: outcome.warnings,
    };
    write_json(&out_path(&ctx.out, "op_clusters.json"), &result)?;
    println!(
        "cluster-ops: {} operating points into {} clusters ({} excluded) -> {}",
        result.op_refs.len(),
        result.partition.k,
        result.excluded.len(),
        out_path(&ctx.out, "op_clusters.json").display()
    );
    Ok(())
}

pub fn cluster_contingencies(ctx: &Ctx, contingencies: &Path, pool: &Path) -> Result<()> {
    let case = ctx.case()?;
    let conts = config::load_contingencies(contingencies, &case)?;
    let ops = config::load_pool(pool, &case)?;
    let mut partitions = Vec::with_capacity(conts.len());
    let mut ids = Vec::with_capacity(conts.len());
    for cont in &conts {
        let build = build_sensitivity_matrix(&case, &ops, cont, &ctx.cfg.sim)?;
        let (sc, _) = spearman_matrix(&build.matrix)?;
        let affinity: Vec<Vec<f64>> = sc
            .iter()
            .map(|r| r.iter().map(|&v| (1.0 + v) / 2.0).collect())
            .collect();
        partitions.push(spectral_cluster(&affinity, None)?.partition);
        ids.push(cont.id.clone());
    }
    let outcome = cluster_conts(&partitions)?;
    write_json(
        &out_path(&ctx.out, "contingency_clusters.json"),
        &serde_json::json!({
            "contingency_ids": ids,
            "op_partitions": partitions,
            "partition": outcome.partition,
            "eigenvalues": outcome.eigenvalues,
            "warnings": outcome.warnings,
        }),
    )?;
    println!(
        "cluster-contingencies: {} contingencies into {} clusters -> {}",
        ids.len(),
        outcome.partition.k,
        out_path(&ctx.out, "contingency_clusters.json").display()
    );
    Ok(())
}

pub fn fit_gaussians(ctx: &Ctx, pool: &Path, clusters: Option<&Path>) -> Result<()> {
    let case = ctx.case()?;
    let ops = config::load_pool(pool, &case)?;
    let default = out_path(&ctx.out, "op_clusters.json");
    let cpath = clusters.unwrap_or(&default);
    let text = fs::read_to_string(cpath)
        .with_context(|| format!("reading cluster file {}", cpath.display()))?;
    let oc: OpClusters = serde_json::from_str(&text)
        .with_context(|| format!("parsing cluster file {}", cpath.display()))?;
    let mut gaussians: Vec<ClusterGaussian> = Vec::with_capacity(oc.partition.k);
    for members in oc.partition.members() {
        let pts: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| {
                let r = oc.op_refs[i];
                if r >= ops.len() {
                    bail!("cluster file references pool index {r}, pool has {}", ops.len());
                }
                Ok(ops[r].gen_p.clone())
            })
            .collect::<Result<_>>()?;
        gaussians.push(fit_cluster_gaussian(&pts)?);
    }
    write_json(
        &out_path(&ctx.out, "gaussians.json"),
        &serde_json::json!({
            "contingency_id": oc.contingency_id,
            "gaussians": gaussians,
            "cluster_sizes": oc.partition.counts(),
        }),
    )?;
    println!(
        "fit-gaussians: {} cluster Gaussians -> {}",
        gaussians.len(),
        out_path(&ctx.out, "gaussians.json").display()
    );
    Ok(())
}

pub fn load_artifacts(path: &Path) -> Result<OfflineArtifacts> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading offline artifacts {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing offline artifacts {}", path.display()))
}

pub fn match_cmd(ctx: &Ctx, artifacts: Option<&Path>, op: &str) -> Result<()> {
    let default = out_path(&ctx.out, "offline_artifacts.json");
    let arts = load_artifacts(artifacts.unwrap_or(&default))?;
    let u = config::parse_op_vector(op)?;
    let mut matches = Vec::with_capacity(arts.scenarios.len());
    for sc in &arts.scenarios {
        let (cluster, mcgs) = match_op(&u, &sc.gaussians, &sc.rankings)?;
        matches.push(serde_json::json!({
            "contingency_id": sc.contingency_id,
            "cluster": cluster,
            "mcgs": mcgs,
        }));
    }
    let doc = serde_json::json!({ "op": u, "matches": matches });
    write_json(&out_path(&ctx.out, "match.json"), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

pub fn offline(ctx: &Ctx, contingencies: &Path, pool: &Path) -> Result<()> {
    let case = ctx.case()?;
    let conts = config::load_contingencies(contingencies, &case)?;
    let ops = config::load_pool(pool, &case)?;
    let arts = run_offline(&case, &ops, &conts, &ctx.cfg.sim)?;
    write_json(&out_path(&ctx.out, "offline_artifacts.json"), &arts)?;
    println!(
        "offline: {} contingencies into {} scenarios over {} common operating points -> {}",
        arts.contingency_ids.len(),
        arts.scenarios.len(),
        arts.common_ops.len(),
        out_path(&ctx.out, "offline_artifacts.json").display()
    );
    Ok(())
}

pub fn load_schedule(path: &Path) -> Result<RefreshSchedule> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading schedule {}", path.display()))?;
    let s: RefreshSchedule = serde_json::from_str(&text)
        .with_context(|| format!("parsing schedule {}", path.display()))?;
    s.validate()?;
    Ok(s)
}

#[allow(clippy::too_many_arguments)]
pub fn refresh(
    ctx: &Ctx,
    artifacts: Option<&Path>,
    contingencies: &Path,
    op: &str,
    schedule: &Path,
    horizon: Option<f64>,
    at: Option<f64>,
) -> Result<()> {
    let case = ctx.case()?;
    let default = out_path(&ctx.out, "offline_artifacts.json");
    let arts = load_artifacts(artifacts.unwrap_or(&default))?;
    let conts = config::load_contingencies(contingencies, &case)?;
    let sched = load_schedule(schedule)?;
    let gen_p = config::parse_op_vector(op)?;

    let ticks = match at {
        Some(t) => vec![t],
        None => {
            let h = horizon.unwrap_or_else(|| {
                sched
                    .load_profile
                    .last()
                    .map(|p| p.t.max(0.0))
                    .unwrap_or(0.0)
            });
            sched.ticks(h)
        }
    };
    if ticks.is_empty() {
        bail!("refresh horizon covers no ticks");
    }

    // All ticks run before anything is written, so a failure leaves no
    // partial series behind.
    let mut outcomes: Vec<RefreshOutcome> = Vec::with_capacity(ticks.len());
    for &t in &ticks {
        let current = OperatingPoint {
            gen_p: gen_p.clone(),
            load_scale: vec![sched.scale_at(t); case.loads.len()],
        };
        let outcome = run_refresh(
            &case,
            &arts,
            &conts,
            &current,
            &sched,
            &ctx.cfg.sim,
            &ctx.cfg.sampler,
            t,
        )?;
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        outcomes.push(outcome);
    }

    let dir = out_path(&ctx.out, "refresh");
    for (k, o) in outcomes.iter().enumerate() {
        write_json(&dir.join(format!("tick_{k:04}.json")), o)?;
    }
    let series: Vec<&AssessmentReport> = outcomes.iter().map(|o| &o.report).collect();
    write_json(&dir.join("refresh_series.json"), &series)?;
    let last = outcomes.last().expect("at least one tick");
    println!(
        "refresh: {} ticks, final verdict {} -> {}",
        outcomes.len(),
        serde_json::to_string(&last.report.verdict)?,
        dir.join("refresh_series.json").display()
    );
    Ok(())
}

pub fn assess_cmd(
    ctx: &Ctx,
    models: &[PathBuf],
    op: &str,
    margin: Option<f64>,
    samples: Option<&Path>,
    at: f64,
) -> Result<()> {
    let u = config::parse_op_vector(op)?;
    let loaded: Vec<BoundaryModel> = models
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<_>>()?;
    let fixed = margin.or(ctx.cfg.thresholds.margin);
    let thresholds: Vec<f64> = match (fixed, samples) {
        (Some(m), _) => vec![m; loaded.len()],
        (None, Some(sp)) => {
            let set = load_samples(sp)?;
            let phi_cri = set.config.resolved_phi_cri(&ctx.cfg.sim);
            loaded
                .iter()
                .map(|m| calibrate_margin(m, &set, phi_cri))
                .collect::<tsb_core::error::Result<_>>()?
        }
        (None, None) => vec![0.0; loaded.len()],
    };
    let report = assess(&u, &loaded, &thresholds, at)?;
    write_json(&out_path(&ctx.out, "assessment.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
