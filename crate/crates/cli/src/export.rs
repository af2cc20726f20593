//! Plot-ready CSV exports of previously computed artifacts.
//!
//! Every kind reads existing output files where possible; only
//! `gradient_field` runs new simulations, since a gradient quiver is a
//! lattice evaluation rather than a stored artifact.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use tsb_core::boundary::GridSpec;
use tsb_core::monitor::{AssessmentReport, Verdict};
use tsb_core::oracle::gradient_field;
use tsb_core::sampler::SampleLabel;

use crate::commands::{self, ContArgs, Ctx};
use crate::io::{fmt_f64, out_path, Csv};

/// What to export.
#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    /// Sample provenance trails from a guided run.
    #[value(name = "search_paths")]
    SearchPaths,
    /// Decision-value lattice plus support points of a trained model.
    #[value(name = "boundary_curve")]
    BoundaryCurve,
    /// Index gradient at every feasible lattice point.
    #[value(name = "gradient_field")]
    GradientField,
    /// Rank-correlation matrices with cluster assignments.
    #[value(name = "cluster_heatmap")]
    ClusterHeatmap,
    /// Verdict timeline of a refresh run.
    #[value(name = "refresh_series")]
    RefreshSeries,
}

fn label_str(l: SampleLabel) -> &'static str {
    match l {
        SampleLabel::Stable => "stable",
        SampleLabel::Unstable => "unstable",
        SampleLabel::Infeasible => "infeasible",
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Secure => "secure",
        Verdict::Marginal => "marginal",
        Verdict::Insecure => "insecure",
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn search_paths(ctx: &Ctx, samples: Option<&Path>) -> Result<()> {
    let default = out_path(&ctx.out, "samples.jsonl");
    let set = commands::load_samples(samples.unwrap_or(&default))?;
    let d = set.samples.iter().map(|s| s.op.len()).max().unwrap_or(0);
    let coord_names: Vec<String> = (1..=d).map(|i| format!("u{i}")).collect();
    let mut header = vec!["idx", "provenance", "label", "phi", "lambda"];
    header.extend(coord_names.iter().map(|s| s.as_str()));
    let mut csv = Csv::new(&header);
    for (i, s) in set.samples.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            serde_json::to_value(s.provenance)?
                .as_str()
                .unwrap_or("unknown")
                .to_string(),
            label_str(s.label).to_string(),
            opt_f64(s.phi),
            s.lambda.map(|l| l.to_string()).unwrap_or_default(),
        ];
        row.extend(s.op.iter().map(|&v| fmt_f64(v)));
        csv.row(&row);
    }
    let path = out_path(&ctx.out, "search_paths.csv");
    csv.write(&path)?;
    println!("export: {} sample rows -> {}", set.samples.len(), path.display());
    Ok(())
}

pub fn boundary_curve(ctx: &Ctx, model: Option<&Path>, interval: f64) -> Result<()> {
    let case = ctx.case()?;
    let default = out_path(&ctx.out, "boundary_model.json");
    let model = commands::load_model(model.unwrap_or(&default))?;
    let d = model.feature_scale.mean.len();
    if d != 2 {
        return Err(tsb_core::error::Error::Config(format!(
            "boundary_curve needs a 2-dimensional dispatch space, model has {d}"
        ))
        .into());
    }
    let spec = GridSpec {
        mins: case.u_min(),
        maxs: case.u_max(),
        intervals: vec![interval; 2],
    };
    let mut csv = Csv::new(&["u1", "u2", "decision"]);
    let mut n = 0usize;
    for p in spec.enumerate()? {
        let dec = model.decision(&p);
        csv.row(&[fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(dec)]);
        n += 1;
    }
    let path = out_path(&ctx.out, "boundary_curve.csv");
    csv.write(&path)?;

    let mut sup = Csv::new(&["u1", "u2", "coeff"]);
    for s in &model.supports {
        sup.row(&[fmt_f64(s.point[0]), fmt_f64(s.point[1]), fmt_f64(s.coeff)]);
    }
    let sup_path = out_path(&ctx.out, "boundary_supports.csv");
    sup.write(&sup_path)?;
    println!(
        "export: {n} lattice decisions -> {}, {} supports -> {}",
        path.display(),
        model.supports.len(),
        sup_path.display()
    );
    Ok(())
}

pub fn gradient_quiver(ctx: &Ctx, cont: &ContArgs, interval: f64) -> Result<()> {
    let case = ctx.case()?;
    let cont = cont.resolve(&case)?;
    let d = case.u_min().len();
    let spec = GridSpec {
        mins: case.u_min(),
        maxs: case.u_max(),
        intervals: vec![interval; d],
    };
    let field = gradient_field(&case, &cont, &spec, &ctx.cfg.sim)?;
    let mut header: Vec<String> = (1..=d).map(|i| format!("u{i}")).collect();
    header.extend((1..=d).map(|i| format!("g{i}")));
    header.push("phi".into());
    header.push("lambda".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new(&header_refs);
    for gs in &field {
        let mut row: Vec<String> = gs.point.iter().map(|&v| fmt_f64(v)).collect();
        row.extend(gs.grad.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(gs.phi));
        row.push(gs.lambda.to_string());
        csv.row(&row);
    }
    let path = out_path(&ctx.out, "gradient_field.csv");
    csv.write(&path)?;
    println!("export: {} gradient rows -> {}", field.len(), path.display());
    Ok(())
}

pub fn cluster_heatmap(ctx: &Ctx, artifacts: Option<&Path>) -> Result<()> {
    let default = out_path(&ctx.out, "offline_artifacts.json");
    let arts = commands::load_artifacts(artifacts.unwrap_or(&default))?;
    let mut written: Vec<PathBuf> = Vec::new();
    for sc in &arts.scenarios {
        let mut header = vec!["op_ref".to_string(), "cluster".to_string()];
        header.extend(arts.common_ops.iter().map(|r| format!("op{r}")));
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut csv = Csv::new(&header_refs);
        for (i, row) in sc.spearman.iter().enumerate() {
            let mut fields = vec![
                format!("op{}", arts.common_ops[i]),
                sc.op_partition.assignments[i].to_string(),
            ];
            fields.extend(row.iter().map(|&v| fmt_f64(v)));
            csv.row(&fields);
        }
        let path = out_path(&ctx.out, &format!("spearman_{}.csv", sc.contingency_id));
        csv.write(&path)?;
        written.push(path);
    }

    let mut header = vec!["contingency_id".to_string(), "cluster".to_string()];
    header.extend(arts.contingency_ids.iter().cloned());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new(&header_refs);
    for (i, row) in arts.contingency_affinity.iter().enumerate() {
        let mut fields = vec![
            arts.contingency_ids[i].clone(),
            arts.contingency_partition.assignments[i].to_string(),
        ];
        fields.extend(row.iter().map(|&v| fmt_f64(v)));
        csv.row(&fields);
    }
    let path = out_path(&ctx.out, "contingency_affinity.csv");
    csv.write(&path)?;
    written.push(path);
    println!(
        "export: {} heatmap files -> {}",
        written.len(),
        ctx.out.display()
    );
    Ok(())
}

pub fn refresh_series(ctx: &Ctx, series: Option<&Path>) -> Result<()> {
    let default = ctx.out.join("refresh").join("refresh_series.json");
    let path = series.unwrap_or(&default);
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading refresh series {}", path.display()))?;
    let reports: Vec<AssessmentReport> = serde_json::from_str(&text)
        .with_context(|| format!("parsing refresh series {}", path.display()))?;
    let mut csv = Csv::new(&[
        "timestamp",
        "verdict",
        "decision",
        "threshold",
        "matched_cluster",
        "mcgs",
        "samples_used",
        "model_ref",
    ]);
    for r in &reports {
        csv.row(&[
            fmt_f64(r.timestamp),
            verdict_str(r.verdict).to_string(),
            opt_f64(r.current_op_decision_value),
            fmt_f64(r.margin_threshold),
            r.matched_cluster.map(|c| c.to_string()).unwrap_or_default(),
            r.mcgs
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            r.samples_used.to_string(),
            r.boundary_model_ref.clone(),
        ]);
    }
    let out = out_path(&ctx.out, "refresh_series.csv");
    csv.write(&out)?;
    println!("export: {} refresh rows -> {}", reports.len(), out.display());
    Ok(())
}

/// Dispatch for the `export` subcommand.
#[allow(clippy::too_many_arguments)]
pub fn run(
    ctx: &Ctx,
    kind: ExportKind,
    samples: Option<&Path>,
    model: Option<&Path>,
    artifacts: Option<&Path>,
    series: Option<&Path>,
    cont: Option<&ContArgs>,
    interval: Option<f64>,
) -> Result<()> {
    match kind {
        ExportKind::SearchPaths => search_paths(ctx, samples),
        ExportKind::BoundaryCurve => boundary_curve(ctx, model, interval.unwrap_or(2.0)),
        ExportKind::GradientField => {
            let cont = cont.context("gradient_field export needs --fault-bus and --trip")?;
            gradient_quiver(ctx, cont, interval.unwrap_or(5.0))
        }
        ExportKind::ClusterHeatmap => cluster_heatmap(ctx, artifacts),
        ExportKind::RefreshSeries => refresh_series(ctx, series),
    }
}
