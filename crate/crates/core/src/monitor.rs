//! Scenario-aware monitoring: an offline stage condenses an operating-point
//! pool and a contingency list into a few scenarios, each with cluster
//! Gaussians for matching and a generator ranking that picks the search
//! directions; a refresh pass then re-learns small boundary models in a box
//! around the live dispatch and grades it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{self, BoundaryModel, TrainOptions};
use crate::error::{Error, Result};
use crate::grid::{GridCase, OperatingPoint};
use crate::index::evaluate_operating_point;
use crate::sampler::{
    generate_dataset, SampleLabel, SampleSet, SamplerConfig, SamplerReport,
};
use crate::scenario::{
    ari, build_sensitivity_matrix, cluster_contingencies, fit_cluster_gaussian, match_op,
    rank_mcg, select_representatives, spearman_matrix, spectral_cluster, ClusterGaussian,
    McgRanking, Partition, SensitivityBuild, SensitivityMatrix, SpectralOutcome, DEFAULT_TOP_K,
};
use crate::tds::{Contingency, SimConfig};

/// One step of a piecewise-constant load profile: from `t` seconds of
/// schedule time onward, every load is scaled by `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    pub scale: f64,
}

/// When to refresh and where to search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefreshSchedule {
    /// Seconds of schedule time between refresh passes.
    pub period: f64,
    /// Load multiplier steps; the first must cover t = 0.
    pub load_profile: Vec<ProfilePoint>,
    /// Search box half-widths in MW; entry j bounds how far the j-th most
    /// critical generator may move from its current dispatch.
    pub search_box: Vec<f64>,
}

impl RefreshSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.period > 0.0 && self.period.is_finite()) {
            return bad(format!("refresh period must be positive, got {}", self.period));
        }
        if self.load_profile.is_empty() {
            return bad("load profile is empty".into());
        }
        if self.load_profile[0].t > 0.0 {
            return bad(format!(
                "load profile starts at t = {}, leaving t = 0 uncovered",
                self.load_profile[0].t
            ));
        }
        for w in self.load_profile.windows(2) {
            if !(w[1].t > w[0].t) {
                return bad(format!(
                    "load profile times must increase, got {} then {}",
                    w[0].t, w[1].t
                ));
            }
        }
        for p in &self.load_profile {
            if !p.t.is_finite() || !(p.scale > 0.0 && p.scale.is_finite()) {
                return bad(format!("bad profile point (t = {}, scale = {})", p.t, p.scale));
            }
        }
        if self.search_box.is_empty() {
            return bad("search box has no half-widths".into());
        }
        for &hw in &self.search_box {
            if !(hw > 0.0 && hw.is_finite()) {
                return bad(format!("search half-width must be positive, got {hw}"));
            }
        }
        Ok(())
    }

    /// Load multiplier in force at schedule time `t`.
    pub fn scale_at(&self, t: f64) -> f64 {
        let mut s = self.load_profile[0].scale;
        for p in &self.load_profile {
            if p.t <= t {
                s = p.scale;
            } else {
                break;
            }
        }
        s
    }

    /// Refresh instants from 0 through `horizon`, inclusive.
    pub fn ticks(&self, horizon: f64) -> Vec<f64> {
        if !(horizon >= 0.0) {
            return Vec::new();
        }
        let n = (horizon / self.period).floor() as usize;
        (0..=n).map(|k| k as f64 * self.period).collect()
    }
}

/// Security grade of a dispatch against a boundary model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Secure,
    Marginal,
    Insecure,
}

impl Verdict {
    fn severity(self) -> u8 {
        match self {
            Verdict::Secure => 0,
            Verdict::Marginal => 1,
            Verdict::Insecure => 2,
        }
    }
}

/// Secure strictly above the threshold, insecure strictly below its
/// negation, marginal inside the closed band.
pub fn verdict_for(decision: f64, threshold: f64) -> Verdict {
    if decision.abs() <= threshold {
        Verdict::Marginal
    } else if decision > threshold {
        Verdict::Secure
    } else {
        Verdict::Insecure
    }
}

/// Outcome of grading one dispatch at one schedule instant.
///
/// `wall_time_s` is measured, so it is skipped on serialization to keep
/// persisted reports byte-stable across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessmentReport {
    /// Schedule time of the pass, seconds.
    pub timestamp: f64,
    /// Cluster the dispatch matched under the deciding scenario.
    pub matched_cluster: Option<usize>,
    /// Most critical generators there, controllable indices.
    pub mcgs: Vec<usize>,
    /// Contingency id of the model that decided the verdict.
    pub boundary_model_ref: String,
    /// Decision value of that model; None when the whole search box came
    /// out one class and no model was trained.
    pub current_op_decision_value: Option<f64>,
    /// Margin half-width the verdict was graded against.
    pub margin_threshold: f64,
    pub verdict: Verdict,
    /// Unique simulations spent across all scenarios in this pass.
    pub samples_used: usize,
    #[serde(skip_serializing, default)]
    pub wall_time_s: f64,
}

/// Grades a dispatch against several boundary models, one margin threshold
/// per model. The worst per-model verdict wins; ties go to the smaller
/// decision value, then the earlier model.
pub fn assess(
    u: &[f64],
    models: &[BoundaryModel],
    thresholds: &[f64],
    timestamp: f64,
) -> Result<AssessmentReport> {
    if models.is_empty() {
        return Err(Error::Contract("no boundary models to grade against".into()));
    }
    if thresholds.len() != models.len() {
        return Err(Error::Contract(format!(
            "{} thresholds for {} models",
            thresholds.len(),
            models.len()
        )));
    }
    for &t in thresholds {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!(
                "margin threshold must be nonnegative and finite, got {t}"
            )));
        }
    }
    let mut pick: Option<(usize, f64, Verdict)> = None;
    for (i, m) in models.iter().enumerate() {
        if m.feature_scale.mean.len() != u.len() {
            return Err(Error::Contract(format!(
                "model {} expects {} coordinates, dispatch has {}",
                m.contingency_id,
                m.feature_scale.mean.len(),
                u.len()
            )));
        }
        let d = m.decision(u);
        let v = verdict_for(d, thresholds[i]);
        let worse = match &pick {
            None => true,
            Some((_, bd, bv)) => {
                v.severity() > bv.severity() || (v.severity() == bv.severity() && d < *bd)
            }
        };
        if worse {
            pick = Some((i, d, v));
        }
    }
    let (i, d, v) = pick.expect("models is nonempty");
    Ok(AssessmentReport {
        timestamp,
        matched_cluster: None,
        mcgs: Vec::new(),
        boundary_model_ref: models[i].contingency_id.clone(),
        current_op_decision_value: Some(d),
        margin_threshold: thresholds[i],
        verdict: v,
        samples_used: 0,
        wall_time_s: 0.0,
    })
}

/// Margin threshold for a model: the largest |decision| over the training
/// samples inside the critical band, i.e. how far the decision value may
/// stray while the underlying index still reads near-boundary. Falls back
/// to the smallest |decision| over all feasible samples when the set has
/// no critical members.
pub fn calibrate_margin(model: &BoundaryModel, set: &SampleSet, phi_cri: f64) -> Result<f64> {
    let mut min_all = f64::INFINITY;
    let mut max_band: f64 = 0.0;
    let mut any = false;
    let mut any_band = false;
    for s in set.feasible() {
        let d = model.decision(&s.op).abs();
        any = true;
        min_all = min_all.min(d);
        if s.is_critical(phi_cri) {
            any_band = true;
            max_band = max_band.max(d);
        }
    }
    if !any {
        return Err(Error::Contract(
            "no feasible samples to calibrate the margin against".into(),
        ));
    }
    Ok(if any_band { max_band } else { min_all })
}

/// Offline products for one representative contingency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContingencyScenario {
    pub contingency_id: String,
    /// Operating-point clusters over the common pool.
    pub op_partition: Partition,
    /// Per cluster, the position in `common_ops` of its most severe member.
    pub representatives: Vec<usize>,
    pub gaussians: Vec<ClusterGaussian>,
    pub rankings: Vec<McgRanking>,
    /// Severity index per common operating point under this contingency.
    pub phi: Vec<f64>,
    /// Rank-correlation matrix over the common pool, kept for inspection
    /// and plot export.
    pub spearman: Vec<Vec<f64>>,
}

/// Everything the offline stage hands to later refresh passes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineArtifacts {
    pub case_ref: String,
    /// The pool's dispatch coordinates, in caller order.
    pub pool_ops: Vec<Vec<f64>>,
    pub pool_load_scale: Vec<Vec<f64>>,
    /// Pool indices feasible under every contingency; per-scenario indexing
    /// refers to positions in this list.
    pub common_ops: Vec<usize>,
    pub contingency_ids: Vec<String>,
    /// Clusters over the contingency list by partition agreement.
    pub contingency_partition: Partition,
    /// Shifted partition-agreement matrix between contingencies, in [0, 1].
    pub contingency_affinity: Vec<Vec<f64>>,
    /// One scenario per contingency cluster, keyed by its medoid.
    pub scenarios: Vec<ContingencyScenario>,
}

/// Pure clustering stage behind [`run_offline`]: operating-point clusters
/// per contingency, contingency clusters by partition agreement, medoid
/// contingencies, then Gaussians, rankings, and representatives per
/// scenario.
///
/// `builds[c]` and `phis[c]` are aligned row for row; `op_refs` index into
/// the shared pool.
pub fn scenario_pipeline(
    case_ref: &str,
    pool: &[OperatingPoint],
    contingency_ids: &[String],
    builds: &[SensitivityBuild],
    phis: &[Vec<f64>],
) -> Result<OfflineArtifacts> {
    if builds.is_empty() || builds.len() != contingency_ids.len() || builds.len() != phis.len() {
        return Err(Error::Contract(format!(
            "{} sensitivity builds, {} contingency ids, {} severity vectors",
            builds.len(),
            contingency_ids.len(),
            phis.len()
        )));
    }
    for (b, phi) in builds.iter().zip(phis) {
        if b.matrix.rows.len() != phi.len() {
            return Err(Error::Contract(format!(
                "{} severity values for {} gradient rows",
                phi.len(),
                b.matrix.rows.len()
            )));
        }
    }

    let mut common: Vec<usize> = builds[0].matrix.op_refs.clone();
    for b in &builds[1..] {
        common.retain(|r| b.matrix.op_refs.contains(r));
    }
    if common.len() < 2 {
        return Err(Error::Infeasible(format!(
            "only {} pool operating points are feasible under every contingency",
            common.len()
        )));
    }

    // Per contingency: restrict to the common pool, correlate rankings,
    // cluster. The affinity shift maps correlations from [-1, 1] to [0, 1].
    let mut partitions = Vec::with_capacity(builds.len());
    let mut per_rows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(builds.len());
    let mut per_phi: Vec<Vec<f64>> = Vec::with_capacity(builds.len());
    let mut per_sc: Vec<Vec<Vec<f64>>> = Vec::with_capacity(builds.len());
    for (c, b) in builds.iter().enumerate() {
        let pos: Vec<usize> = common
            .iter()
            .map(|r| {
                b.matrix
                    .op_refs
                    .iter()
                    .position(|x| x == r)
                    .expect("common refs are drawn from every build")
            })
            .collect();
        let rows: Vec<Vec<f64>> = pos.iter().map(|&p| b.matrix.rows[p].clone()).collect();
        let phi: Vec<f64> = pos.iter().map(|&p| phis[c][p]).collect();
        let sub = SensitivityMatrix {
            contingency_id: contingency_ids[c].clone(),
            rows: rows.clone(),
            op_refs: common.clone(),
        };
        let (sc, _constant_rows) = spearman_matrix(&sub)?;
        let affinity: Vec<Vec<f64>> = sc
            .iter()
            .map(|row| row.iter().map(|&v| (1.0 + v) / 2.0).collect())
            .collect();
        partitions.push(spectral_cluster(&affinity, None)?.partition);
        per_rows.push(rows);
        per_phi.push(phi);
        per_sc.push(sc);
    }

    let cont_out = if builds.len() == 1 {
        SpectralOutcome {
            partition: Partition {
                assignments: vec![0],
                k: 1,
            },
            eigenvalues: Vec::new(),
            warnings: Vec::new(),
        }
    } else {
        cluster_contingencies(&partitions)?
    };
    let mut contingency_affinity = vec![vec![1.0; builds.len()]; builds.len()];
    for i in 0..builds.len() {
        for j in i + 1..builds.len() {
            let a = (1.0 + ari(&partitions[i], &partitions[j])?) / 2.0;
            contingency_affinity[i][j] = a;
            contingency_affinity[j][i] = a;
        }
    }

    // Medoid per contingency cluster: the member whose partition agrees
    // most with its co-members on average, earliest on ties.
    let mut rep_conts = Vec::with_capacity(cont_out.partition.k);
    for members in cont_out.partition.members() {
        let mut best = members[0];
        let mut best_score = f64::NEG_INFINITY;
        for &f in &members {
            let mut total = 0.0;
            for &g in &members {
                if g != f {
                    total += ari(&partitions[f], &partitions[g])?;
                }
            }
            let score = if members.len() > 1 {
                total / (members.len() - 1) as f64
            } else {
                0.0
            };
            if score > best_score {
                best_score = score;
                best = f;
            }
        }
        rep_conts.push(best);
    }

    let mut scenarios = Vec::with_capacity(rep_conts.len());
    for &rc in &rep_conts {
        let part = &partitions[rc];
        let representatives = select_representatives(part, &per_phi[rc])?;
        let mut gaussians = Vec::with_capacity(part.k);
        let mut rankings = Vec::with_capacity(part.k);
        for (cid, members) in part.members().iter().enumerate() {
            let ops: Vec<Vec<f64>> = members
                .iter()
                .map(|&i| pool[common[i]].gen_p.clone())
                .collect();
            gaussians.push(fit_cluster_gaussian(&ops)?);
            let rows: Vec<Vec<f64>> = members.iter().map(|&i| per_rows[rc][i].clone()).collect();
            rankings.push(rank_mcg(&rows, cid, DEFAULT_TOP_K)?);
        }
        scenarios.push(ContingencyScenario {
            contingency_id: contingency_ids[rc].clone(),
            op_partition: part.clone(),
            representatives,
            gaussians,
            rankings,
            phi: per_phi[rc].clone(),
            spearman: per_sc[rc].clone(),
        });
    }

    Ok(OfflineArtifacts {
        case_ref: case_ref.to_string(),
        pool_ops: pool.iter().map(|o| o.gen_p.clone()).collect(),
        pool_load_scale: pool.iter().map(|o| o.load_scale.clone()).collect(),
        common_ops: common,
        contingency_ids: contingency_ids.to_vec(),
        contingency_partition: cont_out.partition,
        contingency_affinity,
        scenarios,
    })
}

/// Builds the full offline product for a pool of operating points: one
/// sensitivity matrix and severity vector per contingency, then the
/// clustering pipeline. One simulation plus one adjoint pass per feasible
/// (point, contingency) pair.
pub fn run_offline(
    case: &GridCase,
    pool: &[OperatingPoint],
    contingencies: &[Contingency],
    sim: &SimConfig,
) -> Result<OfflineArtifacts> {
    if pool.len() < 2 {
        return Err(Error::Contract(format!(
            "offline pool needs at least 2 operating points, got {}",
            pool.len()
        )));
    }
    if contingencies.is_empty() {
        return Err(Error::Contract("no contingencies to screen".into()));
    }
    sim.validate()?;
    let mut builds = Vec::with_capacity(contingencies.len());
    let mut phis = Vec::with_capacity(contingencies.len());
    for cont in contingencies {
        let b = build_sensitivity_matrix(case, pool, cont, sim)?;
        let phi: Vec<f64> = b
            .matrix
            .op_refs
            .par_iter()
            .map(|&r| evaluate_operating_point(case, &pool[r], cont, sim, false).map(|o| o.phi))
            .collect::<Result<_>>()?;
        builds.push(b);
        phis.push(phi);
    }
    let ids: Vec<String> = contingencies.iter().map(|c| c.id.clone()).collect();
    let case_ref = format!("{}-bus", case.buses.len());
    scenario_pipeline(&case_ref, pool, &ids, &builds, &phis)
}

/// Clamps a case's dispatch limits to a search box around the current
/// dispatch: ranked generators may move up to their half-width, every other
/// controllable is frozen where it is.
pub fn restrict_case(
    case: &GridCase,
    current: &OperatingPoint,
    mcgs: &[usize],
    half_widths: &[f64],
) -> Result<GridCase> {
    current.check_dims(case)?;
    if mcgs.len() > half_widths.len() {
        return Err(Error::Config(format!(
            "{} half-widths for {} ranked generators",
            half_widths.len(),
            mcgs.len()
        )));
    }
    let ctrl = case.controllable_gens();
    if let Some(&bad) = mcgs.iter().find(|&&m| m >= ctrl.len()) {
        return Err(Error::Contract(format!(
            "ranked generator index {bad} out of range for {} controllables",
            ctrl.len()
        )));
    }
    let mut restricted = case.clone();
    for (pos, &gi) in ctrl.iter().enumerate() {
        let u = current.gen_p[pos];
        let g = &mut restricted.generators[gi];
        if u < g.p_min - 1e-9 || u > g.p_max + 1e-9 {
            return Err(Error::Infeasible(format!(
                "current dispatch {u} MW outside [{}, {}] at bus {}",
                g.p_min, g.p_max, g.bus
            )));
        }
        match mcgs.iter().position(|&m| m == pos) {
            Some(rank) => {
                let hw = half_widths[rank];
                g.p_min = g.p_min.max(u - hw);
                g.p_max = g.p_max.min(u + hw);
            }
            None => {
                let pin = u.clamp(g.p_min, g.p_max);
                g.p_min = pin;
                g.p_max = pin;
            }
        }
    }
    Ok(restricted)
}

/// What one refresh pass produced for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRefresh {
    pub contingency_id: String,
    pub matched_cluster: usize,
    /// Generators the search box was opened along.
    pub mcgs: Vec<usize>,
    /// True when the Gaussian match degenerated and the nearest-mean
    /// cluster was used instead.
    pub fallback: bool,
    /// None when every sample in the box carried one label.
    pub model: Option<BoundaryModel>,
    pub threshold: Option<f64>,
    pub dataset: SampleSet,
    pub report: SamplerReport,
    /// The single label observed when no model could be trained.
    pub uniform_label: Option<SampleLabel>,
}

impl ScenarioRefresh {
    /// Verdict contribution at a dispatch: graded by the model when one
    /// exists, otherwise decided by the uniform label of the box.
    pub fn grade(&self, u: &[f64]) -> (Verdict, Option<f64>, f64) {
        if let Some(m) = &self.model {
            let d = m.decision(u);
            let t = self.threshold.unwrap_or(0.0);
            (verdict_for(d, t), Some(d), t)
        } else if self.uniform_label == Some(SampleLabel::Unstable) {
            (Verdict::Insecure, None, 0.0)
        } else {
            (Verdict::Secure, None, 0.0)
        }
    }
}

/// Everything one refresh pass produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefreshOutcome {
    pub scenarios: Vec<ScenarioRefresh>,
    pub report: AssessmentReport,
    pub warnings: Vec<String>,
}

fn nearest_mean(gaussians: &[ClusterGaussian], u: &[f64]) -> Result<usize> {
    let mut best = None;
    for (c, g) in gaussians.iter().enumerate() {
        if g.mu.len() != u.len() {
            return Err(Error::Contract(format!(
                "cluster mean has {} coordinates, dispatch has {}",
                g.mu.len(),
                u.len()
            )));
        }
        let d: f64 = g.mu.iter().zip(u).map(|(m, v)| (m - v) * (m - v)).sum();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Contract("no cluster Gaussians to fall back on".into()))
}

/// One refresh pass at schedule time `timestamp`: match the dispatch to a
/// cluster per scenario, open a search box along that cluster's most
/// critical generators, re-learn a local boundary model per scenario, and
/// grade the dispatch against the worst of them.
///
/// A degenerate Gaussian match falls back to the nearest-mean cluster with
/// a warning. A box whose samples all carry one label yields no model and
/// contributes a secure or insecure verdict directly.
#[allow(clippy::too_many_arguments)]
pub fn run_refresh(
    case: &GridCase,
    artifacts: &OfflineArtifacts,
    contingencies: &[Contingency],
    current_op: &OperatingPoint,
    schedule: &RefreshSchedule,
    sim: &SimConfig,
    sampler_cfg: &SamplerConfig,
    timestamp: f64,
) -> Result<RefreshOutcome> {
    let started = std::time::Instant::now();
    schedule.validate()?;
    current_op.check_dims(case)?;
    if artifacts.scenarios.is_empty() {
        return Err(Error::Contract("offline artifacts carry no scenarios".into()));
    }
    let scale = schedule.scale_at(timestamp);
    let mut warnings = Vec::new();
    let mut passes: Vec<ScenarioRefresh> = Vec::with_capacity(artifacts.scenarios.len());

    for (si, sc) in artifacts.scenarios.iter().enumerate() {
        let cont = contingencies
            .iter()
            .find(|c| c.id == sc.contingency_id)
            .ok_or_else(|| {
                Error::Contract(format!(
                    "scenario contingency {} is not in the supplied list",
                    sc.contingency_id
                ))
            })?;

        let mut matched = None;
        if let Ok((c, m)) = match_op(&current_op.gen_p, &sc.gaussians, &sc.rankings) {
            let finite = sc.gaussians[c]
                .log_density(&current_op.gen_p)
                .map(|ld| ld.is_finite())
                .unwrap_or(false);
            if finite {
                matched = Some((c, m));
            }
        }
        let (cluster, mcgs, fallback) = match matched {
            Some((c, m)) => (c, m, false),
            None => {
                let c = nearest_mean(&sc.gaussians, &current_op.gen_p)?;
                let m = sc
                    .rankings
                    .iter()
                    .find(|r| r.cluster_id == c)
                    .ok_or_else(|| {
                        Error::Contract(format!("no generator ranking for cluster {c}"))
                    })?
                    .mcgs()
                    .to_vec();
                warnings.push(format!(
                    "scenario {}: degenerate density match at t = {timestamp}, using nearest-mean cluster {c}",
                    sc.contingency_id
                ));
                (c, m, true)
            }
        };

        let restricted = restrict_case(case, current_op, &mcgs, &schedule.search_box)?;
        let mut cfg = sampler_cfg.clone();
        cfg.load_band = (scale, scale);
        cfg.rng_seed = sampler_cfg.rng_seed
            ^ (si as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ timestamp.to_bits().rotate_left(17);
        let (set, report) = generate_dataset(&restricted, cont, sim, &cfg)?;

        let mut saw_stable = false;
        let mut saw_unstable = false;
        for s in set.feasible() {
            match s.label {
                SampleLabel::Stable => saw_stable = true,
                SampleLabel::Unstable => saw_unstable = true,
                SampleLabel::Infeasible => {}
            }
        }
        let (model, threshold, uniform_label) = if saw_stable && saw_unstable {
            let m = boundary::train(&set, &TrainOptions::default())?;
            let t = calibrate_margin(&m, &set, report.phi_cri)?;
            (Some(m), Some(t), None)
        } else if saw_stable || saw_unstable {
            let label = if saw_stable {
                SampleLabel::Stable
            } else {
                SampleLabel::Unstable
            };
            (None, None, Some(label))
        } else {
            return Err(Error::Infeasible(format!(
                "search box for scenario {} holds no feasible samples",
                sc.contingency_id
            )));
        };

        passes.push(ScenarioRefresh {
            contingency_id: sc.contingency_id.clone(),
            matched_cluster: cluster,
            mcgs,
            fallback,
            model,
            threshold,
            dataset: set,
            report,
            uniform_label,
        });
    }

    // Worst scenario decides; ties go to the smaller decision value (a
    // missing value ranks last), then the earlier scenario.
    let mut pick: Option<(usize, Verdict, Option<f64>, f64)> = None;
    for (i, p) in passes.iter().enumerate() {
        let (v, d, t) = p.grade(&current_op.gen_p);
        let key = d.unwrap_or(f64::INFINITY);
        let worse = match &pick {
            None => true,
            Some((_, bv, bd, _)) => {
                v.severity() > bv.severity()
                    || (v.severity() == bv.severity() && key < bd.unwrap_or(f64::INFINITY))
            }
        };
        if worse {
            pick = Some((i, v, d, t));
        }
    }
    let (di, verdict, decision, threshold) = pick.expect("at least one scenario ran");
    let report = AssessmentReport {
        timestamp,
        matched_cluster: Some(passes[di].matched_cluster),
        mcgs: passes[di].mcgs.clone(),
        boundary_model_ref: passes[di].contingency_id.clone(),
        current_op_decision_value: decision,
        margin_threshold: threshold,
        verdict,
        samples_used: passes.iter().map(|p| p.report.tds_evaluations).sum(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RefreshOutcome {
        scenarios: passes,
        report,
        warnings,
    })
}
