//! Boundary-concentrated dataset generation.
//!
//! Seeds a Latin hypercube of operating points, walks each one toward the
//! stability boundary down the index gradient (route 1), recovers a
//! near-boundary sample by bisection when a step crosses the boundary
//! (route 2), walks the boundary tangentially from every critical sample
//! (route 3), then fills coverage gaps by greedy maximin selection of new
//! candidates on a surrogate model's zero set. Every simulator-evaluated
//! operating point is recorded with its provenance, and the whole pipeline
//! is deterministic under a fixed seed.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{train_points, BoundaryModel, TrainOptions};
use crate::error::{Error, Result};
use crate::grid::{GridCase, OperatingPoint};
use crate::index::{adjoint_gradient, evaluate_operating_point};
use crate::tds::{Contingency, SimConfig};

/// Class of a recorded operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleLabel {
    Stable,
    Unstable,
    Infeasible,
}

/// Which mechanism produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    Route1,
    Route2Bisect,
    Route3Traverse,
    BandPair,
    GapResample,
}

/// One recorded operating point with its evaluation results.
///
/// Infeasible samples carry no index value, label sign, or gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    /// Dispatch of the controllable generators, MW.
    pub op: Vec<f64>,
    /// Per-load demand multipliers.
    pub load_scale: Vec<f64>,
    pub contingency_id: String,
    pub phi: Option<f64>,
    /// +1 stable, -1 unstable.
    pub lambda: Option<i8>,
    pub label: SampleLabel,
    pub grad: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl Sample {
    /// Reassembles the full operating point.
    pub fn operating_point(&self) -> OperatingPoint {
        OperatingPoint {
            gen_p: self.op.clone(),
            load_scale: self.load_scale.clone(),
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.label != SampleLabel::Infeasible
    }

    /// Whether the index magnitude is inside the critical band.
    pub fn is_critical(&self, phi_cri: f64) -> bool {
        matches!(self.phi, Some(p) if p.abs() < phi_cri)
    }
}

fn feasible_sample(
    op: &OperatingPoint,
    contingency_id: &str,
    out: EvalOutcome,
    provenance: Provenance,
) -> Sample {
    Sample {
        op: op.gen_p.clone(),
        load_scale: op.load_scale.clone(),
        contingency_id: contingency_id.to_string(),
        phi: Some(out.phi),
        lambda: Some(out.lambda),
        label: if out.lambda > 0 {
            SampleLabel::Stable
        } else {
            SampleLabel::Unstable
        },
        grad: None,
        provenance,
    }
}

fn infeasible_sample(op: &OperatingPoint, contingency_id: &str, provenance: Provenance) -> Sample {
    Sample {
        op: op.gen_p.clone(),
        load_scale: op.load_scale.clone(),
        contingency_id: contingency_id.to_string(),
        phi: None,
        lambda: None,
        label: SampleLabel::Infeasible,
        grad: None,
        provenance,
    }
}

fn d_n_seeds() -> usize {
    20
}
fn d_nu_min() -> f64 {
    0.01
}
fn d_nu_max() -> f64 {
    0.2
}
fn d_max_descent_steps() -> usize {
    30
}
fn d_max_route_steps() -> usize {
    4
}
fn d_traverse_step() -> f64 {
    0.05
}
fn d_bisect_min_width() -> f64 {
    0.1
}
fn d_pair_offset() -> f64 {
    1.0
}
fn d_load_band() -> (f64, f64) {
    (1.0, 1.0)
}
fn d_resample_rounds() -> usize {
    3
}
fn d_resample_per_round() -> usize {
    12
}
fn d_tds_budget() -> usize {
    300
}

/// Sampling knobs. `None` thresholds resolve from the simulation window
/// and generator limits at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Latin hypercube seed count.
    #[serde(default = "d_n_seeds")]
    pub n_seeds: usize,
    /// Lower clamp of the step coefficient.
    #[serde(default = "d_nu_min")]
    pub nu_min: f64,
    /// Upper clamp of the step coefficient.
    #[serde(default = "d_nu_max")]
    pub nu_max: f64,
    /// Index scale inside the step schedule; defaults to the first
    /// feasible seed's magnitude.
    #[serde(default)]
    pub phi_ref: Option<f64>,
    /// Critical band half-width; defaults to 1e-2 * delta_max^2 * t_end.
    #[serde(default)]
    pub phi_cri: Option<f64>,
    /// Termination threshold on squared gap distance; defaults to
    /// (0.01 * max dispatch limit)^2.
    #[serde(default)]
    pub gamma_cri: Option<f64>,
    /// Step cap per route-1 descent.
    #[serde(default = "d_max_descent_steps")]
    pub max_descent_steps: usize,
    /// Boundary points emitted per traversal call.
    #[serde(default = "d_max_route_steps")]
    pub max_route_steps: usize,
    /// Tangential step as a fraction of the largest dispatch limit.
    #[serde(default = "d_traverse_step")]
    pub traverse_step: f64,
    /// Bisection stops when every coordinate gap is below this, MW.
    #[serde(default = "d_bisect_min_width")]
    pub bisect_min_width: f64,
    /// Distance of the stable-side partner probe placed next to each
    /// boundary sample, MW.
    #[serde(default = "d_pair_offset")]
    pub pair_offset: f64,
    /// Load multiplier range sampled by the seeds.
    #[serde(default = "d_load_band")]
    pub load_band: (f64, f64),
    /// Gap re-sampling round cap.
    #[serde(default = "d_resample_rounds")]
    pub resample_rounds: usize,
    /// Candidates selected per re-sampling round.
    #[serde(default = "d_resample_per_round")]
    pub resample_per_round: usize,
    /// Hard cap on unique simulated operating points.
    #[serde(default = "d_tds_budget")]
    pub tds_budget: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_seeds: d_n_seeds(),
            nu_min: d_nu_min(),
            nu_max: d_nu_max(),
            phi_ref: None,
            phi_cri: None,
            gamma_cri: None,
            max_descent_steps: d_max_descent_steps(),
            max_route_steps: d_max_route_steps(),
            traverse_step: d_traverse_step(),
            bisect_min_width: d_bisect_min_width(),
            pair_offset: d_pair_offset(),
            load_band: d_load_band(),
            resample_rounds: d_resample_rounds(),
            resample_per_round: d_resample_per_round(),
            tds_budget: d_tds_budget(),
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.nu_min > 0.0 && self.nu_min <= self.nu_max && self.nu_max <= 1.0) {
            return bad(format!(
                "step coefficients need 0 < nu_min <= nu_max <= 1, got [{}, {}]",
                self.nu_min, self.nu_max
            ));
        }
        for (name, v) in [
            ("phi_ref", self.phi_ref),
            ("phi_cri", self.phi_cri),
            ("gamma_cri", self.gamma_cri),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1".into());
        }
        if !(self.traverse_step > 0.0 && self.traverse_step <= 1.0) {
            return bad(format!(
                "traverse_step must be in (0, 1], got {}",
                self.traverse_step
            ));
        }
        if !(self.bisect_min_width > 0.0) {
            return bad("bisect_min_width must be positive".into());
        }
        if !(self.pair_offset > 0.0 && self.pair_offset.is_finite()) {
            return bad(format!(
                "pair_offset must be positive, got {}",
                self.pair_offset
            ));
        }
        if !(self.load_band.0 > 0.0 && self.load_band.0 <= self.load_band.1) {
            return bad(format!(
                "load band [{}, {}] is empty or nonpositive",
                self.load_band.0, self.load_band.1
            ));
        }
        if self.tds_budget < self.n_seeds {
            return bad(format!(
                "budget {} cannot cover {} seeds",
                self.tds_budget, self.n_seeds
            ));
        }
        Ok(())
    }

    /// Critical band half-width, resolved against the simulation window.
    pub fn resolved_phi_cri(&self, sim: &SimConfig) -> f64 {
        self.phi_cri
            .unwrap_or(1e-2 * sim.delta_max * sim.delta_max * sim.t_end)
    }

    /// Termination threshold, resolved against the dispatch limits.
    pub fn resolved_gamma_cri(&self, u_max: &[f64]) -> f64 {
        self.gamma_cri.unwrap_or_else(|| {
            let m = u_max.iter().fold(0.0f64, |a, &b| a.max(b));
            (0.01 * m) * (0.01 * m)
        })
    }
}

/// A generated dataset with the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub case_ref: String,
    pub config: SamplerConfig,
}

impl SampleSet {
    pub fn feasible(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.is_feasible())
    }

    /// Writes one JSON object per sample line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Sidecar JSON holding everything but the samples.
    pub fn meta_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "case_ref": self.case_ref,
            "config": self.config,
        }))
        .expect("config serializes")
    }

    /// Rebuilds a set from a JSONL reader plus its sidecar parts.
    pub fn read_jsonl<R: BufRead>(r: R, case_ref: String, config: SamplerConfig) -> Result<Self> {
        let mut samples = Vec::new();
        for (no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Config(format!("sample line {no}: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::Config(format!("sample line {no}: {e}")))?,
            );
        }
        Ok(SampleSet {
            samples,
            case_ref,
            config,
        })
    }

    /// Feasible samples as training arrays (points, labels).
    pub fn training_arrays(&self) -> (Vec<Vec<f64>>, Vec<i8>) {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for s in self.feasible() {
            pts.push(s.op.clone());
            labels.push(s.lambda.expect("feasible sample has a label"));
        }
        (pts, labels)
    }
}

/// One feasible evaluation: the signed index and the stability label.
#[derive(Debug, Clone, Copy)]
pub struct EvalOutcome {
    pub phi: f64,
    pub lambda: i8,
}

/// Source of index values and gradients for the sampling routes.
///
/// The production implementation wraps the simulator; tests substitute
/// closed-form landscapes. Implementations memoize, so repeat queries are
/// free and [`OpEvaluator::evaluations`] counts unique simulated points.
pub trait OpEvaluator {
    /// Index and label, or `Infeasible` when screening rejects the point.
    fn evaluate(&mut self, op: &OperatingPoint) -> Result<EvalOutcome>;
    /// Index gradient with respect to the dispatch coordinates.
    fn gradient(&mut self, op: &OperatingPoint) -> Result<Vec<f64>>;
    /// Unique operating points simulated so far.
    fn evaluations(&self) -> usize;
}

/// Simulator-backed evaluator with memoization and budget accounting.
pub struct TdsEvaluator<'a> {
    case: &'a GridCase,
    cont: &'a Contingency,
    cfg: &'a SimConfig,
    enforce_static: bool,
    outcomes: HashMap<Vec<u64>, Option<EvalOutcome>>,
    gradients: HashMap<Vec<u64>, Vec<f64>>,
    simulated: std::collections::HashSet<Vec<u64>>,
}

impl<'a> TdsEvaluator<'a> {
    pub fn new(
        case: &'a GridCase,
        cont: &'a Contingency,
        cfg: &'a SimConfig,
        enforce_static: bool,
    ) -> Self {
        Self {
            case,
            cont,
            cfg,
            enforce_static,
            outcomes: HashMap::new(),
            gradients: HashMap::new(),
            simulated: std::collections::HashSet::new(),
        }
    }
}

impl OpEvaluator for TdsEvaluator<'_> {
    fn evaluate(&mut self, op: &OperatingPoint) -> Result<EvalOutcome> {
        let key = op.bits_key();
        if let Some(cached) = self.outcomes.get(&key) {
            return match cached {
                Some(out) => Ok(*out),
                None => Err(Error::Infeasible("previously screened infeasible".into())),
            };
        }
        match evaluate_operating_point(self.case, op, self.cont, self.cfg, self.enforce_static) {
            Ok(full) => {
                let out = EvalOutcome {
                    phi: full.phi,
                    lambda: full.lambda,
                };
                self.simulated.insert(key.clone());
                self.outcomes.insert(key, Some(out));
                Ok(out)
            }
            Err(Error::Infeasible(msg)) => {
                self.outcomes.insert(key, None);
                Err(Error::Infeasible(msg))
            }
            Err(e) => Err(e),
        }
    }

    fn gradient(&mut self, op: &OperatingPoint) -> Result<Vec<f64>> {
        let key = op.bits_key();
        if let Some(g) = self.gradients.get(&key) {
            return Ok(g.clone());
        }
        let res = adjoint_gradient(self.case, op, self.cont, self.cfg)?;
        self.simulated.insert(key.clone());
        self.gradients.insert(key, res.grad.clone());
        Ok(res.grad)
    }

    fn evaluations(&self) -> usize {
        self.simulated.len()
    }
}

/// Squared Euclidean distance between two dispatch vectors.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Deduplicating sample recorder preserving first-seen order.
struct SampleLog {
    samples: Vec<Sample>,
    index: HashMap<Vec<u64>, usize>,
}

impl SampleLog {
    fn new() -> Self {
        Self {
            samples: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Records a sample, merging into an existing entry for the same
    /// operating point (first provenance wins, missing fields fill in).
    fn push(&mut self, s: Sample) -> usize {
        let key: Vec<u64> = s
            .op
            .iter()
            .chain(s.load_scale.iter())
            .map(|v| v.to_bits())
            .collect();
        if let Some(&i) = self.index.get(&key) {
            let kept = &mut self.samples[i];
            if kept.phi.is_none() {
                kept.phi = s.phi;
                kept.lambda = s.lambda;
                kept.label = s.label;
            }
            if kept.grad.is_none() {
                kept.grad = s.grad;
            }
            return i;
        }
        self.samples.push(s);
        self.index.insert(key, self.samples.len() - 1);
        self.samples.len() - 1
    }

    fn get(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    fn set_grad(&mut self, i: usize, grad: Vec<f64>) {
        self.samples[i].grad = Some(grad);
    }
}

/// Centered Latin hypercube over the dispatch box, one load multiplier
/// drawn per point from `band`.
pub fn seed_initial_ops(
    case: &GridCase,
    band: (f64, f64),
    n: usize,
    rng_seed: u64,
) -> Result<Vec<OperatingPoint>> {
    if n == 0 {
        return Err(Error::Config("seed count must be at least 1".into()));
    }
    if !(band.0 > 0.0 && band.0 <= band.1) {
        return Err(Error::Config(format!(
            "load band [{}, {}] is empty or nonpositive",
            band.0, band.1
        )));
    }
    let lo = case.u_min();
    let hi = case.u_max();
    if lo.iter().zip(&hi).any(|(a, b)| a > b) {
        return Err(Error::Config("dispatch box is empty".into()));
    }
    let dim = lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let strata: Vec<Vec<usize>> = (0..dim)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let gen_p = (0..dim)
            .map(|d| lo[d] + (strata[d][i] as f64 + 0.5) / n as f64 * (hi[d] - lo[d]))
            .collect();
        let scale = if band.0 == band.1 {
            band.0
        } else {
            rng.gen_range(band.0..band.1)
        };
        out.push(OperatingPoint {
            gen_p,
            load_scale: vec![scale; case.loads.len()],
        });
    }
    Ok(out)
}

fn scaled_step(
    sample: &Sample,
    cfg: &SamplerConfig,
    phi_ref: f64,
    u_min: &[f64],
    u_max: &[f64],
    scale: f64,
) -> Result<OperatingPoint> {
    let phi = sample
        .phi
        .ok_or_else(|| Error::Contract("stepping needs an evaluated sample".into()))?;
    let grad = sample
        .grad
        .as_ref()
        .ok_or_else(|| Error::Contract("stepping needs a gradient".into()))?;
    let inf = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
    if inf < 1e-12 {
        return Err(Error::StationaryGradient);
    }
    let nu = (cfg.nu_max * (phi.abs() / phi_ref).tanh()).clamp(cfg.nu_min, cfg.nu_max);
    // Descend |phi|: downhill from the stable side, uphill from the
    // unstable side, always toward the zero crossing.
    let sign = if phi < 0.0 { -1.0 } else { 1.0 };
    let gen_p = sample
        .op
        .iter()
        .enumerate()
        .map(|(j, &u)| {
            (u - scale * nu * u_max[j] * sign * grad[j] / inf).clamp(u_min[j], u_max[j])
        })
        .collect();
    Ok(OperatingPoint {
        gen_p,
        load_scale: sample.load_scale.clone(),
    })
}

/// One gradient-guided step toward the boundary.
///
/// The step scale is `nu * u_max` per coordinate with
/// `nu = clamp(nu_max * tanh(|phi| / phi_ref), nu_min, nu_max)`, applied to
/// the infinity-normalized gradient and clipped to the dispatch box.
pub fn step_toward_boundary(
    sample: &Sample,
    cfg: &SamplerConfig,
    phi_ref: f64,
    u_min: &[f64],
    u_max: &[f64],
) -> Result<OperatingPoint> {
    scaled_step(sample, cfg, phi_ref, u_min, u_max, 1.0)
}

/// Bisects a stable/unstable bracket down to a critical sample.
///
/// Every evaluated midpoint is appended to `log`. Returns the index of the
/// critical sample when one is found; on width exhaustion, the evaluated
/// midpoint with the smallest index magnitude.
fn bisect_crossing_logged(
    a_idx: usize,
    b_idx: usize,
    ev: &mut dyn OpEvaluator,
    phi_cri: f64,
    min_width: f64,
    budget: usize,
    log: &mut SampleLog,
) -> Result<usize> {
    let (a, b) = (log.get(a_idx).clone(), log.get(b_idx).clone());
    for s in [&a, &b] {
        if !s.is_feasible() {
            return Err(Error::BisectionAborted("endpoint is infeasible".into()));
        }
    }
    if a.contingency_id != b.contingency_id {
        return Err(Error::Contract("endpoints from different contingencies".into()));
    }
    if a.op.len() != b.op.len() {
        return Err(Error::Contract("endpoint dimensions differ".into()));
    }
    let (la, lb) = (a.lambda.unwrap(), b.lambda.unwrap());
    if la == lb {
        return Err(Error::Contract("endpoints share a label; no crossing".into()));
    }
    let mut lo = a.clone();
    let mut hi = b.clone();
    let mut best: Option<usize> = None;
    let mut best_mag = f64::INFINITY;
    for _ in 0..60 {
        if ev.evaluations() >= budget {
            break;
        }
        let mid_op = OperatingPoint {
            gen_p: lo
                .op
                .iter()
                .zip(&hi.op)
                .map(|(x, y)| 0.5 * (x + y))
                .collect(),
            load_scale: lo.load_scale.clone(),
        };
        let narrow = lo
            .op
            .iter()
            .zip(&hi.op)
            .all(|(x, y)| (x - y).abs() < min_width);
        match ev.evaluate(&mid_op) {
            Ok(out) => {
                let sample =
                    feasible_sample(&mid_op, &a.contingency_id, out, Provenance::Route2Bisect);
                let idx = log.push(sample);
                if out.phi.abs() < phi_cri || narrow {
                    return Ok(idx);
                }
                if out.phi.abs() < best_mag {
                    best_mag = out.phi.abs();
                    best = Some(idx);
                }
                if out.lambda == lo.lambda.unwrap() {
                    lo = log.get(idx).clone();
                } else {
                    hi = log.get(idx).clone();
                }
            }
            Err(Error::Infeasible(_)) => {
                log.push(infeasible_sample(
                    &mid_op,
                    &a.contingency_id,
                    Provenance::Route2Bisect,
                ));
                return Err(Error::BisectionAborted(
                    "midpoint screened infeasible".into(),
                ));
            }
            Err(e) => return Err(e),
        }
        if narrow {
            break;
        }
    }
    best.ok_or_else(|| Error::BisectionAborted("no midpoint evaluated".into()))
}

/// Public bracket bisection over standalone samples.
///
/// Returns the critical-side sample plus every midpoint evaluated on the
/// way, in evaluation order.
pub fn bisect_crossing(
    a: &Sample,
    b: &Sample,
    ev: &mut dyn OpEvaluator,
    phi_cri: f64,
    min_width: f64,
) -> Result<(Sample, Vec<Sample>)> {
    let mut log = SampleLog::new();
    let ai = log.push(a.clone());
    let bi = log.push(b.clone());
    let ci = bisect_crossing_logged(ai, bi, ev, phi_cri, min_width, usize::MAX, &mut log)?;
    let critical = log.get(ci).clone();
    let evaluated = log.samples.split_off(2);
    Ok((critical, evaluated))
}

/// Unit tangent: the fixed `raw` direction projected off the gradient.
/// In two dimensions the perpendicular is closed-form.
fn tangent_of(grad: &[f64], raw: &[f64]) -> Option<Vec<f64>> {
    let dim = grad.len();
    let norm2: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm2 < 1e-12 {
        return None;
    }
    if dim == 2 {
        return Some(vec![-grad[1] / norm2, grad[0] / norm2]);
    }
    let dot: f64 = raw.iter().zip(grad).map(|(r, g)| r * g).sum::<f64>() / (norm2 * norm2);
    let mut t: Vec<f64> = raw.iter().zip(grad).map(|(r, g)| r - dot * g).collect();
    let tn: f64 = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tn < 1e-9 {
        return None;
    }
    for v in &mut t {
        *v /= tn;
    }
    Some(t)
}

/// Marches a non-critical sample back into the critical band.
///
/// Takes gradient steps that shrink the index magnitude and bisects as
/// soon as a step flips the label. Returns the log index of the recovered
/// critical sample, or `None` when the march stalls.
fn recover_critical(
    start_idx: usize,
    ev: &mut dyn OpEvaluator,
    cfg: &SamplerConfig,
    phi_ref: f64,
    phi_cri: f64,
    u_min: &[f64],
    u_max: &[f64],
    budget: usize,
    provenance: Provenance,
    log: &mut SampleLog,
) -> Result<Option<usize>> {
    let mut cur = start_idx;
    for _ in 0..3 {
        if ev.evaluations() >= budget {
            return Ok(None);
        }
        if log.get(cur).is_critical(phi_cri) {
            return Ok(Some(cur));
        }
        if log.get(cur).grad.is_none() {
            let g = ev.gradient(&log.get(cur).operating_point())?;
            log.set_grad(cur, g);
        }
        let next_op = match step_toward_boundary(log.get(cur), cfg, phi_ref, u_min, u_max) {
            Ok(op) => op,
            Err(Error::StationaryGradient) => return Ok(None),
            Err(e) => return Err(e),
        };
        if next_op.bits_key() == log.get(cur).operating_point().bits_key() {
            return Ok(None);
        }
        match ev.evaluate(&next_op) {
            Ok(out) => {
                let idx = log.push(feasible_sample(
                    &next_op,
                    &log.get(cur).contingency_id.clone(),
                    out,
                    provenance,
                ));
                if out.phi.abs() < phi_cri {
                    return Ok(Some(idx));
                }
                if out.lambda != log.get(cur).lambda.unwrap() {
                    return match bisect_crossing_logged(
                        cur,
                        idx,
                        ev,
                        phi_cri,
                        cfg.bisect_min_width,
                        budget,
                        log,
                    ) {
                        Ok(c) => Ok(log.get(c).is_critical(phi_cri).then_some(c)),
                        // Out of budget mid-bisection: wind down, keep what
                        // the log already holds.
                        Err(Error::BisectionAborted(_)) => Ok(None),
                        Err(e) => Err(e),
                    };
                }
                cur = idx;
            }
            Err(Error::Infeasible(_)) => {
                log.push(infeasible_sample(
                    &next_op,
                    &log.get(cur).contingency_id.clone(),
                    provenance,
                ));
                return Ok(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Walks the boundary tangentially both ways from a critical sample.
///
/// Emits up to `max_route_steps` new critical anchors, each reached by a
/// tangential probe plus a corrective march back into the critical band.
/// Every evaluated point lands in `log`; the returned indices are the new
/// anchors in discovery order.
fn traverse_boundary_logged(
    critical_idx: usize,
    ev: &mut dyn OpEvaluator,
    cfg: &SamplerConfig,
    phi_ref: f64,
    phi_cri: f64,
    u_min: &[f64],
    u_max: &[f64],
    rng: &mut ChaCha8Rng,
    budget: usize,
    log: &mut SampleLog,
) -> Result<Vec<usize>> {
    let start = log.get(critical_idx).clone();
    if !start.is_critical(phi_cri) {
        return Err(Error::Contract(
            "traversal must start from a critical sample".into(),
        ));
    }
    if start.grad.is_none() {
        return Err(Error::Contract("traversal needs the starting gradient".into()));
    }
    if cfg.max_route_steps == 0 {
        return Ok(Vec::new());
    }
    let dim = start.op.len();
    let umax_inf = u_max.iter().fold(0.0f64, |a, &b| a.max(b));
    let step_mag = cfg.traverse_step * umax_inf;
    // One random reference direction per call; each anchor re-projects it
    // off the local gradient so the tangent varies smoothly.
    let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut anchors = Vec::new();
    let side_budget = [
        cfg.max_route_steps.div_ceil(2),
        cfg.max_route_steps / 2,
    ];
    for (side, &quota) in [1.0, -1.0].iter().zip(&side_budget) {
        let mut cur = critical_idx;
        let mut last_move: Option<Vec<f64>> = None;
        for _ in 0..quota {
            if ev.evaluations() >= budget {
                break;
            }
            let sample = log.get(cur).clone();
            let grad = match &sample.grad {
                Some(g) => g.clone(),
                None => {
                    let g = ev.gradient(&sample.operating_point())?;
                    log.set_grad(cur, g.clone());
                    g
                }
            };
            let mut t = match tangent_of(&grad, &raw) {
                Some(t) => t,
                None => break,
            };
            let orient: f64 = match &last_move {
                Some(mv) => {
                    let d: f64 = t.iter().zip(mv).map(|(a, b)| a * b).sum();
                    if d < 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                }
                None => *side,
            };
            for v in &mut t {
                *v *= orient;
            }
            let probe_gen: Vec<f64> = sample
                .op
                .iter()
                .enumerate()
                .map(|(j, &u)| (u + step_mag * t[j]).clamp(u_min[j], u_max[j]))
                .collect();
            let moved: f64 = probe_gen
                .iter()
                .zip(&sample.op)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if moved < 0.25 * step_mag {
                break;
            }
            let probe_op = OperatingPoint {
                gen_p: probe_gen,
                load_scale: sample.load_scale.clone(),
            };
            let anchor = match ev.evaluate(&probe_op) {
                Ok(out) => {
                    let idx = log.push(feasible_sample(
                        &probe_op,
                        &sample.contingency_id,
                        out,
                        Provenance::Route3Traverse,
                    ));
                    if out.phi.abs() < phi_cri {
                        Some(idx)
                    } else {
                        recover_critical(
                            idx,
                            ev,
                            cfg,
                            phi_ref,
                            phi_cri,
                            u_min,
                            u_max,
                            budget,
                            Provenance::Route3Traverse,
                            log,
                        )?
                    }
                }
                Err(Error::Infeasible(_)) => {
                    log.push(infeasible_sample(
                        &probe_op,
                        &sample.contingency_id,
                        Provenance::Route3Traverse,
                    ));
                    None
                }
                Err(e) => return Err(e),
            };
            match anchor {
                Some(idx) if idx != cur => {
                    last_move = Some(
                        log.get(idx)
                            .op
                            .iter()
                            .zip(&log.get(cur).op)
                            .map(|(a, b)| a - b)
                            .collect(),
                    );
                    anchors.push(idx);
                    cur = idx;
                }
                _ => break,
            }
        }
    }
    Ok(anchors)
}

/// Public tangential traversal from a standalone critical sample.
///
/// Returns the new critical anchors plus every evaluated point.
pub fn traverse_boundary(
    critical: &Sample,
    ev: &mut dyn OpEvaluator,
    cfg: &SamplerConfig,
    phi_ref: f64,
    u_min: &[f64],
    u_max: &[f64],
    rng_seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let phi_cri = critical
        .phi
        .map(|p| p.abs().max(f64::MIN_POSITIVE))
        .unwrap_or(f64::MIN_POSITIVE)
        .max(cfg.phi_cri.unwrap_or(0.0));
    let mut log = SampleLog::new();
    let ci = log.push(critical.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let anchors = traverse_boundary_logged(
        ci,
        ev,
        cfg,
        phi_ref,
        phi_cri.max(f64::MIN_POSITIVE),
        u_min,
        u_max,
        &mut rng,
        usize::MAX,
        &mut log,
    )?;
    let anchor_samples = anchors.iter().map(|&i| log.get(i).clone()).collect();
    let evaluated = log.samples.split_off(1);
    Ok((anchor_samples, evaluated))
}

/// A proposed gap-filling operating point with its dispersion score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapCandidate {
    pub op: OperatingPoint,
    /// Minimum squared dispatch distance (MW^2) to existing critical
    /// samples and previously selected candidates; infinite when no
    /// critical sample exists yet.
    pub gamma: f64,
}

/// Greedy maximin selection of new boundary candidates on a trained model.
///
/// Builds a candidate pool by bisecting the model along random chords with
/// opposite predicted labels (plus chords through perturbed existing
/// critical samples), then repeatedly picks the candidate farthest from
/// all critical samples and prior picks. The returned gamma sequence is
/// non-increasing.
pub fn resample_gaps(
    set: &SampleSet,
    model: &BoundaryModel,
    n_new: usize,
    rng_seed: u64,
    phi_cri: f64,
    u_min: &[f64],
    u_max: &[f64],
    load_scale: &[f64],
) -> Result<Vec<GapCandidate>> {
    if n_new == 0 {
        return Err(Error::Contract("must request at least one candidate".into()));
    }
    let dim = u_min.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|j| {
                if u_max[j] > u_min[j] {
                    rng.gen_range(u_min[j]..u_max[j])
                } else {
                    u_min[j]
                }
            })
            .collect()
    };

    // The pool lives on the surrogate's zero set, so no simulation is
    // spent here; only the selected candidates get evaluated later.
    let pool_target = 50.max(10 * n_new);
    let mut pool: Vec<Vec<f64>> = Vec::new();
    let mut saw_positive = false;
    let mut saw_negative = false;
    let mut attempts = 0usize;
    while pool.len() < pool_target && attempts < 60 * pool_target {
        attempts += 1;
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let (sp, sq) = (model.predict(&p), model.predict(&q));
        saw_positive |= sp == 1 || sq == 1;
        saw_negative |= sp == -1 || sq == -1;
        if sp != sq {
            if let Ok(proj) = model.project_to_boundary(&p, &q) {
                pool.push(proj.point);
            }
        }
        if attempts == 500 && !(saw_positive && saw_negative) {
            return Err(Error::NoBoundary(
                "model predicts a single class over the box".into(),
            ));
        }
    }
    let criticals: Vec<&Sample> = set
        .samples
        .iter()
        .filter(|s| s.is_critical(phi_cri))
        .collect();
    for s in criticals.iter().take(50) {
        let delta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dn: f64 = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dn < 1e-12 {
            continue;
        }
        let umax_inf = u_max.iter().fold(0.0f64, |a, &b| a.max(b));
        let reach = 0.05 * umax_inf;
        let a: Vec<f64> = s
            .op
            .iter()
            .enumerate()
            .map(|(j, &u)| (u + reach * delta[j] / dn).clamp(u_min[j], u_max[j]))
            .collect();
        let b: Vec<f64> = s
            .op
            .iter()
            .enumerate()
            .map(|(j, &u)| (u - reach * delta[j] / dn).clamp(u_min[j], u_max[j]))
            .collect();
        if model.predict(&a) != model.predict(&b) {
            if let Ok(proj) = model.project_to_boundary(&a, &b) {
                pool.push(proj.point);
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::NoBoundary(
            "no boundary-straddling chords found in the box".into(),
        ));
    }

    let mut fixed: Vec<Vec<f64>> = criticals.iter().map(|s| s.op.clone()).collect();
    let mut picked = Vec::new();
    let mut taken = vec![false; pool.len()];
    for _ in 0..n_new {
        let mut best: Option<(usize, f64)> = None;
        for (ci, cand) in pool.iter().enumerate() {
            if taken[ci] {
                continue;
            }
            let gamma = fixed
                .iter()
                .map(|e| {
                    cand.iter()
                        .zip(e)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            if best.map_or(true, |(_, bg)| gamma > bg) {
                best = Some((ci, gamma));
            }
        }
        let Some((ci, gamma)) = best else { break };
        taken[ci] = true;
        fixed.push(pool[ci].clone());
        picked.push(GapCandidate {
            op: OperatingPoint {
                gen_p: pool[ci].clone(),
                load_scale: load_scale.to_vec(),
            },
            gamma,
        });
    }
    Ok(picked)
}

/// True when the smallest gap score has reached the termination threshold.
pub fn check_termination(gammas: &[f64], gamma_cri: f64) -> Result<bool> {
    if gammas.is_empty() {
        return Err(Error::Contract("termination check needs gap scores".into()));
    }
    Ok(gammas.iter().fold(f64::INFINITY, |a, &b| a.min(b)) <= gamma_cri)
}

/// Counters and resolved thresholds from one dataset generation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerReport {
    /// Unique operating points simulated.
    pub tds_evaluations: usize,
    pub n_samples: usize,
    pub n_feasible: usize,
    pub n_infeasible: usize,
    /// Feasible samples inside the critical band.
    pub n_critical: usize,
    /// Feasible samples within ten critical bands, the concentration
    /// measure.
    pub n_near_critical: usize,
    pub rounds_run: usize,
    pub terminated_by_gamma: bool,
    pub final_min_gamma: Option<f64>,
    pub phi_ref: f64,
    pub phi_cri: f64,
    pub gamma_cri: f64,
}

/// Runs the full three-route sampling pipeline for one contingency.
///
/// Deterministic under `cfg.rng_seed`; stops spawning work once the
/// simulation budget is spent. Returns the recorded samples and a report.
pub fn generate_dataset(
    case: &GridCase,
    cont: &Contingency,
    sim: &SimConfig,
    cfg: &SamplerConfig,
) -> Result<(SampleSet, SamplerReport)> {
    cfg.validate()?;
    sim.validate()?;
    let u_min = case.u_min();
    let u_max = case.u_max();
    let phi_cri = cfg.resolved_phi_cri(sim);
    let gamma_cri = cfg.resolved_gamma_cri(&u_max);
    let budget = cfg.tds_budget;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let seed_lhs: u64 = master.gen();
    let seed_traverse: u64 = master.gen();
    let seed_rounds: u64 = master.gen();

    let mut ev = TdsEvaluator::new(case, cont, sim, true);
    let mut log = SampleLog::new();

    let seeds = seed_initial_ops(case, cfg.load_band, cfg.n_seeds, seed_lhs)?;
    let mut feasible_seeds = Vec::new();
    for op in &seeds {
        if ev.evaluations() >= budget {
            break;
        }
        match ev.evaluate(op) {
            Ok(out) => {
                feasible_seeds.push(log.push(feasible_sample(op, &cont.id, out, Provenance::Seed)));
            }
            Err(Error::Infeasible(_)) => {
                log.push(infeasible_sample(op, &cont.id, Provenance::Seed));
            }
            Err(e) => return Err(e),
        }
    }
    if feasible_seeds.is_empty() {
        return Err(Error::Infeasible(
            "every seed failed the feasibility screen".into(),
        ));
    }
    let phi_ref = cfg.phi_ref.unwrap_or_else(|| {
        log.get(feasible_seeds[0])
            .phi
            .expect("feasible seed has an index")
            .abs()
            .max(1e-9)
    });

    // Route 1: gradient descent on |phi| from every feasible seed, with a
    // bisection recovery whenever a step crosses the boundary.
    let mut criticals = Vec::new();
    for &si in &feasible_seeds {
        if log.get(si).is_critical(phi_cri) {
            criticals.push(si);
            continue;
        }
        let mut cur = si;
        let mut halvings = 0u32;
        let mut steps = 0usize;
        while steps < cfg.max_descent_steps && ev.evaluations() < budget {
            steps += 1;
            if log.get(cur).grad.is_none() {
                let g = ev.gradient(&log.get(cur).operating_point())?;
                log.set_grad(cur, g);
            }
            let scale = 0.5f64.powi(halvings as i32);
            let next_op = match scaled_step(log.get(cur), cfg, phi_ref, &u_min, &u_max, scale) {
                Ok(op) => op,
                Err(Error::StationaryGradient) => break,
                Err(e) => return Err(e),
            };
            if next_op.bits_key() == log.get(cur).operating_point().bits_key() {
                // Clipped against the wall; shorten the step or give up.
                halvings += 1;
                if halvings > 3 {
                    break;
                }
                continue;
            }
            match ev.evaluate(&next_op) {
                Ok(out) => {
                    let idx = log.push(feasible_sample(&next_op, &cont.id, out, Provenance::Route1));
                    if out.phi.abs() < phi_cri {
                        criticals.push(idx);
                        break;
                    }
                    if out.lambda != log.get(cur).lambda.unwrap() {
                        match bisect_crossing_logged(
                            cur,
                            idx,
                            &mut ev,
                            phi_cri,
                            cfg.bisect_min_width,
                            budget,
                            &mut log,
                        ) {
                            Ok(c) => {
                                if log.get(c).is_critical(phi_cri) {
                                    criticals.push(c);
                                }
                            }
                            Err(Error::BisectionAborted(_)) => {}
                            Err(e) => return Err(e),
                        }
                        break;
                    }
                    // Reject steps that grow the magnitude; halve and retry
                    // so descent paths shrink monotonically.
                    if out.phi.abs() > log.get(cur).phi.unwrap().abs() {
                        halvings += 1;
                        if halvings > 3 {
                            break;
                        }
                        continue;
                    }
                    halvings = 0;
                    cur = idx;
                }
                Err(Error::Infeasible(_)) => {
                    log.push(infeasible_sample(&next_op, &cont.id, Provenance::Route1));
                    halvings += 1;
                    if halvings > 3 {
                        break;
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    // Route 3: tangential walks from the route-1/route-2 critical samples.
    let mut trng = ChaCha8Rng::seed_from_u64(seed_traverse);
    for &ci in &criticals {
        if ev.evaluations() >= budget {
            break;
        }
        if log.get(ci).grad.is_none() {
            let g = ev.gradient(&log.get(ci).operating_point())?;
            log.set_grad(ci, g);
        }
        traverse_boundary_logged(
            ci,
            &mut ev,
            cfg,
            phi_ref,
            phi_cri,
            &u_min,
            &u_max,
            &mut trng,
            budget,
            &mut log,
        )?;
    }

    // Stable-side partners. The index jumps across the boundary, so the
    // band points found by bisection and traversal lie almost surely on
    // the unstable side while the nearest stable sample can sit several
    // MW away, which lets the classifier drift into the stable region.
    // Each band point without a stable neighbor gets a short ladder of
    // probes along the ascending-index direction, stopping at the first
    // stable hit, which anchors the classifier opposite the boundary.
    if cfg.max_route_steps > 0 {
        let band_points: Vec<usize> = (0..log.samples.len())
            .filter(|&i| log.get(i).is_critical(phi_cri))
            .collect();
        for ci in band_points {
            let radius2 = (2.0 * cfg.pair_offset).powi(2);
            let covered = log.samples.iter().any(|s| {
                s.lambda == Some(1)
                    && !s.is_critical(phi_cri)
                    && dist2(&s.op, &log.get(ci).op) <= radius2
            });
            if covered {
                continue;
            }
            let mut cur = ci;
            for _rung in 0..4 {
                if ev.evaluations() >= budget {
                    break;
                }
                if log.get(cur).grad.is_none() {
                    let g = ev.gradient(&log.get(cur).operating_point())?;
                    log.set_grad(cur, g);
                }
                let anchor = log.get(cur).clone();
                let g = anchor.grad.as_ref().expect("gradient was just set");
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    break;
                }
                let partner = OperatingPoint {
                    gen_p: anchor
                        .op
                        .iter()
                        .zip(g)
                        .enumerate()
                        .map(|(k, (u, gi))| {
                            (u + cfg.pair_offset * gi / norm).clamp(u_min[k], u_max[k])
                        })
                        .collect(),
                    load_scale: anchor.load_scale.clone(),
                };
                if partner.bits_key() == anchor.operating_point().bits_key() {
                    break;
                }
                match ev.evaluate(&partner) {
                    Ok(out) => {
                        let idx = log.push(feasible_sample(
                            &partner,
                            &cont.id,
                            out,
                            Provenance::BandPair,
                        ));
                        if out.lambda == 1 {
                            break;
                        }
                        cur = idx;
                    }
                    Err(Error::Infeasible(_)) => {
                        log.push(infeasible_sample(&partner, &cont.id, Provenance::BandPair));
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    // Gap re-sampling rounds on a surrogate trained from everything so far.
    let mut rounds_run = 0;
    let mut terminated = false;
    let mut final_min_gamma = None;
    for round in 0..cfg.resample_rounds {
        if ev.evaluations() >= budget {
            break;
        }
        let interim = SampleSet {
            samples: log.samples.clone(),
            case_ref: String::new(),
            config: cfg.clone(),
        };
        let (pts, labels) = interim.training_arrays();
        if !labels.contains(&1) || !labels.contains(&-1) {
            break;
        }
        let model = train_points(&pts, &labels, &cont.id, &TrainOptions::default())?;
        let mid_load: Vec<f64> = vec![
            0.5 * (cfg.load_band.0 + cfg.load_band.1);
            case.loads.len()
        ];
        let cands = match resample_gaps(
            &interim,
            &model,
            cfg.resample_per_round,
            seed_rounds.wrapping_add(round as u64),
            phi_cri,
            &u_min,
            &u_max,
            &mid_load,
        ) {
            Ok(c) => c,
            Err(Error::NoBoundary(_)) => break,
            Err(e) => return Err(e),
        };
        if cands.is_empty() {
            break;
        }
        rounds_run += 1;
        let gammas: Vec<f64> = cands.iter().map(|c| c.gamma).collect();
        final_min_gamma = Some(gammas.iter().fold(f64::INFINITY, |a, &b| a.min(b)));
        for c in &cands {
            // A candidate at or under the threshold adds no coverage.
            if c.gamma <= gamma_cri {
                continue;
            }
            if ev.evaluations() >= budget {
                break;
            }
            match ev.evaluate(&c.op) {
                Ok(out) => {
                    let idx = log.push(feasible_sample(
                        &c.op,
                        &cont.id,
                        out,
                        Provenance::GapResample,
                    ));
                    if !log.get(idx).is_critical(phi_cri) && ev.evaluations() < budget {
                        recover_critical(
                            idx,
                            &mut ev,
                            cfg,
                            phi_ref,
                            phi_cri,
                            &u_min,
                            &u_max,
                            budget,
                            Provenance::GapResample,
                            &mut log,
                        )?;
                    }
                }
                Err(Error::Infeasible(_)) => {
                    log.push(infeasible_sample(&c.op, &cont.id, Provenance::GapResample));
                }
                Err(e) => return Err(e),
            }
        }
        if check_termination(&gammas, gamma_cri)? {
            terminated = true;
            break;
        }
    }

    let samples = log.samples;
    let n_feasible = samples.iter().filter(|s| s.is_feasible()).count();
    let n_critical = samples.iter().filter(|s| s.is_critical(phi_cri)).count();
    let n_near_critical = samples
        .iter()
        .filter(|s| s.is_critical(10.0 * phi_cri))
        .count();
    let report = SamplerReport {
        tds_evaluations: ev.evaluations(),
        n_samples: samples.len(),
        n_feasible,
        n_infeasible: samples.len() - n_feasible,
        n_critical,
        n_near_critical,
        rounds_run,
        terminated_by_gamma: terminated,
        final_min_gamma,
        phi_ref,
        phi_cri,
        gamma_cri,
    };
    let set = SampleSet {
        samples,
        case_ref: format!("{}-bus", case.buses.len()),
        config: cfg.clone(),
    };
    Ok((set, report))
}

/// Baseline: uniform random operating points until the budget is spent.
pub fn random_dataset(
    case: &GridCase,
    cont: &Contingency,
    sim: &SimConfig,
    band: (f64, f64),
    budget: usize,
    rng_seed: u64,
) -> Result<SampleSet> {
    sim.validate()?;
    let lo = case.u_min();
    let hi = case.u_max();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ev = TdsEvaluator::new(case, cont, sim, true);
    let mut log = SampleLog::new();
    let mut attempts = 0usize;
    while ev.evaluations() < budget && attempts < 400 * budget.max(1) {
        attempts += 1;
        let gen_p: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(&a, &b)| if b > a { rng.gen_range(a..b) } else { a })
            .collect();
        let scale = if band.0 == band.1 {
            band.0
        } else {
            rng.gen_range(band.0..band.1)
        };
        let op = OperatingPoint {
            gen_p,
            load_scale: vec![scale; case.loads.len()],
        };
        match ev.evaluate(&op) {
            Ok(out) => {
                log.push(feasible_sample(&op, &cont.id, out, Provenance::Seed));
            }
            Err(Error::Infeasible(_)) => {
                log.push(infeasible_sample(&op, &cont.id, Provenance::Seed));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SampleSet {
        samples: log.samples,
        case_ref: format!("{}-bus", case.buses.len()),
        config: SamplerConfig {
            n_seeds: budget,
            tds_budget: budget,
            load_band: band,
            rng_seed,
            ..SamplerConfig::default()
        },
    })
}

/// Baseline: successive Latin hypercube batches until the budget is spent.
pub fn lhs_dataset(
    case: &GridCase,
    cont: &Contingency,
    sim: &SimConfig,
    band: (f64, f64),
    budget: usize,
    rng_seed: u64,
) -> Result<SampleSet> {
    sim.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ev = TdsEvaluator::new(case, cont, sim, true);
    let mut log = SampleLog::new();
    for _batch in 0..24 {
        let remaining = budget.saturating_sub(ev.evaluations());
        if remaining == 0 {
            break;
        }
        let design = seed_initial_ops(case, band, remaining.max(2), master.gen())?;
        for op in &design {
            if ev.evaluations() >= budget {
                break;
            }
            match ev.evaluate(op) {
                Ok(out) => {
                    log.push(feasible_sample(op, &cont.id, out, Provenance::Seed));
                }
                Err(Error::Infeasible(_)) => {
                    log.push(infeasible_sample(op, &cont.id, Provenance::Seed));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(SampleSet {
        samples: log.samples,
        case_ref: format!("{}-bus", case.buses.len()),
        config: SamplerConfig {
            n_seeds: budget,
            tds_budget: budget,
            load_band: band,
            rng_seed,
            ..SamplerConfig::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cases;

    /// Closed-form landscape standing in for the simulator.
    struct Hook<F: Fn(&[f64]) -> f64> {
        f: F,
        seen: std::collections::HashSet<Vec<u64>>,
        infeasible_below: Option<f64>,
    }

    impl<F: Fn(&[f64]) -> f64> Hook<F> {
        fn new(f: F) -> Self {
            Self {
                f,
                seen: std::collections::HashSet::new(),
                infeasible_below: None,
            }
        }
    }

    impl<F: Fn(&[f64]) -> f64> OpEvaluator for Hook<F> {
        fn evaluate(&mut self, op: &OperatingPoint) -> Result<EvalOutcome> {
            if let Some(floor) = self.infeasible_below {
                if op.gen_p.iter().any(|&u| u < floor) {
                    return Err(Error::Infeasible("below synthetic floor".into()));
                }
            }
            self.seen.insert(op.bits_key());
            let phi = (self.f)(&op.gen_p);
            Ok(EvalOutcome {
                phi,
                lambda: if phi >= 0.0 { 1 } else { -1 },
            })
        }

        fn gradient(&mut self, op: &OperatingPoint) -> Result<Vec<f64>> {
            let h = 1e-5;
            let mut g = Vec::with_capacity(op.gen_p.len());
            for j in 0..op.gen_p.len() {
                let mut a = op.gen_p.clone();
                let mut b = op.gen_p.clone();
                a[j] += h;
                b[j] -= h;
                g.push(((self.f)(&a) - (self.f)(&b)) / (2.0 * h));
            }
            Ok(g)
        }

        fn evaluations(&self) -> usize {
            self.seen.len()
        }
    }

    fn sample_at(op: &[f64], phi: f64, grad: Option<Vec<f64>>) -> Sample {
        Sample {
            op: op.to_vec(),
            load_scale: vec![1.0],
            contingency_id: "ct".into(),
            phi: Some(phi),
            lambda: Some(if phi >= 0.0 { 1 } else { -1 }),
            label: if phi >= 0.0 {
                SampleLabel::Stable
            } else {
                SampleLabel::Unstable
            },
            grad,
            provenance: Provenance::Seed,
        }
    }

    #[test]
    fn lhs_seeds_fill_distinct_strata_and_repeat_exactly() {
        let case = cases::wscc9();
        let a = seed_initial_ops(&case, (1.0, 1.0), 20, 7).unwrap();
        let b = seed_initial_ops(&case, (1.0, 1.0), 20, 7).unwrap();
        assert_eq!(a, b);
        let lo = case.u_min();
        let hi = case.u_max();
        for d in 0..2 {
            let mut strata: Vec<usize> = a
                .iter()
                .map(|op| (((op.gen_p[d] - lo[d]) / (hi[d] - lo[d])) * 20.0).floor() as usize)
                .collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..20).collect::<Vec<_>>(), "coordinate {d}");
        }
        let single = seed_initial_ops(&case, (1.0, 1.0), 1, 3).unwrap();
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        assert_eq!(single[0].gen_p, center);
        assert!(seed_initial_ops(&case, (1.0, 1.0), 0, 3).is_err());
    }

    #[test]
    fn load_band_draws_stay_inside_the_band() {
        let case = cases::wscc9();
        let seeds = seed_initial_ops(&case, (0.9, 1.1), 40, 11).unwrap();
        for op in &seeds {
            for &s in &op.load_scale {
                assert!((0.9..=1.1).contains(&s));
            }
            assert!(op.load_scale.iter().all(|&s| s == op.load_scale[0]));
        }
    }

    #[test]
    fn step_saturates_far_from_the_boundary() {
        let cfg = SamplerConfig::default();
        let s = sample_at(&[100.0, 100.0], 500.0, Some(vec![1.0, 0.5]));
        let next = step_toward_boundary(&s, &cfg, 1.0, &[0.0, 0.0], &[300.0, 300.0]).unwrap();
        // tanh saturates, so the largest coordinate moves nu_max * u_max.
        assert!((next.gen_p[0] - (100.0 - 0.2 * 300.0)).abs() < 1e-9);
        assert!((next.gen_p[1] - (100.0 - 0.2 * 300.0 * 0.5)).abs() < 1e-9);
    }

    #[test]
    fn stationary_gradient_is_an_error() {
        let cfg = SamplerConfig::default();
        let s = sample_at(&[100.0], 2.0, Some(vec![0.0]));
        assert!(matches!(
            step_toward_boundary(&s, &cfg, 1.0, &[0.0], &[300.0]),
            Err(Error::StationaryGradient)
        ));
    }

    #[test]
    fn quadratic_descent_reaches_the_critical_band() {
        let cfg = SamplerConfig::default();
        let f = |u: &[f64]| (u[0] - 5.0) * (u[0] - 5.0);
        let mut hook = Hook::new(f);
        let mut op = OperatingPoint {
            gen_p: vec![0.0],
            load_scale: vec![1.0],
        };
        let phi_ref = f(&op.gen_p);
        let phi_cri = 0.01;
        let mut steps = 0;
        loop {
            let out = hook.evaluate(&op).unwrap();
            if out.phi.abs() < phi_cri {
                break;
            }
            let grad = hook.gradient(&op).unwrap();
            let s = sample_at(&op.gen_p, out.phi, Some(grad));
            op = step_toward_boundary(&s, &cfg, phi_ref, &[0.0], &[10.0]).unwrap();
            steps += 1;
            assert!(steps < 50, "descent did not converge within 50 steps");
        }
    }

    #[test]
    fn bisection_pins_a_linear_boundary() {
        // Stable below 100 MW on the first coordinate.
        let mut hook = Hook::new(|u: &[f64]| 100.0 - u[0]);
        let a = sample_at(&[60.0, 50.0], 40.0, None);
        let b = sample_at(&[140.0, 50.0], -40.0, None);
        let (critical, evaluated) = bisect_crossing(&a, &b, &mut hook, 1e-4, 0.1).unwrap();
        assert!(!evaluated.is_empty());
        assert!((critical.op[0] - 100.0).abs() < 0.1);
        assert_eq!(critical.provenance, Provenance::Route2Bisect);

        let same = bisect_crossing(&a, &a, &mut hook, 1e-4, 0.1);
        assert!(matches!(same, Err(Error::Contract(_))));
    }

    #[test]
    fn narrow_bracket_returns_the_midpoint_after_one_evaluation() {
        let mut hook = Hook::new(|u: &[f64]| 100.0 - u[0]);
        let a = sample_at(&[99.98, 50.0], 0.02, None);
        let b = sample_at(&[100.03, 50.0], -0.03, None);
        let (critical, evaluated) = bisect_crossing(&a, &b, &mut hook, 1e-9, 0.1).unwrap();
        assert_eq!(evaluated.len(), 1);
        assert!((critical.op[0] - 100.005).abs() < 1e-9);
    }

    #[test]
    fn infeasible_endpoint_aborts_bisection() {
        let mut hook = Hook::new(|u: &[f64]| 100.0 - u[0]);
        let a = sample_at(&[60.0], 40.0, None);
        let mut b = sample_at(&[140.0], -40.0, None);
        b.label = SampleLabel::Infeasible;
        b.phi = None;
        b.lambda = None;
        assert!(matches!(
            bisect_crossing(&a, &b, &mut hook, 1e-4, 0.1),
            Err(Error::BisectionAborted(_))
        ));
    }

    #[test]
    fn traversal_follows_a_circular_boundary() {
        // Signed relative distance to a circle of radius 80 around (150, 150).
        let c = [150.0, 150.0];
        let r = 80.0;
        let f = move |u: &[f64]| {
            (((u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2)).sqrt() - r) / r
        };
        let mut hook = Hook::new(f);
        let cfg = SamplerConfig {
            max_route_steps: 6,
            phi_cri: Some(0.005),
            ..SamplerConfig::default()
        };
        let start_op = vec![230.0, 150.0];
        let grad = hook
            .gradient(&OperatingPoint {
                gen_p: start_op.clone(),
                load_scale: vec![1.0],
            })
            .unwrap();
        let start = sample_at(&start_op, 0.0, Some(grad));
        let (anchors, evaluated) = traverse_boundary(
            &start,
            &mut hook,
            &cfg,
            1.0,
            &[0.0, 0.0],
            &[300.0, 300.0],
            99,
        )
        .unwrap();
        assert!(anchors.len() >= 4, "only {} anchors", anchors.len());
        for a in &anchors {
            let radius = ((a.op[0] - c[0]).powi(2) + (a.op[1] - c[1]).powi(2)).sqrt();
            assert!(
                (radius - r).abs() <= 0.005 * r,
                "anchor at radius {radius}"
            );
        }
        // The first probe leaves the start point orthogonally to the
        // gradient (before any corrective pull-back).
        let first = &evaluated[0];
        let disp = [first.op[0] - start.op[0], first.op[1] - start.op[1]];
        let g = start.grad.as_ref().unwrap();
        let dot = disp[0] * g[0] + disp[1] * g[1];
        let scale = (disp[0].powi(2) + disp[1].powi(2)).sqrt()
            * (g[0].powi(2) + g[1].powi(2)).sqrt();
        assert!((dot / scale).abs() < 1e-6, "cosine {}", dot / scale);
    }

    #[test]
    fn zero_route_steps_produce_no_traversal() {
        let mut hook = Hook::new(|u: &[f64]| u[0] - 100.0);
        let cfg = SamplerConfig {
            max_route_steps: 0,
            phi_cri: Some(0.5),
            ..SamplerConfig::default()
        };
        let start = sample_at(&[100.0, 50.0], 0.0, Some(vec![1.0, 0.0]));
        let (anchors, evaluated) =
            traverse_boundary(&start, &mut hook, &cfg, 1.0, &[0.0, 0.0], &[300.0, 300.0], 1)
                .unwrap();
        assert!(anchors.is_empty());
        assert!(evaluated.is_empty());
    }

    /// Surrogate whose zero set is the vertical line x = `at`.
    fn line_model(at: f64) -> BoundaryModel {
        use crate::boundary::{FeatureScale, SupportPoint};
        BoundaryModel {
            contingency_id: "ct".into(),
            kernel_gamma: 1e-6,
            c: 10.0,
            bias: 0.0,
            feature_scale: FeatureScale {
                mean: vec![0.0, 0.0],
                spread: vec![1.0, 1.0],
            },
            supports: vec![
                SupportPoint {
                    point: vec![at + 1.0, 150.0],
                    coeff: 1.0,
                },
                SupportPoint {
                    point: vec![at - 1.0, 150.0],
                    coeff: -1.0,
                },
            ],
            training_accuracy: 1.0,
        }
    }

    fn set_with_criticals(ops: &[[f64; 2]]) -> SampleSet {
        SampleSet {
            samples: ops
                .iter()
                .map(|p| {
                    let mut s = sample_at(&p[..], 0.0, None);
                    s.load_scale = vec![1.0];
                    s
                })
                .collect(),
            case_ref: "test".into(),
            config: SamplerConfig::default(),
        }
    }

    #[test]
    fn maximin_picks_the_largest_gap_first() {
        let model = line_model(100.0);
        let set = set_with_criticals(&[[100.0, 0.0], [100.0, 300.0]]);
        let picks = resample_gaps(
            &set,
            &model,
            5,
            42,
            0.5,
            &[0.0, 0.0],
            &[300.0, 300.0],
            &[1.0],
        )
        .unwrap();
        assert_eq!(picks.len(), 5);
        let first = &picks[0];
        assert!((first.op.gen_p[0] - 100.0).abs() < 0.5);
        assert!(
            (first.op.gen_p[1] - 150.0).abs() < 40.0,
            "first pick at y = {}",
            first.op.gen_p[1]
        );
        for w in picks.windows(2) {
            assert!(
                w[0].gamma >= w[1].gamma,
                "gamma grew: {} -> {}",
                w[0].gamma,
                w[1].gamma
            );
        }
    }

    #[test]
    fn empty_critical_set_yields_infinite_gamma() {
        let model = line_model(100.0);
        let set = set_with_criticals(&[]);
        let picks = resample_gaps(
            &set,
            &model,
            1,
            42,
            0.5,
            &[0.0, 0.0],
            &[300.0, 300.0],
            &[1.0],
        )
        .unwrap();
        assert_eq!(picks.len(), 1);
        assert!(picks[0].gamma.is_infinite());
    }

    #[test]
    fn single_class_model_cannot_resample() {
        use crate::boundary::{FeatureScale, SupportPoint};
        // One positive support and positive bias: positive everywhere.
        let model = BoundaryModel {
            contingency_id: "ct".into(),
            kernel_gamma: 1e-9,
            c: 10.0,
            bias: 5.0,
            feature_scale: FeatureScale {
                mean: vec![0.0, 0.0],
                spread: vec![1.0, 1.0],
            },
            supports: vec![SupportPoint {
                point: vec![150.0, 150.0],
                coeff: 1.0,
            }],
            training_accuracy: 1.0,
        };
        let set = set_with_criticals(&[]);
        let err = resample_gaps(
            &set,
            &model,
            1,
            42,
            0.5,
            &[0.0, 0.0],
            &[300.0, 300.0],
            &[1.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoBoundary(_)));
    }

    #[test]
    fn termination_is_inclusive_at_the_threshold() {
        assert!(check_termination(&[0.0, 5.0], 0.01).unwrap());
        assert!(!check_termination(&[5.0, 7.0], 0.01).unwrap());
        assert!(check_termination(&[9.0], 9.0).unwrap());
        assert!(check_termination(&[], 1.0).is_err());
    }

    #[test]
    fn sample_jsonl_uses_the_documented_keys() {
        let mut s = sample_at(&[120.0, 80.0], -0.25, Some(vec![0.1, -0.2]));
        s.load_scale = vec![1.0, 0.95, 1.05];
        s.provenance = Provenance::Route2Bisect;
        let line = serde_json::to_string(&s).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            {
                let mut k = keys.clone();
                k.sort_unstable();
                k
            },
            vec![
                "contingency_id",
                "grad",
                "label",
                "lambda",
                "load_scale",
                "op",
                "phi",
                "provenance"
            ]
        );
        assert_eq!(v["label"], "unstable");
        assert_eq!(v["provenance"], "route2_bisect");
        let back: Sample = serde_json::from_str(&line).unwrap();
        assert_eq!(back.op, s.op);
        assert_eq!(back.phi.unwrap().to_bits(), s.phi.unwrap().to_bits());

        let set = SampleSet {
            samples: vec![s.clone(), infeasible_sample(
                &OperatingPoint { gen_p: vec![1.0, 2.0], load_scale: vec![1.0, 1.0, 1.0] },
                "ct",
                Provenance::GapResample,
            )],
            case_ref: "test".into(),
            config: SamplerConfig::default(),
        };
        let mut buf = Vec::new();
        set.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let reread = SampleSet::read_jsonl(
            std::io::BufReader::new(text.as_bytes()),
            set.case_ref.clone(),
            set.config.clone(),
        )
        .unwrap();
        assert_eq!(reread.samples.len(), 2);
        assert_eq!(reread.samples[1].label, SampleLabel::Infeasible);
        assert!(reread.samples[1].phi.is_none());
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let mut cfg = SamplerConfig::default();
        cfg.nu_min = 0.0;
        assert!(cfg.validate().is_err());
        cfg = SamplerConfig::default();
        cfg.nu_max = 1.5;
        assert!(cfg.validate().is_err());
        cfg = SamplerConfig::default();
        cfg.phi_cri = Some(-1.0);
        assert!(cfg.validate().is_err());
        cfg = SamplerConfig::default();
        cfg.load_band = (1.2, 0.8);
        assert!(cfg.validate().is_err());
        assert!(SamplerConfig::default().validate().is_ok());
    }

    #[test]
    fn small_real_run_is_deterministic_and_respects_the_budget() {
        let case = cases::wscc9();
        let cont = Contingency::by_endpoints(&case, "fault-bus5-trip5-7", 5, 5, 7, 0.2).unwrap();
        let sim = SimConfig {
            delta_max: 1.5,
            ..SimConfig::default()
        };
        let cfg = SamplerConfig {
            n_seeds: 6,
            max_descent_steps: 8,
            max_route_steps: 2,
            resample_rounds: 1,
            resample_per_round: 4,
            tds_budget: 60,
            rng_seed: 17,
            ..SamplerConfig::default()
        };
        let (set_a, report) = generate_dataset(&case, &cont, &sim, &cfg).unwrap();
        let (set_b, _) = generate_dataset(&case, &cont, &sim, &cfg).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        set_a.write_jsonl(&mut buf_a).unwrap();
        set_b.write_jsonl(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b, "same seed must reproduce the dataset");

        assert!(report.tds_evaluations <= 60);
        assert!(report.n_feasible > 0);
        assert_eq!(report.n_samples, set_a.samples.len());
        let mut keys = std::collections::HashSet::new();
        for s in &set_a.samples {
            assert!(
                keys.insert(s.operating_point().bits_key()),
                "duplicate sample recorded"
            );
            let (lo, hi) = (case.u_min(), case.u_max());
            for (j, &u) in s.op.iter().enumerate() {
                assert!((lo[j]..=hi[j]).contains(&u), "coordinate {j} = {u}");
            }
            match s.label {
                SampleLabel::Stable => assert_eq!(s.lambda, Some(1)),
                SampleLabel::Unstable => assert_eq!(s.lambda, Some(-1)),
                SampleLabel::Infeasible => {
                    assert!(s.phi.is_none() && s.lambda.is_none() && s.grad.is_none());
                }
            }
        }
    }

    #[test]
    fn degenerate_config_produces_only_seed_and_descent_samples() {
        let case = cases::wscc9();
        let cont = Contingency::by_endpoints(&case, "fault-bus5-trip5-7", 5, 5, 7, 0.2).unwrap();
        let sim = SimConfig {
            delta_max: 1.5,
            ..SimConfig::default()
        };
        let cfg = SamplerConfig {
            n_seeds: 4,
            max_descent_steps: 5,
            max_route_steps: 0,
            resample_rounds: 0,
            tds_budget: 30,
            rng_seed: 5,
            ..SamplerConfig::default()
        };
        let (set, _) = generate_dataset(&case, &cont, &sim, &cfg).unwrap();
        assert!(set.samples.iter().all(|s| matches!(
            s.provenance,
            Provenance::Seed | Provenance::Route1 | Provenance::Route2Bisect
        )));
    }
}
