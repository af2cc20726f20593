//! Brute-force reference boundaries.
//!
//! Labels every lattice point of a dispatch grid by full time-domain
//! simulation. Slow by design; the result is the ground truth that sampled
//! boundaries are scored against. Long sweeps checkpoint to disk every 500
//! points and resume from a partial file, reproducing the uninterrupted
//! result exactly.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{GridSpec, LabeledGrid};
use crate::error::{Error, Result};
use crate::grid::{GridCase, OperatingPoint};
use crate::index::{adjoint_gradient, evaluate_operating_point};
use crate::tds::{Contingency, SimConfig};

/// Points between checkpoint writes.
const CHECKPOINT_EVERY: usize = 500;

/// Verdict for one lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatticeOutcome {
    Feasible { lambda: i8, phi: f64 },
    Infeasible,
}

/// Partial sweep state persisted between runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheckpoint {
    pub contingency_id: String,
    pub grid_spec: GridSpec,
    pub outcomes: Vec<LatticeOutcome>,
}

/// A finished sweep: the feasible labeled grid plus the rejected points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    pub grid: LabeledGrid,
    /// Lattice points that failed the feasibility screen, in enumeration
    /// order.
    pub infeasible_points: Vec<Vec<f64>>,
}

/// Sweep counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleStats {
    pub n_lattice: usize,
    pub n_feasible: usize,
    pub n_infeasible: usize,
    pub n_stable: usize,
    pub n_unstable: usize,
    /// Points simulated by this run (smaller after a resume).
    pub n_evaluated: usize,
}

fn read_checkpoint(path: &Path, cont: &Contingency, spec: &GridSpec) -> Result<Vec<LatticeOutcome>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?;
    let ck: OracleCheckpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?;
    if ck.contingency_id != cont.id {
        return Err(Error::Config(format!(
            "checkpoint belongs to contingency {}, sweep is for {}",
            ck.contingency_id, cont.id
        )));
    }
    if ck.grid_spec.mins != spec.mins
        || ck.grid_spec.maxs != spec.maxs
        || ck.grid_spec.intervals != spec.intervals
    {
        return Err(Error::Config("checkpoint grid does not match the sweep grid".into()));
    }
    Ok(ck.outcomes)
}

fn write_checkpoint(
    path: &Path,
    cont: &Contingency,
    spec: &GridSpec,
    outcomes: &[LatticeOutcome],
) -> Result<()> {
    let ck = OracleCheckpoint {
        contingency_id: cont.id.clone(),
        grid_spec: spec.clone(),
        outcomes: outcomes.to_vec(),
    };
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string(&ck).expect("checkpoint serializes");
    std::fs::write(&tmp, text)
        .map_err(|e| Error::Config(format!("checkpoint {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?;
    Ok(())
}

/// Labels every lattice point of `spec` by time-domain simulation at
/// reference load, parallelized in ordered chunks.
///
/// The grid must sit inside the generator dispatch limits. When
/// `checkpoint` names a file, progress is saved there every 500 points and
/// a partial file from an interrupted sweep is resumed instead of being
/// recomputed, yielding the identical result.
pub fn brute_force_oracle(
    case: &GridCase,
    cont: &Contingency,
    spec: &GridSpec,
    cfg: &SimConfig,
    checkpoint: Option<&Path>,
) -> Result<(OracleResult, OracleStats)> {
    cfg.validate()?;
    let counts = spec.counts()?;
    let (lo, hi) = (case.u_min(), case.u_max());
    if spec.mins.len() != lo.len() {
        return Err(Error::Config(format!(
            "grid has {} coordinates, case has {} controllable generators",
            spec.mins.len(),
            lo.len()
        )));
    }
    for i in 0..lo.len() {
        if spec.mins[i] < lo[i] || spec.maxs[i] > hi[i] {
            return Err(Error::Config(format!(
                "grid coordinate {i} spans [{}, {}], outside dispatch limits [{}, {}]",
                spec.mins[i], spec.maxs[i], lo[i], hi[i]
            )));
        }
    }
    let points = spec.enumerate()?;
    let total: usize = counts.iter().product();

    let mut outcomes: Vec<LatticeOutcome> = match checkpoint {
        Some(path) if path.exists() => {
            let prior = read_checkpoint(path, cont, spec)?;
            if prior.len() > total {
                return Err(Error::Config("checkpoint has more points than the grid".into()));
            }
            prior
        }
        _ => Vec::new(),
    };
    let resumed_from = outcomes.len();

    while outcomes.len() < total {
        let start = outcomes.len();
        let end = (start + CHECKPOINT_EVERY).min(total);
        let chunk: Vec<Result<LatticeOutcome>> = points[start..end]
            .par_iter()
            .map(|p| {
                let op = OperatingPoint::with_reference_load(case, p.clone());
                match evaluate_operating_point(case, &op, cont, cfg, true) {
                    Ok(out) => Ok(LatticeOutcome::Feasible {
                        lambda: out.lambda,
                        phi: out.phi,
                    }),
                    Err(Error::Infeasible(_)) => Ok(LatticeOutcome::Infeasible),
                    Err(e) => Err(e),
                }
            })
            .collect();
        for r in chunk {
            outcomes.push(r?);
        }
        if let Some(path) = checkpoint {
            if outcomes.len() < total {
                write_checkpoint(path, cont, spec, &outcomes)?;
            }
        }
    }

    let mut grid_points = Vec::new();
    let mut labels = Vec::new();
    let mut phi = Vec::new();
    let mut infeasible_points = Vec::new();
    for (p, out) in points.iter().zip(&outcomes) {
        match out {
            LatticeOutcome::Feasible { lambda, phi: v } => {
                grid_points.push(p.clone());
                labels.push(*lambda);
                phi.push(*v);
            }
            LatticeOutcome::Infeasible => infeasible_points.push(p.clone()),
        }
    }
    let stats = OracleStats {
        n_lattice: total,
        n_feasible: grid_points.len(),
        n_infeasible: infeasible_points.len(),
        n_stable: labels.iter().filter(|&&l| l > 0).count(),
        n_unstable: labels.iter().filter(|&&l| l < 0).count(),
        n_evaluated: total - resumed_from,
    };
    let result = OracleResult {
        grid: LabeledGrid {
            grid_spec: spec.clone(),
            points: grid_points,
            labels,
            phi,
        },
        infeasible_points,
    };
    Ok((result, stats))
}

/// One gradient arrow of a field plot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientSample {
    pub point: Vec<f64>,
    pub grad: Vec<f64>,
    pub phi: f64,
    pub lambda: i8,
}

/// Evaluates the index gradient at every feasible lattice point, for
/// quiver-style plots of the descent directions.
pub fn gradient_field(
    case: &GridCase,
    cont: &Contingency,
    spec: &GridSpec,
    cfg: &SimConfig,
) -> Result<Vec<GradientSample>> {
    cfg.validate()?;
    let points = spec.enumerate()?;
    let rows: Vec<Result<Option<GradientSample>>> = points
        .par_iter()
        .map(|p| {
            let op = OperatingPoint::with_reference_load(case, p.clone());
            let eval = match evaluate_operating_point(case, &op, cont, cfg, true) {
                Ok(out) => out,
                Err(Error::Infeasible(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let grad = adjoint_gradient(case, &op, cont, cfg)?;
            Ok(Some(GradientSample {
                point: p.clone(),
                grad: grad.grad,
                phi: eval.phi,
                lambda: eval.lambda,
            }))
        })
        .collect();
    let mut out = Vec::new();
    for r in rows {
        if let Some(s) = r? {
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cases;

    fn setup() -> (GridCase, Contingency, SimConfig) {
        let case = cases::wscc9();
        let cont = Contingency::by_endpoints(&case, "fault-bus5-trip5-7", 5, 5, 7, 0.2).unwrap();
        let sim = SimConfig {
            delta_max: 1.5,
            ..SimConfig::default()
        };
        (case, cont, sim)
    }

    #[test]
    fn single_point_grid_labels_one_point() {
        let (case, cont, sim) = setup();
        let spec = GridSpec {
            mins: vec![90.0, 80.0],
            maxs: vec![90.0, 80.0],
            intervals: vec![1.0, 1.0],
        };
        let (res, stats) = brute_force_oracle(&case, &cont, &spec, &sim, None).unwrap();
        assert_eq!(stats.n_lattice, 1);
        assert_eq!(res.grid.points.len(), 1);
        assert_eq!(res.grid.labels[0], 1);
        assert!(res.grid.phi[0] > 0.0);
        assert!(res.infeasible_points.is_empty());
    }

    #[test]
    fn sweep_straddles_the_boundary_with_consistent_signs() {
        let (case, cont, sim) = setup();
        // A short column through the boundary near (150, 122).
        let spec = GridSpec {
            mins: vec![150.0, 110.0],
            maxs: vec![150.0, 135.0],
            intervals: vec![5.0, 5.0],
        };
        let (res, stats) = brute_force_oracle(&case, &cont, &spec, &sim, None).unwrap();
        assert_eq!(stats.n_lattice, 6);
        assert_eq!(stats.n_feasible, 6);
        assert!(stats.n_stable >= 1 && stats.n_unstable >= 1);
        for (l, p) in res.grid.labels.iter().zip(&res.grid.phi) {
            assert_eq!(*l > 0, *p >= 0.0);
        }
        // Stability is monotone along this column: once unstable, stays so.
        let mut seen_unstable = false;
        for &l in &res.grid.labels {
            if l < 0 {
                seen_unstable = true;
            } else {
                assert!(!seen_unstable, "stable point after an unstable one");
            }
        }
    }

    #[test]
    fn statically_overloaded_point_is_recorded_infeasible() {
        let (case, cont, sim) = setup();
        // 20 MW dispatch against 315 MW load: the slack exceeds its limit.
        let spec = GridSpec {
            mins: vec![10.0, 10.0],
            maxs: vec![10.0, 10.0],
            intervals: vec![1.0, 1.0],
        };
        let (res, stats) = brute_force_oracle(&case, &cont, &spec, &sim, None).unwrap();
        assert_eq!(stats.n_infeasible, 1);
        assert!(res.grid.points.is_empty());
        assert_eq!(res.infeasible_points, vec![vec![10.0, 10.0]]);
    }

    #[test]
    fn grid_outside_dispatch_limits_is_rejected() {
        let (case, cont, sim) = setup();
        let spec = GridSpec {
            mins: vec![0.0, 10.0],
            maxs: vec![300.0, 270.0],
            intervals: vec![5.0, 5.0],
        };
        assert!(matches!(
            brute_force_oracle(&case, &cont, &spec, &sim, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn resumed_sweep_reproduces_the_uninterrupted_result() {
        let (case, cont, sim) = setup();
        let spec = GridSpec {
            mins: vec![100.0, 100.0],
            maxs: vec![180.0, 140.0],
            intervals: vec![20.0, 20.0],
        };
        let (full, _) = brute_force_oracle(&case, &cont, &spec, &sim, None).unwrap();

        let dir = std::env::temp_dir().join(format!("oracle-resume-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ck_path = dir.join("sweep.ck.json");
        // Fabricate an interrupted run: first 7 of 15 points done.
        let all_points = spec.enumerate().unwrap();
        let partial: Vec<LatticeOutcome> = all_points[..7]
            .iter()
            .map(|p| {
                let op = OperatingPoint::with_reference_load(&case, p.clone());
                match evaluate_operating_point(&case, &op, &cont, &sim, true) {
                    Ok(out) => LatticeOutcome::Feasible {
                        lambda: out.lambda,
                        phi: out.phi,
                    },
                    Err(_) => LatticeOutcome::Infeasible,
                }
            })
            .collect();
        write_checkpoint(&ck_path, &cont, &spec, &partial).unwrap();

        let (resumed, stats) =
            brute_force_oracle(&case, &cont, &spec, &sim, Some(&ck_path)).unwrap();
        assert_eq!(stats.n_evaluated, 15 - 7);
        assert_eq!(resumed.grid.points, full.grid.points);
        assert_eq!(resumed.grid.labels, full.grid.labels);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&resumed.grid.phi), bits(&full.grid.phi));
        assert_eq!(resumed.infeasible_points, full.infeasible_points);

        // A checkpoint from a different contingency must be refused.
        let other = Contingency::by_endpoints(&case, "other", 7, 7, 8, 0.2).unwrap();
        assert!(matches!(
            brute_force_oracle(&case, &other, &spec, &sim, Some(&ck_path)),
            Err(Error::Config(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn gradient_field_covers_feasible_points_and_descends() {
        let (case, cont, sim) = setup();
        let spec = GridSpec {
            mins: vec![80.0, 80.0],
            maxs: vec![120.0, 120.0],
            intervals: vec![40.0, 40.0],
        };
        let field = gradient_field(&case, &cont, &spec, &sim).unwrap();
        assert_eq!(field.len(), 4);
        for s in &field {
            assert_eq!(s.grad.len(), 2);
            assert!(s.grad.iter().all(|g| g.is_finite()));
            assert_eq!(s.lambda > 0, s.phi >= 0.0);
        }
    }
}
