//! Newton-Raphson AC power flow in polar form, plus static limit screening.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{build_admittance, GridCase, NetworkVariant, OperatingPoint};

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowConfig {
    /// Convergence threshold on the largest power mismatch, per unit.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

/// Solved network state. Voltages are per unit, powers in MW / MVAr.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Complex bus voltage per case bus position.
    pub v: Vec<Complex64>,
    /// Active power produced by the slack generator, MW.
    pub slack_p: f64,
    /// Reactive power produced by each generator (case order), MVAr.
    pub gen_q: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute mismatch at the final iterate, per unit.
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Voltage,
    GenQ,
    SlackP,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Bus where the violated quantity lives.
    pub bus: u32,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct StaticLimitsReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

pub fn solve_power_flow(case: &GridCase, op: &OperatingPoint) -> Result<PowerFlowSolution> {
    solve_power_flow_with(case, op, &PowerFlowConfig::default())
}

/// Full-Jacobian Newton iteration. Non-convergence within the iteration cap
/// is reported through `converged: false`, not as an error; callers decide
/// whether an unsolvable operating point is fatal.
pub fn solve_power_flow_with(
    case: &GridCase,
    op: &OperatingPoint,
    cfg: &PowerFlowConfig,
) -> Result<PowerFlowSolution> {
    op.check_dims(case)?;
    let n = case.buses.len();
    let ybus = build_admittance(case, &NetworkVariant::PreFault)?.y;
    let g = ybus.map(|z| z.re);
    let b = ybus.map(|z| z.im);

    // Net specified injections, per unit.
    let mut p_load = vec![0.0; n];
    let mut q_load = vec![0.0; n];
    for (li, load) in case.loads.iter().enumerate() {
        let pos = case.bus_position(load.bus).expect("validated");
        p_load[pos] += load.p_mw * op.load_scale[li] / case.base_mva;
        q_load[pos] += load.q_mvar * op.load_scale[li] / case.base_mva;
    }
    let mut p_spec: Vec<f64> = p_load.iter().map(|p| -p).collect();
    let q_spec: Vec<f64> = q_load.iter().map(|q| -q).collect();
    for (j, &gi) in case.controllable_gens().iter().enumerate() {
        let pos = case.bus_position(case.generators[gi].bus).expect("validated");
        p_spec[pos] += op.gen_p[j] / case.base_mva;
    }

    let slack_pos = case
        .bus_position(case.generators[case.slack_gen()].bus)
        .expect("validated");
    let mut is_pv = vec![false; n];
    for gen in &case.generators {
        is_pv[case.bus_position(gen.bus).expect("validated")] = true;
    }

    // Unknown layout: angles for every non-slack bus, then magnitudes for
    // every PQ bus.
    let ang_of: Vec<Option<usize>> = {
        let mut k = 0;
        (0..n)
            .map(|i| {
                if i == slack_pos {
                    None
                } else {
                    let idx = k;
                    k += 1;
                    Some(idx)
                }
            })
            .collect()
    };
    let n_ang = n - 1;
    let vm_of: Vec<Option<usize>> = {
        let mut k = 0;
        (0..n)
            .map(|i| {
                if is_pv[i] {
                    None
                } else {
                    let idx = k;
                    k += 1;
                    Some(n_ang + idx)
                }
            })
            .collect()
    };
    let n_unknown = n_ang + vm_of.iter().flatten().count();

    // Flat start from setpoints.
    let mut vm: Vec<f64> = case.buses.iter().map(|bus| bus.v_setpoint).collect();
    let mut th = vec![0.0; n];

    let calc = |vm: &[f64], th: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut pc = vec![0.0; n];
        let mut qc = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let (s, c) = (th[i] - th[k]).sin_cos();
                pc[i] += vm[i] * vm[k] * (g[(i, k)] * c + b[(i, k)] * s);
                qc[i] += vm[i] * vm[k] * (g[(i, k)] * s - b[(i, k)] * c);
            }
        }
        (pc, qc)
    };

    let mismatch = |pc: &[f64], qc: &[f64]| -> DVector<f64> {
        let mut m = DVector::zeros(n_unknown);
        for i in 0..n {
            if let Some(r) = ang_of[i] {
                m[r] = p_spec[i] - pc[i];
            }
            if let Some(r) = vm_of[i] {
                m[r] = q_spec[i] - qc[i];
            }
        }
        m
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut max_mismatch = f64::INFINITY;
    for it in 0..=cfg.max_iter {
        let (pc, qc) = calc(&vm, &th);
        let m = mismatch(&pc, &qc);
        max_mismatch = m.amax();
        iterations = it;
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch <= cfg.tol {
            converged = true;
            break;
        }
        if it == cfg.max_iter {
            break;
        }

        let mut jac = DMatrix::zeros(n_unknown, n_unknown);
        for i in 0..n {
            for k in 0..n {
                let (s, c) = (th[i] - th[k]).sin_cos();
                // dP_i/dtheta_k and friends, standard polar expressions.
                if let Some(r) = ang_of[i] {
                    if let Some(cc) = ang_of[k] {
                        jac[(r, cc)] = if i == k {
                            -qc[i] - b[(i, i)] * vm[i] * vm[i]
                        } else {
                            vm[i] * vm[k] * (g[(i, k)] * s - b[(i, k)] * c)
                        };
                    }
                    if let Some(cc) = vm_of[k] {
                        jac[(r, cc)] = if i == k {
                            pc[i] / vm[i] + g[(i, i)] * vm[i]
                        } else {
                            vm[i] * (g[(i, k)] * c + b[(i, k)] * s)
                        };
                    }
                }
                if let Some(r) = vm_of[i] {
                    if let Some(cc) = ang_of[k] {
                        jac[(r, cc)] = if i == k {
                            pc[i] - g[(i, i)] * vm[i] * vm[i]
                        } else {
                            -vm[i] * vm[k] * (g[(i, k)] * c + b[(i, k)] * s)
                        };
                    }
                    if let Some(cc) = vm_of[k] {
                        jac[(r, cc)] = if i == k {
                            qc[i] / vm[i] - b[(i, i)] * vm[i]
                        } else {
                            vm[i] * (g[(i, k)] * s - b[(i, k)] * c)
                        };
                    }
                }
            }
        }

        let Some(dx) = jac.lu().solve(&m) else {
            break;
        };
        for i in 0..n {
            if let Some(r) = ang_of[i] {
                th[i] += dx[r];
            }
            if let Some(r) = vm_of[i] {
                vm[i] += dx[r];
            }
        }
        if vm.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            iterations = it + 1;
            break;
        }
    }

    let v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(vm[i], th[i]))
        .collect();
    // Injections implied by the final voltages give the slack dispatch and
    // every generator's reactive output.
    let (pc, qc) = calc(&vm, &th);
    let slack_p = (pc[slack_pos] + p_load[slack_pos]) * case.base_mva;
    let gen_q: Vec<f64> = case
        .generators
        .iter()
        .map(|gen| {
            let pos = case.bus_position(gen.bus).expect("validated");
            (qc[pos] + q_load[pos]) * case.base_mva
        })
        .collect();

    Ok(PowerFlowSolution {
        v,
        slack_p,
        gen_q,
        converged,
        iterations,
        max_mismatch,
    })
}

/// Screen a converged solution against voltage bands, generator reactive
/// capability, and the slack generator's active limits.
pub fn check_static_limits(
    case: &GridCase,
    sol: &PowerFlowSolution,
) -> Result<StaticLimitsReport> {
    if !sol.converged {
        return Err(Error::Contract(
            "static limits require a converged power flow".into(),
        ));
    }
    let mut violations = Vec::new();
    for (i, bus) in case.buses.iter().enumerate() {
        let vm = sol.v[i].norm();
        if vm < bus.v_min || vm > bus.v_max {
            violations.push(Violation {
                kind: ViolationKind::Voltage,
                bus: bus.id,
                value: vm,
                lower: bus.v_min,
                upper: bus.v_max,
            });
        }
    }
    for (gi, gen) in case.generators.iter().enumerate() {
        let q = sol.gen_q[gi];
        if q < gen.q_min || q > gen.q_max {
            violations.push(Violation {
                kind: ViolationKind::GenQ,
                bus: gen.bus,
                value: q,
                lower: gen.q_min,
                upper: gen.q_max,
            });
        }
    }
    let slack = &case.generators[case.slack_gen()];
    if sol.slack_p < slack.p_min || sol.slack_p > slack.p_max {
        violations.push(Violation {
            kind: ViolationKind::SlackP,
            bus: slack.bus,
            value: sol.slack_p,
            lower: slack.p_min,
            upper: slack.p_max,
        });
    }
    Ok(StaticLimitsReport {
        feasible: violations.is_empty(),
        violations,
    })
}
