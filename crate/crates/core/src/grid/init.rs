//! Classical-model initialization: constant-voltage-behind-reactance EMFs,
//! mechanical powers, and the reduced admittance matrix for each network
//! phase of a contingency.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{
    build_admittance, kron_reduce, GridCase, NetworkVariant, OperatingPoint, PowerFlowSolution,
};
use crate::tds::Contingency;

/// The three network topologies a fault-and-trip contingency moves through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkPhase {
    PreFault = 0,
    FaultOn = 1,
    PostFault = 2,
}

impl NetworkPhase {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Everything the swing-equation integrator needs, expressed on the
/// generator internal nodes. Angles in radians, speeds per unit, powers per
/// unit on the case MVA base.
#[derive(Debug, Clone)]
pub struct DynamicInit {
    pub emf_mag: Vec<f64>,
    pub delta0: Vec<f64>,
    pub omega0: Vec<f64>,
    pub pm: Vec<f64>,
    pub tj: Vec<f64>,
    pub damping: Vec<f64>,
    /// Admittance reduced onto the generator internal nodes, indexed by
    /// `NetworkPhase::index()`.
    pub y_reduced: [DMatrix<Complex64>; 3],
    /// Largest per-unit gap between mechanical and electrical power at the
    /// initial angles on the pre-fault network; should sit at solver noise.
    pub equilibrium_residual: f64,
}

/// Electrical power drawn from each internal node:
/// `Pe_i = sum_k E_i E_k (G_ik cos(d_i - d_k) + B_ik sin(d_i - d_k))`.
pub fn electrical_power(emf_mag: &[f64], delta: &[f64], y: &DMatrix<Complex64>, pe: &mut [f64]) {
    let n = emf_mag.len();
    for i in 0..n {
        let mut sum = 0.0;
        for k in 0..n {
            let (s, c) = (delta[i] - delta[k]).sin_cos();
            sum += emf_mag[i] * emf_mag[k] * (y[(i, k)].re * c + y[(i, k)].im * s);
        }
        pe[i] = sum;
    }
}

/// Initialize the classical model from a converged power flow.
///
/// Loads become constant-impedance shunts at their solved voltage, the
/// network plus generator transient reactances is reduced onto the internal
/// nodes for each phase, and EMFs are placed so the pre-fault state is an
/// equilibrium.
pub fn init_dynamic_state(
    case: &GridCase,
    sol: &PowerFlowSolution,
    op: &OperatingPoint,
    cont: &Contingency,
) -> Result<DynamicInit> {
    if !sol.converged {
        return Err(Error::Contract(
            "dynamic initialization requires a converged power flow".into(),
        ));
    }
    op.check_dims(case)?;
    for (i, v) in sol.v.iter().enumerate() {
        if v.norm() < 1e-6 {
            return Err(Error::Infeasible(format!(
                "degenerate voltage at bus {}",
                case.buses[i].id
            )));
        }
    }

    let ng = case.generators.len();
    let ctrl = case.controllable_gens();

    // Internal EMF behind the transient reactance: E = V + j x'd I.
    let mut emf_mag = Vec::with_capacity(ng);
    let mut delta0 = Vec::with_capacity(ng);
    let mut pm = Vec::with_capacity(ng);
    for (gi, gen) in case.generators.iter().enumerate() {
        let p_pu = if gen.slack {
            sol.slack_p / case.base_mva
        } else {
            let j = ctrl.iter().position(|&k| k == gi).expect("non-slack");
            op.gen_p[j] / case.base_mva
        };
        let q_pu = sol.gen_q[gi] / case.base_mva;
        let v = sol.v[case.bus_position(gen.bus).expect("validated")];
        let s = Complex64::new(p_pu, q_pu);
        let i_term = (s / v).conj();
        let e = v + Complex64::new(0.0, gen.xd_prime) * i_term;
        emf_mag.push(e.norm());
        delta0.push(e.arg());
        pm.push(p_pu);
    }

    // Loads frozen as constant admittances at their solved voltage.
    let mut load_shunt = vec![Complex64::new(0.0, 0.0); case.buses.len()];
    for (li, load) in case.loads.iter().enumerate() {
        let pos = case.bus_position(load.bus).expect("validated");
        let s_pu = Complex64::new(load.p_mw, load.q_mvar) * op.load_scale[li] / case.base_mva;
        load_shunt[pos] += s_pu.conj() / sol.v[pos].norm_sqr();
    }

    let variants = [
        NetworkVariant::PreFault,
        NetworkVariant::FaultOn {
            bus: cont.fault_bus,
        },
        NetworkVariant::PostFault {
            tripped_branch: cont.tripped_branch,
        },
    ];
    let mut y_reduced: Vec<DMatrix<Complex64>> = Vec::with_capacity(3);
    for variant in &variants {
        let block = build_admittance(case, variant)?;
        let nb = block.bus_indices.len();
        let mut aug = DMatrix::from_element(nb + ng, nb + ng, Complex64::new(0.0, 0.0));
        aug.view_mut((0, 0), (nb, nb)).copy_from(&block.y);
        for (row, &bus_pos) in block.bus_indices.iter().enumerate() {
            aug[(row, row)] += load_shunt[bus_pos];
        }
        for (gi, gen) in case.generators.iter().enumerate() {
            let yg = Complex64::new(1.0, 0.0) / Complex64::new(0.0, gen.xd_prime);
            let gnode = nb + gi;
            aug[(gnode, gnode)] += yg;
            let term_pos = case.bus_position(gen.bus).expect("validated");
            // A generator whose terminal is the faulted bus stays in the
            // model but couples only to ground through its reactance.
            if let Some(row) = block.bus_indices.iter().position(|&p| p == term_pos) {
                aug[(gnode, row)] -= yg;
                aug[(row, gnode)] -= yg;
                aug[(row, row)] += yg;
            }
        }
        let keep: Vec<usize> = (nb..nb + ng).collect();
        y_reduced.push(kron_reduce(&aug, &keep)?);
    }
    let y_reduced: [DMatrix<Complex64>; 3] = y_reduced.try_into().expect("three phases");

    let mut pe0 = vec![0.0; ng];
    electrical_power(&emf_mag, &delta0, &y_reduced[0], &mut pe0);
    let equilibrium_residual = pm
        .iter()
        .zip(&pe0)
        .map(|(pm_i, pe_i)| (pm_i - pe_i).abs())
        .fold(0.0_f64, f64::max);

    Ok(DynamicInit {
        emf_mag,
        delta0,
        omega0: vec![1.0; ng],
        pm,
        tj: case.generators.iter().map(|g| g.tj).collect(),
        damping: case.generators.iter().map(|g| g.damping).collect(),
        y_reduced,
        equilibrium_residual,
    })
}
