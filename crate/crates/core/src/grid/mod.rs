//! Static grid description: buses, branches, generators, loads.
//!
//! All impedances are per-unit on the system base; powers in the case file
//! and in [`OperatingPoint`] are in physical MW / MVAr and converted at the
//! solver boundary.

mod admittance;
mod init;
mod powerflow;

pub use admittance::{build_admittance, kron_reduce, BusAdmittance, NetworkVariant};
pub use init::{electrical_power, init_dynamic_state, DynamicInit, NetworkPhase};
pub use powerflow::{
    check_static_limits, solve_power_flow, solve_power_flow_with, PowerFlowConfig,
    PowerFlowSolution, StaticLimitsReport, Violation, ViolationKind,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_v_min() -> f64 {
    0.9
}

fn default_v_max() -> f64 {
    1.1
}

fn default_rating() -> f64 {
    f64::INFINITY
}

/// A network node. `v_setpoint` is the regulated magnitude for generator
/// buses and the flat-start guess for the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub v_setpoint: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

/// A series branch (line or transformer) with total line-charging
/// susceptance `b` split equally between its ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "default_rating")]
    pub rating: f64,
}

/// Classical-model generator: constant EMF behind `xd_prime`, inertia time
/// constant `tj` (seconds on the system base), damping in pu torque per pu
/// speed deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: u32,
    pub tj: f64,
    pub xd_prime: f64,
    #[serde(default)]
    pub damping: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(default)]
    pub slack: bool,
}

/// Constant-power load at reference level; scaled per operating point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: u32,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// A complete static case.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

/// Parse and validate a case from JSON text.
pub fn parse_case(json: &str) -> Result<GridCase> {
    let case: GridCase =
        serde_json::from_str(json).map_err(|e| Error::CaseParse(e.to_string()))?;
    case.validate()?;
    Ok(case)
}

impl GridCase {
    /// Position of a bus id in `buses`, if present.
    pub fn bus_position(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Index into `generators` of the slack machine.
    pub fn slack_gen(&self) -> usize {
        self.generators
            .iter()
            .position(|g| g.slack)
            .expect("validated case has a slack generator")
    }

    /// Indices into `generators` of the dispatchable (non-slack) machines,
    /// in case order. This order defines the coordinates of an
    /// [`OperatingPoint`]'s `gen_p` and of every gradient.
    pub fn controllable_gens(&self) -> Vec<usize> {
        (0..self.generators.len())
            .filter(|&i| !self.generators[i].slack)
            .collect()
    }

    /// Per-coordinate `p_max` of the controllable machines, in MW.
    pub fn u_max(&self) -> Vec<f64> {
        self.controllable_gens()
            .iter()
            .map(|&i| self.generators[i].p_max)
            .collect()
    }

    /// Per-coordinate `p_min` of the controllable machines, in MW.
    pub fn u_min(&self) -> Vec<f64> {
        self.controllable_gens()
            .iter()
            .map(|&i| self.generators[i].p_min)
            .collect()
    }

    /// Find a branch by its endpoint pair, either orientation.
    pub fn branch_between(&self, a: u32, b: u32) -> Option<usize> {
        self.branches
            .iter()
            .position(|br| (br.from == a && br.to == b) || (br.from == b && br.to == a))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::CaseValidation(msg));
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return fail(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if self.buses.is_empty() {
            return fail("case has no buses".into());
        }
        for (i, b) in self.buses.iter().enumerate() {
            if self.buses[..i].iter().any(|o| o.id == b.id) {
                return fail(format!("duplicate bus id {}", b.id));
            }
            if !(b.v_setpoint.is_finite() && b.v_setpoint > 0.0) {
                return fail(format!("bus {}: v_setpoint must be positive", b.id));
            }
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                return fail(format!("bus {}: voltage band [{}, {}] is empty", b.id, b.v_min, b.v_max));
            }
        }
        for (i, br) in self.branches.iter().enumerate() {
            if br.from == br.to {
                return fail(format!("branch {i}: from and to are both bus {}", br.from));
            }
            for end in [br.from, br.to] {
                if self.bus_position(end).is_none() {
                    return fail(format!("branch {i}: endpoint bus {end} does not exist"));
                }
            }
            if br.r == 0.0 && br.x == 0.0 {
                return fail(format!("branch {i}: zero series impedance"));
            }
        }
        if self.generators.is_empty() {
            return fail("case has no generators".into());
        }
        let slack_count = self.generators.iter().filter(|g| g.slack).count();
        if slack_count != 1 {
            return fail(format!("case must have exactly one slack generator, found {slack_count}"));
        }
        for (i, g) in self.generators.iter().enumerate() {
            if self.bus_position(g.bus).is_none() {
                return fail(format!("generator {i}: bus {} does not exist", g.bus));
            }
            if self.generators[..i].iter().any(|o| o.bus == g.bus) {
                return fail(format!("generator {i}: bus {} already has a generator", g.bus));
            }
            if !(g.tj.is_finite() && g.tj > 0.0) {
                return fail(format!("generator {i}: tj must be positive"));
            }
            if !(g.xd_prime.is_finite() && g.xd_prime > 0.0) {
                return fail(format!("generator {i}: xd_prime must be positive"));
            }
            if g.damping < 0.0 {
                return fail(format!("generator {i}: damping must be nonnegative"));
            }
            if g.p_min > g.p_max {
                return fail(format!("generator {i}: p_min > p_max"));
            }
            if g.q_min > g.q_max {
                return fail(format!("generator {i}: q_min > q_max"));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            if self.bus_position(l.bus).is_none() {
                return fail(format!("load {i}: bus {} does not exist", l.bus));
            }
        }
        // A disconnected case makes the power-flow Jacobian singular; catch it here.
        let unreached = self.unreachable_from(self.buses[0].id, None);
        if let Some(&first) = unreached.first() {
            return fail(format!("bus {} is not connected to the network", self.buses[first].id));
        }
        Ok(())
    }

    /// Bus positions unreachable from `start` over all branches except
    /// `skip_branch`. Used by validation and post-fault islanding checks.
    pub(crate) fn unreachable_from(&self, start: u32, skip_branch: Option<usize>) -> Vec<usize> {
        let n = self.buses.len();
        let mut seen = vec![false; n];
        let mut stack = vec![self.bus_position(start).expect("start bus exists")];
        seen[stack[0]] = true;
        while let Some(p) = stack.pop() {
            for (bi, br) in self.branches.iter().enumerate() {
                if Some(bi) == skip_branch {
                    continue;
                }
                let (f, t) = (
                    self.bus_position(br.from).unwrap(),
                    self.bus_position(br.to).unwrap(),
                );
                let next = if f == p {
                    t
                } else if t == p {
                    f
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        (0..n).filter(|&i| !seen[i]).collect()
    }
}

/// A candidate dispatch: active power of each controllable generator (MW,
/// in [`GridCase::controllable_gens`] order) plus one multiplier per load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub gen_p: Vec<f64>,
    pub load_scale: Vec<f64>,
}

impl OperatingPoint {
    /// An operating point at the case's reference load level.
    pub fn with_reference_load(case: &GridCase, gen_p: Vec<f64>) -> Self {
        OperatingPoint {
            gen_p,
            load_scale: vec![1.0; case.loads.len()],
        }
    }

    /// Check dimensions against the case.
    pub fn check_dims(&self, case: &GridCase) -> Result<()> {
        let nu = case.controllable_gens().len();
        if self.gen_p.len() != nu {
            return Err(Error::Contract(format!(
                "operating point has {} dispatch coordinates, case has {nu} controllable generators",
                self.gen_p.len()
            )));
        }
        if self.load_scale.len() != case.loads.len() {
            return Err(Error::Contract(format!(
                "operating point has {} load scales, case has {} loads",
                self.load_scale.len(),
                case.loads.len()
            )));
        }
        if !self.gen_p.iter().chain(self.load_scale.iter()).all(|v| v.is_finite()) {
            return Err(Error::Contract("operating point has non-finite entries".into()));
        }
        Ok(())
    }

    /// True when every dispatch coordinate lies inside its generator's
    /// `[p_min, p_max]` and every load scale inside `band`.
    pub fn within_limits(&self, case: &GridCase, band: (f64, f64)) -> bool {
        let ctrl = case.controllable_gens();
        self.gen_p.len() == ctrl.len()
            && self
                .gen_p
                .iter()
                .zip(ctrl.iter())
                .all(|(&p, &g)| p >= case.generators[g].p_min && p <= case.generators[g].p_max)
            && self.load_scale.iter().all(|&s| s >= band.0 && s <= band.1)
    }

    /// Bit-exact dedup key.
    pub fn bits_key(&self) -> Vec<u64> {
        self.gen_p
            .iter()
            .chain(self.load_scale.iter())
            .map(|v| v.to_bits())
            .collect()
    }
}

/// Bundled test systems.
pub mod cases {
    use super::{parse_case, GridCase};

    /// Nine-bus, three-machine system: the classic WSCC network with
    /// textbook machine constants. Generator 1 (bus 1) is slack; the
    /// dispatchable coordinates are the machines at buses 2 and 3.
    pub fn wscc9() -> GridCase {
        parse_case(include_str!("../../cases/case9.json")).expect("bundled case is valid")
    }

    /// Six-machine synthetic system: two three-machine areas joined by a
    /// weak tie, built to exercise scenario clustering end to end.
    pub fn synth6() -> GridCase {
        parse_case(include_str!("../../cases/synth6.json")).expect("bundled case is valid")
    }
}
