//! Fixed-step RK4 integration of the classical swing equations through a
//! fault-and-clear contingency, plus center-of-inertia bookkeeping and the
//! stability verdict.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DynamicInit, GridCase, NetworkPhase};

/// Truncation threshold for runaway trajectories, radians from the center
/// of inertia. Far beyond any sane `delta_max`, so truncation never hides a
/// borderline verdict.
pub(crate) const DIVERGENCE_ANGLE: f64 = 20.0 * std::f64::consts::PI;

/// A three-phase disturbance: bolted fault at `fault_bus` applied at t = 0,
/// cleared at `t_clear` by opening `tripped_branch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub id: String,
    pub fault_bus: u32,
    /// Index into `GridCase::branches`.
    pub tripped_branch: usize,
    /// Seconds after fault application when the branch opens.
    pub t_clear: f64,
}

impl Contingency {
    /// Look up the tripped branch by its endpoint bus ids.
    pub fn by_endpoints(
        case: &GridCase,
        id: &str,
        fault_bus: u32,
        from: u32,
        to: u32,
        t_clear: f64,
    ) -> Result<Self> {
        let tripped_branch = case.branch_between(from, to).ok_or_else(|| {
            Error::Topology(format!("no branch between buses {from} and {to}"))
        })?;
        let cont = Self {
            id: id.to_string(),
            fault_bus,
            tripped_branch,
            t_clear,
        };
        cont.validate(case, true)?;
        Ok(cont)
    }

    /// Structural checks. `allow_remote` permits a fault bus that is not an
    /// endpoint of the tripped branch, which is unusual but well defined.
    pub fn validate(&self, case: &GridCase, allow_remote: bool) -> Result<()> {
        if case.bus_position(self.fault_bus).is_none() {
            return Err(Error::Topology(format!(
                "contingency {}: fault bus {} does not exist",
                self.id, self.fault_bus
            )));
        }
        if self.tripped_branch >= case.branches.len() {
            return Err(Error::Topology(format!(
                "contingency {}: branch index {} out of range",
                self.id, self.tripped_branch
            )));
        }
        if !(self.t_clear.is_finite() && self.t_clear > 0.0) {
            return Err(Error::Config(format!(
                "contingency {}: clearing time must be positive",
                self.id
            )));
        }
        if !allow_remote {
            let br = &case.branches[self.tripped_branch];
            if self.fault_bus != br.from && self.fault_bus != br.to {
                return Err(Error::Config(format!(
                    "contingency {}: fault bus {} is not an endpoint of branch {}-{}",
                    self.id, self.fault_bus, br.from, br.to
                )));
            }
        }
        Ok(())
    }
}

fn default_t_end() -> f64 {
    5.0
}
fn default_dt() -> f64 {
    0.005
}
fn default_delta_max() -> f64 {
    std::f64::consts::PI
}
fn default_omega_s() -> f64 {
    2.0 * std::f64::consts::PI * 60.0
}

/// Integration and assessment settings shared by the simulator, the
/// stability index, and its gradient.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Largest tolerable rotor excursion from the center of inertia, rad.
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    /// Synchronous speed, rad/s.
    #[serde(default = "default_omega_s")]
    pub omega_s: f64,
    /// When set, the severity curve blends excursions with softmax weights
    /// of this temperature instead of taking the hard maximum.
    #[serde(default)]
    pub softmax_temp: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            dt: default_dt(),
            delta_max: default_delta_max(),
            omega_s: default_omega_s(),
            softmax_temp: None,
        }
    }
}

impl SimConfig {
    fn steps_for(&self, duration: f64, what: &str) -> Result<usize> {
        let ratio = duration / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() > 1e-6 || rounded < 1.0 {
            return Err(Error::Config(format!(
                "{what} ({duration} s) must be a positive multiple of dt ({} s)",
                self.dt
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::Config("t_end must be positive".into()));
        }
        if !(self.delta_max.is_finite() && self.delta_max > 0.0) {
            return Err(Error::Config("delta_max must be positive".into()));
        }
        if !(self.omega_s.is_finite() && self.omega_s > 0.0) {
            return Err(Error::Config("omega_s must be positive".into()));
        }
        if let Some(t) = self.softmax_temp {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config("softmax temperature must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Simulated rotor motion on the integration grid. Row k of `delta` /
/// `omega` is the state at `times[k]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Rotor angles, rad; one row per time sample, one column per machine.
    pub delta: DMatrix<f64>,
    /// Rotor speeds, per unit of synchronous speed.
    pub omega: DMatrix<f64>,
    /// Inertia-weighted mean angle at each sample.
    pub coi: Vec<f64>,
    /// True when integration stopped early because the motion ran away.
    pub divergent: bool,
    /// Grid step index at which the fault cleared.
    pub clear_step: usize,
}

impl Trajectory {
    pub fn n_machines(&self) -> usize {
        self.delta.ncols()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.n_machines();
        write!(w, "t")?;
        for i in 1..=n {
            write!(w, ",delta_{i}")?;
        }
        for i in 1..=n {
            write!(w, ",omega_{i}")?;
        }
        writeln!(w, ",coi")?;
        for k in 0..self.times.len() {
            write!(w, "{:.10e}", self.times[k])?;
            for i in 0..n {
                write!(w, ",{:.10e}", self.delta[(k, i)])?;
            }
            for i in 0..n {
                write!(w, ",{:.10e}", self.omega[(k, i)])?;
            }
            writeln!(w, ",{:.10e}", self.coi[k])?;
        }
        Ok(())
    }
}

/// Stability call for one simulated trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Largest |delta_i - coi| seen anywhere on the grid, rad.
    pub max_excursion: f64,
    /// First grid time at which some machine exceeded the excursion limit.
    pub first_violation_time: Option<f64>,
    /// +1 stable, -1 unstable.
    pub lambda: i8,
}

/// Inertia-weighted mean angle for every row of `delta`.
pub fn coi_series(delta: &DMatrix<f64>, tj: &[f64]) -> Vec<f64> {
    let total: f64 = tj.iter().sum();
    (0..delta.nrows())
        .map(|k| {
            let mut acc = 0.0;
            for (i, tji) in tj.iter().enumerate() {
                acc += tji * delta[(k, i)];
            }
            acc / total
        })
        .collect()
}

/// Right-hand side of the swing equations for one network phase.
pub(crate) struct SwingSystem<'a> {
    pub emf: &'a [f64],
    pub pm: &'a [f64],
    pub tj: &'a [f64],
    pub damping: &'a [f64],
    pub omega_s: f64,
}

impl SwingSystem<'_> {
    /// d(delta)_i = omega_s (omega_i - 1)
    /// d(omega)_i = (pm_i - pe_i - D_i (omega_i - 1)) / tj_i
    pub fn rhs(
        &self,
        y: &DMatrix<Complex64>,
        delta: &[f64],
        omega: &[f64],
        d_delta: &mut [f64],
        d_omega: &mut [f64],
        pe_buf: &mut [f64],
    ) {
        crate::grid::electrical_power(self.emf, delta, y, pe_buf);
        for i in 0..delta.len() {
            let slip = omega[i] - 1.0;
            d_delta[i] = self.omega_s * slip;
            d_omega[i] = (self.pm[i] - pe_buf[i] - self.damping[i] * slip) / self.tj[i];
        }
    }
}

/// Partial derivatives of electrical power with respect to rotor angles:
/// off-diagonal `dPe_i/ddelta_j = E_i E_j (G_ij sin d_ij - B_ij cos d_ij)`,
/// diagonal the negated row sum (self-terms drop out of the difference).
pub(crate) fn power_angle_jacobian(
    emf: &[f64],
    delta: &[f64],
    y: &DMatrix<Complex64>,
    out: &mut DMatrix<f64>,
) {
    let n = emf.len();
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let (s, c) = (delta[i] - delta[j]).sin_cos();
            let v = emf[i] * emf[j] * (y[(i, j)].re * s - y[(i, j)].im * c);
            out[(i, j)] = v;
            diag -= v;
        }
        out[(i, i)] = diag;
    }
}

struct Rk4Buffers {
    k1d: Vec<f64>,
    k1w: Vec<f64>,
    k2d: Vec<f64>,
    k2w: Vec<f64>,
    k3d: Vec<f64>,
    k3w: Vec<f64>,
    k4d: Vec<f64>,
    k4w: Vec<f64>,
    td: Vec<f64>,
    tw: Vec<f64>,
    pe: Vec<f64>,
}

impl Rk4Buffers {
    fn new(n: usize) -> Self {
        Self {
            k1d: vec![0.0; n],
            k1w: vec![0.0; n],
            k2d: vec![0.0; n],
            k2w: vec![0.0; n],
            k3d: vec![0.0; n],
            k3w: vec![0.0; n],
            k4d: vec![0.0; n],
            k4w: vec![0.0; n],
            td: vec![0.0; n],
            tw: vec![0.0; n],
            pe: vec![0.0; n],
        }
    }
}

fn rk4_step(
    sys: &SwingSystem,
    y: &DMatrix<Complex64>,
    dt: f64,
    delta: &mut [f64],
    omega: &mut [f64],
    b: &mut Rk4Buffers,
) {
    let n = delta.len();
    sys.rhs(y, delta, omega, &mut b.k1d, &mut b.k1w, &mut b.pe);
    for i in 0..n {
        b.td[i] = delta[i] + 0.5 * dt * b.k1d[i];
        b.tw[i] = omega[i] + 0.5 * dt * b.k1w[i];
    }
    sys.rhs(y, &b.td, &b.tw, &mut b.k2d, &mut b.k2w, &mut b.pe);
    for i in 0..n {
        b.td[i] = delta[i] + 0.5 * dt * b.k2d[i];
        b.tw[i] = omega[i] + 0.5 * dt * b.k2w[i];
    }
    sys.rhs(y, &b.td, &b.tw, &mut b.k3d, &mut b.k3w, &mut b.pe);
    for i in 0..n {
        b.td[i] = delta[i] + dt * b.k3d[i];
        b.tw[i] = omega[i] + dt * b.k3w[i];
    }
    sys.rhs(y, &b.td, &b.tw, &mut b.k4d, &mut b.k4w, &mut b.pe);
    let sixth = dt / 6.0;
    for i in 0..n {
        delta[i] += sixth * (b.k1d[i] + 2.0 * b.k2d[i] + 2.0 * b.k3d[i] + b.k4d[i]);
        omega[i] += sixth * (b.k1w[i] + 2.0 * b.k2w[i] + 2.0 * b.k3w[i] + b.k4w[i]);
    }
}

/// Integrate the disturbance response on a fixed grid. The fault is applied
/// at t = 0 and the interval ending at or before `t_clear` uses the
/// fault-on network; everything after uses the post-fault network. Runaway
/// trajectories are truncated and flagged divergent rather than failing.
pub fn simulate(init: &DynamicInit, cont: &Contingency, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let k_clear = cfg.steps_for(cont.t_clear, "clearing time")?;
    let n_steps = cfg.steps_for(cfg.t_end, "horizon")?;
    if k_clear >= n_steps {
        return Err(Error::Config(format!(
            "clearing time {} s must fall before the horizon {} s",
            cont.t_clear, cfg.t_end
        )));
    }

    let ng = init.emf_mag.len();
    let sys = SwingSystem {
        emf: &init.emf_mag,
        pm: &init.pm,
        tj: &init.tj,
        damping: &init.damping,
        omega_s: cfg.omega_s,
    };
    let total_tj: f64 = init.tj.iter().sum();

    let mut delta = init.delta0.clone();
    let mut omega = init.omega0.clone();
    let mut bufs = Rk4Buffers::new(ng);

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut delta_rows: Vec<f64> = Vec::with_capacity((n_steps + 1) * ng);
    let mut omega_rows: Vec<f64> = Vec::with_capacity((n_steps + 1) * ng);
    let mut coi = Vec::with_capacity(n_steps + 1);
    let mut divergent = false;

    let record = |t: f64,
                  delta: &[f64],
                  omega: &[f64],
                  times: &mut Vec<f64>,
                  dr: &mut Vec<f64>,
                  om: &mut Vec<f64>,
                  coi: &mut Vec<f64>| {
        times.push(t);
        dr.extend_from_slice(delta);
        om.extend_from_slice(omega);
        let c: f64 = delta
            .iter()
            .zip(&init.tj)
            .map(|(d, tj)| d * tj)
            .sum::<f64>()
            / total_tj;
        coi.push(c);
    };

    record(
        0.0, &delta, &omega, &mut times, &mut delta_rows, &mut omega_rows, &mut coi,
    );

    for s in 0..n_steps {
        let y = if s < k_clear {
            &init.y_reduced[NetworkPhase::FaultOn.index()]
        } else {
            &init.y_reduced[NetworkPhase::PostFault.index()]
        };
        rk4_step(&sys, y, cfg.dt, &mut delta, &mut omega, &mut bufs);

        if delta.iter().chain(omega.iter()).any(|v| !v.is_finite()) {
            divergent = true;
            break;
        }
        let t = (s + 1) as f64 * cfg.dt;
        record(
            t, &delta, &omega, &mut times, &mut delta_rows, &mut omega_rows, &mut coi,
        );
        let c = *coi.last().expect("just pushed");
        if delta.iter().any(|d| (d - c).abs() > DIVERGENCE_ANGLE) {
            divergent = true;
            break;
        }
    }

    let n_rec = times.len();
    Ok(Trajectory {
        times,
        delta: DMatrix::from_row_slice(n_rec, ng, &delta_rows),
        omega: DMatrix::from_row_slice(n_rec, ng, &omega_rows),
        coi,
        divergent,
        clear_step: k_clear,
    })
}

/// Grade a trajectory against the excursion limit. Any sample with
/// `|delta_i - coi| > delta_max` makes the case unstable, as does earlier
/// truncation for divergence.
pub fn classify_stability(traj: &Trajectory, delta_max: f64) -> StabilityVerdict {
    let mut max_excursion = 0.0_f64;
    let mut first_violation_time = None;
    for k in 0..traj.times.len() {
        let mut worst = 0.0_f64;
        for i in 0..traj.n_machines() {
            worst = worst.max((traj.delta[(k, i)] - traj.coi[k]).abs());
        }
        max_excursion = max_excursion.max(worst);
        if worst > delta_max && first_violation_time.is_none() {
            first_violation_time = Some(traj.times[k]);
        }
    }
    let stable = first_violation_time.is_none() && !traj.divergent;
    StabilityVerdict {
        stable,
        max_excursion,
        first_violation_time,
        lambda: if stable { 1 } else { -1 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cases::wscc9;
    use crate::grid::{init_dynamic_state, parse_case, solve_power_flow, OperatingPoint};
    use approx::assert_abs_diff_eq;

    fn nine_bus_init(t_clear: f64) -> (DynamicInit, Contingency, SimConfig) {
        let case = wscc9();
        let op = OperatingPoint::with_reference_load(&case, vec![163.0, 85.0]);
        let sol = solve_power_flow(&case, &op).unwrap();
        let cont = Contingency::by_endpoints(&case, "bus5-trip57", 5, 5, 7, t_clear).unwrap();
        let init = init_dynamic_state(&case, &sol, &op, &cont).unwrap();
        (init, cont, SimConfig::default())
    }

    #[test]
    fn undisturbed_equilibrium_stays_put() {
        let (mut init, cont, mut cfg) = nine_bus_init(0.2);
        // Replace both disturbance networks with the pre-fault one: the
        // initial condition must then be a fixed point of the integrator.
        init.y_reduced[1] = init.y_reduced[0].clone();
        init.y_reduced[2] = init.y_reduced[0].clone();
        cfg.t_end = 2.0;
        let traj = simulate(&init, &cont, &cfg).unwrap();
        assert!(!traj.divergent);
        for k in 0..traj.times.len() {
            for i in 0..3 {
                assert_abs_diff_eq!(traj.delta[(k, i)], init.delta0[i], epsilon = 1e-9);
                assert_abs_diff_eq!(traj.omega[(k, i)], 1.0, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn coi_identity_holds_along_the_trajectory() {
        let (init, cont, cfg) = nine_bus_init(0.2);
        let traj = simulate(&init, &cont, &cfg).unwrap();
        let total: f64 = init.tj.iter().sum();
        for k in 0..traj.times.len() {
            let weighted: f64 = (0..3)
                .map(|i| init.tj[i] * (traj.delta[(k, i)] - traj.coi[k]))
                .sum();
            assert!((weighted / total).abs() < 1e-9);
        }
        let recomputed = coi_series(&traj.delta, &init.tj);
        for k in 0..traj.times.len() {
            assert_abs_diff_eq!(recomputed[k], traj.coi[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn halving_the_step_barely_moves_the_answer() {
        let (init, cont, mut cfg) = nine_bus_init(0.2);
        cfg.t_end = 1.0;
        cfg.dt = 0.01;
        let coarse = simulate(&init, &cont, &cfg).unwrap();
        cfg.dt = 0.005;
        let fine = simulate(&init, &cont, &cfg).unwrap();
        let kc = coarse.times.len() - 1;
        let kf = fine.times.len() - 1;
        assert_abs_diff_eq!(coarse.times[kc], fine.times[kf], epsilon = 1e-12);
        for i in 0..3 {
            assert!((coarse.delta[(kc, i)] - fine.delta[(kf, i)]).abs() < 1e-4);
            assert!((coarse.omega[(kc, i)] - fine.omega[(kf, i)]).abs() < 1e-6);
        }
    }

    #[test]
    fn reference_contingency_is_stable_at_normal_clearing() {
        let (init, cont, cfg) = nine_bus_init(0.2);
        let traj = simulate(&init, &cont, &cfg).unwrap();
        let verdict = classify_stability(&traj, cfg.delta_max);
        assert!(
            verdict.stable,
            "excursion {} at {:?}",
            verdict.max_excursion, verdict.first_violation_time
        );
        assert_eq!(verdict.lambda, 1);
        assert_eq!(traj.clear_step, 40);
    }

    #[test]
    fn sustained_fault_loses_synchronism() {
        let (init, cont, cfg) = nine_bus_init(0.6);
        let traj = simulate(&init, &cont, &cfg).unwrap();
        let verdict = classify_stability(&traj, cfg.delta_max);
        assert!(!verdict.stable);
        assert_eq!(verdict.lambda, -1);
        assert!(verdict.first_violation_time.is_some() || traj.divergent);
        assert!(verdict.max_excursion > cfg.delta_max);
    }

    #[test]
    fn clearing_must_sit_on_the_grid() {
        let (init, mut cont, cfg) = nine_bus_init(0.2);
        cont.t_clear = 0.2017;
        let err = simulate(&init, &cont, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn remote_fault_requires_opt_in() {
        let case = wscc9();
        let cont = Contingency {
            id: "remote".into(),
            fault_bus: 8,
            tripped_branch: case.branch_between(5, 7).unwrap(),
            t_clear: 0.1,
        };
        assert!(cont.validate(&case, true).is_ok());
        let err = cont.validate(&case, false).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_machine_oscillates_at_the_linearized_frequency() {
        // Test machine against a near-infinite bus over two parallel lines;
        // tripping one line changes the transfer reactance and the response
        // rings at f = sqrt(omega_s K / tj) / 2 pi, with K the slope of the
        // power-angle curve at the post-fault equilibrium.
        let json = r#"{
            "base_mva": 100.0,
            "buses": [
                {"id": 1, "v_setpoint": 1.0},
                {"id": 2, "v_setpoint": 1.02}
            ],
            "branches": [
                {"from": 1, "to": 2, "r": 0.0, "x": 0.4},
                {"from": 1, "to": 2, "r": 0.0, "x": 0.4}
            ],
            "generators": [
                {"bus": 1, "tj": 1.0e6, "xd_prime": 1.0e-4, "slack": true,
                 "p_min": -1.0e6, "p_max": 1.0e6, "q_min": -1.0e6, "q_max": 1.0e6},
                {"bus": 2, "tj": 8.0, "xd_prime": 0.15,
                 "p_min": 0.0, "p_max": 200.0, "q_min": -100.0, "q_max": 100.0}
            ],
            "loads": []
        }"#;
        let case = parse_case(json).unwrap();
        let op = OperatingPoint::with_reference_load(&case, vec![50.0]);
        let sol = solve_power_flow(&case, &op).unwrap();
        assert!(sol.converged);
        let cont = Contingency {
            id: "trip-one-line".into(),
            fault_bus: 1,
            tripped_branch: 1,
            t_clear: 0.01,
        };
        let init = init_dynamic_state(&case, &sol, &op, &cont).unwrap();

        // Post-fault equilibrium for the relative angle by bisection.
        let y_post = &init.y_reduced[2];
        let pe2 = |d_rel: f64| {
            let mut pe = [0.0; 2];
            crate::grid::electrical_power(
                &init.emf_mag,
                &[init.delta0[0], init.delta0[0] + d_rel],
                y_post,
                &mut pe,
            );
            pe[1]
        };
        let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if pe2(mid) < init.pm[1] {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let d_eq = 0.5 * (lo + hi);
        let h = 1e-5;
        let k_sync = (pe2(d_eq + h) - pe2(d_eq - h)) / (2.0 * h);
        let cfg = SimConfig {
            t_end: 10.0,
            dt: 0.0025,
            ..SimConfig::default()
        };
        let f_pred = (cfg.omega_s * k_sync / init.tj[1]).sqrt() / (2.0 * std::f64::consts::PI);
        assert!(f_pred > 0.5 && f_pred < 3.0, "test design broke: {f_pred}");

        let traj = simulate(&init, &cont, &cfg).unwrap();
        assert!(!traj.divergent);
        // Period from upward mean-crossings of the relative angle.
        let rel: Vec<f64> = (0..traj.times.len())
            .map(|k| traj.delta[(k, 1)] - traj.delta[(k, 0)])
            .collect();
        let start = traj.clear_step + 1;
        let mean = rel[start..].iter().sum::<f64>() / (rel.len() - start) as f64;
        let mut crossings = Vec::new();
        for k in start..rel.len() - 1 {
            let (a, b) = (rel[k] - mean, rel[k + 1] - mean);
            if a <= 0.0 && b > 0.0 {
                let frac = a / (a - b);
                crossings.push(traj.times[k] + frac * cfg.dt);
            }
        }
        assert!(crossings.len() >= 5, "only {} cycles seen", crossings.len());
        let period =
            (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
        let f_meas = 1.0 / period;
        assert!(
            (f_meas - f_pred).abs() / f_pred < 0.02,
            "measured {f_meas} Hz, predicted {f_pred} Hz"
        );
    }

    #[test]
    fn csv_export_has_one_row_per_sample() {
        let (init, cont, mut cfg) = nine_bus_init(0.2);
        cfg.t_end = 0.5;
        let traj = simulate(&init, &cont, &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,delta_1,delta_2,delta_3,omega_1,omega_2,omega_3,coi"
        );
        assert_eq!(lines.count(), traj.times.len());
    }

    #[test]
    fn power_angle_jacobian_matches_finite_differences() {
        let (init, _cont, _cfg) = nine_bus_init(0.2);
        let y = &init.y_reduced[0];
        let delta = [0.3, -0.2, 0.75];
        let mut jac = DMatrix::zeros(3, 3);
        power_angle_jacobian(&init.emf_mag, &delta, y, &mut jac);
        let h = 1e-6;
        for j in 0..3 {
            let mut dp = delta;
            let mut dm = delta;
            dp[j] += h;
            dm[j] -= h;
            let mut pe_p = [0.0; 3];
            let mut pe_m = [0.0; 3];
            crate::grid::electrical_power(&init.emf_mag, &dp, y, &mut pe_p);
            crate::grid::electrical_power(&init.emf_mag, &dm, y, &mut pe_m);
            for i in 0..3 {
                let fd = (pe_p[i] - pe_m[i]) / (2.0 * h);
                assert_abs_diff_eq!(jac[(i, j)], fd, epsilon = 1e-6);
            }
        }
    }
}
