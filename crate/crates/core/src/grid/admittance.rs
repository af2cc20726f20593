//! Bus admittance matrices for the three network phases, and Kron reduction.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::GridCase;

/// Which network the matrix describes.
///
/// `FaultOn` models a three-phase bolted fault: the faulted bus is pinned to
/// zero voltage, which is equivalent to deleting its row and column. The
/// returned matrix therefore has one bus fewer; `BusAdmittance::bus_indices`
/// says which case buses the rows map to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetworkVariant {
    PreFault,
    FaultOn { bus: u32 },
    PostFault { tripped_branch: usize },
}

/// An admittance matrix together with the case bus positions its rows
/// represent (identity mapping except for `FaultOn`).
#[derive(Debug, Clone)]
pub struct BusAdmittance {
    pub y: DMatrix<Complex64>,
    pub bus_indices: Vec<usize>,
}

/// Build the bus admittance matrix for one network phase.
///
/// Branch model: series admittance `1/(r + jx)` plus half the line-charging
/// susceptance `b` shunted at each end. Tripping a branch that islands a
/// generator is a topology error.
pub fn build_admittance(case: &GridCase, variant: &NetworkVariant) -> Result<BusAdmittance> {
    let n = case.buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));

    let skip = match variant {
        NetworkVariant::PostFault { tripped_branch } => {
            if *tripped_branch >= case.branches.len() {
                return Err(Error::Contract(format!(
                    "tripped branch index {tripped_branch} out of range ({} branches)",
                    case.branches.len()
                )));
            }
            check_islanding(case, *tripped_branch)?;
            Some(*tripped_branch)
        }
        _ => None,
    };

    for (bi, br) in case.branches.iter().enumerate() {
        if Some(bi) == skip {
            continue;
        }
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ysh = Complex64::new(0.0, br.b / 2.0);
        let f = case.bus_position(br.from).expect("validated");
        let t = case.bus_position(br.to).expect("validated");
        y[(f, f)] += ys + ysh;
        y[(t, t)] += ys + ysh;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }

    match variant {
        NetworkVariant::FaultOn { bus } => {
            let fp = case
                .bus_position(*bus)
                .ok_or_else(|| Error::Contract(format!("fault bus {bus} does not exist")))?;
            let keep: Vec<usize> = (0..n).filter(|&i| i != fp).collect();
            let reduced = select_submatrix(&y, &keep);
            Ok(BusAdmittance {
                y: reduced,
                bus_indices: keep,
            })
        }
        _ => Ok(BusAdmittance {
            y,
            bus_indices: (0..n).collect(),
        }),
    }
}

fn check_islanding(case: &GridCase, tripped: usize) -> Result<()> {
    let slack_bus = case.generators[case.slack_gen()].bus;
    let unreached = case.unreachable_from(slack_bus, Some(tripped));
    for &pos in &unreached {
        let bus_id = case.buses[pos].id;
        if case.generators.iter().any(|g| g.bus == bus_id) {
            let br = &case.branches[tripped];
            return Err(Error::Topology(format!(
                "tripping branch {}-{} islands generator at bus {bus_id}",
                br.from, br.to
            )));
        }
    }
    Ok(())
}

fn select_submatrix(y: &DMatrix<Complex64>, idx: &[usize]) -> DMatrix<Complex64> {
    let m = idx.len();
    DMatrix::from_fn(m, m, |r, c| y[(idx[r], idx[c])])
}

/// Eliminate every node not listed in `keep` by the Schur complement
/// `Y_kk - Y_ke * Y_ee^-1 * Y_ek`. Node currents at eliminated nodes must be
/// zero for this to be exact, which holds once loads are folded into the
/// diagonal as shunt admittances.
pub fn kron_reduce(y: &DMatrix<Complex64>, keep: &[usize]) -> Result<DMatrix<Complex64>> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::Contract("kron_reduce needs a square matrix".into()));
    }
    let mut seen = vec![false; n];
    for &k in keep {
        if k >= n {
            return Err(Error::Contract(format!("keep index {k} out of range for {n} nodes")));
        }
        if seen[k] {
            return Err(Error::Contract(format!("keep index {k} listed twice")));
        }
        seen[k] = true;
    }
    let elim: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    if elim.is_empty() {
        return Ok(select_submatrix(y, keep));
    }

    let y_kk = select_submatrix(y, keep);
    let y_ke = DMatrix::from_fn(keep.len(), elim.len(), |r, c| y[(keep[r], elim[c])]);
    let y_ek = DMatrix::from_fn(elim.len(), keep.len(), |r, c| y[(elim[r], keep[c])]);
    let y_ee = select_submatrix(y, &elim);

    let lu = y_ee.lu();
    let x = lu
        .solve(&y_ek)
        .ok_or_else(|| Error::Numerical("kron reduction: eliminated block is singular".into()))?;
    Ok(y_kk - y_ke * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cases::wscc9;
    use approx::assert_abs_diff_eq;

    /// Independent construction through the incidence-matrix identity
    /// Y = A^T diag(y_s) A + diag(shunts); exercises a different code path
    /// than the per-branch stamping above.
    fn ybus_via_incidence(case: &GridCase) -> DMatrix<Complex64> {
        let n = case.buses.len();
        let m = case.branches.len();
        let mut a = DMatrix::from_element(m, n, Complex64::new(0.0, 0.0));
        let mut ys = DMatrix::from_element(m, m, Complex64::new(0.0, 0.0));
        let mut shunt = vec![Complex64::new(0.0, 0.0); n];
        for (bi, br) in case.branches.iter().enumerate() {
            let f = case.bus_position(br.from).unwrap();
            let t = case.bus_position(br.to).unwrap();
            a[(bi, f)] = Complex64::new(1.0, 0.0);
            a[(bi, t)] = Complex64::new(-1.0, 0.0);
            ys[(bi, bi)] = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            shunt[f] += Complex64::new(0.0, br.b / 2.0);
            shunt[t] += Complex64::new(0.0, br.b / 2.0);
        }
        let mut y = a.transpose() * ys * a;
        for i in 0..n {
            y[(i, i)] += shunt[i];
        }
        y
    }

    #[test]
    fn prefault_matches_incidence_oracle() {
        let case = wscc9();
        let built = build_admittance(&case, &NetworkVariant::PreFault).unwrap();
        let oracle = ybus_via_incidence(&case);
        for r in 0..9 {
            for c in 0..9 {
                assert_abs_diff_eq!(built.y[(r, c)].re, oracle[(r, c)].re, epsilon = 1e-12);
                assert_abs_diff_eq!(built.y[(r, c)].im, oracle[(r, c)].im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rows_sum_to_shunts_only() {
        // Series terms cancel in row sums, leaving line charging.
        let case = wscc9();
        let built = build_admittance(&case, &NetworkVariant::PreFault).unwrap();
        for r in 0..9 {
            let sum: Complex64 = (0..9).map(|c| built.y[(r, c)]).sum();
            assert_abs_diff_eq!(sum.re, 0.0, epsilon = 1e-12);
            assert!(sum.im >= 0.0, "row {r} charging should be capacitive");
        }
    }

    #[test]
    fn fault_on_drops_the_faulted_bus() {
        let case = wscc9();
        let pre = build_admittance(&case, &NetworkVariant::PreFault).unwrap();
        let flt = build_admittance(&case, &NetworkVariant::FaultOn { bus: 5 }).unwrap();
        assert_eq!(flt.y.nrows(), 8);
        let fault_pos = case.bus_position(5).unwrap();
        assert!(!flt.bus_indices.contains(&fault_pos));
        // Remaining entries are untouched.
        for (r, &ri) in flt.bus_indices.iter().enumerate() {
            for (c, &ci) in flt.bus_indices.iter().enumerate() {
                assert_eq!(flt.y[(r, c)], pre.y[(ri, ci)]);
            }
        }
    }

    #[test]
    fn post_fault_removes_one_branch_stamp() {
        let case = wscc9();
        let tripped = case.branch_between(5, 7).unwrap();
        let pre = build_admittance(&case, &NetworkVariant::PreFault).unwrap();
        let post = build_admittance(
            &case,
            &NetworkVariant::PostFault {
                tripped_branch: tripped,
            },
        )
        .unwrap();
        let br = &case.branches[tripped];
        let f = case.bus_position(br.from).unwrap();
        let t = case.bus_position(br.to).unwrap();
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        assert_abs_diff_eq!((pre.y[(f, t)] - post.y[(f, t)]).norm(), (-ys).norm(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            (pre.y[(f, f)] - post.y[(f, f)] - ys - Complex64::new(0.0, br.b / 2.0)).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn islanding_a_generator_is_a_topology_error() {
        let case = wscc9();
        // Bus 2's transformer is the generator's only path to the network.
        let xfmr = case.branch_between(2, 7).unwrap();
        let err = build_admittance(
            &case,
            &NetworkVariant::PostFault {
                tripped_branch: xfmr,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Topology(_)), "got {err}");
    }

    #[test]
    fn kron_identity_when_keeping_everything() {
        let case = wscc9();
        let y = build_admittance(&case, &NetworkVariant::PreFault).unwrap().y;
        let keep: Vec<usize> = (0..9).collect();
        let red = kron_reduce(&y, &keep).unwrap();
        assert_eq!(red, y);
    }

    #[test]
    fn kron_two_node_example() {
        // [[2,-1],[-1,2]] with the second node eliminated: 2 - 1*1/2*1 = 1.5.
        let y = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(-1.0, 0.0),
                Complex64::new(-1.0, 0.0),
                Complex64::new(2.0, 0.0),
            ],
        );
        let red = kron_reduce(&y, &[0]).unwrap();
        assert_eq!(red.nrows(), 1);
        assert_abs_diff_eq!(red[(0, 0)].re, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(red[(0, 0)].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kron_singular_block_is_an_error() {
        let y = DMatrix::from_element(2, 2, Complex64::new(0.0, 0.0));
        let err = kron_reduce(&y, &[0]).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn kron_preserves_external_behaviour() {
        // Driving-point admittance of a ladder computed directly vs reduced.
        // Chain 0-1-2 with unit series admittances and a shunt at node 2:
        // seen from node 0 the chain is 1 in series with (1 + shunt at 2).
        let mut y = DMatrix::from_element(3, 3, Complex64::new(0.0, 0.0));
        let one = Complex64::new(1.0, 0.0);
        // series 0-1
        y[(0, 0)] += one;
        y[(1, 1)] += one;
        y[(0, 1)] -= one;
        y[(1, 0)] -= one;
        // series 1-2
        y[(1, 1)] += one;
        y[(2, 2)] += one;
        y[(1, 2)] -= one;
        y[(2, 1)] -= one;
        // shunt at 2
        y[(2, 2)] += Complex64::new(0.5, 0.0);
        let red = kron_reduce(&y, &[0]).unwrap();
        // 1 / (1/1 + 1/(1*0.5/(1+0.5) ... compute directly:
        // from node 0: series 1 then node1, series 1 to node2 shunted 0.5.
        // y2 = 1*0.5/(1+0.5) = 1/3; y02 = 1*(1/3)/(1+1/3) = 0.25.
        assert_abs_diff_eq!(red[(0, 0)].re, 0.25, epsilon = 1e-12);
    }

    proptest::proptest! {
        /// Reduction then reduction equals one-shot reduction.
        #[test]
        fn kron_composes(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 5;
            let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
            // Random connected-ish symmetric network with shunts: diagonally
            // dominant so every eliminated block is invertible.
            for i in 0..n {
                for j in (i + 1)..n {
                    let g = rng.gen_range(0.1..1.0);
                    let b = rng.gen_range(-1.0..-0.1);
                    let ys = Complex64::new(g, b);
                    y[(i, j)] -= ys;
                    y[(j, i)] -= ys;
                    y[(i, i)] += ys;
                    y[(j, j)] += ys;
                }
                y[(i, i)] += Complex64::new(rng.gen_range(0.05..0.2), rng.gen_range(0.0..0.1));
            }
            let direct = kron_reduce(&y, &[0, 1]).unwrap();
            let step1 = kron_reduce(&y, &[0, 1, 2]).unwrap();
            let step2 = kron_reduce(&step1, &[0, 1]).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    proptest::prop_assert!((direct[(r, c)] - step2[(r, c)]).norm() < 1e-9);
                }
            }
        }
    }
}
