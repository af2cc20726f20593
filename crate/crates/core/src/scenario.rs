//! Scenario-space reduction.
//!
//! Operating points under one contingency are clustered by the Spearman
//! correlation of their index-gradient rankings; contingencies are then
//! clustered by the adjusted Rand index between those partitions. Each
//! cluster keeps its most severe member as a representative, gets a
//! multivariate Gaussian fitted over its operating points, and ranks the
//! controllable generators by mean absolute gradient so a freshly matched
//! operating point immediately knows which generators matter most.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridCase, OperatingPoint};
use crate::index::adjoint_gradient;
use crate::tds::{Contingency, SimConfig};

/// Fixed stream for k-means seeding so clustering is reproducible.
const KMEANS_SEED: u64 = 0x6b6d_6561;
/// Restarts of k-means; the lowest-inertia run wins.
const KMEANS_RESTARTS: usize = 8;

/// Index gradients of many operating points under one contingency, one row
/// per operating point in the order of the controllable generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub contingency_id: String,
    /// rad^2*s per MW.
    pub rows: Vec<Vec<f64>>,
    /// Indices into the caller's operating-point list, row for row.
    pub op_refs: Vec<usize>,
}

/// A sensitivity matrix plus the operating points that had to be skipped.
#[derive(Debug, Clone)]
pub struct SensitivityBuild {
    pub matrix: SensitivityMatrix,
    /// Indices of operating points excluded as infeasible.
    pub excluded: Vec<usize>,
}

/// Builds the gradient matrix for a contingency, one simulation plus
/// adjoint pass per operating point, parallelized over points.
///
/// Infeasible points are excluded and reported rather than failing the
/// build; at least two rows must survive.
pub fn build_sensitivity_matrix(
    case: &GridCase,
    ops: &[OperatingPoint],
    cont: &Contingency,
    cfg: &SimConfig,
) -> Result<SensitivityBuild> {
    let results: Vec<Result<Option<Vec<f64>>>> = ops
        .par_iter()
        .map(|op| match adjoint_gradient(case, op, cont, cfg) {
            Ok(res) => Ok(Some(res.grad)),
            Err(Error::Infeasible(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut rows = Vec::new();
    let mut op_refs = Vec::new();
    let mut excluded = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r? {
            Some(grad) => {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "gradient at operating point {i} is not finite"
                    )));
                }
                rows.push(grad);
                op_refs.push(i);
            }
            None => excluded.push(i),
        }
    }
    if rows.len() < 2 {
        return Err(Error::Contract(format!(
            "sensitivity matrix needs at least 2 feasible rows, got {}",
            rows.len()
        )));
    }
    Ok(SensitivityBuild {
        matrix: SensitivityMatrix {
            contingency_id: cont.id.clone(),
            rows,
            op_refs,
        },
        excluded,
    })
}

/// Ranks with ties averaged; the lowest value gets rank 1.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Positions i..=j share the average of ranks i+1..=j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for t in i..=j {
            ranks[idx[t]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va < 1e-18 || vb < 1e-18 {
        None
    } else {
        Some((num / (va * vb).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Spearman correlation matrix between the rows of a sensitivity matrix.
///
/// Each row is converted to average ranks and correlated pairwise. Rows
/// with zero rank variance (all components tied) are returned in the flag
/// list and correlate as 0 with everything but themselves.
pub fn spearman_matrix(psi: &SensitivityMatrix) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let n = psi.rows.len();
    if n < 2 {
        return Err(Error::Contract("correlation needs at least 2 rows".into()));
    }
    let dim = psi.rows[0].len();
    if dim < 2 {
        return Err(Error::Contract(
            "correlation needs at least 2 gradient components".into(),
        ));
    }
    if psi.rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Contract("ragged sensitivity matrix".into()));
    }
    let ranks: Vec<Vec<f64>> = psi.rows.iter().map(|r| average_ranks(r)).collect();
    let constant: Vec<bool> = ranks
        .iter()
        .map(|r| r.iter().all(|&v| v == r[0]))
        .collect();
    let mut sc = vec![vec![0.0; n]; n];
    for r in 0..n {
        sc[r][r] = 1.0;
        for s in (r + 1)..n {
            let v = if constant[r] || constant[s] {
                0.0
            } else {
                pearson(&ranks[r], &ranks[s]).unwrap_or(0.0)
            };
            sc[r][s] = v;
            sc[s][r] = v;
        }
    }
    let flagged = (0..n).filter(|&i| constant[i]).collect();
    Ok((sc, flagged))
}

/// A hard clustering with contiguous ids `0..k` and no empty cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl Partition {
    /// Canonicalizes raw labels into first-appearance order, dropping any
    /// unused ids so the invariants hold by construction.
    pub fn from_assignments(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut assignments = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = map.len();
            assignments.push(*map.entry(r).or_insert(next));
        }
        Partition {
            assignments,
            k: map.len(),
        }
    }

    /// Member counts per cluster id.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.k];
        for &a in &self.assignments {
            c[a] += 1;
        }
        c
    }

    /// Element indices grouped by cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &a) in self.assignments.iter().enumerate() {
            m[a].push(i);
        }
        m
    }
}

/// Result of a spectral clustering run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralOutcome {
    pub partition: Partition,
    /// Normalized-Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub warnings: Vec<String>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means run with greedy distance-weighted seeding.
fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            centers.len() % n
        };
        centers.push(points[next].clone());
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (c, ctr) in centers.iter().enumerate() {
                let d = sq_dist(p, ctr);
                if d < bd {
                    bd = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Empty cluster steals the point farthest from its center.
                let far = (0..n)
                    .max_by(|&x, &y| {
                        sq_dist(&points[x], &centers[assign[x]])
                            .partial_cmp(&sq_dist(&points[y], &centers[assign[y]]))
                            .expect("finite")
                            .then(y.cmp(&x))
                    })
                    .expect("nonempty points");
                assign[far] = c;
                centers[c] = points[far].clone();
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .enumerate()
        .map(|(i, p)| sq_dist(p, &centers[assign[i]]))
        .sum();
    (assign, inertia)
}

fn kmeans(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut master = ChaCha8Rng::seed_from_u64(KMEANS_SEED);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let (assign, inertia) = kmeans_once(points, k, &mut rng);
        if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
            best = Some((assign, inertia));
        }
    }
    best.expect("at least one restart").0
}

/// Connected components of the positive-affinity graph.
fn affinity_components(w: &[Vec<f64>]) -> usize {
    let n = w.len();
    let mut seen = vec![false; n];
    let mut comps = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        comps += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if i != j && !seen[j] && w[i][j] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    comps
}

/// Spectral clustering on a nonnegative symmetric affinity matrix.
///
/// Builds the symmetric normalized Laplacian, embeds in its lowest
/// eigenvectors, and k-means-clusters the row-normalized embedding with a
/// fixed seed. When `k` is absent it is chosen by the largest eigengap
/// among the smallest ten eigenvalues, bounded to 2..=8. A disconnected
/// affinity raises `k` to the component count with a warning.
pub fn spectral_cluster(affinity: &[Vec<f64>], k: Option<usize>) -> Result<SpectralOutcome> {
    let n = affinity.len();
    if n == 0 {
        return Err(Error::Contract("affinity matrix is empty".into()));
    }
    for (i, row) in affinity.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Contract(format!("affinity row {i} is not length {n}")));
        }
        for (j, &w) in row.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::Contract(format!("affinity [{i}][{j}] is not finite")));
            }
            if w < -1e-9 {
                return Err(Error::Contract(format!(
                    "affinity [{i}][{j}] = {w} is negative; shift before clustering"
                )));
            }
            if (w - affinity[j][i]).abs() > 1e-9 * w.abs().max(1.0) {
                return Err(Error::Contract(format!("affinity is not symmetric at [{i}][{j}]")));
            }
        }
    }
    if let Some(kv) = k {
        if kv == 0 || kv > n {
            return Err(Error::Contract(format!(
                "requested {kv} clusters for {n} elements"
            )));
        }
    }
    if n == 1 {
        return Ok(SpectralOutcome {
            partition: Partition {
                assignments: vec![0],
                k: 1,
            },
            eigenvalues: vec![0.0],
            warnings: Vec::new(),
        });
    }

    let w: Vec<Vec<f64>> = affinity
        .iter()
        .map(|row| row.iter().map(|&v| v.max(0.0)).collect())
        .collect();
    let degrees: Vec<f64> = w.iter().map(|row| row.iter().sum()).collect();
    let mut lap = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = degrees[i] * degrees[j];
            if d > 0.0 {
                lap[(i, j)] -= w[i][j] / d.sqrt();
            }
        }
    }
    // Symmetrize against floating-point drift before the eigen solve.
    let lap = (lap.transpose() + &lap) * 0.5;
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut warnings = Vec::new();
    let components = affinity_components(&w);
    let mut chosen = match k {
        Some(kv) => kv,
        None => {
            let hi = n.saturating_sub(1).min(8).min(9);
            if hi < 2 {
                n.min(2)
            } else {
                let mut best_k = 2;
                let mut best_gap = f64::NEG_INFINITY;
                for cand in 2..=hi {
                    let gap = eigenvalues[cand] - eigenvalues[cand - 1];
                    if gap > best_gap {
                        best_gap = gap;
                        best_k = cand;
                    }
                }
                best_k
            }
        }
    };
    if components > 1 && chosen < components {
        warnings.push(format!(
            "affinity has {components} disconnected components; raising cluster count from {chosen}"
        ));
        chosen = components.min(n);
    }

    let assignments = if chosen == 1 {
        vec![0; n]
    } else {
        let mut embed = vec![vec![0.0; chosen]; n];
        for (col, &ei) in order.iter().take(chosen).enumerate() {
            for row in 0..n {
                embed[row][col] = eig.eigenvectors[(row, ei)];
            }
        }
        for row in &mut embed {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        kmeans(&embed, chosen)
    };
    let partition = Partition::from_assignments(&assignments);
    if partition.k != chosen {
        warnings.push(format!(
            "k-means returned {} nonempty clusters of {chosen} requested",
            partition.k
        ));
    }
    Ok(SpectralOutcome {
        partition,
        eigenvalues,
        warnings,
    })
}

/// Adjusted Rand index between two partitions of the same elements.
///
/// 1 for identical partitions, near 0 in expectation for independent ones.
pub fn ari(p: &Partition, q: &Partition) -> Result<f64> {
    if p.assignments.len() != q.assignments.len() {
        return Err(Error::Contract(format!(
            "partitions cover {} and {} elements",
            p.assignments.len(),
            q.assignments.len()
        )));
    }
    let n = p.assignments.len();
    if n == 0 {
        return Err(Error::Contract("partitions are empty".into()));
    }
    let mut table = vec![vec![0u64; q.k]; p.k];
    for (&a, &b) in p.assignments.iter().zip(&q.assignments) {
        table[a][b] += 1;
    }
    let c2 = |x: u64| x as f64 * (x as f64 - 1.0) / 2.0;
    let sum_fg: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let sum_a: f64 = table.iter().map(|row| c2(row.iter().sum())).sum();
    let sum_b: f64 = (0..q.k)
        .map(|g| c2(table.iter().map(|row| row[g]).sum()))
        .sum();
    let cn2 = c2(n as u64);
    if cn2 == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / cn2;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom.abs() < 1e-15 {
        // Both partitions trivial in the same way (all one cluster or all
        // singletons); they are identical.
        return Ok(1.0);
    }
    Ok((sum_fg - expected) / denom)
}

/// Clusters contingencies by the similarity of their operating-point
/// partitions: affinity (1 + ARI) / 2, then spectral clustering.
pub fn cluster_contingencies(partitions: &[Partition]) -> Result<SpectralOutcome> {
    if partitions.is_empty() {
        return Err(Error::Contract("no contingency partitions given".into()));
    }
    let n_elems = partitions[0].assignments.len();
    if partitions.iter().any(|p| p.assignments.len() != n_elems) {
        return Err(Error::Contract(
            "contingency partitions cover different operating-point sets".into(),
        ));
    }
    if partitions.len() == 1 {
        return Ok(SpectralOutcome {
            partition: Partition {
                assignments: vec![0],
                k: 1,
            },
            eigenvalues: vec![0.0],
            warnings: Vec::new(),
        });
    }
    let m = partitions.len();
    let mut affinity = vec![vec![0.0; m]; m];
    let mut all_identical = true;
    for f in 0..m {
        affinity[f][f] = 1.0;
        for g in (f + 1)..m {
            let score = ari(&partitions[f], &partitions[g])?;
            all_identical &= score >= 1.0 - 1e-12;
            let v = (1.0 + score) / 2.0;
            affinity[f][g] = v;
            affinity[g][f] = v;
        }
    }
    if all_identical {
        // Every contingency groups the operating points the same way, so
        // a single representative covers them all; the eigengap scan never
        // proposes one cluster on its own.
        return Ok(SpectralOutcome {
            partition: Partition {
                assignments: vec![0; m],
                k: 1,
            },
            eigenvalues: Vec::new(),
            warnings: Vec::new(),
        });
    }
    spectral_cluster(&affinity, None)
}

/// Most severe member of each cluster, by signed index.
///
/// Unstable members carry negative indices, so the plain minimum picks the
/// worst violation when one exists and the thinnest stable margin
/// otherwise. Ties go to the lowest element id. Returns one element id per
/// cluster, ordered by cluster id.
pub fn select_representatives(partition: &Partition, phi: &[f64]) -> Result<Vec<usize>> {
    if phi.len() != partition.assignments.len() {
        return Err(Error::Contract(format!(
            "{} severity values for {} elements",
            phi.len(),
            partition.assignments.len()
        )));
    }
    let mut reps = vec![usize::MAX; partition.k];
    for (i, &c) in partition.assignments.iter().enumerate() {
        if reps[c] == usize::MAX || phi[i] < phi[reps[c]] {
            reps[c] = i;
        }
    }
    Ok(reps)
}

/// Gaussian fitted over one cluster's operating points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterGaussian {
    pub mu: Vec<f64>,
    /// Covariance with diagonal regularization already applied.
    pub sigma: Vec<Vec<f64>>,
    /// log of 1 / sqrt((2 pi)^d * det sigma).
    pub log_norm: f64,
}

impl ClusterGaussian {
    /// Validates symmetry and positive definiteness, caching the density
    /// normalizer.
    pub fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        let d = mu.len();
        if sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
            return Err(Error::Contract("covariance shape must match the mean".into()));
        }
        for i in 0..d {
            for j in 0..d {
                if !sigma[i][j].is_finite() {
                    return Err(Error::Numerical("covariance entry is not finite".into()));
                }
                if (sigma[i][j] - sigma[j][i]).abs() > 1e-9 * sigma[i][j].abs().max(1.0) {
                    return Err(Error::Numerical("covariance is not symmetric".into()));
                }
            }
        }
        let m = DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let log_det: f64 = (0..d).map(|i| 2.0 * chol.l()[(i, i)].ln()).sum();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self { mu, sigma, log_norm })
    }

    /// Log of the density at `u`.
    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        let d = self.mu.len();
        if u.len() != d {
            return Err(Error::Contract(format!(
                "point has dimension {}, Gaussian has {d}",
                u.len()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("point has non-finite coordinates".into()));
        }
        let m = DMatrix::from_fn(d, d, |i, j| self.sigma[i][j]);
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let delta = DVector::from_fn(d, |i, _| u[i] - self.mu[i]);
        let solved = chol.solve(&delta);
        let quad: f64 = delta.dot(&solved);
        Ok(self.log_norm - 0.5 * quad)
    }
}

/// Fits a Gaussian over a cluster's operating points: sample mean and
/// 1/N covariance plus a diagonal ridge of 1e-6 * trace / d (floored to a
/// tiny positive constant when the spread is exactly zero).
pub fn fit_cluster_gaussian(ops: &[Vec<f64>]) -> Result<ClusterGaussian> {
    if ops.len() < 2 {
        return Err(Error::Contract(format!(
            "Gaussian fit needs at least 2 operating points, got {}",
            ops.len()
        )));
    }
    let d = ops[0].len();
    if d == 0 || ops.iter().any(|o| o.len() != d) {
        return Err(Error::Contract("ragged or empty operating points".into()));
    }
    if ops.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Contract("operating point is not finite".into()));
    }
    let n = ops.len() as f64;
    let mut mu = vec![0.0; d];
    for op in ops {
        for (m, v) in mu.iter_mut().zip(op) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut sigma = vec![vec![0.0; d]; d];
    for op in ops {
        for i in 0..d {
            for j in 0..d {
                sigma[i][j] += (op[i] - mu[i]) * (op[j] - mu[j]) / n;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| sigma[i][i]).sum();
    let mut eps = 1e-6 * trace / d as f64;
    if !(eps > 0.0) {
        eps = 1e-9;
    }
    for (i, row) in sigma.iter_mut().enumerate() {
        row[i] += eps;
    }
    ClusterGaussian::new(mu, sigma)
}

/// Controllable generators ranked by influence within one cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McgRanking {
    pub cluster_id: usize,
    /// Generator indices by descending mean absolute gradient component.
    pub ranked_generators: Vec<usize>,
    /// How many leading generators count as most critical.
    pub top_k: usize,
}

impl McgRanking {
    /// The most critical generators.
    pub fn mcgs(&self) -> &[usize] {
        &self.ranked_generators[..self.top_k.min(self.ranked_generators.len())]
    }
}

/// Default number of most-critical generators per cluster.
pub const DEFAULT_TOP_K: usize = 2;

/// Ranks generators by mean absolute gradient over a cluster's rows,
/// lowest index first on ties.
pub fn rank_mcg(rows: &[Vec<f64>], cluster_id: usize, top_k: usize) -> Result<McgRanking> {
    if rows.is_empty() {
        return Err(Error::Contract("ranking needs at least one gradient row".into()));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Contract("ragged or empty gradient rows".into()));
    }
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j].abs()).sum::<f64>() / n)
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        means[b]
            .partial_cmp(&means[a])
            .expect("finite means")
            .then(a.cmp(&b))
    });
    Ok(McgRanking {
        cluster_id,
        ranked_generators: order,
        top_k,
    })
}

/// Matches a new operating point to the cluster with the highest Gaussian
/// log-density (ties to the lowest cluster id) and returns that cluster's
/// most critical generators.
pub fn match_op(
    u_new: &[f64],
    gaussians: &[ClusterGaussian],
    rankings: &[McgRanking],
) -> Result<(usize, Vec<usize>)> {
    if gaussians.is_empty() {
        return Err(Error::Contract("no cluster Gaussians to match against".into()));
    }
    let mut best = 0usize;
    let mut best_ld = f64::NEG_INFINITY;
    for (c, g) in gaussians.iter().enumerate() {
        let ld = g.log_density(u_new)?;
        if !ld.is_finite() && ld != f64::NEG_INFINITY {
            return Err(Error::Contract("log-density is not finite".into()));
        }
        if ld > best_ld {
            best_ld = ld;
            best = c;
        }
    }
    let ranking = rankings
        .iter()
        .find(|r| r.cluster_id == best)
        .ok_or_else(|| Error::Contract(format!("no generator ranking for cluster {best}")))?;
    Ok((best, ranking.mcgs().to_vec()))
}
