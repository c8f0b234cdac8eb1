//! Brute-force reference solvers.
//!
//! Each one searches its problem exhaustively (or by a plain iterative method)
//! and shares no code path with the production solvers, so it can certify them
//! or a user-supplied replacement. All of them are slow on purpose and refuse
//! inputs beyond their size bounds.

use crate::error::{SolverError, TensorError};
use crate::model::QuadraticModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleQuantization {
    pub distortion: f64,
    /// One optimal codebook, ascending.
    pub codebook: Vec<f64>,
}

fn bound(ok: bool, what: impl Into<String>) -> Result<(), SolverError> {
    if ok {
        Ok(())
    } else {
        Err(SolverError::OracleBound(what.into()))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sse(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Minimal k-means distortion over every split of the sorted input into `k`
/// non-empty contiguous runs. `P <= 12`, `K <= 3`.
pub fn oracle_kmeans_exhaustive(u: &[f64], k: usize) -> Result<OracleQuantization, SolverError> {
    bound(u.len() <= 12 && k <= 3, format!("P={} K={k} (need P<=12, K<=3)", u.len()))?;
    if k == 0 || k > u.len() {
        return Err(SolverError::CodebookSize { k, p: u.len() });
    }
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let p = s.len();
    let mut best = OracleQuantization {
        distortion: f64::INFINITY,
        codebook: Vec::new(),
    };
    // choose k-1 cut positions among 1..p
    let mut cuts = Vec::new();
    enumerate_cuts(1, p, k - 1, &mut cuts, &mut |cuts| {
        let mut edges = vec![0];
        edges.extend_from_slice(cuts);
        edges.push(p);
        let runs: Vec<&[f64]> = edges.windows(2).map(|w| &s[w[0]..w[1]]).collect();
        let d: f64 = runs.iter().map(|r| sse(r)).sum();
        if d < best.distortion {
            best.distortion = d;
            best.codebook = runs.iter().map(|r| mean(r)).collect();
        }
    });
    Ok(best)
}

fn enumerate_cuts(start: usize, p: usize, left: usize, cuts: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if left == 0 {
        f(cuts);
        return;
    }
    for c in start..p {
        cuts.push(c);
        enumerate_cuts(c + 1, p, left - 1, cuts, f);
        cuts.pop();
    }
}

/// Minimal k-means distortion over all `K^P` assignments with centers at the
/// cluster means (empty clusters allowed). `P <= 8`, `K <= 3`.
pub fn oracle_kmeans_all_assignments(u: &[f64], k: usize) -> Result<f64, SolverError> {
    bound(u.len() <= 8 && (1..=3).contains(&k), format!("P={} K={k} (need P<=8, 1<=K<=3)", u.len()))?;
    let p = u.len();
    let mut best = f64::INFINITY;
    for code in 0..k.pow(p as u32) {
        let mut c = code;
        let mut groups = vec![Vec::new(); k];
        for &x in u {
            groups[c % k].push(x);
            c /= k;
        }
        let d: f64 = groups.iter().filter(|g| !g.is_empty()).map(|g| sse(g)).sum();
        best = best.min(d);
    }
    Ok(best)
}

/// Indices of the `kappa` largest magnitudes, found by a full stable sort
/// (equal magnitudes keep the lower index), returned ascending.
pub fn oracle_l0_topk(u: &[f64], kappa: usize) -> Result<Vec<usize>, SolverError> {
    bound(kappa <= u.len(), format!("kappa={kappa} > P={}", u.len()))?;
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[b].abs().partial_cmp(&u[a].abs()).expect("finite input"));
    let mut keep = order[..kappa].to_vec();
    keep.sort();
    Ok(keep)
}

/// Projection onto the ℓ1 ball by projected gradient ascent on the dual.
///
/// The Lagrangian dual of `min ½||θ − u||² s.t. ||θ||₁ <= κ` is the concave
/// one-dimensional `g(t)`, `t >= 0`, with `g'(t) = Σ max(|u_i| − t, 0) − κ`.
/// Gradient steps of size `1/P` followed by clipping to `t >= 0` are iterated
/// until the step falls below `1e-14`; the primal point is the soft
/// threshold of `u` at the final `t`. `P <= 50`.
pub fn oracle_l1_projection(u: &[f64], kappa: f64) -> Result<Vec<f64>, SolverError> {
    bound(u.len() <= 50, format!("P={} (need P<=50)", u.len()))?;
    if !(kappa >= 0.0) {
        return Err(SolverError::NegativeRadius(kappa));
    }
    let p = u.len().max(1) as f64;
    let grad = |t: f64| u.iter().map(|x| (x.abs() - t).max(0.0)).sum::<f64>() - kappa;
    let mut t = 0.0f64;
    for _ in 0..10_000_000 {
        let next = (t + grad(t) / p).max(0.0);
        let step = (next - t).abs();
        t = next;
        if step < 1e-14 {
            break;
        }
    }
    Ok(u.iter().map(|x| x.signum() * (x.abs() - t).max(0.0)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleTernary {
    pub distortion: f64,
    pub scale: f64,
    pub theta: Vec<f64>,
}

/// Best `{−c, 0, c}` approximation over all `2^P` supports, with `c` the mean
/// magnitude on the support. `P <= 12`.
pub fn oracle_ternary_exhaustive(u: &[f64]) -> Result<OracleTernary, SolverError> {
    bound(u.len() <= 12, format!("P={} (need P<=12)", u.len()))?;
    let p = u.len();
    let total: f64 = u.iter().map(|x| x * x).sum();
    let mut best = OracleTernary {
        distortion: total,
        scale: 0.0,
        theta: vec![0.0; p],
    };
    for mask in 1u32..(1 << p) {
        let support: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
        let c = support.iter().map(|&i| u[i].abs()).sum::<f64>() / support.len() as f64;
        let theta: Vec<f64> = (0..p)
            .map(|i| if mask >> i & 1 == 1 { c * u[i].signum() } else { 0.0 })
            .collect();
        let d: f64 = u.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.distortion {
            best = OracleTernary {
                distortion: d,
                scale: c,
                theta,
            };
        }
    }
    Ok(best)
}

/// Joint optimum of one free sparse entry plus a `k`-entry codebook: every
/// sparse position (or none) times every `k^P` assignment of the rest.
/// `P <= 8`, `k <= 3`.
pub fn oracle_additive_sparse_quant(u: &[f64], k: usize) -> Result<f64, SolverError> {
    bound(u.len() <= 8 && (1..=3).contains(&k), format!("P={} K={k}", u.len()))?;
    let p = u.len();
    let mut best = oracle_kmeans_all_assignments(u, k)?;
    for s in 0..p {
        // the sparse value absorbs whatever the codebook leaves at position s
        let rest: Vec<f64> = (0..p).filter(|&i| i != s).map(|i| u[i]).collect();
        let d = if rest.is_empty() {
            0.0
        } else {
            oracle_kmeans_all_assignments(&rest, k)?
        };
        best = best.min(d);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleLc {
    /// Optimal feasible weights `w* = Δ(Θ*)`.
    pub weights: Vec<f64>,
    pub loss: f64,
}

/// Global optimum of `min ½ Σ a_i (w_i − w̄_i)²` subject to `w` taking at most
/// `k` distinct values.
///
/// For a fixed assignment the best shared value of each cluster is the
/// curvature-weighted mean of its targets, so enumerating all `k^P`
/// assignments is exhaustive. `P <= 6`.
pub fn oracle_lc_global(model: &QuadraticModel, k: usize) -> Result<OracleLc, SolverError> {
    let target = model.target();
    let curv = model.curvature();
    let p = target.len();
    bound(p <= 6 && k >= 1, format!("P={p} K={k} (need P<=6)"))?;
    let k = k.min(p);
    let mut best = OracleLc {
        weights: target.to_vec(),
        loss: f64::INFINITY,
    };
    for code in 0..k.pow(p as u32) {
        let mut c = code;
        let mut assign = vec![0; p];
        for a in assign.iter_mut() {
            *a = c % k;
            c /= k;
        }
        let mut num = vec![0.0; k];
        let mut den = vec![0.0; k];
        for i in 0..p {
            num[assign[i]] += curv[i] * target[i];
            den[assign[i]] += curv[i];
        }
        let w: Vec<f64> = (0..p).map(|i| num[assign[i]] / den[assign[i]]).collect();
        let loss = 0.5 * (0..p).map(|i| curv[i] * (w[i] - target[i]).powi(2)).sum::<f64>();
        if loss < best.loss {
            best = OracleLc { weights: w, loss };
        }
    }
    Ok(best)
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Tensor) -> Result<Vec<f64>, TensorError> {
    let (n, m) = a.dims2()?;
    if n != m {
        return Err(TensorError::ShapeMismatch {
            left: vec![n, m],
            right: vec![m, n],
        });
    }
    let mut x: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a.get2(i, j)).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| x[i][j] * x[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| x[i][i] * x[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if x[p][q] == 0.0 {
                    continue;
                }
                let theta = (x[q][q] - x[p][p]) / (2.0 * x[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in x.iter_mut() {
                    let (xkp, xkq) = (row[p], row[q]);
                    row[p] = c * xkp - s * xkq;
                    row[q] = s * xkp + c * xkq;
                }
                let (head, tail) = x.split_at_mut(q);
                for (xp, xq) in head[p].iter_mut().zip(tail[0].iter_mut()) {
                    let (xpk, xqk) = (*xp, *xq);
                    *xp = c * xpk - s * xqk;
                    *xq = s * xpk + c * xqk;
                }
            }
        }
    }
    Ok((0..n).map(|i| x[i][i]).collect())
}

/// Rank minimizing `λ·cost(r) + (μ/2)·||W − best rank-r||²`, with the tail
/// energies taken from the eigenvalues of `WᵀW`. Ties go to the smaller rank.
pub fn oracle_rank_select(w: &Tensor, lambda: f64, mu: f64, cost: impl Fn(usize) -> f64) -> Result<usize, SolverError> {
    let (m, n) = w.dims2()?;
    bound(m * n <= 400, format!("{m}x{n} (need m*n<=400)"))?;
    let gram = if m >= n {
        crate::tensor::matmul(&w.transpose()?, w)?
    } else {
        crate::tensor::matmul(w, &w.transpose()?)?
    };
    let mut eig = symmetric_eigenvalues(&gram)?;
    eig.iter_mut().for_each(|e| *e = e.max(0.0));
    eig.sort_by(|a, b| b.total_cmp(a));
    let k = eig.len();
    let mut best = (0, f64::INFINITY);
    for r in 0..=k {
        let tail: f64 = eig[r..].iter().sum();
        let obj = lambda * cost(r) + 0.5 * mu * tail;
        if obj < best.1 {
            best = (r, obj);
        }
    }
    Ok(best.0)
}
