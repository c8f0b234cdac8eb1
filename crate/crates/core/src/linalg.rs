//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.

use crate::error::TensorError;
use crate::tensor::Tensor;

/// Relative off-diagonal threshold below which a column pair counts as orthogonal.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U·diag(S)·Vᵀ` with `k = min(m, n)` columns in `U` and `V`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `m×k`, orthonormal columns.
    pub u: Tensor,
    /// Non-increasing, non-negative, length `k`.
    pub s: Vec<f64>,
    /// `n×k`, orthonormal columns.
    pub v: Tensor,
    pub sweeps: usize,
}

impl SvdResult {
    /// `Σ_{i>r} σ_i²`, the squared Frobenius error of the best rank-`r` approximation.
    pub fn tail_energy(&self, r: usize) -> f64 {
        self.s.iter().skip(r).map(|s| s * s).sum()
    }

    /// `U·diag(S)·Vᵀ` restricted to the leading `r` triplets.
    pub fn reconstruct(&self, r: usize) -> Tensor {
        let m = self.u.shape()[0];
        let n = self.v.shape()[0];
        let k = self.s.len();
        let r = r.min(k);
        let mut out = vec![0.0; m * n];
        for t in 0..r {
            let s = self.s[t];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let us = self.u.data()[i * k + t] * s;
                if us == 0.0 {
                    continue;
                }
                let row = &mut out[i * n..(i + 1) * n];
                for (j, o) in row.iter_mut().enumerate() {
                    *o += us * self.v.data()[j * k + t];
                }
            }
        }
        Tensor::matrix(m, n, out).expect("dimensions are consistent")
    }
}

/// Thin SVD of an `m×n` matrix.
pub fn svd(a: &Tensor) -> Result<SvdResult, TensorError> {
    let (m, n) = a.dims2()?;
    if !a.is_finite() {
        return Err(TensorError::NonFinite);
    }
    if m < n {
        let t = svd_tall(&a.transpose()?)?;
        return Ok(SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
            sweeps: t.sweeps,
        });
    }
    svd_tall(a)
}

// m >= n
fn svd_tall(a: &Tensor) -> Result<SvdResult, TensorError> {
    let (m, n) = a.dims2()?;
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get2(i, j)).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep input-column order
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let negligible = smax * (m.max(n) as f64) * f64::EPSILON;

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > negligible && sigma > 0.0 {
            ucols.push(cols[j].iter().map(|x| x / sigma).collect());
        } else {
            ucols.push(vec![0.0; m]);
            deficient.push(slot);
        }
    }
    complete_orthonormal(&mut ucols, &deficient, m);

    let mut u = vec![0.0; m * n];
    let mut v = vec![0.0; n * n];
    for (slot, &j) in order.iter().enumerate() {
        for i in 0..m {
            u[i * n + slot] = ucols[slot][i];
        }
        for i in 0..n {
            v[i * n + slot] = vcols[j][i];
        }
    }
    Ok(SvdResult {
        u: Tensor::matrix(m, n, u)?,
        s,
        v: Tensor::matrix(n, n, v)?,
        sweeps,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the listed slots with unit vectors orthogonal to every other column.
fn complete_orthonormal(cols: &mut [Vec<f64>], slots: &[usize], m: usize) {
    let mut basis = 0;
    for &slot in slots {
        loop {
            assert!(basis < m, "ran out of basis vectors while completing U");
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k == slot || other.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let d: f64 = cand.iter().zip(other).map(|(a, b)| a * b).sum();
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= d * o;
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols[slot] = cand.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}
