//! Scalar quantization C steps: `min Σ_i (u_i − c[z_i])²` over a codebook and
//! assignments, plus the fixed/scaled binary and ternary codebooks.

use crate::cstep::form::{QuantizedForm, Solved};
use crate::cstep::check_finite;
use crate::error::SolverError;
use crate::rng::Prng;

pub const LLOYD_MAX_ITERS: usize = 300;

/// Distinct sorted values with multiplicities, and the map from input
/// position to distinct slot.
struct Distinct {
    values: Vec<f64>,
    counts: Vec<f64>,
    slot_of: Vec<usize>,
}

fn distinct_sorted(u: &[f64]) -> Distinct {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(a.cmp(&b)));
    let mut values: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    let mut slot_of = vec![0; u.len()];
    for &i in &order {
        // `==` merges -0.0 and 0.0
        if values.last().is_none_or(|&last| last != u[i]) {
            values.push(u[i]);
            counts.push(0.0);
        }
        *counts.last_mut().expect("pushed above") += 1.0;
        slot_of[i] = values.len() - 1;
    }
    Distinct {
        values,
        counts,
        slot_of,
    }
}

fn check_k(u: &[f64], k: usize) -> Result<(), SolverError> {
    if k == 0 || k > u.len() {
        return Err(SolverError::CodebookSize { k, p: u.len() });
    }
    check_finite(u)
}

/// Prefix sums over weighted, centered values; `cost(i, j)` is the within-segment
/// sum of squares of distinct slots `i..j`.
struct SegmentCost {
    w: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl SegmentCost {
    fn new(d: &Distinct) -> Self {
        let total: f64 = d.counts.iter().sum();
        let shift = d.values.iter().zip(&d.counts).map(|(v, c)| v * c).sum::<f64>() / total;
        let n = d.values.len();
        let mut w = Vec::with_capacity(n + 1);
        let mut s1 = Vec::with_capacity(n + 1);
        let mut s2 = Vec::with_capacity(n + 1);
        let (mut aw, mut a1, mut a2) = (0.0, 0.0, 0.0);
        w.push(0.0);
        s1.push(0.0);
        s2.push(0.0);
        for (&v, &c) in d.values.iter().zip(&d.counts) {
            let x = v - shift;
            aw += c;
            a1 += c * x;
            a2 += c * x * x;
            w.push(aw);
            s1.push(a1);
            s2.push(a2);
        }
        Self { w, s1, s2 }
    }

    fn cost(&self, i: usize, j: usize) -> f64 {
        let w = self.w[j] - self.w[i];
        let s1 = self.s1[j] - self.s1[i];
        let s2 = self.s2[j] - self.s2[i];
        (s2 - s1 * s1 / w).max(0.0)
    }
}

/// Globally optimal scalar k-means by dynamic programming over the sorted
/// values.
///
/// Optimal clusters are contiguous runs of the sorted input, so the optimum
/// over `k` clusters of the first `j` distinct values is
/// `D_k(j) = min_i D_{k-1}(i) + cost(i, j)`. The within-cluster cost satisfies
/// the quadrangle inequality, which makes the leftmost argmin monotone in `j`;
/// each layer is filled by divide and conquer in `O(n log n)`, so the whole
/// table costs `O(K n log n)` for `n` distinct values rather than the
/// `O(K n²)` of the plain recurrence. A SMAWK pass would bring a layer to
/// `O(n)`.
///
/// When `k` exceeds the number of distinct values the codebook shrinks to one
/// entry per distinct value.
pub fn quantize_dp(u: &[f64], k: usize) -> Result<Solved<QuantizedForm>, SolverError> {
    check_k(u, k)?;
    let d = distinct_sorted(u);
    let n = d.values.len();
    let k = k.min(n);
    let cost = SegmentCost::new(&d);

    // prev[j] = D_{layer}(j); argmins[layer][j] = split point for D_{layer+1}
    let mut prev: Vec<f64> = (0..=n).map(|j| if j == 0 { 0.0 } else { cost.cost(0, j) }).collect();
    let mut splits: Vec<Vec<u32>> = Vec::with_capacity(k.saturating_sub(1));
    for layer in 1..k {
        let mut cur = vec![f64::INFINITY; n + 1];
        let mut arg = vec![0u32; n + 1];
        // layer+1 clusters need at least layer+1 values
        fill_layer(&prev, &cost, layer, layer + 1, n, layer, n - 1, &mut cur, &mut arg);
        splits.push(arg);
        prev = cur;
    }

    // backtrack segment boundaries in distinct-slot space
    let mut bounds = vec![n];
    let mut j = n;
    for arg in splits.iter().rev() {
        j = arg[j] as usize;
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();
    debug_assert_eq!(bounds.len(), k + 1);

    let mut cluster_of_slot = vec![0u32; n];
    let mut codebook = Vec::with_capacity(k);
    for (c, w) in bounds.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        let mut sum = 0.0;
        let mut cnt = 0.0;
        for ((v, n), slot) in d.values[lo..hi].iter().zip(&d.counts[lo..hi]).zip(&mut cluster_of_slot[lo..hi]) {
            sum += v * n;
            cnt += n;
            *slot = c as u32;
        }
        codebook.push(sum / cnt);
    }
    let assignments: Vec<u32> = d.slot_of.iter().map(|&s| cluster_of_slot[s]).collect();
    let form = QuantizedForm {
        codebook,
        assignments,
    };
    let distortion = distortion(u, &form);
    Ok(Solved { form, distortion })
}

/// Fills `cur[j]` for `j in jlo..=jhi` knowing the leftmost argmin lies in `optlo..=opthi`.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    prev: &[f64],
    cost: &SegmentCost,
    layer: usize,
    jlo: usize,
    jhi: usize,
    optlo: usize,
    opthi: usize,
    cur: &mut [f64],
    arg: &mut [u32],
) {
    if jlo > jhi {
        return;
    }
    let j = (jlo + jhi) / 2;
    let lo = optlo.max(layer);
    let hi = opthi.min(j - 1);
    let mut best = f64::INFINITY;
    let mut best_i = lo;
    for (i, p) in prev.iter().enumerate().take(hi + 1).skip(lo) {
        let v = p + cost.cost(i, j);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    cur[j] = best;
    arg[j] = best_i as u32;
    if j > jlo {
        fill_layer(prev, cost, layer, jlo, j - 1, optlo, best_i, cur, arg);
    }
    fill_layer(prev, cost, layer, j + 1, jhi, best_i, opthi, cur, arg);
}

/// `Σ (u_i − c[z_i])²`, computed directly.
pub fn distortion(u: &[f64], q: &QuantizedForm) -> f64 {
    u.iter()
        .zip(&q.assignments)
        .map(|(&x, &z)| {
            let e = x - q.codebook[z as usize];
            e * e
        })
        .sum()
}

/// Index of the nearest entry of a sorted codebook; ties go to the lower entry.
pub(crate) fn nearest(codebook: &[f64], x: f64) -> usize {
    let pos = codebook.partition_point(|&c| c < x);
    if pos == 0 {
        return 0;
    }
    if pos == codebook.len() {
        return pos - 1;
    }
    if (x - codebook[pos - 1]) <= (codebook[pos] - x) {
        pos - 1
    } else {
        pos
    }
}

/// Sorts and deduplicates `centers`, then assigns every value to its nearest center.
pub fn assign_nearest(u: &[f64], centers: &[f64]) -> QuantizedForm {
    let mut codebook: Vec<f64> = centers.to_vec();
    codebook.sort_by(f64::total_cmp);
    codebook.dedup_by(|a, b| a == b);
    let assignments = u.iter().map(|&x| nearest(&codebook, x) as u32).collect();
    QuantizedForm {
        codebook,
        assignments,
    }
}

/// Lloyd's k-means with k-means++ seeding drawn from `rng`.
///
/// Stops when assignments repeat or after [`LLOYD_MAX_ITERS`] iterations. A
/// cluster that empties is re-seeded at the point farthest from its current
/// center.
pub fn quantize_lloyd(u: &[f64], k: usize, rng: &mut Prng) -> Result<Solved<QuantizedForm>, SolverError> {
    quantize_lloyd_traced(u, k, rng).map(|(s, _)| s)
}

/// As [`quantize_lloyd`], also returning the distortion after every iteration.
pub fn quantize_lloyd_traced(
    u: &[f64],
    k: usize,
    rng: &mut Prng,
) -> Result<(Solved<QuantizedForm>, Vec<f64>), SolverError> {
    check_k(u, k)?;
    let d = distinct_sorted(u);
    let k = k.min(d.values.len());
    let centers = kmeanspp(u, k, rng);
    Ok(lloyd_iterate(u, centers))
}

/// Lloyd iterations started from an existing codebook.
pub fn quantize_lloyd_from(u: &[f64], init: &[f64]) -> Result<Solved<QuantizedForm>, SolverError> {
    check_finite(u)?;
    if init.is_empty() || u.is_empty() {
        return Err(SolverError::Empty);
    }
    Ok(lloyd_iterate(u, init.to_vec()).0)
}

fn kmeanspp(u: &[f64], k: usize, rng: &mut Prng) -> Vec<f64> {
    let p = u.len();
    let mut centers = vec![u[rng.below(p)]];
    let mut d2: Vec<f64> = u.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut idx = p - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    idx = i;
                    break;
                }
            }
            // rounding can land on an existing center; fall back to the farthest point
            if d2[idx] == 0.0 {
                argmax(&d2)
            } else {
                idx
            }
        } else {
            break;
        };
        let c = u[pick];
        centers.push(c);
        for (dd, &x) in d2.iter_mut().zip(u) {
            *dd = dd.min((x - c).powi(2));
        }
    }
    centers
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn lloyd_iterate(u: &[f64], mut centers: Vec<f64>) -> (Solved<QuantizedForm>, Vec<f64>) {
    let k = centers.len();
    let mut trace = Vec::new();
    let mut assign: Vec<usize> = Vec::new();
    for _ in 0..LLOYD_MAX_ITERS {
        // assignment against the sorted centers, mapped back to center ids
        let mut ids: Vec<usize> = (0..k).collect();
        ids.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
        let sorted: Vec<f64> = ids.iter().map(|&i| centers[i]).collect();
        let next: Vec<usize> = u.iter().map(|&x| ids[nearest(&sorted, x)]).collect();
        let stable = next == assign;
        assign = next;

        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &z) in u.iter().zip(&assign) {
            sums[z] += x;
            counts[z] += 1;
        }
        let mut err: Vec<f64> = u.iter().zip(&assign).map(|(&x, &z)| (x - centers[z]).powi(2)).collect();
        trace.push(err.iter().sum());
        if stable {
            break;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            } else {
                let far = argmax(&err);
                centers[c] = u[far];
                err[far] = 0.0;
            }
        }
    }
    let form = assign_nearest(u, &centers);
    let dist = distortion(u, &form);
    trace.push(dist);
    (
        Solved {
            form,
            distortion: dist,
        },
        trace,
    )
}

/// Codebook `{−1, +1}`; `u_i >= 0` maps to `+1`.
pub fn binarize_fixed(u: &[f64]) -> Result<Solved<QuantizedForm>, SolverError> {
    check_finite(u)?;
    let form = QuantizedForm {
        codebook: vec![-1.0, 1.0],
        assignments: u.iter().map(|&x| u32::from(x >= 0.0)).collect(),
    };
    let distortion = distortion(u, &form);
    Ok(Solved { form, distortion })
}

/// Codebook `{−a, +a}` with `a = mean(|u|)`; `u_i > 0` maps to `+a`, everything
/// else to `−a`. An all-zero input collapses to the single codebook entry `0`.
pub fn binarize_scaled(u: &[f64]) -> Result<Solved<QuantizedForm>, SolverError> {
    check_finite(u)?;
    if u.is_empty() {
        return Err(SolverError::Empty);
    }
    let a = u.iter().map(|x| x.abs()).sum::<f64>() / u.len() as f64;
    let form = if a == 0.0 {
        QuantizedForm {
            codebook: vec![0.0],
            assignments: vec![0; u.len()],
        }
    } else {
        QuantizedForm {
            codebook: vec![-a, a],
            assignments: u.iter().map(|&x| u32::from(x > 0.0)).collect(),
        }
    };
    let distortion = distortion(u, &form);
    Ok(Solved { form, distortion })
}

/// Codebook `{−c, 0, +c}` minimizing the distortion over both the support and `c`.
///
/// For a support made of the `k` largest magnitudes with sum `S_k`, the best
/// scale is `S_k / k` and the distortion is `||u||² − S_k² / k`, so the optimum
/// picks the `k` maximizing `S_k² / k`. Ties prefer the smaller `k`, and equal
/// magnitudes enter the support lowest index first.
pub fn ternarize_scaled(u: &[f64]) -> Result<Solved<QuantizedForm>, SolverError> {
    check_finite(u)?;
    if u.is_empty() {
        return Err(SolverError::Empty);
    }
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[b].abs().total_cmp(&u[a].abs()).then(a.cmp(&b)));
    let mut best_k = 0;
    let mut best_score = 0.0;
    let mut best_sum = 0.0;
    let mut sum = 0.0;
    for (idx, &i) in order.iter().enumerate() {
        sum += u[i].abs();
        let k = idx + 1;
        let score = sum * sum / k as f64;
        if score > best_score {
            best_score = score;
            best_k = k;
            best_sum = sum;
        }
    }
    let form = if best_k == 0 {
        QuantizedForm {
            codebook: vec![0.0],
            assignments: vec![0; u.len()],
        }
    } else {
        let c = best_sum / best_k as f64;
        let mut assignments = vec![1u32; u.len()];
        for &i in &order[..best_k] {
            assignments[i] = if u[i] > 0.0 { 2 } else { 0 };
        }
        QuantizedForm {
            codebook: vec![-c, 0.0, c],
            assignments,
        }
    };
    let distortion = distortion(u, &form);
    Ok(Solved { form, distortion })
}
