//! Additive combinations `Δ(Θ) = Σ_j Δ_j(Θ_j)`, solved by block coordinate
//! descent: each component in turn is re-fit to the residual left by the
//! others.
//!
//! Descent only finds a local optimum, so it is restarted from every cyclic
//! rotation of the visit order. A pair made of an ℓ0 constraint and a
//! separable vector scheme is small enough to solve exactly when the possible
//! sparse supports number at most [`AdditiveOptions::exhaustive_limit`]: for a
//! fixed support the sparse entries absorb their residual completely, so the
//! other scheme only has to fit the remaining weights.

use crate::cstep::form::{AdditiveForm, CompressedForm, SparseForm};
use crate::cstep::quantize::nearest;
use crate::cstep::scheme::{CompressionInput, Scheme};
use crate::error::SolverError;
use crate::tensor::squared_distance;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdditiveOptions {
    /// Stop once a full pass improves the objective by less than this; `None`
    /// means `1e-10·||u||²`.
    pub tol: Option<f64>,
    pub max_iters: usize,
    /// Largest number of candidate supports enumerated by the exact
    /// ℓ0-plus-separable path; `0` disables it.
    pub exhaustive_limit: usize,
}

impl Default for AdditiveOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iters: 50,
            exhaustive_limit: 4096,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdditiveOutcome {
    pub form: AdditiveForm,
    pub distortion: f64,
    /// Objective after every block update.
    pub trace: Vec<f64>,
    pub passes: usize,
}

/// Block coordinate descent from all-zero components, once for every cyclic
/// rotation of the visit order, and additionally from `warm` when given; the
/// lowest objective wins. Small ℓ0-plus-separable pairs are also enumerated
/// exactly.
pub fn additive_cstep(
    input: CompressionInput<'_>,
    schemes: &[Scheme],
    mu: f64,
    opts: &AdditiveOptions,
    warm: Option<&AdditiveForm>,
) -> Result<AdditiveOutcome, SolverError> {
    if schemes.len() < 2 {
        return Err(SolverError::TooFewComponents(schemes.len()));
    }
    let obj = |o: &AdditiveOutcome| *o.trace.last().expect("at least one block update");
    let mut cold = descend(input, schemes, mu, opts, None, 0)?;
    for start in 1..schemes.len() {
        let other = descend(input, schemes, mu, opts, None, start)?;
        if obj(&other) < obj(&cold) {
            cold = other;
        }
    }
    if let Some(exact) = enumerate_supports(input, schemes, mu, opts)? {
        if exact.distortion < obj(&cold) {
            let mut trace = cold.trace.clone();
            trace.push(exact.distortion);
            cold = AdditiveOutcome { trace, ..exact };
        }
    }
    let Some(warm) = warm else {
        return Ok(cold);
    };
    if warm.components.len() != schemes.len() {
        return Ok(cold);
    }
    for c in &warm.components {
        if c.len() != input.values.len() {
            return Err(SolverError::ComponentShape {
                expected: input.values.len(),
                got: c.len(),
            });
        }
    }
    let warmed = descend(input, schemes, mu, opts, Some(warm), 0)?;
    Ok(if obj(&warmed) < obj(&cold) { warmed } else { cold })
}

/// `C(n, k)`, or `None` once it exceeds `limit`.
fn choose_within(n: usize, k: usize, limit: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > limit as u128 {
            return None;
        }
    }
    Some(c as usize)
}

/// Schemes whose optimum on a subset of the weights extends to the full view
/// without changing the fit on that subset.
fn separable(s: &Scheme) -> bool {
    matches!(
        s,
        Scheme::AdaptiveQuantization { .. }
            | Scheme::BinarizeFixed
            | Scheme::BinarizeScaled
            | Scheme::TernarizeScaled
            | Scheme::L0Constraint { .. }
            | Scheme::L1Constraint { .. }
    )
}

/// Lifts a form fitted to `u` without the positions in `support` (sorted) to
/// the full length, giving those positions whatever is cheapest to store.
fn lift(form: CompressedForm, support: &[usize], u: &[f64]) -> CompressedForm {
    let p = u.len();
    match form {
        CompressedForm::Quantized(mut q) => {
            let mut full = Vec::with_capacity(p);
            let mut rest = q.assignments.iter();
            for (i, &x) in u.iter().enumerate() {
                if support.binary_search(&i).is_ok() {
                    full.push(nearest(&q.codebook, x) as u32);
                } else {
                    full.push(*rest.next().expect("one assignment per kept weight"));
                }
            }
            q.assignments = full;
            q.into()
        }
        CompressedForm::Sparse(s) => {
            let kept: Vec<usize> = (0..p).filter(|i| support.binary_search(i).is_err()).collect();
            SparseForm {
                len: p,
                indices: s.indices.iter().map(|&j| kept[j]).collect(),
                values: s.values,
            }
            .into()
        }
        other => other,
    }
}

fn enumerate_supports(
    input: CompressionInput<'_>,
    schemes: &[Scheme],
    mu: f64,
    opts: &AdditiveOptions,
) -> Result<Option<AdditiveOutcome>, SolverError> {
    let (sparse_at, kappa) = match schemes {
        [Scheme::L0Constraint { kappa }, other] if separable(other) => (0, *kappa),
        [other, Scheme::L0Constraint { kappa }] if separable(other) => (1, *kappa),
        _ => return Ok(None),
    };
    let other = &schemes[1 - sparse_at];
    let u = input.values;
    let p = u.len();
    if kappa == 0 || kappa >= p || other.validate(p - kappa, None).is_err() {
        return Ok(None);
    }
    if choose_within(p, kappa, opts.exhaustive_limit).is_none() {
        return Ok(None);
    }

    let mut best: Option<(f64, Vec<usize>, CompressedForm)> = None;
    let mut support: Vec<usize> = (0..kappa).collect();
    let mut rest = Vec::with_capacity(p - kappa);
    loop {
        rest.clear();
        rest.extend((0..p).filter(|i| support.binary_search(i).is_err()).map(|i| u[i]));
        let solved = other.compress(CompressionInput::vector(&rest), mu, None)?;
        if best.as_ref().is_none_or(|b| solved.distortion < b.0) {
            best = Some((solved.distortion, support.clone(), solved.form));
        }
        // next k-combination in lexicographic order
        let Some(i) = (0..kappa).rev().find(|&i| support[i] < p - kappa + i) else {
            break;
        };
        support[i] += 1;
        for j in i + 1..kappa {
            support[j] = support[j - 1] + 1;
        }
    }

    let (_, support, form) = best.expect("at least one support");
    let fitted = lift(form, &support, u);
    let dense = fitted.decompress();
    let sparse = SparseForm {
        len: p,
        indices: support.clone(),
        values: support.iter().map(|&i| u[i] - dense[i]).collect(),
    };
    let mut components = vec![fitted, sparse.into()];
    if sparse_at == 0 {
        components.reverse();
    }
    let form = AdditiveForm { components };
    let distortion = squared_distance(u, &CompressedForm::Additive(form.clone()).decompress());
    Ok(Some(AdditiveOutcome {
        form,
        distortion,
        trace: vec![distortion],
        passes: 0,
    }))
}

fn objective(
    u: &[f64],
    total: &[f64],
    schemes: &[Scheme],
    comps: &[Option<CompressedForm>],
    mu: f64,
) -> f64 {
    let pen: f64 = schemes
        .iter()
        .zip(comps)
        .filter_map(|(s, c)| c.as_ref().map(|c| s.penalty(c)))
        .sum();
    let d = squared_distance(u, total);
    if pen > 0.0 {
        d + 2.0 / mu * pen
    } else {
        d
    }
}

fn descend(
    input: CompressionInput<'_>,
    schemes: &[Scheme],
    mu: f64,
    opts: &AdditiveOptions,
    warm: Option<&AdditiveForm>,
    start: usize,
) -> Result<AdditiveOutcome, SolverError> {
    let u = input.values;
    let p = u.len();
    let tol = opts.tol.unwrap_or(1e-10 * u.iter().map(|x| x * x).sum::<f64>());

    let mut comps: Vec<Option<CompressedForm>> = match warm {
        Some(w) => w.components.iter().cloned().map(Some).collect(),
        None => vec![None; schemes.len()],
    };
    let mut dense: Vec<Vec<f64>> = comps
        .iter()
        .map(|c| c.as_ref().map_or_else(|| vec![0.0; p], CompressedForm::decompress))
        .collect();
    let mut total = vec![0.0; p];
    for d in &dense {
        for (t, x) in total.iter_mut().zip(d) {
            *t += x;
        }
    }

    let mut trace = Vec::new();
    let mut prev = objective(u, &total, schemes, &comps, mu);
    let mut passes = 0;
    let mut residual = vec![0.0; p];
    while passes < opts.max_iters.max(1) {
        passes += 1;
        for j in (start..schemes.len()).chain(0..start) {
            for ((r, &x), (&t, &dj)) in residual.iter_mut().zip(u).zip(total.iter().zip(&dense[j])) {
                *r = x - (t - dj);
            }
            let sub = CompressionInput {
                values: &residual,
                dims: input.dims,
            };
            let solved = schemes[j].compress(sub, mu, comps[j].as_ref())?;
            let new_dense = solved.form.decompress();
            for ((t, old), new) in total.iter_mut().zip(&dense[j]).zip(&new_dense) {
                *t += new - old;
            }
            dense[j] = new_dense;
            comps[j] = Some(solved.form);
            trace.push(objective(u, &total, schemes, &comps, mu));
        }
        let now = *trace.last().expect("pushed above");
        if prev - now <= tol {
            break;
        }
        prev = now;
    }

    let form = AdditiveForm {
        components: comps.into_iter().map(|c| c.expect("every component solved")).collect(),
    };
    let distortion = squared_distance(u, &CompressedForm::Additive(form.clone()).decompress());
    Ok(AdditiveOutcome {
        form,
        distortion,
        trace,
        passes,
    })
}
