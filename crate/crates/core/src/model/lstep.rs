//! The L step: minimize `L(w) + (μ/2)||w − Δ(Θ) − λ/μ||²` over the weights.

use serde::{Deserialize, Serialize};

use crate::error::LStepError;
use crate::model::{Batch, Dataset, LossModel, ParamStore, QuadraticModel};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// The quadratic attraction added to the loss during an L step.
///
/// `anchors[i]`, when present, is `Δ(Θ) + λ/μ` laid out like parameter `i`;
/// parameters without an anchor are not covered by any task and get no
/// penalty. The L step never needs to know how tasks group or reshape
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Penalty {
    pub mu: f64,
    pub anchors: Vec<Option<Vec<f64>>>,
}

impl Penalty {
    /// No attraction: plain training.
    pub fn none(num_params: usize) -> Self {
        Self {
            mu: 0.0,
            anchors: vec![None; num_params],
        }
    }

    fn check(&self, params: &ParamStore) -> Result<(), LStepError> {
        if self.anchors.len() != params.len() {
            return Err(LStepError::AnchorMismatch(format!(
                "{} anchors for {} parameters",
                self.anchors.len(),
                params.len()
            )));
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if let Some(a) = a {
                if a.len() != params.tensor(i).len() {
                    return Err(LStepError::AnchorMismatch(format!(
                        "anchor for {} has {} elements, parameter has {}",
                        params.name(i),
                        a.len(),
                        params.tensor(i).len()
                    )));
                }
            }
        }
        if !(self.mu >= 0.0) {
            return Err(LStepError::Hyper(format!("mu must be >= 0, got {}", self.mu)));
        }
        Ok(())
    }

    /// `(μ/2) Σ ||w_i − anchor_i||²`.
    pub fn value(&self, params: &ParamStore) -> f64 {
        if self.mu == 0.0 {
            return 0.0;
        }
        let sq: f64 = self
            .anchors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|a| crate::tensor::squared_distance(params.tensor(i).data(), a)))
            .sum();
        0.5 * self.mu * sq
    }

    /// `grads_i += μ (w_i − anchor_i)`.
    pub fn add_gradient(&self, params: &ParamStore, grads: &mut [Tensor]) {
        if self.mu == 0.0 {
            return;
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if let Some(a) = a {
                let w = params.tensor(i).data();
                for ((g, &x), &t) in grads[i].data_mut().iter_mut().zip(w).zip(a) {
                    *g += self.mu * (x - t);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LStepConfig {
    pub lr_base: f64,
    /// Learning rate at L step `i` is `lr_base · decay^i`.
    #[serde(default = "default_decay")]
    pub decay: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_true")]
    pub nesterov: bool,
    /// Seeds the per-step minibatch shuffles.
    #[serde(default)]
    pub seed: u64,
}

fn default_decay() -> f64 {
    0.98
}
fn default_batch() -> usize {
    128
}
fn default_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}

impl LStepConfig {
    pub fn new(lr_base: f64, epochs: usize) -> Self {
        Self {
            lr_base,
            decay: default_decay(),
            epochs,
            batch_size: default_batch(),
            momentum: default_momentum(),
            nesterov: true,
            seed: 0,
        }
    }

    pub fn learning_rate(&self, step: usize) -> f64 {
        self.lr_base * self.decay.powi(step as i32)
    }

    fn validate(&self) -> Result<(), LStepError> {
        if !(self.lr_base > 0.0) || !self.lr_base.is_finite() {
            return Err(LStepError::Hyper(format!("lr_base must be > 0, got {}", self.lr_base)));
        }
        if !(self.decay > 0.0) {
            return Err(LStepError::Hyper(format!("decay must be > 0, got {}", self.decay)));
        }
        if self.batch_size == 0 {
            return Err(LStepError::Hyper("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LStepError::Hyper(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LStepOutcome {
    pub loss_before: f64,
    pub loss_after: f64,
}

/// `L(w) + penalty` with `L` averaged over the whole dataset (or the data-free
/// objective when `data` is `None`).
pub fn penalized_loss<M: LossModel + ?Sized>(model: &M, data: Option<&Dataset>, penalty: &Penalty) -> f64 {
    let base = match data {
        Some(d) => model.loss(Batch {
            inputs: d.inputs().data(),
            labels: d.labels(),
            dim: d.dim(),
        }),
        None => model.loss(Batch::empty()),
    };
    base + penalty.value(model.params())
}

/// Minibatch SGD with (Nesterov) momentum on the penalized loss.
///
/// A fresh momentum buffer is used for every call. With `data = None` each
/// epoch is a single full-gradient step, which is what data-free models need.
pub fn sgd_l_step<M: LossModel + ?Sized>(
    model: &mut M,
    data: Option<&Dataset>,
    penalty: &Penalty,
    cfg: &LStepConfig,
    step: usize,
) -> Result<LStepOutcome, LStepError> {
    cfg.validate()?;
    penalty.check(model.params())?;
    let lr = cfg.learning_rate(step);
    let loss_before = penalized_loss(model, data, penalty);
    if !loss_before.is_finite() {
        return Err(LStepError::Divergence { epoch: 0 });
    }

    let mut velocity: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect();
    let mut rng = Prng::new(cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut xbuf = Vec::new();
    let mut ybuf = Vec::new();

    for epoch in 1..=cfg.epochs {
        match data {
            Some(d) => {
                let order = d.shuffled_indices(&mut rng);
                for rows in order.chunks(cfg.batch_size) {
                    d.gather_rows(rows, &mut xbuf, &mut ybuf);
                    let batch = Batch {
                        inputs: &xbuf,
                        labels: &ybuf,
                        dim: d.dim(),
                    };
                    update(model, batch, penalty, cfg, lr, &mut velocity, epoch)?;
                }
            }
            None => update(model, Batch::empty(), penalty, cfg, lr, &mut velocity, epoch)?,
        }
    }

    let loss_after = penalized_loss(model, data, penalty);
    if !loss_after.is_finite() {
        return Err(LStepError::Divergence { epoch: cfg.epochs });
    }
    Ok(LStepOutcome {
        loss_before,
        loss_after,
    })
}

fn update<M: LossModel + ?Sized>(
    model: &mut M,
    batch: Batch<'_>,
    penalty: &Penalty,
    cfg: &LStepConfig,
    lr: f64,
    velocity: &mut [Vec<f64>],
    epoch: usize,
) -> Result<(), LStepError> {
    let (loss, mut grads) = model.loss_and_gradient(batch);
    if !loss.is_finite() {
        return Err(LStepError::Divergence { epoch });
    }
    penalty.add_gradient(model.params(), &mut grads);
    let m = cfg.momentum;
    for ((p, g), v) in model.params_mut().iter_mut().zip(&grads).zip(velocity.iter_mut()) {
        for ((w, &gi), vi) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vi = m * *vi + gi;
            let dir = if cfg.nesterov { gi + m * *vi } else { *vi };
            *w -= lr * dir;
        }
    }
    Ok(())
}

/// Closed-form L step of the quadratic model:
/// `w_i = (a_i w̄_i + μ θ_i + λ_i) / (a_i + μ)`.
pub fn exact_l_step_quadratic(model: &QuadraticModel, theta: &[f64], lambda: &[f64], mu: f64) -> Vec<f64> {
    assert!(mu >= 0.0, "mu must be >= 0");
    assert_eq!(theta.len(), model.target().len());
    assert_eq!(lambda.len(), model.target().len());
    model
        .target()
        .iter()
        .zip(model.curvature())
        .zip(theta.iter().zip(lambda))
        .map(|((&t, &a), (&th, &l))| (a * t + mu * th + l) / (a + mu))
        .collect()
}

/// Largest relative difference between the analytic gradient and central
/// differences `(L(w+h) − L(w−h)) / 2h` over `samples` random coordinates.
///
/// The relative error is `|g − ĝ| / max(|g|, |ĝ|, 1e-8)`.
pub fn finite_diff_gradcheck<M: LossModel + ?Sized>(
    model: &mut M,
    batch: Batch<'_>,
    h: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    assert!((1e-7..=1e-3).contains(&h), "h must lie in [1e-7, 1e-3]");
    let (_, grads) = model.loss_and_gradient(batch);
    let sizes: Vec<usize> = model.params().iter().map(|p| p.tensor.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = Prng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples.max(50) {
        let mut flat = rng.below(total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let orig = model.params().tensor(pi).data()[flat];
        model.params_mut().tensor_mut(pi).data_mut()[flat] = orig + h;
        let up = model.loss(batch);
        model.params_mut().tensor_mut(pi).data_mut()[flat] = orig - h;
        let down = model.loss(batch);
        model.params_mut().tensor_mut(pi).data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[pi].data()[flat];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
