use crate::model::{Batch, LossModel, ParamStore};
use crate::tensor::Tensor;

/// `L(w) = ½ Σ_i a_i (w_i − w̄_i)²` with positive diagonal curvature `a`.
///
/// The single parameter is named `"w"` and starts at the minimizer `w̄`.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    target: Vec<f64>,
    curvature: Vec<f64>,
    params: ParamStore,
}

impl QuadraticModel {
    pub fn new(target: Vec<f64>, curvature: Vec<f64>) -> Result<Self, String> {
        if target.is_empty() || target.len() != curvature.len() {
            return Err(format!(
                "target ({}) and curvature ({}) must be non-empty and equally long",
                target.len(),
                curvature.len()
            ));
        }
        if curvature.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err("curvature must be positive and finite".into());
        }
        let mut params = ParamStore::new();
        params.push("w", Tensor::from_vec(target.clone()));
        Ok(Self {
            target,
            curvature,
            params,
        })
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn weights(&self) -> &[f64] {
        self.params.tensor(0).data()
    }

    pub fn set_weights(&mut self, w: &[f64]) {
        self.params.tensor_mut(0).data_mut().copy_from_slice(w);
    }

    /// Loss at an arbitrary point.
    pub fn loss_at(&self, w: &[f64]) -> f64 {
        0.5 * w
            .iter()
            .zip(&self.target)
            .zip(&self.curvature)
            .map(|((x, t), a)| a * (x - t) * (x - t))
            .sum::<f64>()
    }
}

impl LossModel for QuadraticModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss(&self, _batch: Batch<'_>) -> f64 {
        self.loss_at(self.weights())
    }

    fn loss_and_gradient(&self, _batch: Batch<'_>) -> (f64, Vec<Tensor>) {
        let w = self.weights();
        let g: Vec<f64> = w
            .iter()
            .zip(&self.target)
            .zip(&self.curvature)
            .map(|((x, t), a)| a * (x - t))
            .collect();
        (self.loss_at(w), vec![Tensor::from_vec(g)])
    }

    fn is_data_free(&self) -> bool {
        true
    }
}
