//! Differentiable models, datasets, and the L step.

mod dataset;
mod lstep;
mod mlp;
mod quadratic;

pub use dataset::{load_mnist_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, Dataset};
pub use dataset::{IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use lstep::{
    exact_l_step_quadratic, finite_diff_gradcheck, penalized_loss, sgd_l_step, LStepConfig, LStepOutcome, Penalty,
};
pub use mlp::{Activation, MlpModel, LENET300};
pub use quadratic::QuadraticModel;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered, named parameter tensors of a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor. Panics on a duplicate name.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param { name, tensor });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.params[index].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.params[index].tensor
    }

    pub fn name(&self, index: usize) -> &str {
        &self.params[index].name
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}

/// A mini-batch of labelled examples, row-major `labels.len() × dim`.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [usize],
    pub dim: usize,
}

impl Batch<'_> {
    /// A batch with no examples; models whose loss does not depend on data use it.
    pub fn empty() -> Batch<'static> {
        Batch {
            inputs: &[],
            labels: &[],
            dim: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A model with a differentiable loss `L(w)` over its parameter store.
pub trait LossModel: Send {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Mean loss over the batch.
    fn loss(&self, batch: Batch<'_>) -> f64;

    /// Mean loss and its gradient, one tensor per parameter in store order.
    fn loss_and_gradient(&self, batch: Batch<'_>) -> (f64, Vec<Tensor>);

    /// Classification error rate in `[0, 1]`, for models that classify.
    fn error_rate(&self, _data: &Dataset) -> Option<f64> {
        None
    }

    /// Whether `loss` ignores the batch (a data-free objective).
    fn is_data_free(&self) -> bool {
        false
    }
}
