use serde::{Deserialize, Serialize};

use crate::model::{Batch, Dataset, LossModel, ParamStore};
use crate::rng::Prng;
use crate::tensor::{gemm, MatLayout, Tensor};

/// Layer sizes of LeNet300: 784 inputs, hidden layers of 300 and 100, 10 classes.
pub const LENET300: [usize; 4] = [784, 300, 100, 10];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, x: &mut [f64]) {
        match self {
            Self::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
            Self::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Self::Tanh => grad.iter_mut().zip(out).for_each(|(g, a)| *g *= 1.0 - a * a),
            Self::Relu => grad.iter_mut().zip(out).for_each(|(g, a)| {
                if *a <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

/// Fully connected classifier with softmax cross-entropy output.
///
/// Layer `i` (1-based) owns `l{i}.weight` of shape `out×in` and `l{i}.bias` of
/// length `out`; hidden layers apply the activation.
#[derive(Clone, Debug)]
pub struct MlpModel {
    sizes: Vec<usize>,
    activation: Activation,
    params: ParamStore,
}

impl MlpModel {
    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "need at least input and output sizes");
        let mut rng = Prng::new(seed);
        let mut params = ParamStore::new();
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.gaussian() * std).collect();
            params.push(
                format!("l{}.weight", i + 1),
                Tensor::matrix(fan_out, fan_in, data).expect("positive dims"),
            );
            params.push(format!("l{}.bias", i + 1), Tensor::zeros(&[fan_out]));
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        }
    }

    pub fn lenet300(activation: Activation, seed: u64) -> Self {
        Self::new(&LENET300, activation, seed)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn weight(&self, layer: usize) -> &Tensor {
        self.params.tensor(2 * layer)
    }

    fn bias(&self, layer: usize) -> &Tensor {
        self.params.tensor(2 * layer + 1)
    }

    /// Layer outputs for a batch: hidden activations followed by the logits.
    fn forward(&self, inputs: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input: &[f64] = if l == 0 { inputs } else { &outs[l - 1] };
            let mut z = Vec::with_capacity(rows * n_out);
            for _ in 0..rows {
                z.extend_from_slice(self.bias(l).data());
            }
            gemm(
                rows,
                n_in,
                n_out,
                1.0,
                input,
                MatLayout::RowMajor,
                self.weight(l).data(),
                MatLayout::Transposed,
                1.0,
                &mut z,
            );
            if l + 1 < self.num_layers() {
                self.activation.apply(&mut z);
            }
            outs.push(z);
        }
        outs
    }

    /// Softmax class probabilities, row-major `rows × classes`.
    pub fn predict_proba(&self, batch: Batch<'_>) -> Vec<f64> {
        let rows = batch.len();
        let classes = *self.sizes.last().expect("non-empty");
        let mut logits = self.forward(batch.inputs, rows).pop().expect("at least one layer");
        for row in logits.chunks_mut(classes) {
            softmax_in_place(row);
        }
        logits
    }

    fn check_batch(&self, batch: &Batch<'_>) {
        assert_eq!(batch.dim, self.sizes[0], "batch dimension does not match the input layer");
        assert_eq!(batch.inputs.len(), batch.len() * batch.dim);
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `−ln softmax(row)[label]`, computed through log-sum-exp.
pub(crate) fn cross_entropy(row: &[f64], label: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - row[label]
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 1000;

impl LossModel for MlpModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss(&self, batch: Batch<'_>) -> f64 {
        self.check_batch(&batch);
        let rows = batch.len();
        if rows == 0 {
            return 0.0;
        }
        let classes = *self.sizes.last().expect("non-empty");
        let mut total = 0.0;
        for start in (0..rows).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(rows);
            let logits = self
                .forward(&batch.inputs[start * batch.dim..end * batch.dim], end - start)
                .pop()
                .expect("at least one layer");
            total += logits
                .chunks(classes)
                .zip(&batch.labels[start..end])
                .map(|(row, &y)| cross_entropy(row, y))
                .sum::<f64>();
        }
        total / rows as f64
    }

    fn loss_and_gradient(&self, batch: Batch<'_>) -> (f64, Vec<Tensor>) {
        self.check_batch(&batch);
        let rows = batch.len();
        let layers = self.num_layers();
        let classes = self.sizes[layers];
        let outs = self.forward(batch.inputs, rows);

        let logits = &outs[layers - 1];
        let mut delta = logits.clone();
        let mut loss = 0.0;
        let scale = 1.0 / rows as f64;
        for ((row, drow), &y) in logits.chunks(classes).zip(delta.chunks_mut(classes)).zip(batch.labels) {
            loss += cross_entropy(row, y);
            softmax_in_place(drow);
            drow[y] -= 1.0;
            drow.iter_mut().for_each(|d| *d *= scale);
        }
        loss *= scale;

        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input: &[f64] = if l == 0 { batch.inputs } else { &outs[l - 1] };
            // dW = deltaᵀ · input
            gemm(
                n_out,
                rows,
                n_in,
                1.0,
                &delta,
                MatLayout::Transposed,
                input,
                MatLayout::RowMajor,
                0.0,
                grads[2 * l].data_mut(),
            );
            let db = grads[2 * l + 1].data_mut();
            for drow in delta.chunks(n_out) {
                for (b, d) in db.iter_mut().zip(drow) {
                    *b += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; rows * n_in];
                gemm(
                    rows,
                    n_out,
                    n_in,
                    1.0,
                    &delta,
                    MatLayout::RowMajor,
                    self.weight(l).data(),
                    MatLayout::RowMajor,
                    0.0,
                    &mut prev,
                );
                self.activation.backprop(&outs[l - 1], &mut prev);
                delta = prev;
            }
        }
        (loss, grads)
    }

    fn error_rate(&self, data: &Dataset) -> Option<f64> {
        let classes = *self.sizes.last().expect("non-empty");
        let dim = data.dim();
        assert_eq!(dim, self.sizes[0], "dataset dimension does not match the input layer");
        let n = data.len();
        let mut wrong = 0usize;
        for start in (0..n).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(n);
            let logits = self
                .forward(&data.inputs().data()[start * dim..end * dim], end - start)
                .pop()
                .expect("at least one layer");
            wrong += logits
                .chunks(classes)
                .zip(&data.labels()[start..end])
                .filter(|(row, &y)| argmax(row) != y)
                .count();
        }
        Some(wrong as f64 / n as f64)
    }
}
