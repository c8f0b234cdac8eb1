use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cstep::{CompressedForm, CompressionInput, SchemeSpec};
use crate::cstep::form::FLOAT_BITS;
use crate::error::ValidationError;
use crate::model::ParamStore;

/// How a parameter group is laid out before its scheme sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewKind {
    /// Flatten each tensor row-major and concatenate in group order.
    AsVector,
    /// Reshape a single tensor row-major into `rows × cols`.
    AsMatrix { rows: usize, cols: usize },
}

/// A parameter group, the view applied to it, and what compresses the view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionTask {
    pub params: Vec<String>,
    pub view: ViewKind,
    pub scheme: SchemeSpec,
}

impl CompressionTask {
    pub fn new(params: &[&str], view: ViewKind, scheme: impl Into<SchemeSpec>) -> Self {
        Self {
            params: params.iter().map(|s| s.to_string()).collect(),
            view,
            scheme: scheme.into(),
        }
    }
}

/// A validated task bound to parameter-store indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPlan {
    pub task: CompressionTask,
    pub indices: Vec<usize>,
    /// Element count of each tensor in `indices`.
    pub sizes: Vec<usize>,
    pub len: usize,
}

impl TaskPlan {
    pub fn dims(&self) -> Option<(usize, usize)> {
        match self.task.view {
            ViewKind::AsVector => None,
            ViewKind::AsMatrix { rows, cols } => Some((rows, cols)),
        }
    }

    pub fn input<'a>(&self, values: &'a [f64]) -> CompressionInput<'a> {
        CompressionInput {
            values,
            dims: self.dims(),
        }
    }

    /// Calls `f(param_index, slice)` for each tensor's share of a flat view.
    pub fn split<'a>(&self, flat: &'a [f64], mut f: impl FnMut(usize, &'a [f64])) {
        let mut at = 0;
        for (&i, &n) in self.indices.iter().zip(&self.sizes) {
            f(i, &flat[at..at + n]);
            at += n;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub tasks: Vec<TaskPlan>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Total number of compressed weights.
    pub fn viewed_len(&self) -> usize {
        self.tasks.iter().map(|t| t.len).sum()
    }
}

/// Checks names, disjointness, view shapes, and scheme parameters against
/// the viewed sizes.
pub fn validate_tasks(params: &ParamStore, tasks: &[CompressionTask]) -> Result<Plan, ValidationError> {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    let mut plans = Vec::with_capacity(tasks.len());
    for (t, task) in tasks.iter().enumerate() {
        if task.params.is_empty() {
            return Err(ValidationError::EmptyGroup { task: t });
        }
        let mut indices = Vec::with_capacity(task.params.len());
        for name in &task.params {
            let idx = params.index_of(name).ok_or_else(|| ValidationError::UnknownParameter {
                task: t,
                name: name.clone(),
            })?;
            if indices.contains(&idx) {
                return Err(ValidationError::DuplicateName {
                    task: t,
                    name: name.clone(),
                });
            }
            if let Some(&first) = owner.get(name.as_str()) {
                return Err(ValidationError::Overlap {
                    name: name.clone(),
                    first,
                    second: t,
                });
            }
            owner.insert(name.as_str(), t);
            indices.push(idx);
        }
        let sizes: Vec<usize> = indices.iter().map(|&i| params.tensor(i).len()).collect();
        let len = sizes.iter().sum();
        if let ViewKind::AsMatrix { rows, cols } = task.view {
            if indices.len() != 1 {
                return Err(ValidationError::MultiTensorMatrix {
                    task: t,
                    count: indices.len(),
                });
            }
            if rows * cols != len || rows == 0 {
                return Err(ValidationError::ViewSize { task: t, rows, cols, len });
            }
        }
        let plan = TaskPlan {
            task: task.clone(),
            indices,
            sizes,
            len,
        };
        task.scheme
            .validate(len, plan.dims())
            .map_err(|source| ValidationError::Scheme { task: t, source })?;
        plans.push(plan);
    }
    Ok(Plan { tasks: plans })
}

/// The task's current weights in view order.
pub fn gather(params: &ParamStore, task: &TaskPlan) -> Vec<f64> {
    let mut out = Vec::with_capacity(task.len);
    for &i in &task.indices {
        out.extend_from_slice(params.tensor(i).data());
    }
    out
}

/// Writes a flat view back into the group's tensors. Inverse of [`gather`].
pub fn scatter(params: &mut ParamStore, task: &TaskPlan, values: &[f64]) {
    assert_eq!(values.len(), task.len, "view length mismatch");
    task.split(values, |i, part| params.tensor_mut(i).data_mut().copy_from_slice(part));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub scheme: String,
    pub params: Vec<String>,
    pub form: String,
    pub weights: usize,
    pub reference_bits: u64,
    pub compressed_bits: u64,
    pub ratio: f64,
}

/// Storage of the whole model before and after compression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionSummary {
    pub reference_bits: u64,
    pub compressed_bits: u64,
    pub ratio: f64,
    /// Reference and compressed bits over the compressed parameters only.
    pub compressed_params_ratio: f64,
    pub tasks: Vec<TaskSummary>,
}

/// Bit accounting with 32-bit floats: parameters outside every task cost 32
/// bits each on both sides, tasks cost what their compressed form stores.
pub fn compression_ratio(params: &ParamStore, plan: &Plan, thetas: &[CompressedForm]) -> CompressionSummary {
    assert_eq!(plan.len(), thetas.len());
    let total = params.num_elements() as u64;
    let reference_bits = total * FLOAT_BITS;
    let mut tasks = Vec::with_capacity(plan.len());
    let (mut task_ref, mut task_bits) = (0u64, 0u64);
    for (tp, theta) in plan.tasks.iter().zip(thetas) {
        let r = tp.len as u64 * FLOAT_BITS;
        let c = theta.storage_bits();
        task_ref += r;
        task_bits += c;
        tasks.push(TaskSummary {
            scheme: tp.task.scheme.name(),
            params: tp.task.params.clone(),
            form: theta.kind().to_string(),
            weights: tp.len,
            reference_bits: r,
            compressed_bits: c,
            ratio: ratio(r, c),
        });
    }
    let compressed_bits = reference_bits - task_ref + task_bits;
    CompressionSummary {
        reference_bits,
        compressed_bits,
        ratio: ratio(reference_bits, compressed_bits),
        compressed_params_ratio: ratio(task_ref, task_bits),
        tasks,
    }
}

fn ratio(reference: u64, compressed: u64) -> f64 {
    if compressed == 0 {
        f64::INFINITY
    } else {
        reference as f64 / compressed as f64
    }
}
