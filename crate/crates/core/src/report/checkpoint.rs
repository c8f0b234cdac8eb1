//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   b"LCCK"
//! version u32 (= 1)
//! count   u64
//! count × entry:
//!   name_len u32, name UTF-8 bytes
//!   dtype    u8   (0 = f32, 1 = f64)
//!   rank     u8
//!   dims     u64 × rank
//!   data     product(dims) values of dtype
//! ```
//!
//! Compression parameters live under `theta/<task>/...` and multipliers
//! under `lambda/<task>`.

use std::path::Path;

use crate::cstep::{AdditiveForm, CompressedForm, LowRankForm, QuantizedForm, SparseForm};
use crate::engine::{EngineState, Plan};
use crate::error::CheckpointError;
use crate::model::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"LCCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    fn code(self) -> u8 {
        match self {
            Self::F32 => 0,
            Self::F64 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// An ordered list of named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) {
        let name = name.into();
        assert_eq!(dims.iter().product::<usize>(), data.len(), "entry {name}: dims do not match data");
        assert!(dims.len() <= u8::MAX as usize);
        self.entries.push(Entry { name, dims, data });
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.push(name, t.shape().to_vec(), t.data().to_vec());
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&Entry, CheckpointError> {
        self.get(name)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing entry {name:?}")))
    }

    pub fn to_bytes(&self, precision: Precision) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(precision.code());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match precision {
                Precision::F64 => e.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Precision::F32 => e.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, at: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                supported: VERSION,
            });
        }
        let count = r.u64("entry count")?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(len, "name")?.to_vec())
                .map_err(|_| CheckpointError::Malformed("entry name is not UTF-8".into()))?;
            let dtype = r.u8("dtype")?;
            let rank = r.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64("dims")? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("entry {name:?}: dims overflow")))?;
            let data = match dtype {
                0 => r
                    .take(n.checked_mul(4).ok_or(CheckpointError::Truncated("data"))?, "data")?
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                    .collect(),
                1 => r
                    .take(n.checked_mul(8).ok_or(CheckpointError::Truncated("data"))?, "data")?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                other => return Err(CheckpointError::Malformed(format!("entry {name:?}: unknown dtype {other}"))),
            };
            ck.entries.push(Entry { name, dims, data });
        }
        if r.at != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(ck)
    }

    /// Stores every parameter under its own name.
    pub fn push_params(&mut self, params: &ParamStore) {
        for p in params.iter() {
            self.push_tensor(p.name.clone(), &p.tensor);
        }
    }

    /// Copies stored parameters into `params`, checking that names and shapes match.
    pub fn restore_params(&self, params: &mut ParamStore) -> Result<(), CheckpointError> {
        for p in params.iter_mut() {
            let e = self.require(&p.name)?;
            if e.dims != p.tensor.shape() {
                return Err(CheckpointError::Malformed(format!(
                    "parameter {:?}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    e.dims,
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(&e.data);
        }
        Ok(())
    }

    /// Stores Θ and λ of every task.
    pub fn push_state(&mut self, state: &EngineState) {
        for (t, theta) in state.thetas.iter().enumerate() {
            if let Some(form) = theta {
                self.push_form(&format!("theta/{t}"), form);
            }
        }
        for (t, l) in state.lambdas.iter().enumerate() {
            self.push(format!("lambda/{t}"), vec![l.len()], l.clone());
        }
        self.push("lambda/init_penalty_mu", vec![], vec![state.init_penalty_mu]);
    }

    /// Rebuilds the engine state written by [`push_state`](Self::push_state).
    pub fn restore_state(&self, plan: &Plan) -> Result<EngineState, CheckpointError> {
        let mut state = EngineState::new(plan, self.require("lambda/init_penalty_mu")?.data[0]);
        for (t, tp) in plan.tasks.iter().enumerate() {
            let form = self.form(&format!("theta/{t}"))?;
            if form.len() != tp.len {
                return Err(CheckpointError::Malformed(format!(
                    "theta/{t} has {} elements, task has {}",
                    form.len(),
                    tp.len
                )));
            }
            state.thetas[t] = Some(form);
            let l = self.require(&format!("lambda/{t}"))?;
            if l.data.len() != tp.len {
                return Err(CheckpointError::Malformed(format!("lambda/{t} has the wrong length")));
            }
            state.lambdas[t] = l.data.clone();
        }
        Ok(state)
    }

    fn push_form(&mut self, prefix: &str, form: &CompressedForm) {
        match form {
            CompressedForm::Quantized(q) => {
                self.push(format!("{prefix}/quantized/codebook"), vec![q.codebook.len()], q.codebook.clone());
                let a: Vec<f64> = q.assignments.iter().map(|&x| f64::from(x)).collect();
                self.push(format!("{prefix}/quantized/assignments"), vec![a.len()], a);
            }
            CompressedForm::Sparse(s) => {
                self.push(format!("{prefix}/sparse/len"), vec![], vec![s.len as f64]);
                let idx: Vec<f64> = s.indices.iter().map(|&i| i as f64).collect();
                self.push(format!("{prefix}/sparse/indices"), vec![idx.len()], idx);
                self.push(format!("{prefix}/sparse/values"), vec![s.values.len()], s.values.clone());
            }
            CompressedForm::LowRank(l) => {
                self.push(format!("{prefix}/low_rank/u"), vec![l.rows, l.rank], l.u.clone());
                self.push(format!("{prefix}/low_rank/v"), vec![l.cols, l.rank], l.v.clone());
            }
            CompressedForm::Additive(a) => {
                self.push(format!("{prefix}/additive/count"), vec![], vec![a.components.len() as f64]);
                for (j, c) in a.components.iter().enumerate() {
                    self.push_form(&format!("{prefix}/additive/{j}"), c);
                }
            }
        }
    }

    fn form(&self, prefix: &str) -> Result<CompressedForm, CheckpointError> {
        let has = |kind: &str| self.entries.iter().any(|e| e.name.starts_with(&format!("{prefix}/{kind}/")));
        if has("quantized") {
            let codebook = self.require(&format!("{prefix}/quantized/codebook"))?.data.clone();
            let assignments = as_indices(&self.require(&format!("{prefix}/quantized/assignments"))?.data)?
                .into_iter()
                .map(|i| i as u32)
                .collect::<Vec<_>>();
            if assignments.iter().any(|&a| a as usize >= codebook.len()) {
                return Err(CheckpointError::Malformed(format!("{prefix}: assignment out of range")));
            }
            Ok(QuantizedForm { codebook, assignments }.into())
        } else if has("sparse") {
            let len = as_indices(&self.require(&format!("{prefix}/sparse/len"))?.data)?[0];
            let indices = as_indices(&self.require(&format!("{prefix}/sparse/indices"))?.data)?;
            let values = self.require(&format!("{prefix}/sparse/values"))?.data.clone();
            if indices.len() != values.len() || indices.iter().any(|&i| i >= len) {
                return Err(CheckpointError::Malformed(format!("{prefix}: inconsistent sparse form")));
            }
            Ok(SparseForm { len, indices, values }.into())
        } else if has("low_rank") {
            let u = self.require(&format!("{prefix}/low_rank/u"))?;
            let v = self.require(&format!("{prefix}/low_rank/v"))?;
            if u.dims.len() != 2 || v.dims.len() != 2 || u.dims[1] != v.dims[1] {
                return Err(CheckpointError::Malformed(format!("{prefix}: inconsistent low-rank factors")));
            }
            Ok(LowRankForm {
                rows: u.dims[0],
                cols: v.dims[0],
                rank: u.dims[1],
                u: u.data.clone(),
                v: v.data.clone(),
            }
            .into())
        } else if has("additive") {
            let n = as_indices(&self.require(&format!("{prefix}/additive/count"))?.data)?[0];
            let components = (0..n)
                .map(|j| self.form(&format!("{prefix}/additive/{j}")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AdditiveForm { components }.into())
        } else {
            Err(CheckpointError::Malformed(format!("missing compressed form {prefix:?}")))
        }
    }
}

fn as_indices(data: &[f64]) -> Result<Vec<usize>, CheckpointError> {
    data.iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(53) {
                Ok(x as usize)
            } else {
                Err(CheckpointError::Malformed(format!("expected an index, found {x}")))
            }
        })
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.bytes.get(self.at..end).ok_or(CheckpointError::Truncated(what))?;
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint, precision: Precision) -> Result<(), CheckpointError> {
    std::fs::write(path, ck.to_bytes(precision))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
