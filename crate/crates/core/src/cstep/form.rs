use serde::{Deserialize, Serialize};

use crate::tensor::squared_distance;

/// Bits used for an uncompressed weight and for every stored float.
pub const FLOAT_BITS: u64 = 32;

/// `ceil(log2(n))`, with `0` for `n <= 1`.
pub fn index_bits(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

/// Codebook plus per-weight assignments; decompresses to `codebook[assignments[i]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedForm {
    /// Strictly increasing.
    pub codebook: Vec<f64>,
    pub assignments: Vec<u32>,
}

impl QuantizedForm {
    pub fn decompress_into(&self, out: &mut [f64]) {
        for (o, &z) in out.iter_mut().zip(&self.assignments) {
            *o = self.codebook[z as usize];
        }
    }

    pub fn storage_bits(&self) -> u64 {
        let k = self.codebook.len();
        k as u64 * FLOAT_BITS + self.assignments.len() as u64 * index_bits(k)
    }
}

/// Sparse vector of length `len` holding `values` at strictly increasing `indices`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseForm {
    pub len: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseForm {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Keeps the non-zero entries of a dense vector.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .unzip();
        Self {
            len: dense.len(),
            indices,
            values,
        }
    }

    pub fn decompress_into(&self, out: &mut [f64]) {
        out.fill(0.0);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn storage_bits(&self) -> u64 {
        self.nnz() as u64 * (FLOAT_BITS + index_bits(self.len))
    }
}

/// `U·Vᵀ` with `U` of size `rows×rank` and `V` of size `cols×rank`, both row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankForm {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LowRankForm {
    pub fn decompress_into(&self, out: &mut [f64]) {
        let (m, n, r) = (self.rows, self.cols, self.rank);
        out.fill(0.0);
        if r == 0 {
            return;
        }
        crate::tensor::gemm(
            m,
            r,
            n,
            1.0,
            &self.u,
            crate::tensor::MatLayout::RowMajor,
            &self.v,
            crate::tensor::MatLayout::Transposed,
            0.0,
            out,
        );
    }

    pub fn storage_bits(&self) -> u64 {
        FLOAT_BITS * (self.rank * (self.rows + self.cols)) as u64
    }
}

/// Sum of several compressed components over the same view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveForm {
    pub components: Vec<CompressedForm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompressedForm {
    Quantized(QuantizedForm),
    Sparse(SparseForm),
    LowRank(LowRankForm),
    Additive(AdditiveForm),
}

impl CompressedForm {
    /// Number of decompressed elements.
    pub fn len(&self) -> usize {
        match self {
            Self::Quantized(q) => q.assignments.len(),
            Self::Sparse(s) => s.len,
            Self::LowRank(l) => l.rows * l.cols,
            Self::Additive(a) => a.components.first().map_or(0, Self::len),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Δ(Θ) written into `out`.
    pub fn decompress_into(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.len(), "output length must match the form");
        match self {
            Self::Quantized(q) => q.decompress_into(out),
            Self::Sparse(s) => s.decompress_into(out),
            Self::LowRank(l) => l.decompress_into(out),
            Self::Additive(a) => {
                out.fill(0.0);
                let mut tmp = vec![0.0; out.len()];
                for c in &a.components {
                    c.decompress_into(&mut tmp);
                    for (o, t) in out.iter_mut().zip(&tmp) {
                        *o += t;
                    }
                }
            }
        }
    }

    pub fn decompress(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.decompress_into(&mut out);
        out
    }

    /// `||u − Δ(Θ)||²`.
    pub fn distortion(&self, u: &[f64]) -> f64 {
        squared_distance(u, &self.decompress())
    }

    pub fn storage_bits(&self) -> u64 {
        match self {
            Self::Quantized(q) => q.storage_bits(),
            Self::Sparse(s) => s.storage_bits(),
            Self::LowRank(l) => l.storage_bits(),
            Self::Additive(a) => a.components.iter().map(Self::storage_bits).sum(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Quantized(_) => "quantized",
            Self::Sparse(_) => "sparse",
            Self::LowRank(_) => "low_rank",
            Self::Additive(_) => "additive",
        }
    }
}

impl From<QuantizedForm> for CompressedForm {
    fn from(f: QuantizedForm) -> Self {
        Self::Quantized(f)
    }
}

impl From<SparseForm> for CompressedForm {
    fn from(f: SparseForm) -> Self {
        Self::Sparse(f)
    }
}

impl From<LowRankForm> for CompressedForm {
    fn from(f: LowRankForm) -> Self {
        Self::LowRank(f)
    }
}

impl From<AdditiveForm> for CompressedForm {
    fn from(f: AdditiveForm) -> Self {
        Self::Additive(f)
    }
}

/// A solver result: the form and its exact squared distortion against the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Solved<F> {
    pub form: F,
    pub distortion: f64,
}

impl<F: Into<CompressedForm>> Solved<F> {
    pub fn erase(self) -> Solved<CompressedForm> {
        Solved {
            form: self.form.into(),
            distortion: self.distortion,
        }
    }
}
