//! Labelled datasets and the big-endian IDX file format used by MNIST.

use std::path::Path;

use crate::error::DatasetError;
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// `N×D` inputs with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self, DatasetError> {
        let (n, _) = inputs.dims2().map_err(|_| DatasetError::Empty)?;
        if n != labels.len() {
            return Err(DatasetError::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DatasetError::LabelRange {
                index,
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.inputs.data()[i * d..(i + 1) * d]
    }

    /// The first `n` examples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len()).max(1);
        let d = self.dim();
        Self {
            inputs: Tensor::matrix(n, d, self.inputs.data()[..n * d].to_vec()).expect("n >= 1"),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    /// Gathers the listed rows into contiguous buffers.
    pub fn gather_rows(&self, rows: &[usize], inputs: &mut Vec<f64>, labels: &mut Vec<usize>) {
        inputs.clear();
        labels.clear();
        for &r in rows {
            inputs.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
    }

    /// A seeded random permutation of the row indices.
    pub fn shuffled_indices(&self, rng: &mut Prng) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut idx);
        idx
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DatasetError::Truncated {
            path: path.to_path_buf(),
            needed: at + 4,
            have: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DatasetError> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Parses an IDX3 image file into `(count, rows·cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>), DatasetError> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let d = rows * cols;
    let needed = 16 + n * d;
    if bytes.len() < needed {
        return Err(DatasetError::Truncated {
            path: path.to_path_buf(),
            needed,
            have: bytes.len(),
        });
    }
    let pixels = bytes[16..needed].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((n, d, pixels))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>, DatasetError> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    let needed = 8 + n;
    if bytes.len() < needed {
        return Err(DatasetError::Truncated {
            path: path.to_path_buf(),
            needed,
            have: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&b| usize::from(b)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an MNIST-style image/label file pair; pixels are scaled to `[0, 1]`.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let (n, d, pixels) = parse_idx_images(&read(ip)?, ip)?;
    let labels = parse_idx_labels(&read(lp)?, lp)?;
    if n != labels.len() {
        return Err(DatasetError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if n == 0 || d == 0 {
        return Err(DatasetError::Empty);
    }
    let inputs = Tensor::matrix(n, d, pixels).map_err(|_| DatasetError::Empty)?;
    Dataset::new(inputs, labels, 10)
}

/// Encodes `n` images of `rows×cols` bytes as IDX3.
pub fn write_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len() % (rows * cols), 0);
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Encodes labels as IDX1.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let pixels: Vec<u8> = (0..2 * 4).map(|i| (i * 30) as u8).collect();
        let ip = dir.join("img");
        let lp = dir.join("lbl");
        std::fs::write(&ip, write_idx_images(2, 2, &pixels)).unwrap();
        std::fs::write(&lp, write_idx_labels(&[3, 7])).unwrap();
        (ip, lp)
    }

    #[test]
    fn round_trip_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels(), &[3, 7]);
        let want: Vec<f64> = (0..8).map(|i| (i * 30) as f64 / 255.0).collect();
        assert_eq!(ds.inputs().data(), want.as_slice());
    }

    #[test]
    fn wrong_magic_for_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = fixture(dir.path());
        // an image file passed as the label file
        match load_mnist_idx(&ip, &ip) {
            Err(DatasetError::BadMagic { found, expected, .. }) => {
                assert_eq!(found, 2051);
                assert_eq!(expected, 2049);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes.truncate(bytes.len() - 1);
        let short = dir.path().join("short");
        std::fs::write(&short, &bytes).unwrap();
        assert!(matches!(load_mnist_idx(&short, &lp), Err(DatasetError::Truncated { .. })));

        let three = dir.path().join("three");
        std::fs::write(&three, write_idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(
            load_mnist_idx(&ip, &three),
            Err(DatasetError::CountMismatch { images: 2, labels: 3 })
        ));
        assert!(matches!(
            load_mnist_idx(dir.path().join("missing"), &lp),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn label_range_checked() {
        let inputs = Tensor::zeros(&[1, 2]);
        assert!(matches!(Dataset::new(inputs, vec![10], 10), Err(DatasetError::LabelRange { .. })));
    }
}
