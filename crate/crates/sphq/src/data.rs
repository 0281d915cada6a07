//! Typed containers for feature matrices, labels, codebooks, codes and class
//! centers.
//!
//! All containers are immutable after construction and safe to share
//! read-only across threads. Values are held as `f64` in memory; the on-disk
//! formats in [`crate::io`] store 32-bit floats.

use crate::error::{Error, Result};

/// Row-major `n x dim` real matrix of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::Invalid(format!(
                "feature matrix must have n >= 1 and dim >= 1, got {n} x {dim}"
            )));
        }
        if values.len() != n * dim {
            return Err(Error::shape(
                "feature matrix",
                format!("{} values", n * dim),
                format!("{}", values.len()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "feature matrix entry {pos} is not finite"
            )));
        }
        Ok(Self { n, dim, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

/// Per-point class labels, each in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    num_classes: u32,
    labels: Vec<u32>,
}

impl LabelVector {
    pub fn new(num_classes: u32, labels: Vec<u32>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Invalid("label vector is empty".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            num_classes,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }
}

/// `m` codebooks of `h` codewords each, every codeword a `p`-dimensional
/// vector. Stored as a contiguous `m x h x p` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    m: usize,
    h: usize,
    p: usize,
    codewords: Vec<f64>,
}

impl Codebooks {
    pub fn new(m: usize, h: usize, p: usize, codewords: Vec<f64>) -> Result<Self> {
        if m == 0 || h < 2 || p == 0 {
            return Err(Error::Invalid(format!(
                "codebooks need m >= 1, h >= 2, p >= 1, got m={m} h={h} p={p}"
            )));
        }
        if h > 256 {
            return Err(Error::Invalid(format!(
                "h = {h} exceeds 256; one-byte subindices cannot address it"
            )));
        }
        if codewords.len() != m * h * p {
            return Err(Error::shape(
                "codebooks",
                format!("{} values", m * h * p),
                format!("{}", codewords.len()),
            ));
        }
        if let Some(pos) = codewords.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "codebook entry {pos} is not finite"
            )));
        }
        Ok(Self { m, h, p, codewords })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.codewords
    }

    /// Codeword `c` of codebook `j`.
    pub fn codeword(&self, j: usize, c: usize) -> &[f64] {
        let start = (j * self.h + c) * self.p;
        &self.codewords[start..start + self.p]
    }

    /// Sum of the selected codewords, one per codebook.
    pub fn reconstruct(&self, code: &[u8]) -> Vec<f64> {
        debug_assert_eq!(code.len(), self.m);
        let mut out = vec![0.0; self.p];
        for (j, &c) in code.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.codeword(j, c as usize)) {
                *o += v;
            }
        }
        out
    }
}

/// Compact `n x m` matrix of codeword subindices, each in `[0, h)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    n: usize,
    m: usize,
    h: usize,
    codes: Vec<u8>,
}

impl CodeMatrix {
    pub fn new(n: usize, m: usize, h: usize, codes: Vec<u8>) -> Result<Self> {
        if m == 0 || !(2..=256).contains(&h) {
            return Err(Error::Invalid(format!(
                "code matrix needs m >= 1 and 2 <= h <= 256, got m={m} h={h}"
            )));
        }
        if codes.len() != n * m {
            return Err(Error::shape(
                "code matrix",
                format!("{} indices", n * m),
                format!("{}", codes.len()),
            ));
        }
        if let Some(&bad) = codes.iter().find(|&&c| (c as usize) >= h) {
            return Err(Error::Invalid(format!(
                "subindex {bad} out of range for h = {h}"
            )));
        }
        Ok(Self { n, m, h, codes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.codes[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.codes.chunks_exact(self.m)
    }
}

/// One `p`-dimensional center per class.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterTable {
    l: usize,
    p: usize,
    centers: Vec<f64>,
}

impl CenterTable {
    pub fn new(l: usize, p: usize, centers: Vec<f64>) -> Result<Self> {
        if l == 0 || p == 0 {
            return Err(Error::Invalid(format!(
                "center table needs l >= 1 and p >= 1, got l={l} p={p}"
            )));
        }
        if centers.len() != l * p {
            return Err(Error::shape(
                "center table",
                format!("{} values", l * p),
                format!("{}", centers.len()),
            ));
        }
        if let Some(pos) = centers.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("center entry {pos} is not finite")));
        }
        Ok(Self { l, p, centers })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.centers
    }

    pub fn center(&self, class: usize) -> &[f64] {
        &self.centers[class * self.p..(class + 1) * self.p]
    }

    pub(crate) fn center_mut(&mut self, class: usize) -> &mut [f64] {
        &mut self.centers[class * self.p..(class + 1) * self.p]
    }
}

/// Norm below which a row is considered to have no usable direction.
pub const ZERO_ROW_TOLERANCE: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Scale every row to unit Euclidean norm. Rows with norm below
/// [`ZERO_ROW_TOLERANCE`] are an error because their direction is undefined.
pub fn l2_normalize_rows(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut values = Vec::with_capacity(matrix.n() * matrix.dim());
    for (i, row) in matrix.rows().enumerate() {
        let nrm = norm(row);
        if nrm < ZERO_ROW_TOLERANCE {
            return Err(Error::ZeroRow { row: i, norm: nrm });
        }
        values.extend(row.iter().map(|v| v / nrm));
    }
    FeatureMatrix::new(matrix.n(), matrix.dim(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_three_four_five() {
        let m = FeatureMatrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        let out = l2_normalize_rows(&m).unwrap();
        assert!((out.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((out.row(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_row_is_identity() {
        let m = FeatureMatrix::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let out = l2_normalize_rows(&m).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_row_errors() {
        let m = FeatureMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        match l2_normalize_rows(&m) {
            Err(Error::ZeroRow { row, .. }) => assert_eq!(row, 0),
            other => panic!("expected zero-row error, got {other:?}"),
        }
    }

    #[test]
    fn reconstruct_sums_selected_codewords() {
        let books = Codebooks::new(
            2,
            2,
            2,
            vec![
                1.0, 0.0, // book 0 word 0
                0.0, 1.0, // book 0 word 1
                2.0, 0.0, // book 1 word 0
                0.0, 2.0, // book 1 word 1
            ],
        )
        .unwrap();
        assert_eq!(books.reconstruct(&[0, 1]), vec![1.0, 2.0]);
        assert_eq!(books.reconstruct(&[1, 0]), vec![2.0, 1.0]);
    }

    #[test]
    fn code_matrix_rejects_out_of_range() {
        assert!(CodeMatrix::new(1, 2, 4, vec![0, 4]).is_err());
        assert!(CodeMatrix::new(1, 2, 4, vec![0, 3]).is_ok());
    }

    #[test]
    fn codebooks_reject_h_above_256() {
        assert!(Codebooks::new(1, 257, 1, vec![0.0; 257]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Codebooks::new(1, 2, 1, vec![1.0, f64::INFINITY]).is_err());
        assert!(CenterTable::new(1, 2, vec![f64::NEG_INFINITY, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(rows in proptest::collection::vec(
            proptest::collection::vec(-100.0f64..100.0, 4), 1..8)
        ) {
            let n = rows.len();
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            prop_assume!(flat.chunks(4).all(|r| norm(r) > 1e-6));
            let m = FeatureMatrix::new(n, 4, flat).unwrap();
            let once = l2_normalize_rows(&m).unwrap();
            let twice = l2_normalize_rows(&once).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for row in once.rows() {
                prop_assert!((norm(row) - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn normalize_is_scale_invariant(
            row in proptest::collection::vec(-100.0f64..100.0, 6),
            scale in 1e-3f64..1e3,
        ) {
            prop_assume!(norm(&row) > 1e-6);
            let m = FeatureMatrix::new(1, 6, row.clone()).unwrap();
            let scaled = FeatureMatrix::new(1, 6, row.iter().map(|v| v * scale).collect()).unwrap();
            let a = l2_normalize_rows(&m).unwrap();
            let b = l2_normalize_rows(&scaled).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
