//! Speech- and face-identity similarity matrices and the row-wise Pearson
//! resemblance objective between them.
//!
//! Entries are cosine similarities. Pearson correlation is invariant under a
//! simultaneous negative-affine map of both rows, so using `1 - cos` instead
//! would leave the objective and every argmax unchanged.

use crate::domain::Embedding;
use crate::error::{Error, Result};

/// Sum-of-squares below which a row is treated as constant.
///
/// Similarities are bounded by 1, so rounding noise on a constant row stays
/// many orders of magnitude below this.
pub const VARIANCE_FLOOR: f64 = 1e-20;

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(cosine_unchecked(a, b))
}

#[inline]
pub(crate) fn cosine_unchecked(a: &Embedding, b: &Embedding) -> f64 {
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    (dot / (a.norm() * b.norm())).clamp(-1.0, 1.0)
}

/// Pearson correlation of two equal-length rows; 0 when either row is constant.
pub fn row_pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSegments(x.len()));
    }
    Ok(pearson_unchecked(x, y))
}

pub(crate) fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= VARIANCE_FLOOR || syy <= VARIANCE_FLOOR {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Symmetric matrix with unit diagonal; `f` is evaluated once per pair `i < j`.
    pub(crate) fn symmetric_unit(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in (i + 1)..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::LengthMismatch {
                    left: row.len(),
                    right: n,
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Overwrites row `i` and column `i` with `values`.
    pub(crate) fn set_cross(&mut self, i: usize, values: &[f64]) {
        let n = self.n;
        for (j, &v) in values.iter().enumerate() {
            self.data[i * n + j] = v;
            self.data[j * n + i] = v;
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Paired speech (`sd`) and face (`fd`) similarity matrices over one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityMatrices {
    pub sd: SquareMatrix,
    pub fd: SquareMatrix,
    pub segment_order: Vec<String>,
}

impl IdentityMatrices {
    pub fn new(sd: SquareMatrix, fd: SquareMatrix, segment_order: Vec<String>) -> Result<Self> {
        if sd.n() != fd.n() || sd.n() != segment_order.len() {
            return Err(Error::LengthMismatch {
                left: sd.n(),
                right: fd.n(),
            });
        }
        Ok(Self { sd, fd, segment_order })
    }

    pub fn n(&self) -> usize {
        self.sd.n()
    }

    /// Replaces segment `i`'s face row and column.
    pub fn update_fd(&mut self, i: usize, row: &[f64]) {
        self.fd.set_cross(i, row);
    }
}

/// Speech-identity matrix over segment embeddings in partition order.
pub fn build_sd(embeddings: &[&Embedding]) -> Result<SquareMatrix> {
    similarity_matrix(embeddings)
}

/// Face-identity matrix over the embeddings of each segment's assigned track.
///
/// `assigned[i]` is `None` when segment `i` has no assignment, which is an error.
pub fn build_fd(assigned: &[Option<&Embedding>], segment_order: &[String]) -> Result<SquareMatrix> {
    let embeddings = assigned
        .iter()
        .zip(segment_order)
        .map(|(e, id)| e.ok_or_else(|| Error::Unassigned(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    similarity_matrix(&embeddings)
}

fn similarity_matrix(embeddings: &[&Embedding]) -> Result<SquareMatrix> {
    if embeddings.len() < 2 {
        return Err(Error::TooFewSegments(embeddings.len()));
    }
    let dim = embeddings[0].dim();
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: bad.dim(),
        });
    }
    Ok(SquareMatrix::symmetric_unit(embeddings.len(), |i, j| {
        cosine_unchecked(embeddings[i], embeddings[j])
    }))
}

/// Mean over rows of the Pearson correlation between `sd[i]` and `fd[i]`.
pub fn objective(m: &IdentityMatrices) -> f64 {
    let n = m.n();
    let total: f64 = (0..n).map(|i| pearson_unchecked(m.sd.row(i), m.fd.row(i))).sum();
    total / n as f64
}

/// The face row segment `i` would have if assigned `candidate`, given the
/// embeddings currently assigned to every segment.
pub fn candidate_fd_row(i: usize, candidate: &Embedding, assigned: &[&Embedding]) -> Vec<f64> {
    assigned
        .iter()
        .enumerate()
        .map(|(j, e)| if j == i { 1.0 } else { cosine_unchecked(candidate, e) })
        .collect()
}

/// Row-`i` correlation after hypothetically assigning `candidate` to segment `i`.
/// Leaves `m` untouched.
pub fn row_objective_delta(m: &IdentityMatrices, i: usize, candidate: &Embedding, assigned: &[&Embedding]) -> f64 {
    let row = candidate_fd_row(i, candidate, assigned);
    pearson_unchecked(m.sd.row(i), &row)
}
