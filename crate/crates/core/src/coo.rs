//! Order-N coordinate tensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Largest extent representable with 32-bit zero-based coordinates.
pub const MAX_EXTENT: u64 = 1 << 32;

/// Coordinate-format sparse tensor with 32-bit indices and `f32` values.
///
/// Coordinates are stored row-major: nonzero `n` owns
/// `indices[n * order..(n + 1) * order]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooTensor {
    dims: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl CooTensor {
    pub fn new(dims: Vec<usize>, indices: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        let order = dims.len();
        if order == 0 {
            return Err(Error::InvalidArgument("tensor order must be positive".into()));
        }
        if let Some(m) = dims.iter().position(|&d| d == 0 || d as u64 > MAX_EXTENT) {
            return Err(Error::InvalidArgument(format!("extent of mode {m} is {}", dims[m])));
        }
        if indices.len() != values.len() * order {
            return Err(Error::Shape(format!(
                "{} coordinates do not match {} values of order {order}",
                indices.len(),
                values.len()
            )));
        }
        for row in indices.chunks_exact(order) {
            for (mode, (&c, &d)) in row.iter().zip(&dims).enumerate() {
                if c as usize >= d {
                    return Err(Error::IndexOutOfRange { mode, coord: c as u64, extent: d });
                }
            }
        }
        Ok(Self { dims, indices, values })
    }

    /// An empty tensor with the given extents.
    pub fn empty(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, Vec::new(), Vec::new())
    }

    /// Builds from `(coordinate, value)` pairs.
    pub fn from_entries<C: AsRef<[u32]>>(dims: Vec<usize>, entries: &[(C, f32)]) -> Result<Self> {
        let order = dims.len();
        let mut indices = Vec::with_capacity(entries.len() * order);
        let mut values = Vec::with_capacity(entries.len());
        for (c, v) in entries {
            let c = c.as_ref();
            if c.len() != order {
                return Err(Error::Shape(format!("coordinate of arity {} in order-{order} tensor", c.len())));
            }
            indices.extend_from_slice(c);
            values.push(*v);
        }
        Self::new(dims, indices, values)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn coord(&self, n: usize) -> &[u32] {
        let o = self.order();
        &self.indices[n * o..(n + 1) * o]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], f32)> + '_ {
        self.indices.chunks_exact(self.order()).zip(self.values.iter().copied())
    }

    /// Returns a copy with every value multiplied by `alpha`.
    pub fn scaled(&self, alpha: f32) -> Self {
        Self {
            dims: self.dims.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }

    /// Sum of squared values, in `f64`.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    /// Reorders nonzeros by `perm`, where `perm[n]` is the source row of row `n`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let o = self.order();
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for &p in perm {
            indices.extend_from_slice(&self.indices[p * o..(p + 1) * o]);
            values.push(self.values[p]);
        }
        Self { dims: self.dims.clone(), indices, values }
    }
}

fn check_permutation(order: usize, modes: &[usize]) -> Result<()> {
    let mut seen = vec![false; order];
    if modes.len() != order {
        return Err(Error::InvalidArgument(format!("{modes:?} is not a permutation of 0..{order}")));
    }
    for &m in modes {
        if m >= order || seen[m] {
            return Err(Error::InvalidArgument(format!("{modes:?} is not a permutation of 0..{order}")));
        }
        seen[m] = true;
    }
    Ok(())
}

/// Stable lexicographic sort with `major_modes` as key order. Duplicate
/// coordinates are merged by summing their values.
pub fn sort_lex(t: &CooTensor, major_modes: &[usize]) -> Result<CooTensor> {
    let order = t.order();
    check_permutation(order, major_modes)?;
    let cmp = |a: usize, b: usize| -> Ordering {
        let (ca, cb) = (t.coord(a), t.coord(b));
        major_modes.iter().map(|&m| ca[m].cmp(&cb[m])).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    };
    let mut perm: Vec<usize> = (0..t.nnz()).collect();
    perm.sort_by(|&a, &b| cmp(a, b));

    let mut indices = Vec::with_capacity(t.indices.len());
    let mut values = Vec::with_capacity(t.nnz());
    let mut i = 0;
    while i < perm.len() {
        let mut sum = t.values[perm[i]] as f64;
        let mut j = i + 1;
        while j < perm.len() && cmp(perm[i], perm[j]) == Ordering::Equal {
            sum += t.values[perm[j]] as f64;
            j += 1;
        }
        indices.extend_from_slice(t.coord(perm[i]));
        values.push(sum as f32);
        i = j;
    }
    Ok(CooTensor { dims: t.dims.clone(), indices, values })
}

/// Sparse matrix in coordinate form, as produced by [`matricize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: u64,
    pub entries: Vec<(u32, u64, f32)>,
}

/// Mode-`n` unfolding. The remaining modes vary fastest in increasing mode
/// order: column `c = sum_{m != n} i_m * prod_{m' < m, m' != n} dims[m']`.
pub fn matricize(t: &CooTensor, n: usize) -> Result<SparseMatrix> {
    let order = t.order();
    if n >= order {
        return Err(Error::InvalidArgument(format!("mode {n} out of range for order {order}")));
    }
    let mut strides = vec![0u64; order];
    let mut cols: u64 = 1;
    for m in (0..order).filter(|&m| m != n) {
        strides[m] = cols;
        cols = cols
            .checked_mul(t.dims[m] as u64)
            .ok_or_else(|| Error::Overflow(format!("mode-{n} unfolding of {:?} has too many columns", t.dims)))?;
    }
    let entries = t
        .iter()
        .map(|(c, v)| {
            let col = c.iter().zip(&strides).map(|(&i, &s)| i as u64 * s).sum();
            (c[n], col, v)
        })
        .collect();
    Ok(SparseMatrix { rows: t.dims[n], cols, entries })
}

/// CP model `[lambda; A_0, ..., A_{N-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    pub lambda: Vec<f64>,
    pub factors: Vec<DenseMatrix<f64>>,
}

impl KruskalModel {
    pub fn new(lambda: Vec<f64>, factors: Vec<DenseMatrix<f64>>) -> Result<Self> {
        let rank = lambda.len();
        if let Some(f) = factors.iter().find(|f| f.cols() != rank) {
            return Err(Error::Shape(format!("factor with {} columns in a rank-{rank} model", f.cols())));
        }
        Ok(Self { lambda, factors })
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    /// Model value at one coordinate.
    pub fn eval(&self, coord: &[u32]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .zip(coord)
                    .fold(self.lambda[r], |acc, (f, &i)| acc * f.get(i as usize, r))
            })
            .sum()
    }
}

/// Entry-count guard for dense materialization.
pub const MAX_DENSE_ENTRIES: usize = 10_000_000;

/// Materializes a Kruskal model over `dims`, dropping entries with absolute
/// value at or below `1e-12`. Rows come out in lexicographic order.
pub fn from_kruskal(m: &KruskalModel, dims: &[usize]) -> Result<CooTensor> {
    if m.factors.len() != dims.len() {
        return Err(Error::Shape(format!("{} factors for order {}", m.factors.len(), dims.len())));
    }
    for (n, (f, &d)) in m.factors.iter().zip(dims).enumerate() {
        if f.rows() != d || f.cols() != m.rank() {
            return Err(Error::Shape(format!(
                "factor {n} is {:?}, expected ({d}, {})",
                f.shape(),
                m.rank()
            )));
        }
    }
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&t| t <= MAX_DENSE_ENTRIES)
        .ok_or_else(|| Error::Overflow(format!("dense materialization of {dims:?}")))?;

    let order = dims.len();
    let mut coord = vec![0u32; order];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for _ in 0..total {
        let v = m.eval(&coord);
        if libm::fabs(v) > 1e-12 {
            indices.extend_from_slice(&coord);
            values.push(v as f32);
        }
        // odometer, last mode fastest
        for mode in (0..order).rev() {
            coord[mode] += 1;
            if (coord[mode] as usize) < dims[mode] {
                break;
            }
            coord[mode] = 0;
        }
    }
    CooTensor::new(dims.to_vec(), indices, values)
}

/// `nnz` distinct uniformly sampled coordinates with values in `(0, 1]`.
/// Deterministic for a fixed seed; rows are in sampling order.
pub fn random_coo(dims: &[usize], nnz: usize, seed: u64) -> Result<CooTensor> {
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Overflow(format!("coordinate space of {dims:?}")))?;
    if nnz > total {
        return Err(Error::InvalidArgument(format!(
            "cannot place {nnz} distinct nonzeros in {total} coordinates"
        )));
    }
    if dims.is_empty() || dims.iter().any(|&d| d == 0 || d as u64 > MAX_EXTENT) {
        return Err(Error::InvalidArgument(format!("invalid extents {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, total, nnz);
    let order = dims.len();
    let mut indices = Vec::with_capacity(nnz * order);
    let mut values = Vec::with_capacity(nnz);
    let mut coord = vec![0u32; order];
    for lin in picks.iter() {
        let mut rem = lin;
        for mode in (0..order).rev() {
            coord[mode] = (rem % dims[mode]) as u32;
            rem /= dims[mode];
        }
        indices.extend_from_slice(&coord);
        values.push(1.0 - rng.gen::<f32>());
    }
    CooTensor::new(dims.to_vec(), indices, values)
}
