use alloc::vec::Vec;

use crate::scalar::Scalar;

/// SpTTM result: each distinct index-mode coordinate tuple owns a dense
/// fiber of length `rank` along `dense_mode`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiSparseTensor<T = f32> {
    pub dims: Vec<usize>,
    pub dense_mode: usize,
    /// Modes that index the fibers, ascending.
    pub index_modes: Vec<usize>,
    /// `nfibers * index_modes.len()` coordinates, lexicographically sorted.
    pub index_coords: Vec<u32>,
    pub rank: usize,
    /// `nfibers * rank` values, row-major.
    pub fibers: Vec<T>,
}

impl<T: Scalar> SemiSparseTensor<T> {
    pub fn nfibers(&self) -> usize {
        self.fibers
            .len()
            .checked_div(self.rank)
            .unwrap_or_else(|| self.index_coords.len() / self.index_modes.len().max(1))
    }

    pub fn coord(&self, s: usize) -> &[u32] {
        let w = self.index_modes.len();
        &self.index_coords[s * w..(s + 1) * w]
    }

    pub fn fiber(&self, s: usize) -> &[T] {
        &self.fibers[s * self.rank..(s + 1) * self.rank]
    }

    /// Looks up the fiber at an index-mode coordinate tuple.
    pub fn find(&self, coord: &[u32]) -> Option<&[T]> {
        let w = self.index_modes.len();
        let n = self.nfibers();
        let (mut lo, mut hi) = (0, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.index_coords[mid * w..(mid + 1) * w].cmp(coord) {
                core::cmp::Ordering::Less => lo = mid + 1,
                core::cmp::Ordering::Greater => hi = mid,
                core::cmp::Ordering::Equal => return Some(self.fiber(mid)),
            }
        }
        None
    }

    /// Relative Frobenius error against `reference`, requiring identical
    /// coordinate sets. Returns `None` when the sparsity patterns differ.
    pub fn rel_err_against<U: Scalar>(&self, reference: &SemiSparseTensor<U>) -> Option<f64> {
        if self.index_coords != reference.index_coords || self.rank != reference.rank {
            return None;
        }
        Some(crate::matrix::rel_err(
            self.fibers.iter().map(|v| v.to_f64()),
            reference.fibers.iter().map(|v| v.to_f64()),
        ))
    }
}
