//! Flagged coordinate (F-COO) storage.
//!
//! An F-COO tensor is specialized for one `(operation, mode)` pair. Only the
//! product-mode coordinates are kept per nonzero; the index modes are encoded
//! as a bit-flag (`bf`) marking the first nonzero of every index-mode tuple
//! (a segment head) and a start-flag (`sf`) marking partitions that begin
//! with a head. The index-mode tuple of each segment is kept once in a
//! per-segment table.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::coo::{sort_lex, CooTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    SpTtm,
    SpMttkrp,
    SpTtmc,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::SpTtm, Op::SpMttkrp, Op::SpTtmc];

    pub fn name(self) -> &'static str {
        match self {
            Op::SpTtm => "spttm",
            Op::SpMttkrp => "spmttkrp",
            Op::SpTtmc => "spttmc",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spttm" | "ttm" => Ok(Op::SpTtm),
            "spmttkrp" | "mttkrp" => Ok(Op::SpMttkrp),
            "spttmc" | "ttmc" => Ok(Op::SpTtmc),
            _ => Err(Error::InvalidArgument(format!("unknown operation {s:?}"))),
        }
    }
}

/// An operation applied on a target mode (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpKind {
    pub kind: Op,
    pub mode: usize,
}

impl OpKind {
    pub fn new(kind: Op, mode: usize) -> Result<Self> {
        if mode >= 3 {
            return Err(Error::InvalidArgument(format!("mode {mode} out of range for an order-3 tensor")));
        }
        Ok(Self { kind, mode })
    }
}

/// Product/index mode split of an operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSpec {
    pub product_modes: Vec<usize>,
    pub index_modes: Vec<usize>,
}

/// SpTTM multiplies along its target mode and is indexed by the other two;
/// SpMTTKRP and SpTTMc are indexed by the target mode and multiply along
/// the other two (ascending).
pub fn mode_spec(op: OpKind) -> ModeSpec {
    let others: Vec<usize> = (0..3).filter(|&m| m != op.mode).collect();
    match op.kind {
        Op::SpTtm => ModeSpec { product_modes: vec![op.mode], index_modes: others },
        Op::SpMttkrp | Op::SpTtmc => ModeSpec { product_modes: others, index_modes: vec![op.mode] },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcooTensor {
    op: OpKind,
    spec: ModeSpec,
    dims: Vec<usize>,
    product_indices: Vec<Vec<u32>>,
    values: Vec<f32>,
    bf: Vec<u8>,
    sf: Vec<u32>,
    seg_coords: Vec<u32>,
    threadlen: usize,
}

impl FcooTensor {
    #[inline]
    pub fn op(&self) -> OpKind {
        self.op
    }

    #[inline]
    pub fn spec(&self) -> &ModeSpec {
        &self.spec
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Coordinates of the `p`-th product mode (in `spec().product_modes`
    /// order), one per nonzero.
    #[inline]
    pub fn product_indices(&self, p: usize) -> &[u32] {
        &self.product_indices[p]
    }

    #[inline]
    pub fn bf_words(&self) -> &[u8] {
        &self.bf
    }

    #[inline]
    pub fn sf_words(&self) -> &[u32] {
        &self.sf
    }

    #[inline]
    pub fn threadlen(&self) -> usize {
        self.threadlen
    }

    #[inline]
    pub fn npartitions(&self) -> usize {
        self.nnz().div_ceil(self.threadlen)
    }

    #[inline]
    pub fn nsegs(&self) -> usize {
        self.seg_coords.len() / self.spec.index_modes.len()
    }

    /// Flat per-segment table of index-mode tuples.
    #[inline]
    pub fn seg_coords(&self) -> &[u32] {
        &self.seg_coords
    }

    #[inline]
    pub fn seg_coord(&self, s: usize) -> &[u32] {
        let w = self.spec.index_modes.len();
        &self.seg_coords[s * w..(s + 1) * w]
    }

    /// True when nonzero `n` starts a new segment.
    #[inline]
    pub fn is_head(&self, n: usize) -> bool {
        self.bf[n / 8] >> (n % 8) & 1 == 1
    }

    /// True when partition `p` starts with a segment head.
    #[inline]
    pub fn starts_segment(&self, p: usize) -> bool {
        self.sf[p / 32] >> (p % 32) & 1 == 1
    }

    pub fn bf_bits(&self) -> Vec<bool> {
        (0..self.nnz()).map(|n| self.is_head(n)).collect()
    }

    pub fn sf_bits(&self) -> Vec<bool> {
        (0..self.npartitions()).map(|p| self.starts_segment(p)).collect()
    }

    /// Number of heads among nonzeros `start..end`.
    pub fn count_heads(&self, start: usize, end: usize) -> usize {
        if start >= end {
            return 0;
        }
        let (wa, wb) = (start / 8, (end - 1) / 8);
        let lo_mask = 0xffu8 << (start % 8);
        let hi_mask = 0xffu8 >> (7 - (end - 1) % 8);
        if wa == wb {
            return (self.bf[wa] & lo_mask & hi_mask).count_ones() as usize;
        }
        let mut count = (self.bf[wa] & lo_mask).count_ones() + (self.bf[wb] & hi_mask).count_ones();
        count += self.bf[wa + 1..wb].iter().map(|w| w.count_ones()).sum::<u32>();
        count as usize
    }

    /// Flips the bit-flag of nonzero `n`. Used to exercise validation.
    #[doc(hidden)]
    pub fn flip_bf_bit(&mut self, n: usize) {
        self.bf[n / 8] ^= 1 << (n % 8);
    }

    /// Overwrites a stored value. Used to exercise oracle checks.
    #[doc(hidden)]
    pub fn set_value(&mut self, n: usize, v: f32) {
        self.values[n] = v;
    }
}

/// Builds the F-COO layout of `t` for `op`, with `threadlen` nonzeros per
/// partition. Nonzeros are sorted with the index modes as major keys and
/// duplicates are merged.
pub fn build_fcoo(t: &CooTensor, op: OpKind, threadlen: usize) -> Result<FcooTensor> {
    if t.order() != 3 {
        return Err(Error::Order(t.order()));
    }
    if op.mode >= 3 {
        return Err(Error::InvalidArgument(format!("mode {} out of range", op.mode)));
    }
    if threadlen == 0 {
        return Err(Error::InvalidArgument("threadlen must be at least 1".into()));
    }
    if t.nnz() == 0 {
        return Err(Error::Empty);
    }
    let spec = mode_spec(op);
    let keys: Vec<usize> = spec.index_modes.iter().chain(&spec.product_modes).copied().collect();
    let sorted = sort_lex(t, &keys)?;
    let nnz = sorted.nnz();

    let product_indices: Vec<Vec<u32>> = spec
        .product_modes
        .iter()
        .map(|&m| sorted.iter().map(|(c, _)| c[m]).collect())
        .collect();

    let mut bf = vec![0u8; nnz.div_ceil(8)];
    let mut seg_coords = Vec::new();
    let mut prev: Option<&[u32]> = None;
    for (n, (c, _)) in sorted.iter().enumerate() {
        let head = prev.is_none_or(|p| spec.index_modes.iter().any(|&m| p[m] != c[m]));
        if head {
            bf[n / 8] |= 1 << (n % 8);
            seg_coords.extend(spec.index_modes.iter().map(|&m| c[m]));
        }
        prev = Some(c);
    }

    let npartitions = nnz.div_ceil(threadlen);
    let mut sf = vec![0u32; npartitions.div_ceil(32)];
    for p in 0..npartitions {
        let n = p * threadlen;
        if bf[n / 8] >> (n % 8) & 1 == 1 {
            sf[p / 32] |= 1 << (p % 32);
        }
    }

    Ok(FcooTensor {
        op,
        spec,
        dims: sorted.dims().to_vec(),
        values: sorted.values().to_vec(),
        product_indices,
        bf,
        sf,
        seg_coords,
        threadlen,
    })
}

/// Byte accounting of an F-COO tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageBytes {
    /// Product-mode indices, values, packed bit-flag and packed start-flag.
    pub core_bytes: u64,
    /// Per-segment index-mode coordinate table.
    pub seg_table_bytes: u64,
    /// Plain COO with 32-bit indices and values, for comparison.
    pub coo_bytes: u64,
}

impl StorageBytes {
    /// Accounting for an order-3 tensor with the given geometry.
    pub fn for_geometry(op: Op, nnz: u64, threadlen: u64, nsegs: u64) -> Self {
        let product_modes: u64 = match op {
            Op::SpTtm => 1,
            Op::SpMttkrp | Op::SpTtmc => 2,
        };
        let index_modes = 3 - product_modes;
        let npartitions = nnz.div_ceil(threadlen.max(1));
        Self {
            core_bytes: (4 * product_modes + 4) * nnz + nnz.div_ceil(8) + 4 * npartitions.div_ceil(32),
            seg_table_bytes: 4 * index_modes * nsegs,
            coo_bytes: 16 * nnz,
        }
    }
}

pub fn storage_bytes(f: &FcooTensor) -> StorageBytes {
    StorageBytes::for_geometry(f.op.kind, f.nnz() as u64, f.threadlen as u64, f.nsegs() as u64)
}

/// Recomputes flags, segment table and product coordinates of `f` from `t`
/// directly and reports the first disagreement.
pub fn validate_flags(f: &FcooTensor, t: &CooTensor) -> Result<()> {
    let spec = mode_spec(f.op);
    if spec != f.spec {
        return Err(Error::FlagMismatch(format!("mode spec {:?} does not match {:?}", f.spec, f.op)));
    }
    // Independent ordering: materialize (index tuple, product tuple) keys and
    // merge equal coordinates.
    let mut rows: Vec<([u32; 3], f64)> = t
        .iter()
        .map(|(c, v)| {
            let mut key = [0u32; 3];
            for (slot, &m) in key.iter_mut().zip(spec.index_modes.iter().chain(&spec.product_modes)) {
                *slot = c[m];
            }
            (key, v as f64)
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    let mut merged: Vec<([u32; 3], f64)> = Vec::with_capacity(rows.len());
    for (k, v) in rows {
        match merged.last_mut() {
            Some(last) if last.0 == k => last.1 += v,
            _ => merged.push((k, v)),
        }
    }

    if merged.len() != f.nnz() {
        return Err(Error::FlagMismatch(format!("nnz {} != expected {}", f.nnz(), merged.len())));
    }
    let ni = spec.index_modes.len();
    let mut segs: Vec<u32> = Vec::new();
    for (n, (key, v)) in merged.iter().enumerate() {
        let head = n == 0 || merged[n - 1].0[..ni] != key[..ni];
        if head != f.is_head(n) {
            return Err(Error::FlagMismatch(format!("bf[{n}] is {}, expected {}", f.is_head(n) as u8, head as u8)));
        }
        if head {
            segs.extend_from_slice(&key[..ni]);
        }
        for (p, &m) in spec.product_modes.iter().enumerate() {
            if f.product_indices[p][n] != key[ni + p] {
                return Err(Error::FlagMismatch(format!("product index of mode {m} at {n} differs")));
            }
            if f.product_indices[p][n] as usize >= f.dims[m] {
                return Err(Error::FlagMismatch(format!("product index of mode {m} at {n} out of range")));
            }
        }
        if f.values[n] != *v as f32 {
            return Err(Error::FlagMismatch(format!("value at {n} differs")));
        }
    }
    if f.bf.len() != f.nnz().div_ceil(8) || (!f.nnz().is_multiple_of(8) && f.bf[f.bf.len() - 1] >> (f.nnz() % 8) != 0) {
        return Err(Error::FlagMismatch("bf has wrong length or padding bits set".into()));
    }
    if segs != f.seg_coords {
        return Err(Error::FlagMismatch(format!(
            "segment table has {} segments, expected {}",
            f.nsegs(),
            segs.len() / ni
        )));
    }
    let np = merged.len().div_ceil(f.threadlen);
    if f.sf.len() != np.div_ceil(32) {
        return Err(Error::FlagMismatch(format!("sf has {} words for {np} partitions", f.sf.len())));
    }
    for p in 0..np {
        let expected = p == 0 || merged[p * f.threadlen - 1].0[..ni] != merged[p * f.threadlen].0[..ni];
        if expected != f.starts_segment(p) {
            return Err(Error::FlagMismatch(format!("sf[{p}] is {}, expected {}", f.starts_segment(p) as u8, expected as u8)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coo::random_coo;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn along_i(i_seq: &[u32]) -> CooTensor {
        // product coordinates increase along the run so rows stay in order
        let entries: Vec<([u32; 3], f32)> =
            i_seq.iter().enumerate().map(|(n, &i)| ([i, n as u32, 0], 1.0 + n as f32)).collect();
        CooTensor::from_entries(vec![3, i_seq.len(), 1], &entries).unwrap()
    }

    fn mttkrp(mode: usize) -> OpKind {
        OpKind::new(Op::SpMttkrp, mode).unwrap()
    }

    #[test]
    fn mode_table() {
        let s = mode_spec(OpKind::new(Op::SpTtm, 2).unwrap());
        assert_eq!((s.product_modes, s.index_modes), (vec![2], vec![0, 1]));
        let s = mode_spec(mttkrp(0));
        assert_eq!((s.product_modes, s.index_modes), (vec![1, 2], vec![0]));
        let s = mode_spec(OpKind::new(Op::SpTtmc, 0).unwrap());
        assert_eq!((s.product_modes, s.index_modes), (vec![1, 2], vec![0]));
        let s = mode_spec(OpKind::new(Op::SpTtm, 1).unwrap());
        assert_eq!((s.product_modes, s.index_modes), (vec![1], vec![0, 2]));
        assert!(OpKind::new(Op::SpTtm, 3).is_err());
    }

    #[test]
    fn flags_for_three_segments() {
        let f = build_fcoo(&along_i(&[0, 0, 1, 1, 2]), mttkrp(0), 2).unwrap();
        assert_eq!(f.bf_bits(), [true, false, true, false, true]);
        assert_eq!(f.npartitions(), 3);
        assert_eq!(f.sf_bits(), [true, true, true]);
        assert_eq!(f.seg_coords(), &[0, 1, 2]);
    }

    #[test]
    fn segment_spanning_partition_boundary() {
        let f = build_fcoo(&along_i(&[0, 0, 0, 1]), mttkrp(0), 2).unwrap();
        assert_eq!(f.bf_bits(), [true, false, false, true]);
        assert_eq!(f.sf_bits(), [true, false]);
    }

    #[test]
    fn singleton_tensor() {
        let t = CooTensor::from_entries(vec![2, 2, 2], &[([1u32, 0, 1], 4.0)]).unwrap();
        for kind in Op::ALL {
            for mode in 0..3 {
                let f = build_fcoo(&t, OpKind::new(kind, mode).unwrap(), 4).unwrap();
                assert_eq!((f.bf_bits(), f.sf_bits(), f.nsegs()), (vec![true], vec![true], 1));
            }
        }
    }

    #[test]
    fn build_errors() {
        let t = random_coo(&[3, 3], 4, 1).unwrap();
        assert_eq!(build_fcoo(&t, mttkrp(0), 2).unwrap_err(), Error::Order(2));
        let t = CooTensor::empty(vec![3, 3, 3]).unwrap();
        assert_eq!(build_fcoo(&t, mttkrp(0), 2).unwrap_err(), Error::Empty);
        let t = random_coo(&[3, 3, 3], 4, 1).unwrap();
        assert!(build_fcoo(&t, mttkrp(0), 0).is_err());
    }

    #[test]
    fn storage_table_values() {
        let ttm = StorageBytes::for_geometry(Op::SpTtm, 1024, 8, 0);
        assert_eq!(ttm.core_bytes, 8336);
        let mttkrp = StorageBytes::for_geometry(Op::SpMttkrp, 1024, 8, 0);
        assert_eq!(mttkrp.core_bytes, 12432);
        assert_eq!(mttkrp.coo_bytes, 16384);
        assert_eq!(StorageBytes::for_geometry(Op::SpTtm, 10, 3, 4).seg_table_bytes, 32);
    }

    #[test]
    fn count_heads_matches_bits() {
        let t = random_coo(&[5, 9, 13], 300, 3).unwrap();
        let f = build_fcoo(&t, OpKind::new(Op::SpTtm, 2).unwrap(), 7).unwrap();
        let bits = f.bf_bits();
        for start in [0, 1, 7, 8, 9, 63, 64, 150] {
            for end in [start, start + 1, start + 8, start + 17, 299, 300] {
                if end < start || end > 300 {
                    continue;
                }
                assert_eq!(f.count_heads(start, end), bits[start..end].iter().filter(|&&b| b).count());
            }
        }
    }

    #[test]
    fn validate_detects_flipped_bit() {
        let t = random_coo(&[6, 6, 6], 80, 4).unwrap();
        let mut f = build_fcoo(&t, mttkrp(1), 8).unwrap();
        validate_flags(&f, &t).unwrap();
        f.flip_bf_bit(5);
        assert!(matches!(validate_flags(&f, &t), Err(Error::FlagMismatch(_))));
    }

    proptest! {
        #[test]
        fn flags_valid_for_all_ops(
            seed in any::<u64>(), nnz in 1usize..300, kind in 0usize..3, mode in 0usize..3,
            threadlen in prop::sample::select(vec![1usize, 2, 8, 32]),
        ) {
            let t = random_coo(&[7, 5, 9], nnz, seed).unwrap();
            let op = OpKind::new(Op::ALL[kind], mode).unwrap();
            let f = build_fcoo(&t, op, threadlen).unwrap();
            validate_flags(&f, &t).unwrap();
            let spec = mode_spec(op);
            let distinct: BTreeSet<Vec<u32>> =
                t.iter().map(|(c, _)| spec.index_modes.iter().map(|&m| c[m]).collect()).collect();
            prop_assert_eq!(f.nsegs(), distinct.len());
            prop_assert_eq!(f.bf_bits().iter().filter(|&&b| b).count(), f.nsegs());
            for p in 1..f.npartitions() {
                prop_assert_eq!(f.starts_segment(p), f.is_head(p * threadlen));
            }
            prop_assert!(f.starts_segment(0));
            let s = storage_bytes(&f);
            let per_nnz = 4 * spec.product_modes.len() as u64 + 4;
            let n = nnz as u64;
            let np = f.npartitions() as u64;
            prop_assert_eq!(s.core_bytes, per_nnz * n + n.div_ceil(8) + 4 * np.div_ceil(32));
            // a lone nonzero pays a whole bf byte and sf word
            if nnz >= 2 {
                prop_assert!(s.core_bytes < s.coo_bytes);
            }
        }

        #[test]
        fn rebuilding_for_other_mode_keeps_entries(seed in any::<u64>(), nnz in 1usize..200) {
            let t = random_coo(&[6, 7, 8], nnz, seed).unwrap();
            let mut sets = Vec::new();
            for kind in Op::ALL {
                for mode in 0..3 {
                    let op = OpKind::new(kind, mode).unwrap();
                    let f = build_fcoo(&t, op, 4).unwrap();
                    let spec = mode_spec(op);
                    let mut entries = BTreeSet::new();
                    let mut seg = 0usize;
                    for n in 0..f.nnz() {
                        if n > 0 && f.is_head(n) {
                            seg += 1;
                        }
                        let mut c = [0u32; 3];
                        for (w, &m) in spec.index_modes.iter().enumerate() {
                            c[m] = f.seg_coord(seg)[w];
                        }
                        for (p, &m) in spec.product_modes.iter().enumerate() {
                            c[m] = f.product_indices(p)[n];
                        }
                        entries.insert((c, f.values()[n].to_bits()));
                    }
                    sets.push(entries);
                }
            }
            prop_assert!(sets.windows(2).all(|w| w[0] == w[1]));
        }
    }
}
