//! One-shot kernel engine shared by SpTTM, SpMTTKRP and SpTTMc.
//!
//! Nonzeros are cut into partitions of `threadlen`; partitions are grouped
//! into tiles of `group_size` (one tile per group and column block). Each
//! partition multiplies and reduces its nonzeros in a single pass, keeping
//! two partial rows: the *lead* (nonzeros before its first segment head,
//! only when its start-flag is clear) and the *tail* (the last segment that
//! starts inside it). Segments that open and close inside a partition are
//! written straight to the output.
//!
//! Carries are then resolved in a fixed order. Inside a tile, each tail
//! absorbs the leads of the following partitions until a head is reached.
//! The tail still open at the end of a tile, and the tile's own leading
//! chain, are combined by a sequential sweep across tiles. Every output row
//! is written exactly once and no step depends on the worker count.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::mem;
use core::ops::{Add, Range};

use crate::error::{Error, Result};
use crate::fcoo::{FcooTensor, Op};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;
use crate::semisparse::SemiSparseTensor;

/// Runs independent work items, possibly in parallel. Implementations must
/// call `f` exactly once per item.
pub trait Executor: Sync {
    fn workers(&self) -> usize;

    fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(&mut T) + Sync + Send;
}

/// Runs every item on the calling thread, in order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn workers(&self) -> usize {
        1
    }

    fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(&mut T) + Sync + Send,
    {
        items.iter_mut().for_each(f);
    }
}

impl<E: Executor> Executor for &E {
    fn workers(&self) -> usize {
        (**self).workers()
    }

    fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(&mut T) + Sync + Send,
    {
        (**self).for_each_mut(items, f)
    }
}

/// Work decomposition of one kernel call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionPlan {
    pub threadlen: usize,
    pub npartitions: usize,
    /// Partitions per tile; the analog of a thread block.
    pub group_size: usize,
    /// Output columns per tile. `None` means the full output width.
    pub col_block: Option<usize>,
}

impl PartitionPlan {
    pub fn new(nnz: usize, threadlen: usize, group_size: usize) -> Result<Self> {
        if threadlen == 0 || group_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "threadlen ({threadlen}) and group_size ({group_size}) must be positive"
            )));
        }
        if nnz == 0 {
            return Err(Error::Empty);
        }
        Ok(Self { threadlen, npartitions: nnz.div_ceil(threadlen), group_size, col_block: None })
    }

    /// Plan matching the partition geometry already encoded in `f`.
    pub fn for_fcoo(f: &FcooTensor, group_size: usize) -> Result<Self> {
        Self::new(f.nnz(), f.threadlen(), group_size)
    }

    pub fn with_col_block(mut self, width: usize) -> Self {
        self.col_block = Some(width);
        self
    }

    pub fn ngroups(&self) -> usize {
        self.npartitions.div_ceil(self.group_size)
    }
}

/// Per-call execution record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExecStats {
    pub nnz: usize,
    pub partitions: usize,
    pub groups: usize,
    pub segments: usize,
    pub column_blocks: usize,
    pub output_width: usize,
    /// Lead partials folded into a preceding segment (partitions whose
    /// start-flag is clear).
    pub carry_events: usize,
    pub peak_scratch_bytes: usize,
    /// Element count of all auxiliary buffers (partials, per-partition
    /// counters, flags), independent of element width.
    pub peak_scratch_scalars: usize,
    /// Set when the write-once shadow map was checked (debug builds).
    pub writes_verified: bool,
    /// Filled in by timing wrappers; the engine itself has no clock.
    pub wall_nanos: u64,
}

#[derive(Default)]
struct Meter {
    bytes: usize,
    scalars: usize,
}

impl Meter {
    fn zeroed<T: Clone + Default>(&mut self, n: usize) -> Vec<T> {
        self.bytes += n * mem::size_of::<T>();
        self.scalars += n;
        vec![T::default(); n]
    }

    fn track_bytes(&mut self, bytes: usize) {
        self.bytes += bytes;
    }
}

const TRACK_WRITES: bool = cfg!(debug_assertions);

/// Inclusive segmented prefix sum: `out[n] = values[n]` at a head,
/// `out[n - 1] + values[n]` otherwise.
///
/// # Panics
/// If the lengths differ or a non-empty `heads` does not start with a head.
pub fn segmented_scan<T: Copy + Add<Output = T>>(values: &[T], heads: &[bool]) -> Vec<T> {
    assert_eq!(values.len(), heads.len(), "values and heads differ in length");
    assert!(heads.first().is_none_or(|&h| h), "first element must be a segment head");
    let mut out: Vec<T> = Vec::with_capacity(values.len());
    for (n, (&v, &h)) in values.iter().zip(heads).enumerate() {
        let x = if h { v } else { out[n - 1] + v };
        out.push(x);
    }
    out
}

/// [`segmented_scan`] computed partition by partition: local scans run on
/// the executor, carries cross partition boundaries in a left-to-right
/// sweep, and a final pass adds each carry to the prefix before the
/// partition's first head.
pub fn segmented_scan_partitioned<T, E>(values: &[T], heads: &[bool], threadlen: usize, exec: &E) -> Vec<T>
where
    T: Copy + Add<Output = T> + Send + Sync,
    E: Executor,
{
    assert_eq!(values.len(), heads.len(), "values and heads differ in length");
    assert!(heads.first().is_none_or(|&h| h), "first element must be a segment head");
    assert!(threadlen > 0, "threadlen must be positive");
    let mut out = values.to_vec();

    struct Part<'a, T> {
        out: &'a mut [T],
        heads: &'a [bool],
        carry: Option<T>,
    }
    let mut parts: Vec<Part<'_, T>> = out
        .chunks_mut(threadlen)
        .zip(heads.chunks(threadlen))
        .map(|(out, heads)| Part { out, heads, carry: None })
        .collect();

    exec.for_each_mut(&mut parts, |p| {
        for n in 1..p.out.len() {
            if !p.heads[n] {
                p.out[n] = p.out[n - 1] + p.out[n];
            }
        }
    });

    // carry into p = final value at the end of p - 1
    let mut prev_last: Option<T> = None;
    for p in parts.iter_mut() {
        let continues = !p.heads[0];
        p.carry = if continues { prev_last } else { None };
        let last = *p.out.last().expect("chunks are non-empty");
        let has_head = p.heads.iter().any(|&h| h);
        prev_last = Some(match p.carry {
            Some(c) if !has_head => c + last,
            _ => last,
        });
    }

    exec.for_each_mut(&mut parts, |p| {
        if let Some(c) = p.carry {
            for n in 0..p.out.len() {
                if p.heads[n] {
                    break;
                }
                p.out[n] = c + p.out[n];
            }
        }
    });
    drop(parts);
    out
}

/// Product of one nonzero with the dense operands, restricted to a column
/// range of the output row.
trait RowProduct: Sync {
    fn width(&self) -> usize;

    /// `acc[c - cols.start] += value * row(n)[c]` for `c` in `cols`.
    fn accumulate(&self, n: usize, value: f64, cols: Range<usize>, acc: &mut [f64]);
}

struct TtmRow<'a, T> {
    k: &'a [u32],
    u: &'a DenseMatrix<T>,
}

impl<T: Scalar> RowProduct for TtmRow<'_, T> {
    fn width(&self) -> usize {
        self.u.cols()
    }

    #[inline]
    fn accumulate(&self, n: usize, value: f64, cols: Range<usize>, acc: &mut [f64]) {
        let row = &self.u.row(self.k[n] as usize)[cols];
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += value * x.to_f64();
        }
    }
}

struct MttkrpRow<'a, T> {
    j: &'a [u32],
    k: &'a [u32],
    b: &'a DenseMatrix<T>,
    c: &'a DenseMatrix<T>,
}

impl<T: Scalar> RowProduct for MttkrpRow<'_, T> {
    fn width(&self) -> usize {
        self.b.cols()
    }

    #[inline]
    fn accumulate(&self, n: usize, value: f64, cols: Range<usize>, acc: &mut [f64]) {
        let bj = &self.b.row(self.j[n] as usize)[cols.clone()];
        let ck = &self.c.row(self.k[n] as usize)[cols];
        for ((a, &x), &y) in acc.iter_mut().zip(bj).zip(ck) {
            *a += value * x.to_f64() * y.to_f64();
        }
    }
}

struct TtmcRow<'a, T> {
    j: &'a [u32],
    k: &'a [u32],
    u2: &'a DenseMatrix<T>,
    u3: &'a DenseMatrix<T>,
}

impl<T: Scalar> RowProduct for TtmcRow<'_, T> {
    fn width(&self) -> usize {
        self.u2.cols() * self.u3.cols()
    }

    #[inline]
    fn accumulate(&self, n: usize, value: f64, cols: Range<usize>, acc: &mut [f64]) {
        let r3 = self.u3.cols();
        let uj = self.u2.row(self.j[n] as usize);
        let uk = self.u3.row(self.k[n] as usize);
        for (a, c) in acc.iter_mut().zip(cols) {
            *a += value * uj[c / r3].to_f64() * uk[c % r3].to_f64();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chain {
    /// The tile starts with a segment head.
    Absent,
    /// The leading chain covers the whole tile and may continue.
    Open,
    /// The leading chain ends inside the tile.
    Closed,
}

struct Tile<'a, T> {
    group: usize,
    cols: Range<usize>,
    lead: &'a mut [f64],
    tail: &'a mut [f64],
    glead: &'a mut [f64],
    gopen: &'a mut [f64],
    out: &'a mut [T],
    out_row0: usize,
    shadow: &'a mut [u8],
    seg0: usize,
    lead_chain: Chain,
    has_open: bool,
    carries: usize,
}

struct Geometry<'a> {
    f: &'a FcooTensor,
    threadlen: usize,
    group_size: usize,
    np: usize,
    heads: &'a [u32],
    heads_before: &'a [u32],
}

impl Geometry<'_> {
    fn group_range(&self, g: usize) -> Range<usize> {
        let g0 = g * self.group_size;
        g0..(g0 + self.group_size).min(self.np)
    }

    fn heads_before(&self, p: usize) -> usize {
        if p < self.np {
            self.heads_before[p] as usize
        } else {
            self.f.nsegs()
        }
    }

    /// Segments fully resolved inside group `g`: every segment whose head is
    /// in the group except the last one.
    fn owned_segments(&self, g: usize) -> Range<usize> {
        let r = self.group_range(g);
        let (a, b) = (self.heads_before(r.start), self.heads_before(r.end));
        if b > a {
            a..b - 1
        } else {
            a..a
        }
    }
}

fn run_tile<T: Scalar, P: RowProduct>(
    geo: &Geometry<'_>,
    product: &P,
    row_of: &(impl Fn(usize) -> usize + Sync),
    tile: &mut Tile<'_, T>,
) {
    let f = geo.f;
    let values = f.values();
    let bw = tile.cols.len();
    let parts = geo.group_range(tile.group);
    let g0 = parts.start;

    let emit = |out: &mut [T], shadow: &mut [u8], s: usize, row: &[f64]| {
        let r = row_of(s) - tile.out_row0;
        for (o, &v) in out[r * bw..(r + 1) * bw].iter_mut().zip(row) {
            *o = T::from_f64(v);
        }
        if TRACK_WRITES {
            shadow[s - tile.seg0] += 1;
        }
    };

    // product + in-partition segmented reduction
    for p in parts.clone() {
        let lp = &mut tile.lead[(p - g0) * bw..(p - g0 + 1) * bw];
        let tp = &mut tile.tail[(p - g0) * bw..(p - g0 + 1) * bw];
        let start = p * geo.threadlen;
        let end = (start + geo.threadlen).min(f.nnz());
        let mut next_seg = geo.heads_before[p] as usize;
        let mut current: Option<usize> = None;
        #[allow(clippy::needless_range_loop)]
        for n in start..end {
            if f.is_head(n) {
                if let Some(s) = current {
                    emit(tile.out, tile.shadow, s, tp);
                    tp.fill(0.0);
                }
                current = Some(next_seg);
                next_seg += 1;
            }
            let acc = if current.is_some() { &mut *tp } else { &mut *lp };
            product.accumulate(n, values[n] as f64, tile.cols.clone(), acc);
        }
    }

    // tails absorb the leads of following partitions inside the tile
    let mut carries = 0;
    for p in parts.clone() {
        let nh = geo.heads[p] as usize;
        if nh == 0 {
            continue;
        }
        let s = geo.heads_before[p] as usize + nh - 1;
        let (tail_lo, tail_hi) = ((p - g0) * bw, (p - g0 + 1) * bw);
        let mut closed = false;
        let mut q = p + 1;
        while q < parts.end {
            if f.starts_segment(q) {
                closed = true;
                break;
            }
            let lq = &tile.lead[(q - g0) * bw..(q - g0 + 1) * bw];
            for (t, &l) in tile.tail[tail_lo..tail_hi].iter_mut().zip(lq) {
                *t += l;
            }
            carries += 1;
            if geo.heads[q] > 0 {
                closed = true;
                break;
            }
            q += 1;
        }
        if closed {
            emit(tile.out, tile.shadow, s, &tile.tail[tail_lo..tail_hi]);
        } else {
            tile.gopen.copy_from_slice(&tile.tail[tail_lo..tail_hi]);
            tile.has_open = true;
        }
    }

    // the tile's leading chain, handed to the cross-tile sweep
    tile.lead_chain = Chain::Absent;
    if !f.starts_segment(g0) {
        tile.glead.copy_from_slice(&tile.lead[..bw]);
        carries += 1;
        tile.lead_chain = if geo.heads[g0] > 0 { Chain::Closed } else { Chain::Open };
        let mut q = g0 + 1;
        while tile.lead_chain == Chain::Open && q < parts.end {
            if f.starts_segment(q) {
                tile.lead_chain = Chain::Closed;
                break;
            }
            let lq = &tile.lead[(q - g0) * bw..(q - g0 + 1) * bw];
            for (t, &l) in tile.glead.iter_mut().zip(lq) {
                *t += l;
            }
            carries += 1;
            if geo.heads[q] > 0 {
                tile.lead_chain = Chain::Closed;
            }
            q += 1;
        }
    }
    tile.carries = carries;
}

/// Shared driver. Produces an `out_rows x width` row-major matrix where
/// segment `s` lands in row `row_of(s)`; `row_of` must be strictly
/// increasing.
fn run_engine<T, P, E>(
    f: &FcooTensor,
    product: &P,
    plan: &PartitionPlan,
    exec: &E,
    out_rows: usize,
    row_of: impl Fn(usize) -> usize + Sync,
) -> Result<(Vec<T>, ExecStats)>
where
    T: Scalar,
    P: RowProduct,
    E: Executor,
{
    if plan.threadlen != f.threadlen() || plan.npartitions != f.npartitions() {
        return Err(Error::InvalidArgument(format!(
            "plan (threadlen {}, {} partitions) does not match F-COO (threadlen {}, {} partitions)",
            plan.threadlen,
            plan.npartitions,
            f.threadlen(),
            f.npartitions()
        )));
    }
    if plan.group_size == 0 {
        return Err(Error::InvalidArgument("group_size must be positive".into()));
    }
    let width = product.width();
    if width == 0 {
        return Err(Error::Shape("output width must be positive".into()));
    }
    let bw = plan.col_block.unwrap_or(width).clamp(1, width);
    let blocks: Vec<Range<usize>> = (0..width).step_by(bw).map(|c| c..(c + bw).min(width)).collect();
    let nblocks = blocks.len();
    let np = plan.npartitions;
    let ng = plan.ngroups();
    let nsegs = f.nsegs();
    let mut meter = Meter::default();

    let mut heads: Vec<u32> = meter.zeroed(np);
    let mut heads_before: Vec<u32> = meter.zeroed(np);
    let mut seen = 0u32;
    for p in 0..np {
        let start = p * plan.threadlen;
        heads[p] = f.count_heads(start, (start + plan.threadlen).min(f.nnz())) as u32;
        heads_before[p] = seen;
        seen += heads[p];
    }
    debug_assert_eq!(seen as usize, nsegs);

    let geo = Geometry {
        f,
        threadlen: plan.threadlen,
        group_size: plan.group_size,
        np,
        heads: &heads,
        heads_before: &heads_before,
    };

    let mut lead: Vec<f64> = meter.zeroed(np * width);
    let mut tail: Vec<f64> = meter.zeroed(np * width);
    let mut glead: Vec<f64> = meter.zeroed(ng * width);
    let mut gopen: Vec<f64> = meter.zeroed(ng * width);
    let mut shadow: Vec<u8> = if TRACK_WRITES { meter.zeroed(nsegs * nblocks) } else { Vec::new() };
    let mut block_out: Vec<Vec<T>> = if nblocks == 1 {
        vec![vec![T::ZERO; out_rows * width]]
    } else {
        blocks.iter().map(|b| meter.zeroed(out_rows * b.len())).collect()
    };

    let owned: Vec<Range<usize>> = (0..ng).map(|g| geo.owned_segments(g)).collect();
    meter.track_bytes(ng * mem::size_of::<Range<usize>>());

    let mut tiles: Vec<Tile<'_, T>> = Vec::with_capacity(ng * nblocks);
    meter.track_bytes(ng * nblocks * mem::size_of::<Tile<'_, T>>());
    {
        let mut lead_rest: &mut [f64] = &mut lead;
        let mut tail_rest: &mut [f64] = &mut tail;
        let mut glead_rest: &mut [f64] = &mut glead;
        let mut gopen_rest: &mut [f64] = &mut gopen;
        let mut shadow_rest: &mut [u8] = &mut shadow;
        for (cols, out_block) in blocks.iter().zip(block_out.iter_mut()) {
            let w = cols.len();
            let (mut lead_b, r) = mem::take(&mut lead_rest).split_at_mut(np * w);
            lead_rest = r;
            let (mut tail_b, r) = mem::take(&mut tail_rest).split_at_mut(np * w);
            tail_rest = r;
            let (mut glead_b, r) = mem::take(&mut glead_rest).split_at_mut(ng * w);
            glead_rest = r;
            let (mut gopen_b, r) = mem::take(&mut gopen_rest).split_at_mut(ng * w);
            gopen_rest = r;
            let shadow_len = if TRACK_WRITES { nsegs } else { 0 };
            let (mut shadow_b, r) = mem::take(&mut shadow_rest).split_at_mut(shadow_len);
            shadow_rest = r;
            let mut out_b: &mut [T] = out_block;
            let mut out_consumed = 0usize;
            let mut shadow_consumed = 0usize;

            for (g, segs) in owned.iter().enumerate() {
                let nparts = geo.group_range(g).len();
                let (l, r) = mem::take(&mut lead_b).split_at_mut(nparts * w);
                lead_b = r;
                let (t, r) = mem::take(&mut tail_b).split_at_mut(nparts * w);
                tail_b = r;
                let (gl, r) = mem::take(&mut glead_b).split_at_mut(w);
                glead_b = r;
                let (go, r) = mem::take(&mut gopen_b).split_at_mut(w);
                gopen_b = r;

                let (out, out_row0) = if segs.is_empty() {
                    (&mut [][..], 0)
                } else {
                    let (r0, r1) = (row_of(segs.start), row_of(segs.end - 1) + 1);
                    let skip = r0 * w - out_consumed;
                    let (_, r) = mem::take(&mut out_b).split_at_mut(skip);
                    let (o, r) = r.split_at_mut((r1 - r0) * w);
                    out_b = r;
                    out_consumed = r1 * w;
                    (o, r0)
                };
                let sh: &mut [u8] = if TRACK_WRITES && !segs.is_empty() {
                    let skip = segs.start - shadow_consumed;
                    let (_, r) = mem::take(&mut shadow_b).split_at_mut(skip);
                    let (s, r) = r.split_at_mut(segs.len());
                    shadow_b = r;
                    shadow_consumed = segs.end;
                    s
                } else {
                    &mut []
                };
                tiles.push(Tile {
                    group: g,
                    cols: cols.clone(),
                    lead: l,
                    tail: t,
                    glead: gl,
                    gopen: go,
                    out,
                    out_row0,
                    shadow: sh,
                    seg0: segs.start,
                    lead_chain: Chain::Absent,
                    has_open: false,
                    carries: 0,
                });
            }
        }

        exec.for_each_mut(&mut tiles, |tile| run_tile(&geo, product, &row_of, tile));
    }

    let mut chains: Vec<Chain> = Vec::with_capacity(ng * nblocks);
    let mut open: Vec<bool> = Vec::with_capacity(ng * nblocks);
    meter.track_bytes(ng * nblocks * 2);
    let mut carry_events = 0;
    for (i, t) in tiles.iter().enumerate() {
        chains.push(t.lead_chain);
        open.push(t.has_open);
        if i < ng {
            carry_events += t.carries;
        }
    }
    drop(tiles);

    // cross-tile sweep, left to right, one block at a time
    let mut acc = vec![0.0f64; bw];
    meter.track_bytes(bw * mem::size_of::<f64>());
    let mut goff = 0;
    for (b, cols) in blocks.iter().enumerate() {
        let w = cols.len();
        let glead_b = &glead[goff..goff + ng * w];
        let gopen_b = &gopen[goff..goff + ng * w];
        goff += ng * w;
        let out_b = &mut block_out[b];
        for g in 0..ng {
            if !open[b * ng + g] {
                continue;
            }
            let acc = &mut acc[..w];
            acc.copy_from_slice(&gopen_b[g * w..(g + 1) * w]);
            for h in g + 1..ng {
                let chain = chains[b * ng + h];
                if chain == Chain::Absent {
                    break;
                }
                for (a, &l) in acc.iter_mut().zip(&glead_b[h * w..(h + 1) * w]) {
                    *a += l;
                }
                if chain == Chain::Closed {
                    break;
                }
            }
            let s = geo.heads_before(geo.group_range(g).end) - 1;
            let r = row_of(s);
            for (o, &v) in out_b[r * w..(r + 1) * w].iter_mut().zip(acc.iter()) {
                *o = T::from_f64(v);
            }
            if TRACK_WRITES {
                shadow[b * nsegs + s] += 1;
            }
        }
    }

    if TRACK_WRITES {
        if let Some(pos) = shadow.iter().position(|&c| c != 1) {
            panic!(
                "segment {} of column block {} written {} times",
                pos % nsegs.max(1),
                pos / nsegs.max(1),
                shadow[pos]
            );
        }
    }

    let out = if nblocks == 1 {
        block_out.pop().expect("one block")
    } else {
        let mut out = vec![T::ZERO; out_rows * width];
        for (cols, buf) in blocks.iter().zip(&block_out) {
            let w = cols.len();
            for r in 0..out_rows {
                out[r * width + cols.start..r * width + cols.end].copy_from_slice(&buf[r * w..(r + 1) * w]);
            }
        }
        out
    };

    let stats = ExecStats {
        nnz: f.nnz(),
        partitions: np,
        groups: ng,
        segments: nsegs,
        column_blocks: nblocks,
        output_width: width,
        carry_events,
        peak_scratch_bytes: meter.bytes,
        peak_scratch_scalars: meter.scalars,
        writes_verified: TRACK_WRITES,
        wall_nanos: 0,
    };
    Ok((out, stats))
}

fn expect_op(f: &FcooTensor, wanted: Op) -> Result<()> {
    if f.op().kind != wanted {
        return Err(Error::OpMismatch { built: f.op().kind.name(), wanted: wanted.name() });
    }
    Ok(())
}

fn expect_rows<T: Scalar>(name: &str, m: &DenseMatrix<T>, rows: usize) -> Result<()> {
    if m.rows() != rows {
        return Err(Error::Shape(format!("{name} has {} rows, expected {rows}", m.rows())));
    }
    if m.cols() == 0 {
        return Err(Error::Shape(format!("{name} has no columns")));
    }
    Ok(())
}

/// SpTTM: every index-mode fiber accumulates `value * u(k, :)` over its
/// nonzeros, where `k` is the product-mode coordinate.
pub fn sp_ttm<T: Scalar, E: Executor>(
    f: &FcooTensor,
    u: &DenseMatrix<T>,
    plan: &PartitionPlan,
    exec: &E,
) -> Result<(SemiSparseTensor<T>, ExecStats)> {
    expect_op(f, Op::SpTtm)?;
    let spec = f.spec();
    let pm = spec.product_modes[0];
    expect_rows("u", u, f.dims()[pm])?;
    let product = TtmRow { k: f.product_indices(0), u };
    let (fibers, stats) = run_engine(f, &product, plan, exec, f.nsegs(), |s| s)?;
    let mut dims = f.dims().to_vec();
    dims[pm] = u.cols();
    Ok((
        SemiSparseTensor {
            dims,
            dense_mode: pm,
            index_modes: spec.index_modes.clone(),
            index_coords: f.seg_coords().to_vec(),
            rank: u.cols(),
            fibers,
        },
        stats,
    ))
}

/// SpMTTKRP: row `i` of the result accumulates
/// `value * (b(j, :) * c(k, :))` over the nonzeros of slice `i`. `b` and
/// `c` belong to the lower and higher product mode respectively.
pub fn sp_mttkrp<T: Scalar, E: Executor>(
    f: &FcooTensor,
    b: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    plan: &PartitionPlan,
    exec: &E,
) -> Result<(DenseMatrix<T>, ExecStats)> {
    expect_op(f, Op::SpMttkrp)?;
    let spec = f.spec();
    expect_rows("b", b, f.dims()[spec.product_modes[0]])?;
    expect_rows("c", c, f.dims()[spec.product_modes[1]])?;
    if b.cols() != c.cols() {
        return Err(Error::Shape(format!("b has {} columns, c has {}", b.cols(), c.cols())));
    }
    let product = MttkrpRow { j: f.product_indices(0), k: f.product_indices(1), b, c };
    let rows = f.dims()[spec.index_modes[0]];
    let seg = f.seg_coords();
    let (data, stats) = run_engine(f, &product, plan, exec, rows, |s| seg[s] as usize)?;
    Ok((DenseMatrix::from_vec(rows, b.cols(), data)?, stats))
}

/// SpTTMc: row `i` accumulates `value * (u2(j, :) kron u3(k, :))`, giving
/// an `I x (R2 * R3)` matrix.
pub fn sp_ttmc<T: Scalar, E: Executor>(
    f: &FcooTensor,
    u2: &DenseMatrix<T>,
    u3: &DenseMatrix<T>,
    plan: &PartitionPlan,
    exec: &E,
) -> Result<(DenseMatrix<T>, ExecStats)> {
    expect_op(f, Op::SpTtmc)?;
    let spec = f.spec();
    expect_rows("u2", u2, f.dims()[spec.product_modes[0]])?;
    expect_rows("u3", u3, f.dims()[spec.product_modes[1]])?;
    let product = TtmcRow { j: f.product_indices(0), k: f.product_indices(1), u2, u3 };
    let rows = f.dims()[spec.index_modes[0]];
    let seg = f.seg_coords();
    let (data, stats) = run_engine(f, &product, plan, exec, rows, |s| seg[s] as usize)?;
    Ok((DenseMatrix::from_vec(rows, u2.cols() * u3.cols(), data)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coo::{random_coo, CooTensor};
    use crate::fcoo::{build_fcoo, OpKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(kind: Op, mode: usize) -> OpKind {
        OpKind::new(kind, mode).unwrap()
    }

    fn plan(f: &FcooTensor, g: usize) -> PartitionPlan {
        PartitionPlan::for_fcoo(f, g).unwrap()
    }

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f32> {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0f32..1.0))
    }

    #[test]
    fn scan_hand_cases() {
        let out = segmented_scan(&[1, 2, 3, 4, 5], &[true, false, false, true, false]);
        assert_eq!(out, [1, 3, 6, 4, 9]);
        assert_eq!(segmented_scan(&[4, -1, 7], &[true; 3]), [4, -1, 7]);
        assert!(segmented_scan::<i32>(&[], &[]).is_empty());
    }

    #[test]
    #[should_panic(expected = "segment head")]
    fn scan_requires_leading_head() {
        segmented_scan(&[1, 2], &[false, true]);
    }

    proptest! {
        #[test]
        fn scan_segment_totals_match_sequential_sums(
            vals in proptest::collection::vec(-1000i64..1000, 1..2000),
            seed in any::<u64>(),
            threadlen in 1usize..70,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut heads: Vec<bool> = (0..vals.len()).map(|_| rng.gen_bool(0.1)).collect();
            heads[0] = true;
            let out = segmented_scan(&vals, &heads);
            // per-segment oracle
            let mut start = 0;
            for n in 1..=vals.len() {
                if n == vals.len() || heads[n] {
                    let total: i64 = vals[start..n].iter().sum();
                    prop_assert_eq!(out[n - 1], total);
                    start = n;
                }
            }
            prop_assert_eq!(segmented_scan_partitioned(&vals, &heads, threadlen, &Sequential), out);
        }
    }

    #[test]
    fn ttm_single_nonzero() {
        let t = CooTensor::from_entries(vec![1, 2, 3], &[([0u32, 1, 2], 3.0)]).unwrap();
        let f = build_fcoo(&t, op(Op::SpTtm, 2), 4).unwrap();
        let u = DenseMatrix::from_rows(&[[0.0f32, 0.0], [0.0, 0.0], [1.0, -1.0]]).unwrap();
        let (y, stats) = sp_ttm(&f, &u, &plan(&f, 1), &Sequential).unwrap();
        assert_eq!(y.index_coords, [0, 1]);
        assert_eq!(y.fibers, [3.0, -3.0]);
        assert_eq!((stats.segments, stats.partitions), (1, 1));
    }

    #[test]
    fn ttm_two_terms_in_one_fiber() {
        let t = CooTensor::from_entries(vec![1, 2, 2], &[([0u32, 1, 0], 1.0), ([0, 1, 1], 2.0)]).unwrap();
        let u = DenseMatrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
        for threadlen in [1, 2] {
            let f = build_fcoo(&t, op(Op::SpTtm, 2), threadlen).unwrap();
            let (y, _) = sp_ttm(&f, &u, &plan(&f, 1), &Sequential).unwrap();
            assert_eq!(y.fibers, [7.0, 10.0]);
        }
    }

    #[test]
    fn mttkrp_single_and_pair() {
        let b = DenseMatrix::from_rows(&[[0.0f32, 0.0], [1.0, 2.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[[5.0f32, -1.0], [0.0, 0.0], [3.0, 4.0]]).unwrap();
        let t = CooTensor::from_entries(vec![2, 2, 3], &[([0u32, 1, 2], 2.0)]).unwrap();
        let f = build_fcoo(&t, op(Op::SpMttkrp, 0), 1).unwrap();
        let (m, _) = sp_mttkrp(&f, &b, &c, &plan(&f, 1), &Sequential).unwrap();
        assert_eq!(m.row(0), &[6.0, 16.0]);
        assert_eq!(m.row(1), &[0.0, 0.0]);

        let t = CooTensor::from_entries(vec![2, 2, 3], &[([1u32, 1, 2], 2.0), ([1, 1, 0], 1.0)]).unwrap();
        let f = build_fcoo(&t, op(Op::SpMttkrp, 0), 1).unwrap();
        let (m, stats) = sp_mttkrp(&f, &b, &c, &plan(&f, 1), &Sequential).unwrap();
        // (1,1,0): 1*[1*5, 2*-1]; (1,1,2): 2*[1*3, 2*4]
        assert_eq!(m.row(1), &[11.0, 14.0]);
        assert_eq!(stats.carry_events, 1);
    }

    #[test]
    fn ttmc_single_nonzero_and_rank_one() {
        let t = CooTensor::from_entries(vec![1, 2, 1], &[([0u32, 1, 0], 2.0)]).unwrap();
        let f = build_fcoo(&t, op(Op::SpTtmc, 0), 2).unwrap();
        let u2 = DenseMatrix::from_rows(&[[9.0f32, 9.0], [1.0, 2.0]]).unwrap();
        let u3 = DenseMatrix::from_rows(&[[3.0f32]]).unwrap();
        let (y, _) = sp_ttmc(&f, &u2, &u3, &plan(&f, 1), &Sequential).unwrap();
        assert_eq!(y.row(0), &[6.0, 12.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_coo(&[5, 6, 7], 60, 2).unwrap();
        let b = rand_matrix(6, 1, &mut rng);
        let c = rand_matrix(7, 1, &mut rng);
        let ft = build_fcoo(&t, op(Op::SpTtmc, 0), 4).unwrap();
        let fm = build_fcoo(&t, op(Op::SpMttkrp, 0), 4).unwrap();
        let (y, _) = sp_ttmc(&ft, &b, &c, &plan(&ft, 2), &Sequential).unwrap();
        let (m, _) = sp_mttkrp(&fm, &b, &c, &plan(&fm, 2), &Sequential).unwrap();
        assert_eq!(y, m);
    }

    #[test]
    fn kernel_errors() {
        let t = random_coo(&[4, 5, 6], 30, 1).unwrap();
        let f = build_fcoo(&t, op(Op::SpMttkrp, 0), 4).unwrap();
        let p = plan(&f, 2);
        let b = DenseMatrix::<f32>::zeros(5, 2);
        let c = DenseMatrix::<f32>::zeros(6, 2);
        assert!(matches!(sp_ttm(&f, &c, &p, &Sequential), Err(Error::OpMismatch { .. })));
        assert!(matches!(sp_ttmc(&f, &b, &c, &p, &Sequential), Err(Error::OpMismatch { .. })));
        assert!(matches!(sp_mttkrp(&f, &c, &b, &p, &Sequential), Err(Error::Shape(_))));
        assert!(matches!(
            sp_mttkrp(&f, &b, &DenseMatrix::zeros(6, 3), &p, &Sequential),
            Err(Error::Shape(_))
        ));
        let wrong = PartitionPlan::new(f.nnz(), 3, 2).unwrap();
        assert!(matches!(sp_mttkrp(&f, &b, &c, &wrong, &Sequential), Err(Error::InvalidArgument(_))));
        assert!(PartitionPlan::new(10, 0, 1).is_err());
        assert!(PartitionPlan::new(0, 1, 1).is_err());
    }

    #[test]
    fn plan_geometry_invariant() {
        for nnz in 1..50 {
            for tl in 1..9 {
                let p = PartitionPlan::new(nnz, tl, 3).unwrap();
                assert!(tl * (p.npartitions - 1) < nnz && nnz <= tl * p.npartitions);
            }
        }
    }

    #[test]
    fn long_segment_crosses_many_tiles() {
        // one slice holds everything: every carry chains through all tiles
        let entries: Vec<([u32; 3], f32)> = (0..97).map(|n| ([0, n % 7, n / 7], 1.0)).collect();
        let t = CooTensor::from_entries(vec![1, 7, 14], &entries).unwrap();
        let b = DenseMatrix::filled(7, 3, 1.0f32);
        let c = DenseMatrix::filled(14, 3, 2.0f32);
        for tl in [1, 2, 5, 97] {
            for g in [1, 2, 3, 64] {
                let f = build_fcoo(&t, op(Op::SpMttkrp, 0), tl).unwrap();
                let (m, stats) = sp_mttkrp(&f, &b, &c, &plan(&f, g), &Sequential).unwrap();
                assert_eq!(m.row(0), &[194.0, 194.0, 194.0], "threadlen {tl} group {g}");
                assert_eq!(stats.carry_events, f.npartitions() - 1);
            }
        }
    }

    #[test]
    fn column_blocks_match_single_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = random_coo(&[9, 10, 11], 300, 5).unwrap();
        let b = rand_matrix(10, 7, &mut rng);
        let c = rand_matrix(11, 7, &mut rng);
        let f = build_fcoo(&t, op(Op::SpMttkrp, 0), 6).unwrap();
        let (full, _) = sp_mttkrp(&f, &b, &c, &plan(&f, 4), &Sequential).unwrap();
        for w in [1, 2, 3, 7, 50] {
            let (m, stats) = sp_mttkrp(&f, &b, &c, &plan(&f, 4).with_col_block(w), &Sequential).unwrap();
            assert_eq!(m, full, "block width {w}");
            assert_eq!(stats.column_blocks, 7usize.div_ceil(w.min(7)));
        }
    }

    #[test]
    fn carry_events_count_clear_start_flags() {
        let t = random_coo(&[3, 40, 40], 900, 8).unwrap();
        for tl in [1, 4, 16] {
            let f = build_fcoo(&t, op(Op::SpMttkrp, 0), tl).unwrap();
            let b = DenseMatrix::filled(40, 2, 1.0f32);
            let (_, stats) = sp_mttkrp(&f, &b, &b, &plan(&f, 5), &Sequential).unwrap();
            let clear = f.sf_bits().iter().filter(|&&s| !s).count();
            assert_eq!(stats.carry_events, clear);
            assert_eq!(stats.writes_verified, cfg!(debug_assertions));
        }
    }

    #[test]
    fn zero_values_are_processed() {
        let t = CooTensor::from_entries(vec![2, 2, 2], &[([0u32, 0, 0], 0.0), ([1, 1, 1], 0.0)]).unwrap();
        let f = build_fcoo(&t, op(Op::SpTtm, 0), 1).unwrap();
        let (y, stats) = sp_ttm(&f, &DenseMatrix::filled(2, 2, 1.0f32), &plan(&f, 1), &Sequential).unwrap();
        assert_eq!(y.nfibers(), 2);
        assert_eq!(stats.segments, 2);
        assert!(y.fibers.iter().all(|&v| v == 0.0));
    }
}
