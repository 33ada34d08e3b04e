//! Kernel benchmark sweeps.

use std::time::Instant;

use ftensor_core::fcoo::{build_fcoo, storage_bytes, FcooTensor, Op, OpKind};
use ftensor_core::oracle::{ref_mttkrp, ref_ttm, ref_ttmc};
use ftensor_core::{sp_mttkrp, sp_ttm, sp_ttmc, CooTensor, DenseMatrix, ExecStats, Executor, PartitionPlan, SemiSparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative Frobenius error accepted by `--verify`.
pub const VERIFY_TOL: f64 = 1e-5;
/// Tensors above this many nonzeros are not checked against the oracle.
pub const ORACLE_MAX_NNZ: usize = 4_000_000;
pub const MIN_REPS: usize = 3;

pub const DEFAULT_THREADLENS: [usize; 4] = [8, 16, 32, 64];
pub const DEFAULT_GROUP_SIZES: [usize; 3] = [32, 128, 512];

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub op: Op,
    /// 0-based.
    pub modes: Vec<usize>,
    pub ranks: Vec<usize>,
    pub threadlens: Vec<usize>,
    pub group_sizes: Vec<usize>,
    pub col_block: Option<usize>,
    pub reps: usize,
    pub verify: bool,
    pub seed: u64,
    /// Corrupts one stored value after each build. Test hook.
    pub inject_fault: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            op: Op::SpMttkrp,
            modes: vec![0, 1, 2],
            ranks: vec![16],
            threadlens: DEFAULT_THREADLENS.to_vec(),
            group_sizes: DEFAULT_GROUP_SIZES.to_vec(),
            col_block: None,
            reps: MIN_REPS,
            verify: false,
            seed: 0,
            inject_fault: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self, t: &CooTensor) -> Result<()> {
        let nonempty = [
            ("mode", self.modes.is_empty()),
            ("rank", self.ranks.is_empty()),
            ("threadlen", self.threadlens.is_empty()),
            ("group size", self.group_sizes.is_empty()),
        ];
        if let Some((name, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(Error::Usage(format!("no {name} values given")));
        }
        if t.order() != 3 {
            return Err(Error::Usage(format!("kernels need an order-3 tensor, got order {}", t.order())));
        }
        if let Some(&m) = self.modes.iter().find(|&&m| m >= 3) {
            return Err(Error::Usage(format!("mode {} out of range 1..=3", m + 1)));
        }
        if self.ranks.contains(&0) || self.threadlens.contains(&0) || self.group_sizes.contains(&0) {
            return Err(Error::Usage("rank, threadlen and group size must be positive".into()));
        }
        if self.col_block == Some(0) {
            return Err(Error::Usage("column block must be positive".into()));
        }
        if self.reps < MIN_REPS {
            return Err(Error::Usage(format!("at least {MIN_REPS} repetitions required")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verify {
    Pass,
    Fail,
    Skipped,
    Off,
}

/// One benchmark row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub dataset: String,
    pub op: String,
    /// 1-based.
    pub mode: usize,
    pub rank: usize,
    pub threadlen: usize,
    pub group_size: usize,
    pub col_block: usize,
    pub workers: usize,
    pub repetitions: usize,
    pub median_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
    pub nnz: usize,
    pub partitions: usize,
    pub segments: usize,
    pub groups: usize,
    pub column_blocks: usize,
    pub carry_events: usize,
    pub peak_scratch_bytes: usize,
    pub core_bytes: u64,
    pub seg_table_bytes: u64,
    pub coo_bytes: u64,
    pub verify: Verify,
    pub max_rel_err: Option<f64>,
}

/// Dense inputs for one (op, mode, rank) cell.
pub struct Operands {
    pub first: DenseMatrix<f32>,
    pub second: Option<DenseMatrix<f32>>,
}

pub enum KernelOutput {
    Semi(SemiSparseTensor<f32>),
    Dense(DenseMatrix<f32>),
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f32> {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0f32..1.0))
}

pub fn operands(t: &CooTensor, op: OpKind, rank: usize, seed: u64) -> Operands {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((op.mode as u64) << 32) ^ ((rank as u64) << 40));
    let spec = ftensor_core::mode_spec(op);
    let d = t.dims();
    match op.kind {
        Op::SpTtm => Operands { first: random_matrix(d[op.mode], rank, &mut rng), second: None },
        Op::SpMttkrp | Op::SpTtmc => Operands {
            first: random_matrix(d[spec.product_modes[0]], rank, &mut rng),
            second: Some(random_matrix(d[spec.product_modes[1]], rank, &mut rng)),
        },
    }
}

pub fn run_kernel<E: Executor>(
    f: &FcooTensor,
    x: &Operands,
    plan: &PartitionPlan,
    exec: &E,
) -> Result<(KernelOutput, ExecStats)> {
    let second = || x.second.as_ref().ok_or_else(|| Error::Usage("missing second operand".into()));
    Ok(match f.op().kind {
        Op::SpTtm => {
            let (y, s) = sp_ttm(f, &x.first, plan, exec)?;
            (KernelOutput::Semi(y), s)
        }
        Op::SpMttkrp => {
            let (y, s) = sp_mttkrp(f, &x.first, second()?, plan, exec)?;
            (KernelOutput::Dense(y), s)
        }
        Op::SpTtmc => {
            let (y, s) = sp_ttmc(f, &x.first, second()?, plan, exec)?;
            (KernelOutput::Dense(y), s)
        }
    })
}

/// Relative Frobenius error against the oracle; infinite when the
/// sparsity pattern differs.
pub fn oracle_error(t: &CooTensor, op: OpKind, x: &Operands, out: &KernelOutput) -> Result<f64> {
    let n = op.mode;
    Ok(match (op.kind, out) {
        (Op::SpTtm, KernelOutput::Semi(y)) => {
            y.rel_err_against(&ref_ttm(t, &x.first, n)?).unwrap_or(f64::INFINITY)
        }
        (Op::SpMttkrp, KernelOutput::Dense(y)) => {
            y.rel_frobenius_err(&ref_mttkrp(t, &x.first, x.second.as_ref().unwrap(), n)?)
        }
        (Op::SpTtmc, KernelOutput::Dense(y)) => {
            y.rel_frobenius_err(&ref_ttmc(t, &x.first, x.second.as_ref().unwrap(), n)?)
        }
        _ => f64::INFINITY,
    })
}

fn corrupt(f: &mut FcooTensor) {
    let scale = f.values().iter().fold(1.0f32, |m, v| m.max(v.abs()));
    let v = f.values()[0];
    f.set_value(0, v + 1000.0 * scale);
}

fn median(sorted: &[u64]) -> u64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

/// Runs the cartesian sweep mode x rank x threadlen x group size, handing
/// each row to `sink` as soon as it is measured. Stops after the first row
/// that fails verification.
pub fn run_bench<E: Executor>(
    t: &CooTensor,
    dataset: &str,
    cfg: &BenchConfig,
    exec: &E,
    mut sink: impl FnMut(&BenchReport) -> Result<()>,
) -> Result<Vec<BenchReport>> {
    cfg.validate(t)?;
    let verify_enabled = cfg.verify && t.nnz() <= ORACLE_MAX_NNZ;
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        let op = OpKind::new(cfg.op, mode)?;
        for &rank in &cfg.ranks {
            let x = operands(t, op, rank, cfg.seed);
            for &threadlen in &cfg.threadlens {
                let mut f = build_fcoo(t, op, threadlen)?;
                if cfg.inject_fault && f.nnz() > 0 {
                    corrupt(&mut f);
                }
                let storage = storage_bytes(&f);
                for &group_size in &cfg.group_sizes {
                    let mut plan = PartitionPlan::for_fcoo(&f, group_size)?;
                    if let Some(w) = cfg.col_block {
                        plan = plan.with_col_block(w);
                    }
                    let _ = run_kernel(&f, &x, &plan, exec)?;
                    let mut times = Vec::with_capacity(cfg.reps);
                    let mut last = None;
                    for _ in 0..cfg.reps {
                        let start = Instant::now();
                        let res = run_kernel(&f, &x, &plan, exec)?;
                        times.push(start.elapsed().as_nanos() as u64);
                        last = Some(res);
                    }
                    times.sort_unstable();
                    let (out, stats) = last.expect("reps >= 1");

                    let (verify, max_rel_err) = if !cfg.verify {
                        (Verify::Off, None)
                    } else if !verify_enabled {
                        (Verify::Skipped, None)
                    } else {
                        let err = oracle_error(t, op, &x, &out)?;
                        (if err <= VERIFY_TOL { Verify::Pass } else { Verify::Fail }, Some(err))
                    };

                    let row = BenchReport {
                        dataset: dataset.to_string(),
                        op: cfg.op.name().to_string(),
                        mode: mode + 1,
                        rank,
                        threadlen,
                        group_size,
                        col_block: cfg.col_block.unwrap_or(stats.output_width).min(stats.output_width),
                        workers: exec.workers(),
                        repetitions: cfg.reps,
                        median_ns: median(&times),
                        min_ns: times[0],
                        max_ns: times[times.len() - 1],
                        nnz: stats.nnz,
                        partitions: stats.partitions,
                        segments: stats.segments,
                        groups: stats.groups,
                        column_blocks: stats.column_blocks,
                        carry_events: stats.carry_events,
                        peak_scratch_bytes: stats.peak_scratch_bytes,
                        core_bytes: storage.core_bytes,
                        seg_table_bytes: storage.seg_table_bytes,
                        coo_bytes: storage.coo_bytes,
                        verify,
                        max_rel_err,
                    };
                    sink(&row)?;
                    rows.push(row);
                    if verify == Verify::Fail {
                        return Err(Error::Verification(1));
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Streams rows as CSV (header first) or JSON lines.
pub struct ReportWriter<W: std::io::Write> {
    format: ReportFormat,
    csv: Option<csv::Writer<W>>,
    json: Option<W>,
}

impl<W: std::io::Write> ReportWriter<W> {
    pub fn new(format: ReportFormat, out: W) -> Self {
        match format {
            ReportFormat::Csv => Self { format, csv: Some(csv::Writer::from_writer(out)), json: None },
            ReportFormat::Json => Self { format, csv: None, json: Some(out) },
        }
    }

    pub fn write(&mut self, row: &BenchReport) -> Result<()> {
        match self.format {
            ReportFormat::Csv => {
                let w = self.csv.as_mut().expect("csv writer");
                w.serialize(row).map_err(|e| Error::Report(e.into()))?;
                w.flush()?;
            }
            ReportFormat::Json => {
                let w = self.json.as_mut().expect("json writer");
                serde_json::to_writer(&mut *w, row)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
        }
        Ok(())
    }
}
