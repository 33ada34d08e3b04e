//! Command-line front end. Modes on the command line are 1-based.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ftensor_core::cp::CpConfig;
use ftensor_core::fcoo::{build_fcoo, storage_bytes, Op, OpKind};
use ftensor_core::{from_kruskal, random_coo, CooTensor, DenseMatrix, KruskalModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{run_bench, BenchConfig, BenchReport, ReportFormat, ReportWriter, DEFAULT_GROUP_SIZES, DEFAULT_THREADLENS};
use crate::cprun::{export_model, print_reports, run_cp};
use crate::error::{io_err, Error, Result};
use crate::io::{load_any, save_any};
use crate::pool::RayonExecutor;

#[derive(Debug, Parser)]
#[command(name = "ftensor", version, about = "Sparse tensor kernels on the F-COO format")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic tensor.
    Generate(GenerateArgs),
    /// Convert between .tns text and the .ftb binary cache.
    Convert(ConvertArgs),
    /// Time kernels over a parameter sweep.
    Bench(BenchArgs),
    /// Run CP-ALS and report per-iteration fit and per-mode kernel times.
    Cp(CpArgs),
    /// Print F-COO and COO storage in bytes.
    Storage(StorageArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    /// Number of distinct random nonzeros. Ignored with --low-rank.
    #[arg(long, required_unless_present = "low_rank")]
    pub nnz: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Materialize a dense tensor of this CP rank instead.
    #[arg(long)]
    pub low_rank: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    pub output: PathBuf,
}

/// Where a command gets its tensor: a file, or the random generator.
#[derive(Debug, Args, Clone)]
pub struct Source {
    /// Tensor file (.tns or .ftb).
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "64,64,64", conflicts_with = "input")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 5000, conflicts_with = "input")]
    pub nnz: usize,
    #[arg(long = "tensor-seed", default_value_t = 0, conflicts_with = "input")]
    pub tensor_seed: u64,
}

impl Source {
    pub fn load(&self) -> Result<(CooTensor, String)> {
        match &self.input {
            Some(p) => Ok((load_any(p)?, p.display().to_string())),
            None => {
                let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
                let id = format!("gen:{}:{}:{}", dims.join("x"), self.nnz, self.tensor_seed);
                Ok((random_coo(&self.dims, self.nnz, self.tensor_seed)?, id))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OpArg {
    Spttm,
    Spmttkrp,
    Spttmc,
}

impl From<OpArg> for Op {
    fn from(o: OpArg) -> Op {
        match o {
            OpArg::Spttm => Op::SpTtm,
            OpArg::Spmttkrp => Op::SpMttkrp,
            OpArg::Spttmc => Op::SpTtmc,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum, default_value = "spmttkrp")]
    pub op: OpArg,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub mode: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub rank: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THREADLENS)]
    pub threadlen: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GROUP_SIZES)]
    pub group_size: Vec<usize>,
    /// Column block width; defaults to the full output width.
    #[arg(long)]
    pub col_block: Option<usize>,
    /// Worker threads; 0 means available parallelism.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Check every row against the oracle; any failure exits nonzero.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Seed for the dense operands.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct CpArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub threadlen: usize,
    #[arg(long, default_value_t = 32)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Prefix for the exported model and fit trace.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StorageArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THREADLENS)]
    pub threadlen: Vec<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Convert(a) => cmd_convert(&a),
        Command::Bench(a) => cmd_bench(&a, &mut out).map(|_| ()),
        Command::Cp(a) => cmd_cp(&a, &mut out),
        Command::Storage(a) => cmd_storage(&a, &mut out),
    }
}

pub fn generate(a: &GenerateArgs) -> Result<CooTensor> {
    match a.low_rank {
        Some(rank) => {
            if rank == 0 {
                return Err(Error::Usage("--low-rank must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let factors = a
                .dims
                .iter()
                .map(|&d| DenseMatrix::from_fn(d, rank, |_, _| rng.gen_range(0.0..1.0)))
                .collect();
            let model = KruskalModel::new(vec![1.0; rank], factors)?;
            Ok(from_kruskal(&model, &a.dims)?)
        }
        None => Ok(random_coo(&a.dims, a.nnz.unwrap_or(0), a.seed)?),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    save_any(&generate(a)?, &a.out)
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    save_any(&load_any(&a.input)?, &a.output)
}

fn modes_from_cli(modes: &[usize]) -> Result<Vec<usize>> {
    modes
        .iter()
        .map(|&m| if (1..=3).contains(&m) { Ok(m - 1) } else { Err(Error::Usage(format!("mode {m} out of range 1..=3"))) })
        .collect()
}

pub fn cmd_bench(a: &BenchArgs, stdout: &mut dyn Write) -> Result<Vec<BenchReport>> {
    let cfg = BenchConfig {
        op: a.op.into(),
        modes: modes_from_cli(&a.mode)?,
        ranks: a.rank.clone(),
        threadlens: a.threadlen.clone(),
        group_sizes: a.group_size.clone(),
        col_block: a.col_block,
        reps: a.reps,
        verify: a.verify,
        seed: a.seed,
        inject_fault: a.inject_fault,
    };
    let (t, dataset) = a.source.load()?;
    let exec = RayonExecutor::new(a.workers)?;
    let format = match a.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    let sink: Box<dyn Write + '_> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(stdout),
    };
    let mut writer = ReportWriter::new(format, sink);
    run_bench(&t, &dataset, &cfg, &exec, |row| writer.write(row))
}

pub fn cmd_cp(a: &CpArgs, out: &mut dyn Write) -> Result<()> {
    let (t, dataset) = a.source.load()?;
    let cfg = CpConfig {
        rank: a.rank,
        max_iters: a.iters,
        tol: a.tol,
        seed: a.seed,
        threadlen: a.threadlen,
        group_size: a.group_size,
        track_half_steps: false,
    };
    let exec = RayonExecutor::new(a.workers)?;
    let (res, reports) = run_cp(&t, &cfg, &exec)?;
    writeln!(out, "# {dataset}: dims {:?}, nnz {}, rank {}", t.dims(), t.nnz(), a.rank)?;
    print_reports(&reports, out)?;
    writeln!(
        out,
        "final fit {:.8} after {} iterations ({})",
        res.final_fit(),
        res.iterations,
        if res.converged { "converged" } else { "iteration limit" }
    )?;
    for w in &res.warnings {
        writeln!(out, "warning: {w}")?;
    }
    if let Some(prefix) = &a.out {
        for p in export_model(&res.model, &reports, prefix)? {
            writeln!(out, "wrote {}", p.display())?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct StorageRow {
    op: &'static str,
    mode: usize,
    threadlen: usize,
    nnz: usize,
    partitions: usize,
    segments: usize,
    core_bytes: u64,
    seg_table_bytes: u64,
    coo_bytes: u64,
    core_to_coo: f64,
}

pub fn cmd_storage(a: &StorageArgs, out: &mut dyn Write) -> Result<()> {
    let (t, _) = a.source.load()?;
    let mut w = csv::Writer::from_writer(out);
    for op in Op::ALL {
        for mode in 0..3 {
            for &threadlen in &a.threadlen {
                let f = build_fcoo(&t, OpKind::new(op, mode)?, threadlen)?;
                let s = storage_bytes(&f);
                w.serialize(StorageRow {
                    op: op.name(),
                    mode: mode + 1,
                    threadlen,
                    nnz: f.nnz(),
                    partitions: f.npartitions(),
                    segments: f.nsegs(),
                    core_bytes: s.core_bytes,
                    seg_table_bytes: s.seg_table_bytes,
                    coo_bytes: s.coo_bytes,
                    core_to_coo: s.core_bytes as f64 / s.coo_bytes.max(1) as f64,
                })
                .map_err(|e| Error::Report(e.into()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn bench_defaults() {
        let cli = Cli::parse_from(["ftensor", "bench"]);
        let Command::Bench(a) = cli.command else { panic!() };
        assert_eq!(a.mode, [1, 2, 3]);
        assert_eq!(a.rank, [16]);
        assert_eq!(a.threadlen, [8, 16, 32, 64]);
        assert_eq!(a.group_size, [32, 128, 512]);
        assert_eq!(a.source.dims, [64, 64, 64]);
        assert!(!a.verify && !a.inject_fault);
    }

    #[test]
    fn cp_rank_defaults_to_eight() {
        let Command::Cp(a) = Cli::parse_from(["ftensor", "cp", "-i", "x.tns"]).command else { panic!() };
        assert_eq!((a.rank, a.iters, a.tol), (8, 50, 1e-5));
    }

    #[test]
    fn input_conflicts_with_generator() {
        assert!(Cli::try_parse_from(["ftensor", "bench", "-i", "x.tns", "--nnz", "5"]).is_err());
    }

    #[test]
    fn modes_are_one_based() {
        assert_eq!(modes_from_cli(&[1, 3]).unwrap(), [0, 2]);
        assert!(modes_from_cli(&[0]).is_err());
        assert!(modes_from_cli(&[4]).is_err());
    }

    #[test]
    fn generate_is_deterministic_and_rejects_overfull() {
        let a = GenerateArgs { dims: vec![8, 8, 8], nnz: Some(64), seed: 7, low_rank: None, out: "unused".into() };
        assert_eq!(generate(&a).unwrap(), generate(&a).unwrap());
        let a = GenerateArgs { nnz: Some(513), ..a };
        assert!(generate(&a).is_err());
    }

    #[test]
    fn low_rank_generation_is_dense() {
        let a = GenerateArgs { dims: vec![3, 4, 5], nnz: None, seed: 1, low_rank: Some(2), out: "unused".into() };
        assert_eq!(generate(&a).unwrap().nnz(), 60);
    }
}
