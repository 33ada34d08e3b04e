//! Sparse tensor kernels over the flagged coordinate (F-COO) format.
//!
//! The crate is `no_std` with `alloc`. It holds the coordinate tensor type,
//! the dense multilinear helpers, F-COO construction, the one-shot
//! segmented-scan engine behind SpTTM, SpMTTKRP and SpTTMc, slow reference
//! oracles, and a CP-ALS driver. File IO, threading and the command line live
//! in the `ftensor` companion crate.
//!
//! Parallel execution goes through the [`exec::Executor`] trait; the crate
//! itself only ships [`exec::Sequential`].

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod coo;
pub mod cp;
pub mod error;
pub mod exec;
pub mod fcoo;
pub mod matrix;
pub mod oracle;
pub mod scalar;
pub mod semisparse;
pub mod tns;

pub use coo::{from_kruskal, matricize, random_coo, sort_lex, CooTensor, KruskalModel, SparseMatrix};
pub use cp::{
    compute_fit, cp_als, cp_als_with_observer, gram, normalize_columns, pinv_spd, CpConfig, CpObserver, CpResult,
    ModeCall,
};
pub use error::{Error, Result};
pub use exec::{
    segmented_scan, segmented_scan_partitioned, sp_mttkrp, sp_ttm, sp_ttmc, ExecStats, Executor, PartitionPlan, Sequential,
};
pub use fcoo::{build_fcoo, mode_spec, storage_bytes, validate_flags, FcooTensor, ModeSpec, Op, OpKind, StorageBytes};
pub use matrix::{hadamard, khatri_rao, kronecker, DenseMatrix};
pub use scalar::Scalar;
pub use semisparse::SemiSparseTensor;
pub use tns::{format_tns, parse_tns};
