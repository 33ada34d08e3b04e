//! CP-ALS for third-order sparse tensors on top of [`sp_mttkrp`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coo::{CooTensor, KruskalModel};
use crate::error::{Error, Result};
use crate::exec::{sp_mttkrp, ExecStats, Executor, PartitionPlan};
use crate::fcoo::{build_fcoo, FcooTensor, Op, OpKind};
use crate::matrix::{hadamard, DenseMatrix};
use crate::scalar::Scalar;

/// `a^T a`, accumulated in `f64`.
pub fn gram<T: Scalar>(a: &DenseMatrix<T>) -> DenseMatrix<f64> {
    let r = a.cols();
    let mut g = DenseMatrix::<f64>::zeros(r, r);
    for i in 0..a.rows() {
        let row = a.row(i);
        for p in 0..r {
            let x = row[p].to_f64();
            for (q, y) in row.iter().enumerate().skip(p) {
                let v = g.get(p, q) + x * y.to_f64();
                g.set(p, q, v);
            }
        }
    }
    for p in 0..r {
        for q in 0..p {
            g.set(p, q, g.get(q, p));
        }
    }
    g
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and a matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(g: &DenseMatrix<f64>) -> (Vec<f64>, DenseMatrix<f64>) {
    let n = g.rows();
    let mut a = g.clone();
    let mut v = DenseMatrix::<f64>::identity(n);
    let threshold = 1e-12 * g.frobenius_norm();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a.get(p, q) * a.get(p, q))
            .sum();
        if libm::sqrt(off) <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 { 1.0 } else { -1.0 } / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    ((0..n).map(|i| a.get(i, i)).collect(), v)
}

/// Moore-Penrose pseudoinverse of a symmetric matrix. Eigenvalues with
/// magnitude at or below `R * eps * max|lambda|` are treated as zero.
pub fn pinv_spd(g: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::Shape(format!("pseudoinverse of a {}x{} matrix", n, g.cols())));
    }
    let scale = g.data().iter().fold(0.0f64, |m, &x| m.max(libm::fabs(x)));
    let asym = (0..n)
        .flat_map(|p| (0..p).map(move |q| (p, q)))
        .fold(0.0f64, |m, (p, q)| m.max(libm::fabs(g.get(p, q) - g.get(q, p))));
    if scale > 0.0 && asym > 1e-8 * scale {
        return Err(Error::NotSymmetric(asym / scale));
    }
    if g.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("pseudoinverse input".into()));
    }
    let (eig, v) = symmetric_eigen(g);
    let lmax = eig.iter().fold(0.0f64, |m, &x| m.max(libm::fabs(x)));
    let tau = n as f64 * f64::EPSILON * lmax;
    let inv: Vec<f64> = eig.iter().map(|&l| if libm::fabs(l) > tau { 1.0 / l } else { 0.0 }).collect();
    let mut out = DenseMatrix::<f64>::zeros(n, n);
    for p in 0..n {
        for q in p..n {
            let x: f64 = (0..n).map(|k| v.get(p, k) * inv[k] * v.get(q, k)).sum();
            out.set(p, q, x);
            out.set(q, p, x);
        }
    }
    Ok(out)
}

/// Scales every column to unit 2-norm. Zero columns stay zero with norm 0.
pub fn normalize_columns<T: Scalar>(a: &DenseMatrix<T>) -> (DenseMatrix<T>, Vec<f64>) {
    let mut norms = vec![0.0f64; a.cols()];
    for i in 0..a.rows() {
        for (n, x) in norms.iter_mut().zip(a.row(i)) {
            *n += x.to_f64() * x.to_f64();
        }
    }
    for n in norms.iter_mut() {
        *n = libm::sqrt(*n);
    }
    let out = DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| {
        let x = a.get(i, j);
        if norms[j] > 0.0 {
            T::from_f64(x.to_f64() / norms[j])
        } else {
            x
        }
    });
    (out, norms)
}

/// `1 - ||X - M||_F / ||X||_F`, using `||M||^2 = lambda^T (*_n A_n^T A_n)
/// lambda` and the inner product over the nonzeros of `X`.
pub fn compute_fit(t: &CooTensor, m: &KruskalModel) -> Result<f64> {
    if m.factors.len() != t.order() {
        return Err(Error::Shape(format!("{}-factor model for an order-{} tensor", m.factors.len(), t.order())));
    }
    for (n, (f, &d)) in m.factors.iter().zip(t.dims()).enumerate() {
        if f.rows() != d || f.cols() != m.rank() {
            return Err(Error::Shape(format!("factor {n} is {:?}, expected ({d}, {})", f.shape(), m.rank())));
        }
    }
    let norm_x_sq = t.norm_sq();
    if norm_x_sq == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let r = m.rank();
    let mut prod = DenseMatrix::<f64>::filled(r, r, 1.0);
    for f in &m.factors {
        prod = hadamard(&prod, &gram(f))?;
    }
    let mut norm_m_sq = 0.0;
    for p in 0..r {
        for q in 0..r {
            norm_m_sq += m.lambda[p] * prod.get(p, q) * m.lambda[q];
        }
    }
    let inner: f64 = t.iter().map(|(c, v)| v as f64 * m.eval(c)).sum();
    let residual_sq = (norm_x_sq - 2.0 * inner + norm_m_sq).max(0.0);
    Ok(1.0 - libm::sqrt(residual_sq) / libm::sqrt(norm_x_sq))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the fit changes by less than this between iterations.
    pub tol: f64,
    pub seed: u64,
    pub threadlen: usize,
    pub group_size: usize,
    /// Also record the fit after every single-mode update.
    pub track_half_steps: bool,
}

impl Default for CpConfig {
    fn default() -> Self {
        Self { rank: 8, max_iters: 50, tol: 1e-5, seed: 0, threadlen: 16, group_size: 32, track_half_steps: false }
    }
}

impl CpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.max_iters == 0 || self.threadlen == 0 || self.group_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "rank, max_iters, threadlen and group_size must be positive: {self:?}"
            )));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidArgument(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Hooks around the per-mode kernel calls; timing layers use these.
pub trait CpObserver {
    fn mode_started(&mut self, _iteration: usize, _mode: usize) {}
    fn mode_finished(&mut self, _iteration: usize, _mode: usize, _stats: &mut ExecStats) {}
    fn iteration_finished(&mut self, _iteration: usize, _fit: f64) {}
}

impl CpObserver for () {}

/// One SpMTTKRP call made by the driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCall {
    pub iteration: usize,
    pub mode: usize,
    pub nnz: usize,
    pub out_rows: usize,
    pub out_cols: usize,
    pub stats: ExecStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpResult {
    pub model: KruskalModel,
    /// Fit after each full iteration.
    pub fit_trace: Vec<f64>,
    /// Fit after each single-mode update, when requested.
    pub half_step_fits: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub mode_calls: Vec<ModeCall>,
}

impl CpResult {
    pub fn final_fit(&self) -> f64 {
        self.fit_trace.last().copied().unwrap_or(0.0)
    }
}

pub fn cp_als<E: Executor>(t: &CooTensor, cfg: &CpConfig, exec: &E) -> Result<CpResult> {
    cp_als_with_observer(t, cfg, exec, &mut ())
}

/// CP-ALS. F-COO for all three modes is built once up front; every
/// iteration updates the modes in order, each from one SpMTTKRP call and
/// the pseudoinverse of the Hadamard product of the other two Gram
/// matrices, then normalizes the updated factor into `lambda`.
pub fn cp_als_with_observer<E: Executor, O: CpObserver + ?Sized>(
    t: &CooTensor,
    cfg: &CpConfig,
    exec: &E,
    observer: &mut O,
) -> Result<CpResult> {
    cfg.validate()?;
    if t.order() != 3 {
        return Err(Error::Order(t.order()));
    }
    if t.nnz() == 0 {
        return Err(Error::Empty);
    }
    if let Some(n) = t.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("tensor value at nonzero {n}")));
    }
    let dims = t.dims().to_vec();
    let r = cfg.rank;
    let mut warnings = Vec::new();
    if let Some(&d) = dims.iter().filter(|&&d| d < r).min() {
        warnings.push(format!("rank {r} exceeds extent {d}; Gram products will be rank deficient"));
    }

    let fcoo: Vec<FcooTensor> = (0..3)
        .map(|n| build_fcoo(t, OpKind { kind: Op::SpMttkrp, mode: n }, cfg.threadlen))
        .collect::<Result<_>>()?;
    let plans: Vec<PartitionPlan> =
        fcoo.iter().map(|f| PartitionPlan::for_fcoo(f, cfg.group_size)).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut factors: Vec<DenseMatrix<f64>> = dims
        .iter()
        .map(|&d| normalize_columns(&DenseMatrix::from_fn(d, r, |_, _| rng.gen::<f64>())).0)
        .collect();
    let mut grams: Vec<DenseMatrix<f64>> = factors.iter().map(gram).collect();
    let mut lambda = vec![1.0f64; r];

    let mut fit_trace = Vec::new();
    let mut half_step_fits = Vec::new();
    let mut mode_calls = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        for n in 0..3 {
            let (a, b) = match n {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            observer.mode_started(iter, n);
            let (m, mut stats) = sp_mttkrp(&fcoo[n], &factors[a], &factors[b], &plans[n], exec)?;
            observer.mode_finished(iter, n, &mut stats);
            mode_calls.push(ModeCall {
                iteration: iter,
                mode: n,
                nnz: stats.nnz,
                out_rows: m.rows(),
                out_cols: m.cols(),
                stats,
            });

            let v = hadamard(&grams[a], &grams[b])?;
            let updated = m.matmul(&pinv_spd(&v)?)?;
            if updated.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("factor {n} in iteration {iterations}")));
            }
            let (normalized, norms) = normalize_columns(&updated);
            factors[n] = normalized;
            grams[n] = gram(&factors[n]);
            lambda = norms;

            if cfg.track_half_steps {
                let model = KruskalModel { lambda: lambda.clone(), factors: factors.clone() };
                half_step_fits.push(compute_fit(t, &model)?);
            }
        }

        let model = KruskalModel { lambda: lambda.clone(), factors: factors.clone() };
        let fit = compute_fit(t, &model)?;
        observer.iteration_finished(iter, fit);
        let prev = fit_trace.last().copied();
        fit_trace.push(fit);
        if let Some(prev) = prev {
            if libm::fabs(fit - prev) < cfg.tol {
                converged = true;
                break;
            }
        }
    }

    Ok(CpResult {
        model: KruskalModel { lambda, factors },
        fit_trace,
        half_step_fits,
        iterations,
        converged,
        warnings,
        mode_calls,
    })
}
