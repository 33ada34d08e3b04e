//! Slow reference implementations used as ground truth.
//!
//! Nothing here shares accumulation code with [`crate::exec`]: every oracle
//! walks the raw coordinate list in `f64` and keys its output by coordinate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::coo::{matricize, CooTensor};
use crate::error::{Error, Result};
use crate::matrix::{khatri_rao, DenseMatrix};
use crate::scalar::Scalar;
use crate::semisparse::SemiSparseTensor;

/// Width limit for the explicit Khatri-Rao path of [`ref_mttkrp_unfolded`].
pub const MAX_UNFOLDED_WIDTH: u64 = 100_000;

fn others(t: &CooTensor, n: usize) -> Result<(usize, usize)> {
    if t.order() != 3 {
        return Err(Error::Order(t.order()));
    }
    if n >= 3 {
        return Err(Error::InvalidArgument(format!("mode {n} out of range")));
    }
    let o: Vec<usize> = (0..3).filter(|&m| m != n).collect();
    Ok((o[0], o[1]))
}

fn check_rows<T: Scalar>(name: &str, m: &DenseMatrix<T>, rows: usize) -> Result<()> {
    if m.rows() != rows {
        return Err(Error::Shape(format!("{name} has {} rows, expected {rows}", m.rows())));
    }
    Ok(())
}

/// TTM along mode `n`: `Y(others, :) += X(..) * u(i_n, :)`.
pub fn ref_ttm<T: Scalar>(t: &CooTensor, u: &DenseMatrix<T>, n: usize) -> Result<SemiSparseTensor<f64>> {
    let (a, b) = others(t, n)?;
    check_rows("u", u, t.dims()[n])?;
    let r = u.cols();
    let mut fibers: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    for (c, v) in t.iter() {
        let fiber = fibers.entry((c[a], c[b])).or_insert_with(|| vec![0.0; r]);
        for (x, ur) in fiber.iter_mut().zip(u.row(c[n] as usize)) {
            *x += v as f64 * ur.to_f64();
        }
    }
    let mut dims = t.dims().to_vec();
    dims[n] = r;
    let mut index_coords = Vec::with_capacity(fibers.len() * 2);
    let mut data = Vec::with_capacity(fibers.len() * r);
    for ((i, j), f) in fibers {
        index_coords.extend_from_slice(&[i, j]);
        data.extend(f);
    }
    Ok(SemiSparseTensor { dims, dense_mode: n, index_modes: vec![a, b], index_coords, rank: r, fibers: data })
}

/// MTTKRP with mode `n` as the output mode, looping directly over nonzeros:
/// `M(i_n, :) += X(..) * (b(i_a, :) * c(i_b, :))` with `a < b` the other
/// two modes.
pub fn ref_mttkrp<T: Scalar>(
    t: &CooTensor,
    b: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    n: usize,
) -> Result<DenseMatrix<f64>> {
    let (ma, mb) = others(t, n)?;
    check_rows("b", b, t.dims()[ma])?;
    check_rows("c", c, t.dims()[mb])?;
    if b.cols() != c.cols() {
        return Err(Error::Shape(format!("b has {} columns, c has {}", b.cols(), c.cols())));
    }
    let mut m = DenseMatrix::<f64>::zeros(t.dims()[n], b.cols());
    for (coord, v) in t.iter() {
        let (bj, ck) = (b.row(coord[ma] as usize), c.row(coord[mb] as usize));
        for (r, x) in m.row_mut(coord[n] as usize).iter_mut().enumerate() {
            *x += v as f64 * bj[r].to_f64() * ck[r].to_f64();
        }
    }
    Ok(m)
}

/// MTTKRP through the unfolding: `M = X_(n) (c kr b)`, forming the
/// Khatri-Rao product explicitly. Only feasible while the unfolded width
/// stays within [`MAX_UNFOLDED_WIDTH`].
pub fn ref_mttkrp_unfolded<T: Scalar>(
    t: &CooTensor,
    b: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    n: usize,
) -> Result<DenseMatrix<f64>> {
    let (ma, mb) = others(t, n)?;
    check_rows("b", b, t.dims()[ma])?;
    check_rows("c", c, t.dims()[mb])?;
    let unfolded = matricize(t, n)?;
    if unfolded.cols > MAX_UNFOLDED_WIDTH {
        return Err(Error::Overflow(format!(
            "unfolded width {} exceeds the explicit Khatri-Rao limit {MAX_UNFOLDED_WIDTH}",
            unfolded.cols
        )));
    }
    // The higher mode varies slowest in the unfolding, so it leads the
    // Khatri-Rao product.
    let kr = khatri_rao(&c.cast::<f64>(), &b.cast::<f64>())?;
    debug_assert_eq!(kr.rows() as u64, unfolded.cols);
    let mut m = DenseMatrix::<f64>::zeros(unfolded.rows, kr.cols());
    for &(i, z, v) in &unfolded.entries {
        let krz = kr.row(z as usize);
        for (x, &k) in m.row_mut(i as usize).iter_mut().zip(krz) {
            *x += v as f64 * k;
        }
    }
    Ok(m)
}

/// Both MTTKRP paths; fails when they disagree beyond `tol` relative
/// Frobenius error.
pub fn ref_mttkrp_checked<T: Scalar>(
    t: &CooTensor,
    b: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    n: usize,
    tol: f64,
) -> Result<DenseMatrix<f64>> {
    let direct = ref_mttkrp(t, b, c, n)?;
    let unfolded = ref_mttkrp_unfolded(t, b, c, n)?;
    let err = unfolded.rel_frobenius_err(&direct);
    if err > tol {
        return Err(Error::InvalidArgument(format!("MTTKRP paths disagree: relative error {err:e}")));
    }
    Ok(direct)
}

/// TTMc with mode `n` as the output mode:
/// `Y(i_n, :) += X(..) * (u2(i_a, :) kron u3(i_b, :))`.
pub fn ref_ttmc<T: Scalar>(
    t: &CooTensor,
    u2: &DenseMatrix<T>,
    u3: &DenseMatrix<T>,
    n: usize,
) -> Result<DenseMatrix<f64>> {
    let (ma, mb) = others(t, n)?;
    check_rows("u2", u2, t.dims()[ma])?;
    check_rows("u3", u3, t.dims()[mb])?;
    let (r2, r3) = (u2.cols(), u3.cols());
    let mut y = DenseMatrix::<f64>::zeros(t.dims()[n], r2 * r3);
    for (coord, v) in t.iter() {
        let (uj, uk) = (u2.row(coord[ma] as usize), u3.row(coord[mb] as usize));
        let row = y.row_mut(coord[n] as usize);
        for p in 0..r2 {
            for q in 0..r3 {
                row[p * r3 + q] += v as f64 * uj[p].to_f64() * uk[q].to_f64();
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coo::random_coo;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn ttm_cases() {
        let empty = CooTensor::empty(vec![2, 2, 2]).unwrap();
        let y = ref_ttm(&empty, &DenseMatrix::<f64>::zeros(2, 3), 2).unwrap();
        assert_eq!(y.nfibers(), 0);

        let t = CooTensor::from_entries(vec![1, 2, 3], &[([0u32, 1, 2], 3.0)]).unwrap();
        let u = DenseMatrix::from_rows(&[[0.0f64, 0.0], [0.0, 0.0], [1.0, -1.0]]).unwrap();
        let y = ref_ttm(&t, &u, 2).unwrap();
        assert_eq!((y.index_coords.as_slice(), y.fibers.as_slice()), (&[0u32, 1][..], &[3.0, -3.0][..]));
        assert!(ref_ttm(&t, &u, 1).is_err());
    }

    #[test]
    fn mttkrp_single_nonzero() {
        let t = CooTensor::from_entries(vec![1, 2, 3], &[([0u32, 1, 2], 2.0)]).unwrap();
        let b = DenseMatrix::from_rows(&[[0.0f64, 0.0], [1.0, 2.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[[0.0f64, 0.0], [0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(ref_mttkrp(&t, &b, &c, 0).unwrap().row(0), &[6.0, 16.0]);
        assert_eq!(ref_mttkrp_unfolded(&t, &b, &c, 0).unwrap().row(0), &[6.0, 16.0]);
    }

    #[test]
    fn mttkrp_all_ones_counts_terms() {
        let mut entries = Vec::new();
        for i in 0..2u32 {
            for j in 0..2u32 {
                for k in 0..2u32 {
                    entries.push(([i, j, k], 1.0f32));
                }
            }
        }
        let t = CooTensor::from_entries(vec![2, 2, 2], &entries).unwrap();
        let ones = DenseMatrix::filled(2, 1, 1.0f64);
        for n in 0..3 {
            let m = ref_mttkrp_checked(&t, &ones, &ones, n, 0.0).unwrap();
            assert_eq!(m, DenseMatrix::filled(2, 1, 4.0));
        }
    }

    #[test]
    fn mttkrp_paths_agree_on_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dims = [6, 7, 8];
        for seed in 0..10 {
            let t = random_coo(&dims, 150, seed).unwrap();
            for n in 0..3 {
                let o: Vec<usize> = (0..3).filter(|&m| m != n).collect();
                let b = rand_matrix(dims[o[0]], 3, &mut rng);
                let c = rand_matrix(dims[o[1]], 3, &mut rng);
                let a = ref_mttkrp(&t, &b, &c, n).unwrap();
                let u = ref_mttkrp_unfolded(&t, &b, &c, n).unwrap();
                assert!(u.rel_frobenius_err(&a) < 1e-12);
            }
        }
    }

    #[test]
    fn unfolded_path_guard() {
        let t = random_coo(&[2, 400, 400], 10, 1).unwrap();
        let b = DenseMatrix::<f64>::zeros(400, 1);
        assert!(matches!(ref_mttkrp_unfolded(&t, &b, &b, 0), Err(Error::Overflow(_))));
    }

    #[test]
    fn ttmc_rank_one_equals_mttkrp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_coo(&[4, 5, 6], 40, 2).unwrap();
        let b = rand_matrix(4, 1, &mut rng);
        let c = rand_matrix(6, 1, &mut rng);
        assert_eq!(ref_ttmc(&t, &b, &c, 1).unwrap(), ref_mttkrp(&t, &b, &c, 1).unwrap());
    }

    #[test]
    fn ttmc_single_nonzero() {
        let t = CooTensor::from_entries(vec![1, 2, 1], &[([0u32, 1, 0], 2.0)]).unwrap();
        let u2 = DenseMatrix::from_rows(&[[0.0f64, 0.0], [1.0, 2.0]]).unwrap();
        let u3 = DenseMatrix::from_rows(&[[3.0f64]]).unwrap();
        assert_eq!(ref_ttmc(&t, &u2, &u3, 0).unwrap().row(0), &[6.0, 12.0]);
    }
}
