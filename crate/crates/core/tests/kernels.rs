use ftensor_core::fcoo::{build_fcoo, Op, OpKind};
use ftensor_core::oracle::{ref_mttkrp, ref_mttkrp_unfolded, ref_ttm, ref_ttmc};
use ftensor_core::{random_coo, sp_mttkrp, sp_ttm, sp_ttmc, CooTensor, DenseMatrix, PartitionPlan, Sequential};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f32> {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0f32..1.0))
}

fn others(mode: usize) -> (usize, usize) {
    let o: Vec<usize> = (0..3).filter(|&m| m != mode).collect();
    (o[0], o[1])
}

fn plan_for(t: &CooTensor, op: OpKind, threadlen: usize, group: usize) -> (ftensor_core::FcooTensor, PartitionPlan) {
    let f = build_fcoo(t, op, threadlen).unwrap();
    let p = PartitionPlan::for_fcoo(&f, group).unwrap();
    (f, p)
}

#[test]
fn ttm_random_matches_oracle_for_every_threadlen() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = random_coo(&[8, 8, 8], 64, 42).unwrap();
    for mode in 0..3 {
        let u = rand_matrix(8, 4, &mut rng);
        let expected = ref_ttm(&t, &u, mode).unwrap();
        for threadlen in [1, 3, 8, 64] {
            let (f, p) = plan_for(&t, OpKind::new(Op::SpTtm, mode).unwrap(), threadlen, 2);
            let (y, _) = sp_ttm(&f, &u, &p, &Sequential).unwrap();
            let err = y.rel_err_against(&expected).expect("same fibers");
            assert!(err < 1e-5, "mode {mode} threadlen {threadlen}: {err}");
        }
    }
}

#[test]
fn mttkrp_random_matches_both_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random_coo(&[8, 8, 8], 200, 7).unwrap();
    for mode in 0..3 {
        let b = rand_matrix(8, 4, &mut rng);
        let c = rand_matrix(8, 4, &mut rng);
        let direct = ref_mttkrp(&t, &b, &c, mode).unwrap();
        let unfolded = ref_mttkrp_unfolded(&t, &b, &c, mode).unwrap();
        let (f, p) = plan_for(&t, OpKind::new(Op::SpMttkrp, mode).unwrap(), 5, 3);
        let (m, _) = sp_mttkrp(&f, &b, &c, &p, &Sequential).unwrap();
        assert!(m.rel_frobenius_err(&direct) < 1e-5);
        assert!(m.rel_frobenius_err(&unfolded) < 1e-5);
    }
}

#[test]
fn ttmc_random_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_coo(&[6, 6, 6], 90, 9).unwrap();
    for mode in 0..3 {
        let u2 = rand_matrix(6, 2, &mut rng);
        let u3 = rand_matrix(6, 3, &mut rng);
        let expected = ref_ttmc(&t, &u2, &u3, mode).unwrap();
        let (f, p) = plan_for(&t, OpKind::new(Op::SpTtmc, mode).unwrap(), 4, 2);
        let (y, _) = sp_ttmc(&f, &u2, &u3, &p, &Sequential).unwrap();
        assert_eq!(y.shape(), (6, 6));
        assert!(y.rel_frobenius_err(&expected) < 1e-5);
    }
}

#[test]
fn mttkrp_pair_sharing_slice_sums_hadamard_terms() {
    let t = CooTensor::from_entries(vec![1, 2, 2], &[([0u32, 0, 1], 1.5), ([0, 1, 0], -2.0)]).unwrap();
    let b = DenseMatrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
    let c = DenseMatrix::from_rows(&[[5.0f32, 6.0], [7.0, 8.0]]).unwrap();
    let (f, p) = plan_for(&t, OpKind::new(Op::SpMttkrp, 0).unwrap(), 1, 1);
    let (m, _) = sp_mttkrp(&f, &b, &c, &p, &Sequential).unwrap();
    // 1.5 * [1*7, 2*8] + -2 * [3*5, 4*6]
    assert_eq!(m.row(0), &[1.5 * 7.0 - 30.0, 1.5 * 16.0 - 48.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernels_are_plan_invariant_and_linear(
        seed in any::<u64>(),
        dims in (1usize..12, 1usize..12, 1usize..12),
        density in 0.05f64..1.0,
        mode in 0usize..3,
        alpha in -3.0f32..3.0,
    ) {
        let dims = [dims.0, dims.1, dims.2];
        let total: usize = dims.iter().product();
        let nnz = ((total as f64 * density) as usize).max(1);
        let t = random_coo(&dims, nnz, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (a, b) = others(mode);
        let b_m = rand_matrix(dims[a], 3, &mut rng);
        let c_m = rand_matrix(dims[b], 3, &mut rng);
        let oracle = ref_mttkrp(&t, &b_m, &c_m, mode).unwrap();

        let op = OpKind::new(Op::SpMttkrp, mode).unwrap();
        let (f0, p0) = plan_for(&t, op, 1, 1);
        let (base, _) = sp_mttkrp(&f0, &b_m, &c_m, &p0, &Sequential).unwrap();
        for threadlen in [1usize, 2, 3, 8, 32, 64] {
            for group in [1usize, 4, 32] {
                let (f, p) = plan_for(&t, op, threadlen, group);
                let (m, _) = sp_mttkrp(&f, &b_m, &c_m, &p, &Sequential).unwrap();
                prop_assert!(m.rel_frobenius_err(&base) <= 1e-6);
                prop_assert!(m.rel_frobenius_err(&oracle) <= 1e-5);
            }
        }

        let (fs, ps) = plan_for(&t.scaled(alpha), op, 4, 4);
        let (scaled, _) = sp_mttkrp(&fs, &b_m, &c_m, &ps, &Sequential).unwrap();
        let expected = base.scale(alpha as f64);
        let tol = 1e-6 * expected.frobenius_norm().max(1e-30);
        prop_assert!(scaled.rel_frobenius_err(&expected) * expected.frobenius_norm() <= tol.max(1e-7));

        let u = rand_matrix(dims[mode], 2, &mut rng);
        let ttm_oracle = ref_ttm(&t, &u, mode).unwrap();
        let (ft, pt) = plan_for(&t, OpKind::new(Op::SpTtm, mode).unwrap(), 3, 4);
        let (y, _) = sp_ttm(&ft, &u, &pt, &Sequential).unwrap();
        prop_assert!(y.rel_err_against(&ttm_oracle).unwrap() <= 1e-5);
    }
}
