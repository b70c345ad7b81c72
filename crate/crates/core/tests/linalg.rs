use nalgebra::DMatrix;
use proptest::prelude::*;
use tfnewton::harness::gen_spd;
use tfnewton::linalg::{matmul, solve_spd, spectral_norm_est, sym_eigenvalues, DenseMatrix};

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn rel_frob(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| DenseMatrix::from_vec(rows, cols, v).unwrap())
}

#[test]
fn matmul_hand_cases() {
    let i2 = DenseMatrix::identity(2);
    assert_eq!(matmul(&i2, &i2).unwrap(), i2);
    let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let p = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let want = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![4.0, 3.0]]).unwrap();
    assert_eq!(matmul(&a, &p).unwrap(), want);
    assert_eq!(matmul(&a, &DenseMatrix::zeros(2, 3)).unwrap(), DenseMatrix::zeros(2, 3));
}

#[test]
fn matmul_rejects_inner_mismatch() {
    assert!(matmul(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 3)).is_err());
}

#[test]
fn from_vec_rejects_bad_input() {
    assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
}

#[test]
fn spectral_norm_hand_cases() {
    assert!((spectral_norm_est(&DenseMatrix::diag(&[3.0, 1.0]), 50, 7) - 3.0).abs() <= 1e-9);
    assert_eq!(spectral_norm_est(&DenseMatrix::identity(4), 10, 1), 1.0);
}

#[test]
fn spectral_norm_matches_eigen_oracle_on_spd() {
    for seed in 0..10 {
        let a = gen_spd(8, 50.0, seed).unwrap();
        let oracle = to_na(&a).symmetric_eigen().eigenvalues.amax();
        let est = spectral_norm_est(&a, 500, seed);
        assert!((est - oracle).abs() <= 1e-6 * oracle, "seed {seed}: {est} vs {oracle}");
    }
}

#[test]
fn solve_spd_hand_cases_and_residual() {
    let b = DenseMatrix::from_fn(3, 2, |i, j| (i + 3 * j) as f64);
    assert_eq!(solve_spd(&DenseMatrix::identity(3), &b).unwrap(), b);
    let x = solve_spd(&DenseMatrix::diag(&[2.0, 4.0]), &DenseMatrix::identity(2)).unwrap();
    assert!(rel_frob(&x, &DenseMatrix::diag(&[0.5, 0.25])) <= 1e-16);
    for seed in 0..10 {
        let a = gen_spd(6, 1e3, seed).unwrap();
        let inv = solve_spd(&a, &DenseMatrix::identity(6)).unwrap();
        let r = matmul(&a, &inv).unwrap().sub(&DenseMatrix::identity(6)).unwrap().frobenius_norm();
        assert!(r <= 1e-10, "seed {seed}: residual {r}");
    }
}

#[test]
fn solve_spd_reproduces_identity_up_to_kappa_1e6() {
    for seed in 0..5 {
        let a = gen_spd(6, 1e6, seed).unwrap();
        let inv = solve_spd(&a, &DenseMatrix::identity(6)).unwrap();
        let r = rel_frob(&matmul(&a, &inv).unwrap(), &DenseMatrix::identity(6));
        assert!(r <= 1e-10, "seed {seed}: {r}");
    }
}

#[test]
fn solve_spd_rejects_indefinite_and_asymmetric() {
    let indef = DenseMatrix::diag(&[1.0, -1.0]);
    assert!(solve_spd(&indef, &DenseMatrix::identity(2)).is_err());
    let asym = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
    assert!(solve_spd(&asym, &DenseMatrix::identity(2)).is_err());
}

#[test]
fn solve_spd_matches_nalgebra_cholesky() {
    let a = gen_spd(7, 100.0, 3).unwrap();
    let b = DenseMatrix::from_fn(7, 3, |i, j| ((i * 7 + j) as f64).sin());
    let ours = solve_spd(&a, &b).unwrap();
    let oracle = to_na(&a).cholesky().unwrap().solve(&to_na(&b));
    let diff = (to_na(&ours) - oracle.clone()).norm() / oracle.norm();
    assert!(diff <= 1e-12, "{diff}");
}

#[test]
fn jacobi_eigenvalues_match_nalgebra() {
    for seed in 0..5 {
        let a = gen_spd(8, 30.0, seed).unwrap();
        let ours = sym_eigenvalues(&a).unwrap();
        let mut oracle: Vec<f64> = to_na(&a).symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        for (x, y) in ours.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-10 * oracle[7], "{x} vs {y}");
        }
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let m = DenseMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) - 1e-300);
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    assert_eq!(DenseMatrix::read_csv(&buf[..]).unwrap(), m);
}

proptest! {
    #[test]
    fn matmul_matches_nalgebra(a in matrix(5, 7), b in matrix(7, 4)) {
        let ours = to_na(&matmul(&a, &b).unwrap());
        let oracle = to_na(&a) * to_na(&b);
        prop_assert!((ours - oracle).norm() <= 1e-13);
    }

    #[test]
    fn matmul_is_associative(d in 1usize..16, seed in any::<u64>()) {
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0 };
        let a = DenseMatrix::from_fn(d, d, |_, _| next());
        let b = DenseMatrix::from_fn(d, d, |_, _| next());
        let c = DenseMatrix::from_fn(d, d, |_, _| next());
        let left = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let right = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let scale = right.frobenius_norm().max(1e-300);
        prop_assert!(left.sub(&right).unwrap().frobenius_norm() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn spectral_norm_below_frobenius(a in matrix(6, 6), seed in any::<u64>()) {
        prop_assert!(spectral_norm_est(&a, 30, seed) <= a.frobenius_norm() * (1.0 + 1e-12));
    }
}
