//! POD against an eigendecomposition of `S S^T`.

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subsurr::pod::{
    combine_orthogonalize, compute_pod, energy_beyond, orthonormality_defect, rank_for_energy, reconstruction_error,
    residual_energy,
};

/// Snapshot matrix with prescribed, well separated singular values.
fn graded(m: usize, n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = m.min(n);
    let q1 = DMatrix::from_fn(m, r, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let q2 = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let sv: Vec<f64> = (0..r).map(|i| 10.0 * 0.5f64.powi(i as i32)).collect();
    let s = &q1 * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sv.clone())) * q2.transpose();
    (s, sv)
}

#[test]
fn basis_spans_leading_eigenvectors_of_the_correlation() {
    let (s, _) = graded(12, 30, 3);
    let k = 4;
    let basis = compute_pod(&s, k).unwrap();
    let eig = SymmetricEigen::new(&s * s.transpose());
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let v = DMatrix::from_fn(12, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let p_pod = &basis.columns * basis.columns.transpose();
    let p_eig = &v * v.transpose();
    assert!((&p_pod - &p_eig).amax() < 1e-12, "projector difference {:e}", (&p_pod - &p_eig).amax());
    for (i, &o) in order.iter().enumerate() {
        let lam = eig.eigenvalues[o];
        let sig2 = basis.singular_values[i].powi(2);
        assert!((sig2 - lam).abs() < 1e-10 * lam.max(1.0), "mode {i}: {sig2} vs {lam}");
    }
}

#[test]
fn energy_bookkeeping_matches_singular_values() {
    let (s, sv) = graded(10, 25, 5);
    let basis = compute_pod(&s, 3).unwrap();
    let total: f64 = sv.iter().map(|v| v * v).sum();
    let tail: f64 = sv[3..].iter().map(|v| v * v).sum();
    assert!((residual_energy(&basis, 3).unwrap() - tail / total).abs() < 1e-12);
    assert!((energy_beyond(&sv, 3).unwrap() - tail / total).abs() < 1e-12);
    assert!((reconstruction_error(&basis.columns, &s) - tail / total).abs() < 1e-12);
    let k = rank_for_energy(&sv, 1e-3);
    assert!(energy_beyond(&sv, k).unwrap() <= 1e-3);
    assert!(k == 1 || energy_beyond(&sv, k - 1).unwrap() > 1e-3);
}

#[test]
fn sign_convention_and_rank_errors() {
    let (s, _) = graded(8, 8, 1);
    let b = compute_pod(&s, 8).unwrap();
    for c in b.columns.column_iter() {
        let imax = c.iamax();
        assert!(c[imax] > 0.0);
    }
    assert!(compute_pod(&s, 0).is_err());
    assert!(compute_pod(&s, 9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bases_are_orthonormal(m in 2usize..12, n in 2usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let k = 1 + (seed as usize) % m.min(n);
        let b = compute_pod(&s, k).unwrap();
        prop_assert!(orthonormality_defect(&b.columns) < 1e-12);
        prop_assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn combined_basis_spans_both_inputs(m in 4usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = m / 2;
        let sf = DMatrix::from_fn(m, 3 * m, |_, _| rng.random_range(-1.0..1.0));
        let su = DMatrix::from_fn(m, 3 * m, |_, _| rng.random_range(-1.0..1.0));
        let pf = compute_pod(&sf, k).unwrap();
        let pu = compute_pod(&su, k).unwrap();
        let star = combine_orthogonalize(&pf, &pu).unwrap();
        prop_assert_eq!(star.k, 2 * k);
        prop_assert!(orthonormality_defect(&star.columns) < 1e-10);
        let proj = &star.columns * star.columns.transpose();
        for b in [&pf.columns, &pu.columns] {
            let r = (&proj * b - b).amax();
            prop_assert!(r < 1e-10, "input column outside the combined span: {r:e}");
        }
    }
}
