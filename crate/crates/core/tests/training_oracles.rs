//! Fitting routines against closed-form optimality conditions.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subsurr::decomposition::{Provenance, SnapshotSet};
use subsurr::pod::compute_pod;
use subsurr::surrogate::Surrogate;
use subsurr::training::{
    fit_lls, fit_nn, fit_spsd_lls, fit_spsd_nn, lls_objective, relative_training_error, SpsdLlsOptions, TrainConfig,
};

fn snapshots(u: DMatrix<f64>, f: DMatrix<f64>, f0: Vec<f64>) -> SnapshotSet {
    let (m, n) = u.shape();
    let prov = (0..n)
        .map(|j| Provenance {
            trajectory: j / 10,
            time: (j % 10) as f64,
        })
        .collect();
    SnapshotSet::new(u, f, f0, (0..m).collect(), prov).unwrap()
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn lls_satisfies_the_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, n, k) = (8, 60, 3);
    let u = random(&mut rng, m, n);
    let f = random(&mut rng, m, n) + random(&mut rng, m, m) * &u;
    let f0 = vec![0.5; m];
    let s = snapshots(u, f, f0);
    let phi_u = compute_pod(&s.u, k).unwrap();
    let phi_f = compute_pod(&s.shifted_forces(), k).unwrap();
    let (model, rep) = fit_lls(&s, &phi_f, &phi_u).unwrap();
    let x = phi_u.columns.tr_mul(&s.u);
    let y = phi_f.columns.tr_mul(&s.shifted_forces());
    let grad = (&y - &model.a_hat * &x) * x.transpose();
    assert!(grad.amax() < 1e-10 * (y.norm() * x.norm()), "normal-equation residual {:e}", grad.amax());
    let base = lls_objective(&s, &phi_f, &phi_u, &model.a_hat).unwrap();
    assert!((base - rep.objective).abs() < 1e-10 * base);
    for _ in 0..10 {
        let a = &model.a_hat + random(&mut rng, k, k) * 1e-3;
        assert!(lls_objective(&s, &phi_f, &phi_u, &a).unwrap() > base);
    }
}

#[test]
fn lls_recovers_an_exact_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = 5;
    let k_true = random(&mut rng, m, m);
    let u = random(&mut rng, m, 40);
    let f0: Vec<f64> = (0..m).map(|i| i as f64).collect();
    let mut f = &k_true * &u;
    for mut c in f.column_iter_mut() {
        for i in 0..m {
            c[i] += f0[i];
        }
    }
    let s = snapshots(u, f, f0);
    let phi_u = compute_pod(&s.u, m).unwrap();
    let phi_f = compute_pod(&s.shifted_forces(), m).unwrap();
    let (model, rep) = fit_lls(&s, &phi_f, &phi_u).unwrap();
    assert!(rep.relative_error < 1e-12);
    let err = relative_training_error(&s, &Surrogate::Lls(model)).unwrap();
    assert!(err < 1e-12, "training error {err:e}");
}

fn psd_projection_objective(s: &SnapshotSet, phi: &DMatrix<f64>) -> f64 {
    let x = phi.tr_mul(&s.u);
    let y = phi.tr_mul(&s.shifted_forces());
    let a = &y * x.clone().pseudo_inverse(1e-12).unwrap();
    let eig = SymmetricEigen::new((&a + a.transpose()) * 0.5);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let p = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (y - p * x).norm_squared()
}

/// With data from an indefinite map the constrained fit must stay PSD and
/// do at least as well as clipping the unconstrained solution.
#[test]
fn spsd_lls_beats_the_clipped_least_squares_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = 4;
    let q = random(&mut rng, m, m).qr().q();
    let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.2, -0.5])) * q.transpose();
    let u = random(&mut rng, m, 50);
    let f = &a * &u + random(&mut rng, m, 50) * 0.01;
    let s = snapshots(u, f, vec![0.0; m]);
    let phi = compute_pod(&s.u, m).unwrap();
    let opts = SpsdLlsOptions {
        iterations: 4000,
        ..SpsdLlsOptions::default()
    };
    let (model, rep) = fit_spsd_lls(&s, &phi, &opts).unwrap();
    let eig = SymmetricEigen::new(&model.l_hat * model.l_hat.transpose());
    assert!(eig.eigenvalues.min() >= 0.0);
    let clipped = psd_projection_objective(&s, &phi.columns);
    assert!(rep.objective <= clipped * (1.0 + 1e-9), "{} vs clipped {}", rep.objective, clipped);
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 300,
        batch_size: 32,
        rng_seed: seed,
        ..TrainConfig::default()
    }
}

#[test]
fn network_training_is_reproducible_and_learns() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = 4;
    let u = random(&mut rng, m, 200);
    let k = random(&mut rng, m, m);
    let sym = &k * k.transpose();
    let f = &sym * &u;
    let s = snapshots(u, f, vec![0.0; m]);
    let phi = compute_pod(&s.u, m).unwrap();
    let (a, rep_a) = fit_nn(&s, &phi, &phi, &quick(1)).unwrap();
    let (b, _) = fit_nn(&s, &phi, &phi, &quick(1)).unwrap();
    let (c, _) = fit_nn(&s, &phi, &phi, &quick(2)).unwrap();
    assert_eq!(a.net, b.net);
    assert_ne!(a.net, c.net);
    let first = rep_a.log[0].val_loss;
    assert!(rep_a.best_running_val < first, "{} vs first {}", rep_a.best_running_val, first);
    assert!(rep_a.best_epoch < rep_a.epochs_run);
    if rep_a.stopped_early {
        assert_eq!(rep_a.epochs_run, rep_a.best_epoch + 200 + 1);
    }
    assert_eq!(rep_a.to_csv().lines().count(), rep_a.epochs_run + 1);

    let (spsd, rep) = fit_spsd_nn(&s, &phi, &quick(1)).unwrap();
    assert_eq!(spsd.net.output_dim(), m * (m + 1) / 2);
    assert_eq!(spsd.net.sizes(), vec![m, m, m, m, m * (m + 1) / 2]);
    assert!(rep.best_running_val < rep.log[0].val_loss);
}

#[test]
fn training_rejects_bad_settings() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let u = random(&mut rng, 3, 4);
    let s = snapshots(u.clone(), u, vec![0.0; 3]);
    let phi = compute_pod(&s.u, 2).unwrap();
    assert!(fit_nn(&s, &phi, &phi, &quick(0)).is_err(), "four snapshots cannot be split");
    let mut cfg = quick(0);
    cfg.batch_size = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = random(&mut rng, 3, 30);
    let s = snapshots(u.clone(), u, vec![0.0; 3]);
    assert!(fit_nn(&s, &phi, &phi, &cfg).is_err());
}
