//! Interface force and Schur condensation against test-side assemblies.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subsurr::decomposition::{interface_internal_force, schur_closure};
use subsurr::exemplar::{bar1d, cube, gap_contact, ExemplarOptions};
use subsurr::fem::{Scope, StateVector};
use subsurr::linalg::symmetric_extremes;

fn random_state(n: usize, amp: f64, seed: u64) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    StateVector {
        values: (0..n).map(|_| rng.random_range(-amp..amp)).collect(),
    }
}

/// Full assembly minus the outer assembly leaves exactly the inner
/// contribution at the interface.
#[test]
fn interface_force_is_full_minus_outer() {
    let ex = gap_contact(&ExemplarOptions::default(), true).unwrap();
    let n = ex.model.total_dofs();
    for seed in 0..3 {
        let s = random_state(n, 4e-3, seed);
        let full = ex.model.internal_force(Scope::All, &s.values).unwrap();
        let outer = ex.model.internal_force(ex.decomp.outer_scope(), &s.values).unwrap();
        let got = interface_internal_force(&ex.decomp, &ex.model, &s).unwrap();
        let scale = full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (k, &d) in ex.decomp.interface_dofs.iter().enumerate() {
            assert!((full[d] - outer[d] - got[k]).abs() <= 1e-12 * scale, "dof {d}");
        }
        for &d in &ex.decomp.inner_interior_dofs {
            assert_eq!(outer[d], 0.0, "outer assembly touches inner-interior dof {d}");
        }
    }
}

#[test]
fn partition_covers_every_dof_once() {
    for ex in [
        bar1d(&ExemplarOptions::default()).unwrap(),
        cube(&ExemplarOptions::default()).unwrap(),
        gap_contact(&ExemplarOptions::default(), false).unwrap(),
    ] {
        let d = &ex.decomp;
        let mut all: Vec<usize> = d
            .interface_dofs
            .iter()
            .chain(&d.inner_interior_dofs)
            .chain(&d.outer_dofs)
            .chain(&d.dirichlet_dofs)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..ex.model.total_dofs()).collect::<Vec<_>>());
        let mut elems: Vec<usize> = d.inner_elements.iter().chain(&d.outer_elements).copied().collect();
        elems.sort_unstable();
        assert_eq!(elems, (0..ex.model.mesh.n_elements()).collect::<Vec<_>>());
    }
}

/// Condenses by solving the inner Dirichlet problem with a dense LU for
/// each interface trace.
#[test]
fn schur_matches_inner_dirichlet_solves() {
    // The cube's inner block is one cell with no interior nodes, so use the
    // contact box with its springs removed.
    let mut ex = gap_contact(&ExemplarOptions::default(), false).unwrap();
    ex.model.springs.clear();
    ex.decomp.inner_springs.clear();
    let n = ex.model.total_dofs();
    assert!(!ex.decomp.inner_interior_dofs.is_empty());
    let body = ex.model.body_force_vector(None, &[3.0e2, -1.0e2, 7.0e2]).unwrap();
    let (schur, g0) = schur_closure(&ex.decomp, &ex.model, &body).unwrap();
    let g = &ex.decomp.interface_dofs;
    let i = &ex.decomp.inner_interior_dofs;
    let zero = vec![0.0; n];
    let k = ex.model.tangent(ex.decomp.inner_scope(), &zero).unwrap().to_dense();
    let kii = DMatrix::from_fn(i.len(), i.len(), |a, b| k[(i[a], i[b])]);
    let lu = kii.lu();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..4 {
        let ug = DVector::from_fn(g.len(), |_, _| rng.random_range(-1e-2..1e-2));
        let rhs = DVector::from_fn(i.len(), |a, _| body[i[a]] - (0..g.len()).map(|b| k[(i[a], g[b])] * ug[b]).sum::<f64>());
        let ui = lu.solve(&rhs).unwrap();
        let mut u = vec![0.0; n];
        for (a, &d) in g.iter().enumerate() {
            u[d] = ug[a];
        }
        for (a, &d) in i.iter().enumerate() {
            u[d] = ui[a];
        }
        let f = ex.model.internal_force(ex.decomp.inner_scope(), &u).unwrap();
        let want = DVector::from_fn(g.len(), |a, _| f[g[a]]);
        let got = &schur * &ug + DVector::from_column_slice(&g0);
        let rel = (&got - &want).norm() / want.norm();
        assert!(rel < 1e-10, "relative difference {rel:e}");
    }
}

#[test]
fn schur_is_symmetric_positive_semidefinite() {
    for ex in [bar1d(&ExemplarOptions::default()).unwrap(), cube(&ExemplarOptions::default()).unwrap()] {
        let zero = vec![0.0; ex.model.total_dofs()];
        let (s, _) = schur_closure(&ex.decomp, &ex.model, &zero).unwrap();
        assert_eq!((&s - s.transpose()).amax(), 0.0);
        let (lo, hi) = symmetric_extremes(&s);
        assert!(lo >= -1e-10 * hi, "min eigenvalue {lo:e}, max {hi:e}");
    }
}

#[test]
fn schur_refuses_inner_springs() {
    let ex = gap_contact(&ExemplarOptions::default(), false).unwrap();
    let zero = vec![0.0; ex.model.total_dofs()];
    let e = schur_closure(&ex.decomp, &ex.model, &zero).unwrap_err();
    assert!(e.to_string().contains("linear inner domain"), "{e}");
}
