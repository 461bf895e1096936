//! FEM kernels against test-side oracles: an independent tensor-form hex
//! stiffness, the exact bar solution under uniform load, brute-force active
//! set enumeration for gap springs, and finite-difference tangents.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subsurr::exemplar::{cube, gap_contact, ExemplarOptions};
use subsurr::fem::{hex_stiffness, solve_monolithic, FemModel, GapSpring, LoadCase, Material, Scope, StateVector};
use subsurr::mesh::build_bar;
use subsurr::solver::SolverOptions;
use subsurr::training::{LoadingProfile, TrajectorySpec};

const SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

fn lame(e: f64, nu: f64) -> (f64, f64) {
    (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
}

/// Reference derivatives of the trilinear shape functions.
fn dshape(xi: [f64; 3]) -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    for (a, s) in SIGNS.iter().enumerate() {
        let f = |i: usize| 1.0 + s[i] * xi[i];
        out[a] = Vector3::new(s[0] * f(1) * f(2), f(0) * s[1] * f(2), f(0) * f(1) * s[2]) / 8.0;
    }
    out
}

/// 3-point Gauss rule in every direction: `(point, weight)`.
fn gauss3() -> Vec<([f64; 3], f64)> {
    let p = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
    let w = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mut out = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out.push(([p[i], p[j], p[k]], w[i] * w[j] * w[k]));
            }
        }
    }
    out
}

/// Physical gradients and `det J` at a reference point.
fn physical(coords: &[[f64; 3]; 8], xi: [f64; 3]) -> ([Vector3<f64>; 8], f64) {
    let d = dshape(xi);
    let mut j = Matrix3::zeros();
    for a in 0..8 {
        j += Vector3::from(coords[a]) * d[a].transpose();
    }
    let jit = j.try_inverse().unwrap().transpose();
    let mut g = [Vector3::zeros(); 8];
    for a in 0..8 {
        g[a] = jit * d[a];
    }
    (g, j.determinant())
}

fn strain(g: &[Vector3<f64>; 8], u: &[f64]) -> Matrix3<f64> {
    let mut h = Matrix3::zeros();
    for a in 0..8 {
        h += Vector3::new(u[3 * a], u[3 * a + 1], u[3 * a + 2]) * g[a].transpose();
    }
    (h + h.transpose()) * 0.5
}

/// `K_ij = int eps(e_i) : sigma(e_j)` with `sigma = lambda tr(eps) I + 2 mu eps`.
fn oracle_hex(coords: &[[f64; 3]; 8], e: f64, nu: f64) -> DMatrix<f64> {
    let (lambda, mu) = lame(e, nu);
    let mut k = DMatrix::zeros(24, 24);
    for (xi, w) in gauss3() {
        let (g, det) = physical(coords, xi);
        let eps: Vec<Matrix3<f64>> = (0..24)
            .map(|i| {
                let mut u = [0.0; 24];
                u[i] = 1.0;
                strain(&g, &u)
            })
            .collect();
        for i in 0..24 {
            for jj in 0..24 {
                let s = Matrix3::identity() * (lambda * eps[jj].trace()) + eps[jj] * (2.0 * mu);
                k[(i, jj)] += eps[i].dot(&s) * det * w;
            }
        }
    }
    k
}

fn brick(o: [f64; 3], m: Matrix3<f64>) -> [[f64; 3]; 8] {
    let mut c = [[0.0; 3]; 8];
    for (a, s) in SIGNS.iter().enumerate() {
        let x = Vector3::from(o) + m * Vector3::from(*s);
        c[a] = [x[0], x[1], x[2]];
    }
    c
}

#[test]
fn hex_stiffness_matches_tensor_oracle_on_brick() {
    let c = brick([0.3, -0.2, 1.0], Matrix3::from_diagonal(&Vector3::new(0.5, 0.3, 0.8)));
    let mat = Material::new(2.0e5, 0.3).unwrap();
    let k = hex_stiffness(&c, &mat, 0).unwrap();
    let o = oracle_hex(&c, 2.0e5, 0.3);
    let rel = (&k - &o).norm() / o.norm();
    assert!(rel < 1e-12, "relative difference {rel:e}");
}

#[test]
fn hex_stiffness_matches_tensor_oracle_on_parallelepiped() {
    let m = Matrix3::new(0.6, 0.1, 0.05, -0.05, 0.4, 0.1, 0.02, 0.08, 0.5);
    let c = brick([0.0; 3], m);
    let mat = Material::new(7.0, 0.45).unwrap();
    let k = hex_stiffness(&c, &mat, 0).unwrap();
    let o = oracle_hex(&c, 7.0, 0.45);
    let rel = (&k - &o).norm() / o.norm();
    assert!(rel < 1e-12, "relative difference {rel:e}");
}

fn distorted(rng: &mut ChaCha8Rng) -> [[f64; 3]; 8] {
    let mut c = brick([0.0; 3], Matrix3::identity());
    for p in &mut c {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    c
}

fn volume(coords: &[[f64; 3]; 8]) -> f64 {
    gauss3().into_iter().map(|(xi, w)| physical(coords, xi).1 * w).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// A linear displacement field reproduces its constant strain exactly,
    /// so `u^T K u = V eps : C : eps`; rigid motions carry no force.
    #[test]
    fn hex_patch_test(seed in any::<u64>(), nu in 0.0f64..0.45) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = distorted(&mut rng);
        let mat = Material::new(3.0, nu).unwrap();
        let k = hex_stiffness(&c, &mat, 0).unwrap();
        let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let t = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let field = |m: &Matrix3<f64>| DVector::from_iterator(24, c.iter().flat_map(|x| {
            let v = m * Vector3::from(*x) + t;
            [v[0], v[1], v[2]]
        }));
        let u = field(&a);
        let eps = (a + a.transpose()) * 0.5;
        let (lambda, mu) = lame(3.0, nu);
        let sig = Matrix3::identity() * (lambda * eps.trace()) + eps * (2.0 * mu);
        let expect = volume(&c) * eps.dot(&sig);
        let got = u.dot(&(&k * &u));
        prop_assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1.0), "{got} vs {expect}");

        let w = a - a.transpose();
        let f = &k * field(&w);
        prop_assert!(f.amax() <= 1e-12 * k.amax(), "rigid force {:e}", f.amax());
    }
}

#[test]
fn elasticity_matrix_matches_lame_form() {
    let (e, nu) = (210.0, 0.28);
    let d = Material::new(e, nu).unwrap().elasticity_matrix();
    let (lambda, mu) = lame(e, nu);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let eps = (m + m.transpose()) * 0.5;
        let sig = Matrix3::identity() * (lambda * eps.trace()) + eps * (2.0 * mu);
        let voigt = [eps[(0, 0)], eps[(1, 1)], eps[(2, 2)], 2.0 * eps[(1, 2)], 2.0 * eps[(0, 2)], 2.0 * eps[(0, 1)]];
        let want = [sig[(0, 0)], sig[(1, 1)], sig[(2, 2)], sig[(1, 2)], sig[(0, 2)], sig[(0, 1)]];
        for i in 0..6 {
            let got: f64 = (0..6).map(|j| d[i][j] * voigt[j]).sum();
            assert!((got - want[i]).abs() < 1e-12 * e, "row {i}: {got} vs {}", want[i]);
        }
    }
}

/// Linear elements are nodally exact for `EA u'' + b = 0`, whose solution
/// with clamped ends is `u = b x (L - x) / (2 E A)`.
#[test]
fn bar_under_uniform_load_is_the_parabola() {
    let (n, len, e, area, b) = (12, 2.5, 3.0, 0.7, 1.3);
    let model = FemModel::new(build_bar(n, len).unwrap(), Material::new(e, 0.0).unwrap(), area).unwrap();
    let mut load = LoadCase::new(n + 1);
    load.dirichlet.insert(0, 0.0);
    load.dirichlet.insert(n, 0.0);
    load.body_force = model.body_force_vector(None, &[b]).unwrap();
    let sol = solve_monolithic(&model, &load, &SolverOptions::default(), None).unwrap();
    for (i, x) in model.mesh.nodes.iter().enumerate() {
        let exact = b * x[0] * (len - x[0]) / (2.0 * e * area);
        assert!((sol.state.values[i] - exact).abs() < 1e-10, "node {i}: {} vs {exact}", sol.state.values[i]);
    }
    let r = model.reactions(&sol.state, &load).unwrap();
    assert!((r[&0] + b * len / 2.0).abs() < 1e-10 && (r[&n] + b * len / 2.0).abs() < 1e-10, "{r:?}");
}

struct SpringCase {
    model: FemModel,
    load: LoadCase,
    /// (a, b, gap, stiffness)
    springs: Vec<(usize, usize, f64, f64)>,
    k_el: f64,
}

fn spring_bar(pull: f64) -> SpringCase {
    let n = 5;
    let springs = vec![(1, 3, 0.05, 40.0), (0, 2, 0.11, 15.0), (2, 4, 0.02, 90.0)];
    let model = FemModel::new(build_bar(n, 1.0).unwrap(), Material::new(1.0, 0.0).unwrap(), 1.0)
        .unwrap()
        .with_springs(
            springs
                .iter()
                .map(|&(a, b, g, k)| GapSpring::new([a, b], vec![1.0], g, k).unwrap())
                .collect(),
        )
        .unwrap();
    let mut load = LoadCase::new(n + 1);
    load.dirichlet.insert(0, 0.0);
    load.dirichlet.insert(n, pull);
    SpringCase {
        model,
        load,
        springs,
        k_el: n as f64,
    }
}

/// Solves the linear problem for every active set and keeps the ones whose
/// openings agree with the assumed set.
fn enumerate_active_sets(c: &SpringCase) -> Vec<Vec<f64>> {
    let n = c.model.total_dofs();
    let mut out = Vec::new();
    for mask in 0..(1usize << c.springs.len()) {
        let mut k = DMatrix::zeros(n, n);
        let mut f = DVector::<f64>::zeros(n);
        for e in 0..n - 1 {
            k[(e, e)] += c.k_el;
            k[(e + 1, e + 1)] += c.k_el;
            k[(e, e + 1)] -= c.k_el;
            k[(e + 1, e)] -= c.k_el;
        }
        for (s, &(a, b, g, ks)) in c.springs.iter().enumerate() {
            if mask & (1 << s) != 0 {
                k[(a, a)] += ks;
                k[(b, b)] += ks;
                k[(a, b)] -= ks;
                k[(b, a)] -= ks;
                f[b] += ks * g;
                f[a] -= ks * g;
            }
        }
        let free: Vec<usize> = c.load.free_dofs(n);
        let mut u = DVector::zeros(n);
        for (&d, &v) in &c.load.dirichlet {
            u[d] = v;
        }
        let kff = DMatrix::from_fn(free.len(), free.len(), |i, j| k[(free[i], free[j])]);
        let rhs = DVector::from_fn(free.len(), |i, _| {
            f[free[i]] - c.load.dirichlet.iter().map(|(&d, &v)| k[(free[i], d)] * v).sum::<f64>()
        });
        let x = kff.lu().solve(&rhs).unwrap();
        for (i, &d) in free.iter().enumerate() {
            u[d] = x[i];
        }
        let consistent = c.springs.iter().enumerate().all(|(s, &(a, b, g, _))| {
            let delta = u[b] - u[a];
            if mask & (1 << s) != 0 {
                delta >= g
            } else {
                delta < g
            }
        });
        if consistent {
            out.push(u.as_slice().to_vec());
        }
    }
    out
}

#[test]
fn gap_springs_match_active_set_enumeration() {
    for pull in [0.01, 0.06, 0.12, 0.2, 0.35] {
        let c = spring_bar(pull);
        let found = enumerate_active_sets(&c);
        assert_eq!(found.len(), 1, "pull {pull}: {} consistent active sets", found.len());
        let sol = solve_monolithic(&c.model, &c.load, &SolverOptions::default(), None).unwrap();
        for (a, b) in sol.state.values.iter().zip(&found[0]) {
            assert!((a - b).abs() < 1e-10, "pull {pull}: {:?} vs {:?}", sol.state.values, found[0]);
        }
    }
}

fn fd_check(model: &FemModel, u: &[f64], v: &[f64], h: f64) -> f64 {
    let t = model.tangent(Scope::All, u).unwrap();
    let mut tv = vec![0.0; u.len()];
    t.mul_vec(v, &mut tv);
    let shift = |s: f64| -> Vec<f64> { u.iter().zip(v).map(|(a, b)| a + s * b).collect() };
    let fp = model.internal_force(Scope::All, &shift(h)).unwrap();
    let fm = model.internal_force(Scope::All, &shift(-h)).unwrap();
    let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let num: f64 = fd.iter().zip(&tv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = tv.iter().map(|a| a * a).sum::<f64>().sqrt();
    num / den
}

#[test]
fn contact_tangent_matches_finite_differences() {
    let ex = gap_contact(&ExemplarOptions::default(), true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = ex.model.total_dofs();
    let mut checked_closed = 0;
    for _ in 0..6 {
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-4e-3..4e-3)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-9;
        let near_kink = ex.model.springs.iter().any(|s| {
            let dv = s.opening(&ex.model.dofmap, &v).abs();
            (s.opening(&ex.model.dofmap, &u) - s.gap).abs() <= 2.0 * h * dv
        });
        if near_kink {
            continue;
        }
        checked_closed += ex.model.springs.iter().filter(|s| s.is_closed(&ex.model.dofmap, &u)).count();
        let rel = fd_check(&ex.model, &u, &v, h);
        assert!(rel < 1e-6, "relative tangent error {rel:e}");
    }
    assert!(checked_closed > 0, "no closed spring was exercised");
}

#[test]
fn reactions_balance_the_body_force() {
    let ex = cube(&ExemplarOptions {
        n_steps: Some(4),
        ..ExemplarOptions::default()
    })
    .unwrap();
    let spec = &ex.test[2];
    let mut load = ex.profile.load_case(spec, 0.7).unwrap();
    let density = [1.0e3, -2.0e3, 5.0e2];
    load.body_force = ex.model.body_force_vector(None, &density).unwrap();
    let sol = solve_monolithic(&ex.model, &load, &SolverOptions::default(), None).unwrap();
    let r = ex.model.reactions(&sol.state, &load).unwrap();
    let mut total = [0.0; 3];
    for (&d, &v) in &r {
        total[ex.model.dofmap.node_of(d).1] += v;
    }
    let vol = 27.0;
    for c in 0..3 {
        let applied = density[c] * vol;
        assert!((total[c] + applied).abs() < 1e-8 * applied.abs(), "component {c}: {} vs {}", total[c], -applied);
    }
}

#[test]
fn linear_cube_response_scales_with_the_load() {
    let ex = cube(&ExemplarOptions {
        n_steps: Some(4),
        ..ExemplarOptions::default()
    })
    .unwrap();
    let mut spec = TrajectorySpec::new(0, vec![0.2, -0.1, 0.05, 0.3], 4);
    spec.breakpoints = vec![0.5];
    let load = ex.profile.load_case(&spec, 0.8).unwrap();
    let mut double = load.clone();
    for v in double.dirichlet.values_mut() {
        *v *= 2.0;
    }
    let opts = SolverOptions::default();
    let a = solve_monolithic(&ex.model, &load, &opts, None).unwrap().state;
    let b = solve_monolithic(&ex.model, &double, &opts, None).unwrap().state;
    let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((2.0 * x - y).abs() < 1e-8 * scale);
    }
}

#[test]
fn prestress_alone_leaves_the_clamped_box_at_rest() {
    let ex = gap_contact(&ExemplarOptions::default(), true).unwrap();
    let spec = &ex.train[0];
    let load = ex.profile.load_case(spec, 0.0).unwrap();
    let sol = solve_monolithic(&ex.model, &load, &SolverOptions::default(), None).unwrap();
    let umax = sol.state.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(umax < 1e-12, "max |u| = {umax:e}");
    let f = ex.model.internal_force(Scope::All, &StateVector::zeros(ex.model.total_dofs()).values).unwrap();
    assert!(f.iter().any(|v| v.abs() > 1.0), "prestress produced no nodal force");
}
