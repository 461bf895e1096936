//! Explicit matrices of the 1D bar split into coarse dofs `{1, 2, N-1, N}`
//! and fine dofs `{3..N-2}`, and numerical checks of the well-posedness
//! claims for each closure class.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_extremes, symmetry_defect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar1dCase {
    /// Interior dofs.
    pub n: usize,
    pub area: f64,
    pub youngs_modulus: f64,
    pub length: f64,
    pub body_force: f64,
}

impl Default for Bar1dCase {
    fn default() -> Self {
        Bar1dCase {
            n: 15,
            area: 1.0,
            youngs_modulus: 1.0,
            length: 1.0,
            body_force: 1.0,
        }
    }
}

impl Bar1dCase {
    pub fn dx(&self) -> f64 {
        self.length / (self.n as f64 + 1.0)
    }

    /// `A E / dx`.
    pub fn scale(&self) -> f64 {
        self.area * self.youngs_modulus / self.dx()
    }

    fn validate(&self, min_n: usize) -> Result<()> {
        if self.n < min_n {
            return Err(Error::invalid(format!("need N >= {min_n} interior dofs, got {}", self.n)));
        }
        if !(self.area > 0.0 && self.youngs_modulus > 0.0 && self.length > 0.0) {
            return Err(Error::invalid("A, E and L must be positive"));
        }
        Ok(())
    }
}

/// `K = (AE/dx) tridiag(-1, 2, -1)` and `b = dx * b * 1` on the interior
/// dofs.
pub fn build_1d_system(case: &Bar1dCase) -> Result<(DMatrix<f64>, DVector<f64>)> {
    case.validate(1)?;
    let n = case.n;
    let c = case.scale();
    let k = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 * c,
        1 => -c,
        _ => 0.0,
    });
    let b = DVector::from_element(n, case.dx() * case.body_force);
    Ok((k, b))
}

/// Coarse operators of the split bar.
#[derive(Debug, Clone, PartialEq)]
pub struct Coarse1d {
    /// `(AE/dx) [[2,-1,0,0],[-1,1,0,0],[0,0,1,-1],[0,0,-1,2]]`.
    pub k_bar: DMatrix<f64>,
    /// `dx * b` at each coarse dof.
    pub b_bar: DVector<f64>,
    /// Maps `[u_2, u_3, u_{N-2}, u_{N-1}]` to the fine-domain force on the
    /// coarse dofs.
    pub s_operator: DMatrix<f64>,
}

impl Coarse1d {
    /// `s = (AE/dx) [0; u_2 - u_3; u_{N-1} - u_{N-2}; 0]`.
    pub fn s_bar(&self, u2: f64, u3: f64, u_nm2: f64, u_nm1: f64) -> DVector<f64> {
        &self.s_operator * DVector::from_vec(vec![u2, u3, u_nm2, u_nm1])
    }
}

pub fn build_coarse_1d(case: &Bar1dCase) -> Result<Coarse1d> {
    case.validate(5)?;
    let c = case.scale();
    let k_bar = DMatrix::from_row_slice(
        4,
        4,
        &[2.0, -1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0, 2.0],
    ) * c;
    let b_bar = DVector::from_element(4, case.dx() * case.body_force);
    let s_operator = DMatrix::from_row_slice(
        4,
        4,
        &[0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    ) * c;
    Ok(Coarse1d {
        k_bar,
        b_bar,
        s_operator,
    })
}

/// Embeds a 2x2 interface operator at coarse positions 1 and 2.
pub fn embed_interface(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(4, 4);
    out.view_mut((1, 1), (2, 2)).copy_from(m);
    out
}

fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    a.qr().q().columns(0, cols).into_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub claim: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClassReport {
    pub case: Bar1dCase,
    pub monolithic_min_eig: f64,
    pub coarse_min_eig: f64,
    /// `det` of the normalized coarse matrix with `-0.5 I` at the interface.
    pub lls_singular_det: f64,
    pub lls_singular_min_eig: f64,
    pub spsd_draws: usize,
    pub spsd_min_eig: f64,
    pub lls_asymmetry: f64,
    pub elimination_error: f64,
    pub checks: Vec<Check>,
}

impl ModelClassReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "1D bar: N = {}, A = {}, E = {}, L = {}, b = {}",
            self.case.n, self.case.area, self.case.youngs_modulus, self.case.length, self.case.body_force
        );
        for c in &self.checks {
            let _ = writeln!(s, "[{}] {}: {:e}", if c.passed { "ok" } else { "FAIL" }, c.claim, c.value);
        }
        s
    }
}

/// Monolithic solution of the bar, used to check the coarse split.
fn monolithic(case: &Bar1dCase) -> Result<DVector<f64>> {
    let (k, b) = build_1d_system(case)?;
    k.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::Singular("1D stiffness".into()))
}

/// Runs the four closure-class checks on `case` with `draws` random SPSD
/// closures.
pub fn verify_model_classes(case: &Bar1dCase, draws: usize, seed: u64) -> Result<ModelClassReport> {
    let coarse = build_coarse_1d(case)?;
    let (k, _) = build_1d_system(case)?;
    let c = case.scale();
    let n = case.n;
    let mut checks = Vec::new();

    let (mono_min, _) = symmetric_extremes(&k);
    checks.push(Check {
        claim: "monolithic stiffness K is SPD (min eigenvalue)".into(),
        value: mono_min,
        passed: mono_min > 0.0,
    });

    let (coarse_min, _) = symmetric_extremes(&coarse.k_bar);
    checks.push(Check {
        claim: "coarse stiffness K_bar is SPD (min eigenvalue)".into(),
        value: coarse_min,
        passed: coarse_min > 0.0,
    });

    // Coarse equation with the exact fine-domain term reproduces the
    // monolithic coarse dofs (1-based dofs 1, 2, N-1, N).
    let u = monolithic(case)?;
    let ubar = DVector::from_vec(vec![u[0], u[1], u[n - 2], u[n - 1]]);
    let s = coarse.s_bar(u[1], u[2], u[n - 3], u[n - 2]);
    let rhs = &coarse.b_bar - &s;
    let solved = coarse
        .k_bar
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("coarse stiffness".into()))?
        .solve(&rhs);
    let elim = (&solved - &ubar).amax() / ubar.amax().max(f64::MIN_POSITIVE);
    checks.push(Check {
        claim: "coarse solve with exact fine-domain term matches the monolithic coarse dofs (relative max error)".into(),
        value: elim,
        passed: elim <= 1e-12,
    });

    let canonical = embed_interface(&(DMatrix::identity(2, 2) * -0.5));
    let normalized = &coarse.k_bar / c + &canonical;
    let det = normalized.determinant();
    let (sing_min, _) = symmetric_extremes(&(normalized * c));
    checks.push(Check {
        claim: "LLS closure Phi_f A Phi_u^T = -0.5 I makes the coarse matrix singular (|det|)".into(),
        value: det.abs(),
        passed: det.abs() <= 1e-12,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spsd_min = f64::INFINITY;
    for _ in 0..draws {
        let kstar = rng.random_range(1..=2usize);
        let phi = random_orthonormal(&mut rng, 2, kstar);
        let mut l = DMatrix::zeros(kstar, kstar);
        for i in 0..kstar {
            for j in 0..=i {
                l[(i, j)] = rng.random_range(-2.0..2.0) * c.sqrt();
            }
        }
        let kml = embed_interface(&(&phi * &l * l.transpose() * phi.transpose()));
        let (lo, _) = symmetric_extremes(&(&coarse.k_bar + kml));
        spsd_min = spsd_min.min(lo);
    }
    checks.push(Check {
        claim: format!("{draws} random SPSD closures keep the coarse matrix SPD (smallest min eigenvalue)"),
        value: spsd_min,
        passed: draws == 0 || spsd_min > 0.0,
    });

    let phi_f = random_orthonormal(&mut rng, 2, 2);
    let phi_u = random_orthonormal(&mut rng, 2, 2);
    let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0) * c);
    let t = &coarse.k_bar + embed_interface(&(phi_f * a * phi_u.transpose()));
    let asym = symmetry_defect(&t);
    checks.push(Check {
        claim: "random LLS closure gives a nonsymmetric coarse matrix (||T - T^T||_max)".into(),
        value: asym,
        passed: asym > 0.0,
    });

    Ok(ModelClassReport {
        case: *case,
        monolithic_min_eig: mono_min,
        coarse_min_eig: coarse_min,
        lls_singular_det: det,
        lls_singular_min_eig: sing_min,
        spsd_draws: draws,
        spsd_min_eig: spsd_min,
        lls_asymmetry: asym,
        elimination_error: elim,
        checks,
    })
}
