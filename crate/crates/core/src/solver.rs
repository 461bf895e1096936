//! Newton iteration with a conjugate gradient inner solve, shared by the
//! monolithic and the surrogate-closed problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, CgOptions, CgReport, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative residual tolerance on the free dofs.
    pub tol: f64,
    /// Residual norms at or below this are converged regardless of `tol`.
    pub abs_floor: f64,
    pub max_iters: usize,
    pub cg_tol: f64,
    /// Zero means ten times the number of free dofs.
    pub cg_max_iters: usize,
    /// Step halvings tried when a full step does not reduce the residual;
    /// zero takes full steps.
    #[serde(default = "default_backtracks")]
    pub max_backtracks: usize,
}

fn default_backtracks() -> usize {
    10
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            abs_floor: 1e-14,
            max_iters: 50,
            cg_tol: 1e-12,
            cg_max_iters: 0,
            max_backtracks: default_backtracks(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    /// Number of linearized solves performed.
    pub iterations: usize,
    pub cg_iterations: usize,
    pub residual_history: Vec<f64>,
    /// Extremes over all Newton iterates of the CG Ritz estimates
    /// (Jacobi-preconditioned tangent).
    pub ritz_min: f64,
    pub ritz_max: f64,
}

/// A square nonlinear system `r(x) = 0` on the free dofs.
pub trait NonlinearSystem {
    type Tangent<'a>: LinearOperator
    where
        Self: 'a;

    fn n_free(&self) -> usize;

    fn residual_and_tangent(&self, x: &[f64]) -> Result<(Vec<f64>, Self::Tangent<'_>)>;

    /// Solves the linearized step `J dx = rhs`. The default runs CG on the
    /// tangent; systems whose exact Jacobian differs from the CG operator
    /// override this and may return fallback directions after the first.
    fn solve_step(&self, tangent: &Self::Tangent<'_>, rhs: &[f64], cg: &CgOptions) -> Result<(Vec<Vec<f64>>, CgReport)> {
        let (dx, rep) = conjugate_gradient(tangent, rhs, cg)?;
        Ok((vec![dx], rep))
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.residual_and_tangent(x)?.0)
    }

    /// Called for each tangent before the inner solve; lets callers record
    /// symmetry or curvature diagnostics.
    fn inspect_tangent(&self, _tangent: &Self::Tangent<'_>) -> Result<()> {
        Ok(())
    }

    /// Force magnitude the relative tolerance is measured against, in
    /// addition to the initial residual. Keeps an exact initial guess from
    /// chasing roundoff.
    fn force_scale(&self, _x: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Backtracking on the residual norm over each direction in turn: the
/// first step with sufficient decrease wins, otherwise the best point seen
/// (which may not decrease the residual).
fn line_search<S: NonlinearSystem>(system: &S, x: &[f64], dirs: &[Vec<f64>], rn: f64, max_backtracks: usize) -> Result<Vec<f64>> {
    let trial = |dx: &[f64], step: f64| -> Vec<f64> { x.iter().zip(dx).map(|(a, d)| a + step * d).collect() };
    if max_backtracks == 0 {
        return Ok(trial(&dirs[0], 1.0));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for dx in dirs {
        let mut step = 1.0;
        for _ in 0..=max_backtracks {
            let cand = trial(dx, step);
            let n = norm(&system.residual(&cand)?);
            let n = if n.is_finite() { n } else { f64::INFINITY };
            if n <= (1.0 - 1e-4 * step) * rn {
                return Ok(cand);
            }
            if best.as_ref().is_none_or(|(b, _)| n < *b) {
                best = Some((n, cand));
            }
            step *= 0.5;
        }
    }
    Ok(best.map(|(_, c)| c).unwrap_or_else(|| trial(&dirs[0], 1.0)))
}

pub fn newton<S: NonlinearSystem>(system: &S, x0: Vec<f64>, opts: &SolverOptions) -> Result<(Vec<f64>, NewtonReport)> {
    let mut x = x0;
    if x.len() != system.n_free() {
        return Err(Error::DimensionMismatch {
            what: "Newton initial guess",
            expected: system.n_free(),
            got: x.len(),
        });
    }
    let mut report = NewtonReport {
        ritz_min: f64::INFINITY,
        ritz_max: f64::NEG_INFINITY,
        ..Default::default()
    };
    let cg = CgOptions {
        tol: opts.cg_tol,
        max_iters: opts.cg_max_iters,
        ..CgOptions::default()
    };
    let mut reference = 0.0;
    for it in 0..=opts.max_iters {
        let (r, tangent) = system.residual_and_tangent(&x)?;
        let rn = norm(&r);
        if !rn.is_finite() {
            return Err(Error::NonFinite("Newton residual"));
        }
        report.residual_history.push(rn);
        if it == 0 {
            reference = rn.max(system.force_scale(&x)?);
        }
        if rn <= opts.abs_floor || rn <= opts.tol * reference {
            if report.iterations == 0 {
                report.ritz_min = 0.0;
                report.ritz_max = 0.0;
            }
            return Ok((x, report));
        }
        if it == opts.max_iters {
            break;
        }
        system.inspect_tangent(&tangent)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let (dx, cg_rep) = system.solve_step(&tangent, &rhs, &cg)?;
        report.iterations += 1;
        report.cg_iterations += cg_rep.iterations;
        report.ritz_min = report.ritz_min.min(cg_rep.ritz_min);
        report.ritz_max = report.ritz_max.max(cg_rep.ritz_max);
        x = line_search(system, &x, &dx, rn, opts.max_backtracks)?;
    }
    Err(Error::NewtonNotConverged {
        iterations: report.iterations,
        history: report.residual_history,
    })
}
