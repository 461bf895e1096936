//! The coarse problem closed by an interface model: outer elements plus
//! `M(u_G)` at the interface, solved with Newton and CG.

use std::cell::Cell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decomposition::Decomposition;
use crate::error::{Error, Result};
use crate::fem::{FemModel, LoadCase, StateVector};
use crate::linalg::{conjugate_gradient, symmetric_extremes, CgOptions, CgReport, CsrMatrix, LinearOperator};
use crate::solver::{newton, NonlinearSystem, SolverOptions};
use crate::surrogate::{InterfaceModel, InterfaceStiffness};

pub struct CoupledProblem<'a> {
    pub model: &'a FemModel,
    pub decomp: &'a Decomposition,
    pub closure: &'a dyn InterfaceModel,
    pub load: LoadCase,
    pub opts: SolverOptions,
    /// Record the symmetry defect of every tangent (dense, small problems).
    pub check_symmetry: bool,
    /// Dense extreme eigenvalues of the converged tangent (up to
    /// `DENSE_SPECTRUM_LIMIT` free dofs).
    pub compute_spectrum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub form: String,
    pub newton_iters: usize,
    pub cg_iters: usize,
    /// Extremes of the CG Ritz values (Jacobi-preconditioned tangent) over
    /// all iterates.
    pub ritz_min: f64,
    pub ritz_max: f64,
    /// Extreme eigenvalues of the symmetric part of the free-dof tangent at
    /// the converged state (dense eigensolve; absent for large problems).
    pub min_eig: Option<f64>,
    pub max_eig: Option<f64>,
    /// Largest `||T - T^T||_max / ||T||_max` seen, when requested.
    pub symmetry_defect: Option<f64>,
    pub residual_history: Vec<f64>,
    pub qoi: BTreeMap<String, f64>,
}

/// Dense spectra are computed up to this many free dofs.
pub const DENSE_SPECTRUM_LIMIT: usize = 3000;

/// Outer tangent plus the interface stiffness scattered onto the interface
/// positions of the free-dof vector.
pub struct CoupledTangent {
    outer: CsrMatrix,
    iface_pos: Vec<usize>,
    stiffness: InterfaceStiffness,
    /// `(Phi, D)` completing the exact Jacobian, see
    /// [`InterfaceModel::jacobian_correction`].
    correction: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl LinearOperator for CoupledTangent {
    fn dim(&self) -> usize {
        self.outer.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.outer.mul_vec(x, y);
        let xg = DVector::from_iterator(self.iface_pos.len(), self.iface_pos.iter().map(|&p| x[p]));
        let yg = self.stiffness.apply(&xg);
        for (k, &p) in self.iface_pos.iter().enumerate() {
            y[p] += yg[k];
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = self.outer.diagonal();
        for (k, v) in self.stiffness.diagonal().into_iter().enumerate() {
            d[self.iface_pos[k]] += v;
        }
        d
    }
}

struct System<'p, 'a> {
    p: &'p CoupledProblem<'a>,
    free: Vec<usize>,
    iface_pos: Vec<usize>,
    base: Vec<f64>,
    symmetry: Cell<f64>,
}

impl System<'_, '_> {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut u = self.base.clone();
        for (k, &d) in self.free.iter().enumerate() {
            u[d] = x[k];
        }
        u
    }

    fn trace(&self, u: &[f64]) -> Vec<f64> {
        self.p.decomp.interface_dofs.iter().map(|&d| u[d]).collect()
    }
}

impl NonlinearSystem for System<'_, '_> {
    type Tangent<'b>
        = CoupledTangent
    where
        Self: 'b;

    fn n_free(&self) -> usize {
        self.free.len()
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.full(x);
        let f = self.p.model.internal_force(self.p.decomp.outer_scope(), &u)?;
        let mut r: Vec<f64> = self.free.iter().map(|&d| f[d] - self.p.load.body_force[d]).collect();
        let m = self.p.closure.evaluate(&self.trace(&u))?;
        for (k, &pos) in self.iface_pos.iter().enumerate() {
            r[pos] += m[k];
        }
        Ok(r)
    }

    fn residual_and_tangent(&self, x: &[f64]) -> Result<(Vec<f64>, CoupledTangent)> {
        let r = self.residual(x)?;
        let u = self.full(x);
        let ug = self.trace(&u);
        let outer = self.p.model.tangent(self.p.decomp.outer_scope(), &u)?.submatrix(&self.free);
        let stiffness = self.p.closure.stiffness(&ug)?;
        let correction = self.p.closure.jacobian_correction(&ug)?;
        Ok((
            r,
            CoupledTangent {
                outer,
                iface_pos: self.iface_pos.clone(),
                stiffness,
                correction,
            },
        ))
    }

    /// CG on the (symmetric) tangent `T`, then the Woodbury update for the
    /// exact Jacobian `T + P Phi D Phi^T P^T`; every inner solve is with `T`.
    /// The plain `T` step is kept as a fallback direction.
    fn solve_step(&self, t: &CoupledTangent, rhs: &[f64], cg: &CgOptions) -> Result<(Vec<Vec<f64>>, CgReport)> {
        let (x0, mut rep) = conjugate_gradient(t, rhs, cg)?;
        let Some((phi, d)) = &t.correction else {
            return Ok((vec![x0], rep));
        };
        let n = rhs.len();
        let k = phi.ncols();
        let mut y = DMatrix::zeros(n, k);
        for j in 0..k {
            let mut e = vec![0.0; n];
            for (i, &p) in t.iface_pos.iter().enumerate() {
                e[p] = phi[(i, j)];
            }
            let (yj, rj) = conjugate_gradient(t, &e, cg)?;
            rep.iterations += rj.iterations;
            rep.ritz_min = rep.ritz_min.min(rj.ritz_min);
            rep.ritz_max = rep.ritz_max.max(rj.ritz_max);
            y.set_column(j, &DVector::from_vec(yj));
        }
        let gather = |v: &[f64]| DVector::from_iterator(k, (0..k).map(|j| t.iface_pos.iter().enumerate().map(|(i, &p)| phi[(i, j)] * v[p]).sum()));
        let mut ptyd = DMatrix::zeros(k, k);
        for j in 0..k {
            ptyd.set_column(j, &gather(y.column(j).as_slice()));
        }
        let small = DMatrix::identity(k, k) + ptyd * d;
        let w = small
            .lu()
            .solve(&gather(&x0))
            .ok_or_else(|| Error::Singular("surrogate Jacobian correction".into()))?;
        let x = DVector::from_column_slice(&x0) - y * (d * w);
        Ok((vec![x.as_slice().to_vec(), x0], rep))
    }

    fn force_scale(&self, x: &[f64]) -> Result<f64> {
        let u = self.full(x);
        let f = self.p.model.internal_force(self.p.decomp.outer_scope(), &u)?;
        let m = self.p.closure.evaluate(&self.trace(&u))?;
        Ok(f.iter().chain(&m).chain(&self.p.load.body_force).map(|v| v * v).sum::<f64>().sqrt())
    }

    fn inspect_tangent(&self, t: &CoupledTangent) -> Result<()> {
        if self.p.check_symmetry {
            let d = t.to_dense();
            let scale = d.amax();
            let defect = (&d - d.transpose()).amax() / if scale > 0.0 { scale } else { 1.0 };
            self.symmetry.set(self.symmetry.get().max(defect));
        }
        Ok(())
    }
}

impl<'a> CoupledProblem<'a> {
    pub fn new(
        model: &'a FemModel,
        decomp: &'a Decomposition,
        closure: &'a dyn InterfaceModel,
        load: LoadCase,
        opts: SolverOptions,
    ) -> Result<Self> {
        let p = CoupledProblem {
            model,
            decomp,
            closure,
            load,
            opts,
            check_symmetry: false,
            compute_spectrum: true,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.closure.dof_order() != self.decomp.interface_dofs.as_slice() {
            return Err(Error::invalid(
                "interface model dof order does not match the decomposition",
            ));
        }
        let n = self.model.total_dofs();
        if self.load.body_force.len() != n {
            return Err(Error::DimensionMismatch {
                what: "body force",
                expected: n,
                got: self.load.body_force.len(),
            });
        }
        if !self.load.dirichlet.keys().copied().eq(self.decomp.dirichlet_dofs.iter().copied()) {
            return Err(Error::invalid("load case Dirichlet dofs differ from the decomposition"));
        }
        Ok(())
    }

    fn system(&self, initial: Option<&StateVector>) -> Result<System<'_, 'a>> {
        let n = self.model.total_dofs();
        let free = self.decomp.coarse_free_dofs();
        let pos: BTreeMap<usize, usize> = free.iter().enumerate().map(|(k, &d)| (d, k)).collect();
        let iface_pos = self.decomp.interface_dofs.iter().map(|d| pos[d]).collect();
        let mut base = match initial {
            Some(s) if s.len() == n => s.values.clone(),
            Some(s) => {
                return Err(Error::DimensionMismatch {
                    what: "initial state",
                    expected: n,
                    got: s.len(),
                })
            }
            None => vec![0.0; n],
        };
        for &d in &self.decomp.inner_interior_dofs {
            base[d] = 0.0;
        }
        for (&d, &v) in &self.load.dirichlet {
            base[d] = v;
        }
        Ok(System {
            p: self,
            free,
            iface_pos,
            base,
            symmetry: Cell::new(0.0),
        })
    }

    /// Free-dof tangent at `state` as a dense matrix.
    pub fn tangent_dense(&self, state: &StateVector) -> Result<nalgebra::DMatrix<f64>> {
        let sys = self.system(Some(state))?;
        let x: Vec<f64> = sys.free.iter().map(|&d| sys.base[d]).collect();
        let (_, t) = sys.residual_and_tangent(&x)?;
        Ok(t.to_dense())
    }
}

/// Solves the closed coarse problem. The returned state has full length;
/// inner-interior entries are zero.
pub fn solve_coupled(problem: &CoupledProblem<'_>, initial: Option<&StateVector>) -> Result<(StateVector, Diagnostics)> {
    let sys = problem.system(initial)?;
    let x0: Vec<f64> = sys.free.iter().map(|&d| sys.base[d]).collect();
    let form = problem.closure.form_name();
    let (x, report) = newton(&sys, x0, &problem.opts).map_err(|e| match e {
        Error::SpdViolation {
            iteration, curvature, ..
        } => Error::SpdViolation {
            iteration,
            curvature,
            context: Some(format!("surrogate form {form}")),
        },
        other => other,
    })?;
    let state = StateVector { values: sys.full(&x) };
    let (min_eig, max_eig) = if problem.compute_spectrum && sys.free.len() <= DENSE_SPECTRUM_LIMIT {
        let (lo, hi) = assembled_tangent_spectrum(problem, &state)?;
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };
    let diag = Diagnostics {
        form,
        newton_iters: report.iterations,
        cg_iters: report.cg_iterations,
        ritz_min: report.ritz_min,
        ritz_max: report.ritz_max,
        min_eig,
        max_eig,
        symmetry_defect: problem.check_symmetry.then(|| sys.symmetry.get()),
        residual_history: report.residual_history,
        qoi: BTreeMap::new(),
    };
    Ok((state, diag))
}

/// Extreme eigenvalues of the symmetric part of the free-dof tangent.
pub fn assembled_tangent_spectrum(problem: &CoupledProblem<'_>, state: &StateVector) -> Result<(f64, f64)> {
    Ok(symmetric_extremes(&problem.tangent_dense(state)?))
}

fn reaction_sum(
    model: &FemModel,
    load: &LoadCase,
    forces: &[f64],
    node_set: &str,
    component: usize,
) -> Result<f64> {
    if component >= model.dofmap.dofs_per_node {
        return Err(Error::invalid(format!("component {component} out of range")));
    }
    let nodes = model.mesh.node_set(node_set)?;
    let mut total = 0.0;
    for &n in nodes {
        let d = model.dofmap.dof(n, component);
        if !load.dirichlet.contains_key(&d) {
            return Err(Error::invalid(format!(
                "node set '{node_set}' is not fully constrained in component {component}"
            )));
        }
        total += forces[d] - load.body_force[d];
    }
    Ok(total)
}

/// Summed reaction force of a constrained node set in one component.
pub fn qoi_reaction(problem: &CoupledProblem<'_>, state: &StateVector, node_set: &str, component: usize) -> Result<f64> {
    let f = problem.model.internal_force(problem.decomp.outer_scope(), &state.values)?;
    reaction_sum(problem.model, &problem.load, &f, node_set, component)
}

/// Same quantity for a monolithic solution.
pub fn monolithic_qoi(model: &FemModel, load: &LoadCase, state: &StateVector, node_set: &str, component: usize) -> Result<f64> {
    let f = model.internal_force(crate::fem::Scope::All, &state.values)?;
    reaction_sum(model, load, &f, node_set, component)
}
