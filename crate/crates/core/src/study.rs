//! End-to-end runs on an exemplar: fit a model form at a basis size, solve
//! the closed coarse problem along test trajectories and compare reaction
//! QoIs against the monolithic model.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupled::{monolithic_qoi, qoi_reaction, solve_coupled, CoupledProblem, Diagnostics};
use crate::decomposition::SnapshotSet;
use crate::error::{Error, Result};
use crate::exemplar::Exemplar;
use crate::fem::StateVector;
use crate::pod::{combine_orthogonalize, compute_pod, PodBasis};
use crate::solver::SolverOptions;
use crate::surrogate::{InterfaceModel, ModelForm, Surrogate, Symmetrized};
use crate::training::{
    fit_lls, fit_nn, fit_spsd_lls, fit_spsd_nn, generate_snapshots, relative_training_error, run_trajectory,
    LoadingProfile, SpsdLlsOptions, TrainConfig, TrajectorySpec,
};

/// QoI history of one trajectory: times and one row of component values
/// per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoiHistory {
    pub trajectory: usize,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub fn training_snapshots(ex: &Exemplar, opts: &SolverOptions) -> Result<SnapshotSet> {
    generate_snapshots(&ex.model, &ex.decomp, &ex.profile, &ex.train, opts, ex.preload)
}

fn step_times(ex: &Exemplar, spec: &TrajectorySpec) -> Vec<f64> {
    let mut t = spec.times();
    if ex.preload.is_some() {
        t.insert(0, 0.0);
    }
    t
}

/// Reactions of the full model along `spec` (plus `t = 0` for preloaded
/// exemplars).
pub fn monolithic_history(ex: &Exemplar, spec: &TrajectorySpec, opts: &SolverOptions) -> Result<QoiHistory> {
    let steps = run_trajectory(&ex.model, &ex.profile, spec, opts, ex.preload.is_some())?;
    let mut values = Vec::with_capacity(steps.len());
    for s in &steps {
        values.push(
            ex.qoi
                .components
                .iter()
                .map(|&c| monolithic_qoi(&ex.model, &s.load, &s.state, &ex.qoi.node_set, c))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(QoiHistory {
        trajectory: spec.id,
        times: steps.iter().map(|s| s.time).collect(),
        values,
    })
}

/// Worst-case diagnostics over the steps of a coupled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDiagnostics {
    pub newton_iters: usize,
    pub cg_iters: usize,
    pub min_eig: Option<f64>,
    pub max_eig: Option<f64>,
    pub symmetry_defect: Option<f64>,
    /// Smallest CG Ritz value over all steps.
    pub ritz_min: f64,
    pub steps: Vec<Diagnostics>,
}

/// Optional per-step checks of a coupled solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Checks {
    pub symmetry: bool,
    pub spectrum: bool,
}

/// Load-step bisections allowed when Newton stalls on a step.
const MAX_BISECTIONS: usize = 6;

fn coupled_problem<'a>(
    ex: &'a Exemplar,
    closure: &'a dyn InterfaceModel,
    spec: &TrajectorySpec,
    opts: &SolverOptions,
    checks: Checks,
    t: f64,
) -> Result<CoupledProblem<'a>> {
    let load = ex.profile.load_case(spec, t)?;
    let mut problem = CoupledProblem::new(&ex.model, &ex.decomp, closure, load, *opts)?;
    problem.check_symmetry = checks.symmetry;
    problem.compute_spectrum = checks.spectrum;
    Ok(problem)
}

/// Solves at `t` from the converged state at the previous time; if Newton
/// does not converge the interval is halved and the midpoint solved first.
/// Diagnostics are those of the final solve with iteration counts summed.
#[allow(clippy::too_many_arguments)]
fn step_to(
    ex: &Exemplar,
    closure: &dyn InterfaceModel,
    spec: &TrajectorySpec,
    opts: &SolverOptions,
    checks: Checks,
    prev: Option<&(f64, StateVector)>,
    t: f64,
    depth: usize,
) -> Result<(StateVector, Diagnostics)> {
    let problem = coupled_problem(ex, closure, spec, opts, checks, t)?;
    match (solve_coupled(&problem, prev.map(|p| &p.1)), prev) {
        (Err(Error::NewtonNotConverged { .. }), Some(p)) if depth > 0 => {
            let mid = 0.5 * (p.0 + t);
            log::debug!("trajectory {}: bisecting step to t = {t} at {mid}", spec.id);
            let (s_mid, d_mid) = step_to(ex, closure, spec, opts, checks, Some(p), mid, depth - 1)?;
            let (s, mut d) = step_to(ex, closure, spec, opts, checks, Some(&(mid, s_mid)), t, depth - 1)?;
            d.newton_iters += d_mid.newton_iters;
            d.cg_iters += d_mid.cg_iters;
            Ok((s, d))
        }
        (r, _) => r,
    }
}

/// Coupled solve along `spec`, warm-starting each step.
pub fn coupled_history(
    ex: &Exemplar,
    closure: &dyn InterfaceModel,
    spec: &TrajectorySpec,
    opts: &SolverOptions,
    checks: Checks,
) -> Result<(QoiHistory, TrajectoryDiagnostics)> {
    let times = step_times(ex, spec);
    let mut prev: Option<(f64, StateVector)> = None;
    let mut values = Vec::with_capacity(times.len());
    let mut steps = Vec::with_capacity(times.len());
    for &t in &times {
        let wrap = |e: Error| Error::TrajectoryFailed {
            trajectory: spec.id,
            time: t,
            source: Box::new(e),
        };
        let (state, mut diag) = step_to(ex, closure, spec, opts, checks, prev.as_ref(), t, MAX_BISECTIONS).map_err(wrap)?;
        let problem = coupled_problem(ex, closure, spec, opts, checks, t).map_err(wrap)?;
        let mut row = Vec::with_capacity(ex.qoi.components.len());
        for &c in &ex.qoi.components {
            let q = qoi_reaction(&problem, &state, &ex.qoi.node_set, c)?;
            diag.qoi.insert(ex.qoi.label(c), q);
            row.push(q);
        }
        values.push(row);
        steps.push(diag);
        prev = Some((t, state));
    }
    let fold = |f: fn(f64, f64) -> f64, get: fn(&Diagnostics) -> Option<f64>| {
        steps.iter().filter_map(get).reduce(f)
    };
    let diag = TrajectoryDiagnostics {
        newton_iters: steps.iter().map(|d| d.newton_iters).sum(),
        cg_iters: steps.iter().map(|d| d.cg_iters).sum(),
        min_eig: fold(f64::min, |d| d.min_eig),
        max_eig: fold(f64::max, |d| d.max_eig),
        symmetry_defect: fold(f64::max, |d| d.symmetry_defect),
        ritz_min: steps.iter().map(|d| d.ritz_min).fold(f64::INFINITY, f64::min),
        steps,
    };
    Ok((
        QoiHistory {
            trajectory: spec.id,
            times,
            values,
        },
        diag,
    ))
}

/// Relative l2 error over time and components,
/// `||Q_pred - Q_ref||_F / ||Q_ref||_F`.
pub fn qoi_error(reference: &QoiHistory, predicted: &QoiHistory) -> Result<f64> {
    if reference.values.len() != predicted.values.len() {
        return Err(Error::DimensionMismatch {
            what: "QoI history",
            expected: reference.values.len(),
            got: predicted.values.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (r, p) in reference.values.iter().zip(&predicted.values) {
        for (a, b) in r.iter().zip(p) {
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

/// Bases used by one model form at basis size `k`.
#[derive(Debug, Clone)]
pub struct Bases {
    pub phi_f: PodBasis,
    pub phi_u: PodBasis,
}

pub fn bases(s: &SnapshotSet, k: usize) -> Result<Bases> {
    let cap = s.n_interface().min(s.n_snapshots());
    let k = k.min(cap);
    let mut phi_f = compute_pod(&s.shifted_forces(), k)?;
    let mut phi_u = compute_pod(&s.u, k)?;
    phi_f.dof_order = s.dof_order.clone();
    phi_u.dof_order = s.dof_order.clone();
    Ok(Bases { phi_f, phi_u })
}

/// Combined basis for the stiffness forms at basis size `k`. Since
/// `K* = 2k` cannot exceed the interface dimension, `k` is capped at half
/// of it.
pub fn star_basis(s: &SnapshotSet, k: usize) -> Result<PodBasis> {
    let cap = (s.n_interface() / 2).max(1);
    if k > cap {
        log::warn!("stiffness-form basis size {k} capped at {cap}");
    }
    let b = bases(s, k.min(cap))?;
    combine_orthogonalize(&b.phi_f, &b.phi_u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub train: TrainConfig,
    pub spsd_lls: SpsdLlsOptions,
}

/// Fits `form` with `K_f = K_u = k` (so `K* = 2k` for the SPSD forms, see
/// [`star_basis`]).
pub fn fit_form(s: &SnapshotSet, form: ModelForm, k: usize, settings: &FitSettings) -> Result<(Surrogate, f64)> {
    let b = bases(s, k)?;
    let model = match form {
        ModelForm::Lls => Surrogate::Lls(fit_lls(s, &b.phi_f, &b.phi_u)?.0),
        ModelForm::SpsdLls => Surrogate::SpsdLls(fit_spsd_lls(s, &star_basis(s, k)?, &settings.spsd_lls)?.0),
        ModelForm::Nn => Surrogate::Nn(fit_nn(s, &b.phi_f, &b.phi_u, &settings.train)?.0),
        ModelForm::SpsdNn => Surrogate::SpsdNn(fit_spsd_nn(s, &star_basis(s, k)?, &settings.train)?.0),
    };
    let err = relative_training_error(s, &model)?;
    Ok((model, err))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    FailedSpd,
    FailedSolver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub form: ModelForm,
    pub k: usize,
    pub training_error: f64,
    pub status: RunStatus,
    /// Per test trajectory QoI error (absent after a failure).
    pub errors: BTreeMap<usize, f64>,
    pub max_error: Option<f64>,
    pub min_eig: Option<f64>,
    pub symmetry_defect: Option<f64>,
    pub ritz_min: Option<f64>,
    pub message: Option<String>,
    /// Predicted QoI histories per test trajectory (absent after a failure).
    pub histories: Vec<QoiHistory>,
}

impl StudyRow {
    pub fn error_cell(&self) -> String {
        match (&self.status, self.max_error) {
            (RunStatus::Ok, Some(e)) => format!("{e:.6e}"),
            (RunStatus::FailedSpd, _) => "FAILED(SPD)".into(),
            _ => "FAILED(SOLVER)".into(),
        }
    }
}

pub struct Evaluation {
    pub errors: BTreeMap<usize, f64>,
    /// Smallest converged-tangent eigenvalue over all steps, when computed.
    pub min_eig: Option<f64>,
    pub symmetry_defect: Option<f64>,
    pub ritz_min: f64,
    pub histories: Vec<QoiHistory>,
}

/// Evaluates a fitted surrogate on every test trajectory.
pub fn evaluate_surrogate(
    ex: &Exemplar,
    model: &Surrogate,
    references: &[QoiHistory],
    opts: &SolverOptions,
    symmetrize: bool,
    checks: Checks,
) -> Result<Evaluation> {
    let sym = Symmetrized(model);
    let closure: &dyn InterfaceModel = if symmetrize { &sym } else { model };
    let mut errors = BTreeMap::new();
    let mut min_eig: Option<f64> = None;
    let mut symmetry_defect: Option<f64> = None;
    let mut ritz_min = f64::INFINITY;
    let mut histories = Vec::with_capacity(ex.test.len());
    for (spec, reference) in ex.test.iter().zip(references) {
        let (hist, diag) = coupled_history(ex, closure, spec, opts, checks)?;
        errors.insert(spec.id, qoi_error(reference, &hist)?);
        if let Some(e) = diag.min_eig {
            min_eig = Some(min_eig.map_or(e, |m| m.min(e)));
        }
        if let Some(e) = diag.symmetry_defect {
            symmetry_defect = Some(symmetry_defect.map_or(e, |m| m.max(e)));
        }
        ritz_min = ritz_min.min(diag.ritz_min);
        histories.push(hist);
    }
    Ok(Evaluation {
        errors,
        min_eig,
        symmetry_defect,
        ritz_min,
        histories,
    })
}

pub struct StudyInputs<'a> {
    pub exemplar: &'a Exemplar,
    pub snapshots: &'a SnapshotSet,
    pub references: &'a [QoiHistory],
    pub forms: &'a [ModelForm],
    pub ks: &'a [usize],
    pub settings: &'a FitSettings,
    pub solver: SolverOptions,
    pub symmetrize: bool,
    pub checks: Checks,
}

/// One row per (form, k), in the order of `forms` then `ks`. Runs are
/// independent and fan out over the rayon pool.
pub fn run_study(inp: &StudyInputs<'_>) -> Result<Vec<StudyRow>> {
    let jobs: Vec<(ModelForm, usize)> = inp
        .forms
        .iter()
        .flat_map(|&f| inp.ks.iter().map(move |&k| (f, k)))
        .collect();
    jobs.par_iter()
        .map(|&(form, k)| {
            let (model, training_error) = fit_form(inp.snapshots, form, k, inp.settings)?;
            let row = match evaluate_surrogate(inp.exemplar, &model, inp.references, &inp.solver, inp.symmetrize, inp.checks) {
                Ok(ev) => StudyRow {
                    form,
                    k,
                    training_error,
                    status: RunStatus::Ok,
                    max_error: ev.errors.values().copied().reduce(f64::max),
                    errors: ev.errors,
                    min_eig: ev.min_eig,
                    symmetry_defect: ev.symmetry_defect,
                    ritz_min: Some(ev.ritz_min),
                    message: None,
                    histories: ev.histories,
                },
                Err(e) => StudyRow {
                    form,
                    k,
                    training_error,
                    status: if e.is_spd_violation() {
                        RunStatus::FailedSpd
                    } else {
                        RunStatus::FailedSolver
                    },
                    errors: BTreeMap::new(),
                    max_error: None,
                    min_eig: None,
                    symmetry_defect: None,
                    ritz_min: None,
                    message: Some(e.to_string()),
                    histories: Vec::new(),
                },
            };
            log::info!("{} K={} -> {}", form, k, row.error_cell());
            Ok(row)
        })
        .collect()
}

/// CSV with one row per (form, K) and one column per test trajectory.
pub fn study_csv(rows: &[StudyRow], test_ids: &[usize]) -> String {
    let mut s = String::from("form,K,training_error,status,max_error");
    for id in test_ids {
        s.push_str(&format!(",traj_{id}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{:.6e},{},{}", r.form, r.k, r.training_error, status_str(&r.status), r.error_cell()));
        for id in test_ids {
            match r.errors.get(id) {
                Some(e) => s.push_str(&format!(",{e:.6e}")),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

fn status_str(s: &RunStatus) -> &'static str {
    match s {
        RunStatus::Ok => "ok",
        RunStatus::FailedSpd => "failed-spd",
        RunStatus::FailedSolver => "failed-solver",
    }
}
