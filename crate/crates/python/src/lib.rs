//! Python bindings: exemplars, snapshots, POD, the four surrogate forms and
//! the coupled solve.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use subsurr::analysis1d::{verify_model_classes, Bar1dCase};
use subsurr::decomposition::{schur_closure, SnapshotSet};
use subsurr::exemplar::{build, Exemplar, ExemplarKind, ExemplarOptions};
use subsurr::pod::{compute_pod, PodBasis};
use subsurr::solver::SolverOptions;
use subsurr::study::{coupled_history, fit_form, monolithic_history, qoi_error, training_snapshots, Checks, FitSettings};
use subsurr::surrogate::{InterfaceModel, InterfaceStiffness, LinearClosure, ModelForm, Surrogate, Symmetrized};
use subsurr::training::{relative_training_error, SpsdLlsOptions, TrainConfig};

create_exception!(subsurr, SpdError, PyRuntimeError, "The assembled coarse operator is not SPD.");
create_exception!(subsurr, SolverError, PyRuntimeError, "A nonlinear or linear solve failed.");

fn err(e: subsurr::Error) -> PyErr {
    use subsurr::Error as E;
    if e.is_spd_violation() {
        return SpdError::new_err(e.to_string());
    }
    match e {
        E::InvalidInput(_)
        | E::DimensionMismatch { .. }
        | E::Json(_)
        | E::Io(_)
        | E::UnsupportedVersion { .. }
        | E::Checksum
        | E::Format(_) => PyValueError::new_err(e.to_string()),
        other => SolverError::new_err(other.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(v: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = v.len();
    let c = v.first().map_or(0, Vec::len);
    if v.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, c, |i, j| v[i][j]))
}

/// Preset model with its decomposition and train/test trajectories.
#[pyclass(module = "subsurr", name = "Exemplar")]
struct PyExemplar {
    inner: Exemplar,
}

#[pymethods]
impl PyExemplar {
    #[new]
    #[pyo3(signature = (kind, n_steps=None))]
    fn new(kind: &str, n_steps: Option<usize>) -> PyResult<Self> {
        let kind: ExemplarKind = kind.parse().map_err(err)?;
        let opts = ExemplarOptions {
            n_steps,
            ..ExemplarOptions::default()
        };
        Ok(PyExemplar {
            inner: build(kind, &opts).map_err(err)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.as_str().to_string()
    }

    #[getter]
    fn total_dofs(&self) -> usize {
        self.inner.model.total_dofs()
    }

    #[getter]
    fn interface_dofs(&self) -> Vec<usize> {
        self.inner.decomp.interface_dofs.clone()
    }

    #[getter]
    fn train_ids(&self) -> Vec<usize> {
        self.inner.train.iter().map(|t| t.id).collect()
    }

    #[getter]
    fn test_ids(&self) -> Vec<usize> {
        self.inner.test.iter().map(|t| t.id).collect()
    }

    #[getter]
    fn k_sweep(&self) -> Vec<usize> {
        self.inner.k_sweep.clone()
    }

    /// Runs the training trajectories on the full model.
    fn snapshots(&self, py: Python<'_>) -> PyResult<PySnapshots> {
        let ex = &self.inner;
        let s = py.detach(|| training_snapshots(ex, &SolverOptions::default())).map_err(err)?;
        Ok(PySnapshots { inner: s })
    }

    /// Exact Schur closure `(K, g0)` for a body force of zero.
    fn schur(&self) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let zero = vec![0.0; self.inner.model.total_dofs()];
        let (k, g0) = schur_closure(&self.inner.decomp, &self.inner.model, &zero).map_err(err)?;
        Ok((rows(&k), g0))
    }

    /// QoI history `(times, values)` of the full model on a test trajectory.
    fn reference(&self, py: Python<'_>, trajectory: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let spec = self.spec(trajectory)?;
        let ex = &self.inner;
        let h = py.detach(|| monolithic_history(ex, &spec, &SolverOptions::default())).map_err(err)?;
        Ok((h.times, h.values))
    }

    /// Coupled solve of a test trajectory with `model` as the interface
    /// closure. Returns `(times, values, relative_qoi_error)`.
    #[pyo3(signature = (model, trajectory, symmetrize=false))]
    fn solve(
        &self,
        py: Python<'_>,
        model: &PySurrogate,
        trajectory: usize,
        symmetrize: bool,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, f64)> {
        let spec = self.spec(trajectory)?;
        let ex = &self.inner;
        let m = &model.inner;
        py.detach(|| {
            let opts = SolverOptions::default();
            let sym = Symmetrized(m);
            let closure: &dyn InterfaceModel = if symmetrize { &sym } else { m };
            let (h, _) = coupled_history(ex, closure, &spec, &opts, Checks::default())?;
            let r = monolithic_history(ex, &spec, &opts)?;
            let e = qoi_error(&r, &h)?;
            Ok((h.times, h.values, e))
        })
        .map_err(err)
    }

    /// Coupled solve with an affine closure `K u + g0`.
    fn solve_linear(
        &self,
        py: Python<'_>,
        stiffness: Vec<Vec<f64>>,
        offset: Vec<f64>,
        trajectory: usize,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let spec = self.spec(trajectory)?;
        let k = matrix(&stiffness)?;
        let closure = LinearClosure::new("linear", k, offset, self.inner.decomp.interface_dofs.clone()).map_err(err)?;
        let ex = &self.inner;
        let (h, _) = py
            .detach(|| coupled_history(ex, &closure, &spec, &SolverOptions::default(), Checks::default()))
            .map_err(err)?;
        Ok((h.times, h.values))
    }

    fn __repr__(&self) -> String {
        format!(
            "Exemplar({}, dofs={}, interface={})",
            self.inner.kind.as_str(),
            self.inner.model.total_dofs(),
            self.inner.decomp.n_interface()
        )
    }
}

impl PyExemplar {
    fn spec(&self, id: usize) -> PyResult<subsurr::training::TrajectorySpec> {
        self.inner
            .test
            .iter()
            .chain(&self.inner.train)
            .find(|t| t.id == id)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("no trajectory with id {id}")))
    }
}

/// Interface displacement and force snapshots.
#[pyclass(module = "subsurr", name = "Snapshots")]
struct PySnapshots {
    inner: SnapshotSet,
}

#[pymethods]
impl PySnapshots {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySnapshots {
            inner: SnapshotSet::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn n_snapshots(&self) -> usize {
        self.inner.n_snapshots()
    }

    #[getter]
    fn n_interface(&self) -> usize {
        self.inner.n_interface()
    }

    /// Displacements, one row per interface dof.
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.u)
    }

    #[getter]
    fn f(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.f)
    }

    #[getter]
    fn f0(&self) -> Vec<f64> {
        self.inner.f0.clone()
    }
}

/// Orthonormal POD basis.
#[pyclass(module = "subsurr", name = "Basis")]
struct PyBasis {
    inner: PodBasis,
}

#[pymethods]
impl PyBasis {
    #[getter]
    fn columns(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.columns)
    }

    #[getter]
    fn singular_values(&self) -> Vec<f64> {
        self.inner.singular_values.clone()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }
}

/// First `k` left singular vectors of a snapshot matrix (list of rows).
#[pyfunction]
fn pod(matrix_rows: Vec<Vec<f64>>, k: usize) -> PyResult<PyBasis> {
    let s = matrix(&matrix_rows)?;
    Ok(PyBasis {
        inner: compute_pod(&s, k).map_err(err)?,
    })
}

/// Trained interface model of one of the forms `lls`, `spsd-lls`, `nn`,
/// `spsd-nn`.
#[pyclass(module = "subsurr", name = "Surrogate")]
struct PySurrogate {
    inner: Surrogate,
}

#[pymethods]
impl PySurrogate {
    /// Fits `form` at basis size `k`. `epochs` caps network training.
    #[staticmethod]
    #[pyo3(signature = (snapshots, form, k, epochs=None, seed=0))]
    fn fit(
        py: Python<'_>,
        snapshots: &PySnapshots,
        form: &str,
        k: usize,
        epochs: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let form: ModelForm = form.parse().map_err(err)?;
        let mut settings = FitSettings {
            train: TrainConfig::default(),
            spsd_lls: SpsdLlsOptions {
                seed,
                ..SpsdLlsOptions::default()
            },
        };
        settings.train.rng_seed = seed;
        if let Some(e) = epochs {
            settings.train.epochs = e;
        }
        let s = &snapshots.inner;
        let (m, _) = py.detach(|| fit_form(s, form, k, &settings)).map_err(err)?;
        Ok(PySurrogate { inner: m })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySurrogate {
            inner: Surrogate::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn form(&self) -> String {
        self.inner.form().as_str().to_string()
    }

    #[getter]
    fn n_interface(&self) -> usize {
        self.inner.n_interface()
    }

    fn evaluate(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.evaluate(&u).map_err(err)
    }

    /// Dense interface stiffness at `u`: `Phi* L L^T Phi*^T` for the
    /// stiffness forms, the finite-difference Jacobian otherwise.
    fn stiffness(&self, u: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let k = match self.inner.stiffness(&u).map_err(err)? {
            InterfaceStiffness::Dense(k) => k,
            InterfaceStiffness::LowRank { factor } => &factor * factor.transpose(),
        };
        Ok(rows(&k))
    }

    /// Relative Frobenius error on a snapshot set.
    fn training_error(&self, snapshots: &PySnapshots) -> PyResult<f64> {
        relative_training_error(&snapshots.inner, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Surrogate({}, interface={})", self.inner.form(), self.inner.n_interface())
    }
}

/// Model-class checks on the 1D bar; returns `(all_passed, report_text)`.
#[pyfunction]
#[pyo3(signature = (n=15, draws=100, seed=0))]
fn analyze1d(n: usize, draws: usize, seed: u64) -> PyResult<(bool, String)> {
    let case = Bar1dCase {
        n,
        ..Bar1dCase::default()
    };
    let r = verify_model_classes(&case, draws, seed).map_err(err)?;
    Ok((r.all_passed(), r.to_text()))
}

#[pymodule]
#[pyo3(name = "subsurr")]
fn subsurr_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExemplar>()?;
    m.add_class::<PySnapshots>()?;
    m.add_class::<PyBasis>()?;
    m.add_class::<PySurrogate>()?;
    m.add_function(wrap_pyfunction!(pod, m)?)?;
    m.add_function(wrap_pyfunction!(analyze1d, m)?)?;
    m.add("SpdError", m.py().get_type::<SpdError>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
