//! Batch commands behind the `subsurr` binary. Each command reads a JSON
//! config, writes its artifacts into an output directory and records them
//! in `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis1d::{verify_model_classes, Bar1dCase};
use crate::coupled::{qoi_reaction, solve_coupled, CoupledProblem, Diagnostics};
use crate::decomposition::{schur_closure, SnapshotSet};
use crate::error::{Error, Result};
use crate::exemplar::{build, Exemplar, ExemplarKind, ExemplarOptions};
use crate::pod::{compute_pod, rank_for_energy, residual_energy};
use crate::plot::LinePlot;
use crate::solver::SolverOptions;
use crate::study::{
    bases, coupled_history, monolithic_history, qoi_error, run_study, study_csv, training_snapshots, Checks, FitSettings,
    QoiHistory, RunStatus, StudyInputs, StudyRow, TrajectoryDiagnostics, star_basis,
};
use crate::surrogate::{InterfaceModel, LinearClosure, ModelForm, Surrogate, Symmetrized};
use crate::training::{
    fit_lls, fit_nn, fit_spsd_lls, fit_spsd_nn, relative_training_error, LoadingProfile, SpsdLlsOptions, TrainConfig,
    TrajectorySpec,
};

/// Exit codes of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_SPD: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_spd_violation() {
        return EXIT_SPD;
    }
    match e {
        Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::Json(_)
        | Error::Io(_)
        | Error::UnsupportedVersion { .. }
        | Error::Checksum
        | Error::Format(_) => EXIT_USAGE,
        _ => EXIT_SOLVER,
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub seed: Option<u64>,
    /// Output directory; the current directory when absent.
    pub out: Option<PathBuf>,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("bad config {}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} not found: {}", path.display())))
    }
}

fn parse_form(s: &str) -> Result<ModelForm> {
    s.parse()
}

/// Output files written by a command, with their SHA-256 digests.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    pub created_unix: u64,
    pub config: serde_json::Value,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub outputs: BTreeMap<String, String>,
}

struct Out {
    dir: PathBuf,
    manifest: Manifest,
}

impl Out {
    fn new<C: Serialize>(common: &Common, command: &str, config: &C) -> Result<Self> {
        let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        Ok(Out {
            dir,
            manifest: Manifest {
                command: command.into(),
                seed: common.seed,
                created_unix: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                config: serde_json::to_value(config)?,
                ..Manifest::default()
            },
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = fs::read(self.path(name))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.manifest.outputs.insert(name.into(), hex);
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        if let Some(parent) = self.path(name).parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(self.path(name), contents)?;
        self.record(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn summary<T: Serialize>(&mut self, key: &str, value: T) -> Result<()> {
        self.manifest.summary.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    fn finish(self) -> Result<Manifest> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.path("manifest.json"), text)?;
        Ok(self.manifest)
    }
}

/// Exemplar with optional replacement trajectory lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExemplarConfig {
    pub exemplar: ExemplarKind,
    #[serde(default)]
    pub options: ExemplarOptions,
    #[serde(default)]
    pub train: Option<Vec<TrajectorySpec>>,
    #[serde(default)]
    pub test: Option<Vec<TrajectorySpec>>,
}

impl ExemplarConfig {
    pub fn build(&self) -> Result<Exemplar> {
        let mut ex = build(self.exemplar, &self.options)?;
        if let Some(t) = &self.train {
            ex.train = t.clone();
        }
        if let Some(t) = &self.test {
            ex.test = t.clone();
        }
        if ex.train.is_empty() {
            return Err(Error::invalid("trajectory list is empty"));
        }
        for t in ex.train.iter().chain(&ex.test) {
            t.validate()?;
            ex.profile.load_case(t, 0.0)?;
        }
        Ok(ex)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    #[serde(flatten)]
    pub exemplar: ExemplarConfig,
    #[serde(default)]
    pub solver: SolverOptions,
}

/// Runs the training trajectories and writes `snapshots.bin`.
pub fn cmd_generate(config: &Path, common: &Common) -> Result<Manifest> {
    let cfg: GenerateConfig = read_config(config)?;
    let ex = cfg.exemplar.build()?;
    let mut out = Out::new(common, "generate", &cfg)?;
    let s = training_snapshots(&ex, &cfg.solver)?;
    s.save(&out.path("snapshots.bin"))?;
    out.record("snapshots.bin")?;
    out.summary("n_snapshots", s.n_snapshots())?;
    out.summary("n_interface", s.n_interface())?;
    out.summary("n_trajectories", ex.train.len())?;
    log::info!("generated {} snapshots on {} interface dofs", s.n_snapshots(), s.n_interface());
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PodConfig {
    pub snapshots: PathBuf,
    /// Basis size; when absent, the smallest size whose residual energy is
    /// at most `energy_tol`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub energy_tol: Option<f64>,
}

/// Writes `phi_f.bin`, `phi_u.bin`, `phi_star.bin` and the energy curves.
pub fn cmd_pod(config: &Path, common: &Common) -> Result<Manifest> {
    let cfg: PodConfig = read_config(config)?;
    require_file(&cfg.snapshots, "snapshot file")?;
    let s = SnapshotSet::load(&cfg.snapshots)?;
    let full_f = compute_pod(&s.shifted_forces(), 1)?;
    let full_u = compute_pod(&s.u, 1)?;
    let k = match (cfg.k, cfg.energy_tol) {
        (Some(k), _) => k,
        (None, Some(tol)) => rank_for_energy(&full_f.singular_values, tol)
            .max(rank_for_energy(&full_u.singular_values, tol))
            .max(1),
        (None, None) => return Err(Error::invalid("pod config needs k or energy_tol")),
    };
    let b = bases(&s, k)?;
    let star = star_basis(&s, k)?;
    let mut out = Out::new(common, "pod", &cfg)?;
    for (name, basis) in [("phi_f.bin", &b.phi_f), ("phi_u.bin", &b.phi_u), ("phi_star.bin", &star)] {
        basis.save(&out.path(name))?;
        out.record(name)?;
    }
    let kmax = full_f.singular_values.len().min(full_u.singular_values.len());
    let mut csv = String::from("K,residual_energy_f,residual_energy_u\n");
    let mut ef = Vec::new();
    let mut eu = Vec::new();
    for kk in 1..=kmax {
        let f = residual_energy(&full_f, kk)?;
        let u = residual_energy(&full_u, kk)?;
        csv.push_str(&format!("{kk},{f:.6e},{u:.6e}\n"));
        ef.push((kk as f64, f));
        eu.push((kk as f64, u));
    }
    out.write("pod_energy.csv", &csv)?;
    let mut plot = LinePlot::new("POD residual energy", "K", "residual energy")
        .series("forces", ef)
        .series("displacements", eu);
    plot.log_y = true;
    out.write("pod_energy.svg", &plot.to_svg())?;
    out.summary("k", b.phi_f.k)?;
    out.summary("k_star", star.k)?;
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainJob {
    pub snapshots: PathBuf,
    pub form: String,
    pub k: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub spsd_lls: SpsdLlsOptions,
}

/// Fits one model form; writes `model.bin`, `training_log.csv` and
/// `config.json` (the resolved configuration).
pub fn cmd_train(config: &Path, common: &Common) -> Result<Manifest> {
    let mut cfg: TrainJob = read_config(config)?;
    let form = parse_form(&cfg.form)?;
    if cfg.k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if let Some(seed) = common.seed {
        cfg.train.rng_seed = seed;
        cfg.spsd_lls.seed = seed;
    }
    cfg.train.validate()?;
    require_file(&cfg.snapshots, "snapshot file")?;
    let s = SnapshotSet::load(&cfg.snapshots)?;
    let b = bases(&s, cfg.k)?;
    let mut out = Out::new(common, "train", &cfg)?;
    out.json("config.json", &cfg)?;
    let (model, log) = match form {
        ModelForm::Lls => {
            let (m, r) = fit_lls(&s, &b.phi_f, &b.phi_u)?;
            out.summary("objective", r.objective)?;
            out.summary("relative_objective", r.relative_error * r.relative_error)?;
            (Surrogate::Lls(m), format!("iteration,objective,relative_error\n0,{:e},{:e}\n", r.objective, r.relative_error))
        }
        ModelForm::SpsdLls => {
            let (m, r) = fit_spsd_lls(&s, &star_basis(&s, cfg.k)?, &cfg.spsd_lls)?;
            out.summary("objective", r.objective)?;
            (
                Surrogate::SpsdLls(m),
                format!("iteration,objective,relative_error\n{},{:e},{:e}\n", cfg.spsd_lls.iterations, r.objective, r.relative_error),
            )
        }
        ModelForm::Nn => {
            let (m, r) = fit_nn(&s, &b.phi_f, &b.phi_u, &cfg.train)?;
            out.summary("best_epoch", r.best_epoch)?;
            (Surrogate::Nn(m), r.to_csv())
        }
        ModelForm::SpsdNn => {
            let (m, r) = fit_spsd_nn(&s, &star_basis(&s, cfg.k)?, &cfg.train)?;
            out.summary("best_epoch", r.best_epoch)?;
            (Surrogate::SpsdNn(m), r.to_csv())
        }
    };
    model.save(&out.path("model.bin"))?;
    out.record("model.bin")?;
    out.write("training_log.csv", &log)?;
    let err = relative_training_error(&s, &model)?;
    out.summary("training_error", err)?;
    log::info!("trained {form} K={}: relative training error {err:.3e}", cfg.k);
    out.finish()
}

/// Interface closure used by `solve`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClosureSpec {
    /// Exact condensation of the (linear) inner domain.
    Schur,
    /// A trained model file.
    Model { path: PathBuf },
    /// Fixed affine closure `K u + g0` on the interface dofs.
    Linear {
        stiffness: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveJob {
    #[serde(flatten)]
    pub exemplar: ExemplarConfig,
    pub closure: ClosureSpec,
    #[serde(default)]
    pub symmetrize: bool,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Also solve the full model and report QoI errors.
    #[serde(default = "yes")]
    pub reference: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub trajectory: usize,
    pub diagnostics: TrajectoryDiagnostics,
    pub qoi_error: Option<f64>,
}

fn qoi_csv(ex: &Exemplar, hists: &[(QoiHistory, Option<QoiHistory>)]) -> String {
    let mut s = String::from("trajectory,t");
    for &c in &ex.qoi.components {
        s.push_str(&format!(",{}", ex.qoi.label(c)));
    }
    for &c in &ex.qoi.components {
        s.push_str(&format!(",{}_ref", ex.qoi.label(c)));
    }
    s.push('\n');
    for (h, r) in hists {
        for (i, t) in h.times.iter().enumerate() {
            s.push_str(&format!("{},{t}", h.trajectory));
            for v in &h.values[i] {
                s.push_str(&format!(",{v:.12e}"));
            }
            for j in 0..ex.qoi.components.len() {
                match r {
                    Some(r) => s.push_str(&format!(",{:.12e}", r.values[i][j])),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
    }
    s
}

fn linear_closure(ex: &Exemplar, stiffness: &[Vec<f64>], offset: Option<&Vec<f64>>) -> Result<LinearClosure> {
    let n = ex.decomp.n_interface();
    if stiffness.len() != n || stiffness.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "closure stiffness",
            expected: n,
            got: stiffness.len(),
        });
    }
    let k = DMatrix::from_fn(n, n, |i, j| stiffness[i][j]);
    let g0 = offset.cloned().unwrap_or_else(|| vec![0.0; n]);
    LinearClosure::new("linear", k, g0, ex.decomp.interface_dofs.clone())
}

/// Exact condensation solved step by step (the offset follows the body
/// force of each load case).
fn schur_history(ex: &Exemplar, spec: &TrajectorySpec, opts: &SolverOptions) -> Result<(QoiHistory, TrajectoryDiagnostics)> {
    let mut times = spec.times();
    if ex.preload.is_some() {
        times.insert(0, 0.0);
    }
    let mut values = Vec::new();
    let mut steps: Vec<Diagnostics> = Vec::new();
    for &t in &times {
        let load = ex.profile.load_case(spec, t)?;
        let (k, g0) = schur_closure(&ex.decomp, &ex.model, &load.body_force)?;
        let closure = LinearClosure::new("schur", k, g0, ex.decomp.interface_dofs.clone())?;
        let problem = CoupledProblem::new(&ex.model, &ex.decomp, &closure, load, *opts)?;
        let (state, mut diag) = solve_coupled(&problem, None).map_err(|e| Error::TrajectoryFailed {
            trajectory: spec.id,
            time: t,
            source: Box::new(e),
        })?;
        let mut row = Vec::new();
        for &c in &ex.qoi.components {
            let q = qoi_reaction(&problem, &state, &ex.qoi.node_set, c)?;
            diag.qoi.insert(ex.qoi.label(c), q);
            row.push(q);
        }
        values.push(row);
        steps.push(diag);
    }
    let diag = TrajectoryDiagnostics {
        newton_iters: steps.iter().map(|d| d.newton_iters).sum(),
        cg_iters: steps.iter().map(|d| d.cg_iters).sum(),
        min_eig: steps.iter().filter_map(|d| d.min_eig).reduce(f64::min),
        max_eig: steps.iter().filter_map(|d| d.max_eig).reduce(f64::max),
        symmetry_defect: None,
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

/// Coupled solves of the test trajectories; writes `diagnostics.json` and
/// `qoi.csv`.
pub fn cmd_solve(config: &Path, common: &Common) -> Result<Manifest> {
    let cfg: SolveJob = read_config(config)?;
    let ex = cfg.exemplar.build()?;
    if ex.test.is_empty() {
        return Err(Error::invalid("no test trajectories to solve"));
    }
    let model = match &cfg.closure {
        ClosureSpec::Model { path } => {
            require_file(path, "model file")?;
            Some(Surrogate::load(path)?)
        }
        _ => None,
    };
    let linear = match &cfg.closure {
        ClosureSpec::Linear { stiffness, offset } => Some(linear_closure(&ex, stiffness, offset.as_ref())?),
        _ => None,
    };
    let mut out = Out::new(common, "solve", &cfg)?;
    let checks = Checks {
        symmetry: true,
        spectrum: true,
    };
    let mut reports = Vec::new();
    let mut hists = Vec::new();
    let mut failure = None;
    for spec in &ex.test {
        let run = match (&cfg.closure, &model, &linear) {
            (ClosureSpec::Schur, _, _) => schur_history(&ex, spec, &cfg.solver),
            (_, Some(m), _) => {
                let sym = Symmetrized(m);
                let c: &dyn InterfaceModel = if cfg.symmetrize { &sym } else { m };
                coupled_history(&ex, c, spec, &cfg.solver, checks)
            }
            (_, _, Some(l)) => coupled_history(&ex, l, spec, &cfg.solver, checks),
            _ => unreachable!(),
        };
        let (hist, diag) = match run {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let reference = if cfg.reference {
            Some(monolithic_history(&ex, spec, &cfg.solver)?)
        } else {
            None
        };
        let err = reference.as_ref().map(|r| qoi_error(r, &hist)).transpose()?;
        if let Some(e) = err {
            log::info!("trajectory {}: QoI error {e:.3e}", spec.id);
        }
        reports.push(SolveReport {
            trajectory: spec.id,
            diagnostics: diag,
            qoi_error: err,
        });
        hists.push((hist, reference));
    }
    out.json("diagnostics.json", &reports)?;
    out.write("qoi.csv", &qoi_csv(&ex, &hists))?;
    if let Some(m) = reports.iter().filter_map(|r| r.qoi_error).reduce(f64::max) {
        out.summary("max_qoi_error", m)?;
    }
    match failure {
        Some(e) => {
            out.summary("failure", e.to_string())?;
            out.finish()?;
            Err(e)
        }
        None => out.finish(),
    }
}

/// Comparison of model forms over basis sizes on one exemplar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySpec {
    #[serde(flatten)]
    pub exemplar: ExemplarConfig,
    pub forms: Vec<String>,
    pub ks: Vec<usize>,
    /// Existing snapshot file; generated from the training trajectories
    /// when absent.
    #[serde(default)]
    pub snapshots: Option<PathBuf>,
    /// Training settings; the exemplar's preset when absent.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub spsd_lls: SpsdLlsOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub symmetrize: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub rows: Vec<StudyRow>,
    pub references: Vec<QoiHistory>,
    pub manifest: Manifest,
}

/// Runs a [`StudySpec`]: writes one directory per (form, K) under `runs/`,
/// the merged `study.csv`, `error_vs_k.svg` and one `qoi_<id>.svg` per test
/// trajectory.
pub fn run_study_spec(spec: &StudySpec, common: &Common) -> Result<StudyOutcome> {
    if spec.forms.is_empty() || spec.ks.is_empty() {
        return Err(Error::invalid("study needs nonempty form and K lists"));
    }
    if spec.ks.contains(&0) {
        return Err(Error::invalid("basis sizes must be positive"));
    }
    let forms = spec.forms.iter().map(|f| parse_form(f)).collect::<Result<Vec<_>>>()?;
    let ex = spec.exemplar.build()?;
    if ex.test.is_empty() {
        return Err(Error::invalid("study needs test trajectories"));
    }
    let snapshots = match &spec.snapshots {
        Some(p) => {
            require_file(p, "snapshot file")?;
            SnapshotSet::load(p)?
        }
        None => training_snapshots(&ex, &spec.solver)?,
    };
    let mut train = spec.train.clone().unwrap_or_else(|| ex.train_config.clone());
    let mut spsd_lls = spec.spsd_lls;
    if let Some(seed) = common.seed {
        train.rng_seed = seed;
        spsd_lls.seed = seed;
    }
    train.validate()?;
    let references = ex
        .test
        .iter()
        .map(|t| monolithic_history(&ex, t, &spec.solver))
        .collect::<Result<Vec<_>>>()?;
    let settings = FitSettings { train, spsd_lls };
    let rows = run_study(&StudyInputs {
        exemplar: &ex,
        snapshots: &snapshots,
        references: &references,
        forms: &forms,
        ks: &spec.ks,
        settings: &settings,
        solver: spec.solver,
        symmetrize: spec.symmetrize,
        checks: Checks::default(),
    })?;

    let common = Common {
        seed: common.seed,
        out: common.out.clone().or_else(|| spec.output_dir.clone()),
    };
    let mut out = Out::new(&common, "study", spec)?;
    for r in &rows {
        let dir = format!("runs/{}_K{}", r.form, r.k);
        out.json(&format!("{dir}/row.json"), r)?;
    }
    let ids: Vec<usize> = ex.test.iter().map(|t| t.id).collect();
    out.write("study.csv", &study_csv(&rows, &ids))?;

    let mut plot = LinePlot::new(&format!("{}: max relative QoI error", ex.kind), "K", "relative error");
    plot.log_y = true;
    for &f in &forms {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.form == f)
            .filter_map(|r| r.max_error.map(|e| (r.k as f64, e)))
            .collect();
        plot = plot.series(f.as_str(), pts);
    }
    out.write("error_vs_k.svg", &plot.to_svg())?;

    let best: Vec<&StudyRow> = forms
        .iter()
        .filter_map(|&f| {
            rows.iter()
                .filter(|r| r.form == f && r.status == RunStatus::Ok)
                .min_by(|a, b| a.max_error.partial_cmp(&b.max_error).unwrap_or(std::cmp::Ordering::Equal))
        })
        .collect();
    let comp = ex.qoi.components[0];
    for (i, reference) in references.iter().enumerate() {
        let pick = |h: &QoiHistory| h.times.iter().zip(&h.values).map(|(&t, v)| (t, v[0])).collect::<Vec<_>>();
        let mut p = LinePlot::new(
            &format!("trajectory {}: {}", reference.trajectory, ex.qoi.label(comp)),
            "pseudo-time",
            "reaction",
        )
        .series("full model", pick(reference));
        for r in &best {
            p = p.series(&format!("{} K={}", r.form, r.k), pick(&r.histories[i]));
        }
        out.write(&format!("qoi_{}.svg", reference.trajectory), &p.to_svg())?;
    }
    out.summary("n_snapshots", snapshots.n_snapshots())?;
    out.summary(
        "best",
        best.iter()
            .map(|r| (r.form.as_str().to_string(), (r.k, r.max_error)))
            .collect::<BTreeMap<_, _>>(),
    )?;
    let manifest = out.finish()?;
    Ok(StudyOutcome {
        rows,
        references,
        manifest,
    })
}

pub fn cmd_study(config: &Path, common: &Common) -> Result<Manifest> {
    let spec: StudySpec = read_config(config)?;
    Ok(run_study_spec(&spec, common)?.manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Analyze1dConfig {
    #[serde(default)]
    pub case: Bar1dCase,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_draws() -> usize {
    100
}

impl Default for Analyze1dConfig {
    fn default() -> Self {
        Analyze1dConfig {
            case: Bar1dCase::default(),
            draws: default_draws(),
            seed: 0,
        }
    }
}

/// Checks the model-class claims on the 1D bar; writes `analysis1d.txt`
/// and `analysis1d.json`. Fails with a solver exit code when a check does
/// not hold.
pub fn cmd_analyze1d(config: Option<&Path>, common: &Common) -> Result<Manifest> {
    let mut cfg: Analyze1dConfig = match config {
        Some(p) => read_config(p)?,
        None => Analyze1dConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let report = verify_model_classes(&cfg.case, cfg.draws, cfg.seed)?;
    let mut out = Out::new(common, "analyze1d", &cfg)?;
    out.write("analysis1d.txt", &report.to_text())?;
    out.json("analysis1d.json", &report)?;
    out.summary("all_passed", report.all_passed())?;
    print!("{}", report.to_text());
    let passed = report.all_passed();
    let m = out.finish()?;
    if passed {
        Ok(m)
    } else {
        Err(Error::CheckFailed("one or more model-class checks did not hold".into()))
    }
}
