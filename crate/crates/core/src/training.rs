//! Snapshot generation along loading trajectories and the four fits.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{interface_internal_force, Decomposition, Provenance, SnapshotSet};
use crate::error::{Error, Result};
use crate::fem::{solve_monolithic, FemModel, LoadCase, StateVector};
use crate::nn::{direct_loss, direct_loss_grad, pack_lower, spsd_loss, spsd_loss_grad, unpack_lower, Mlp};
use crate::pod::PodBasis;
use crate::solver::{NewtonReport, SolverOptions};
use crate::surrogate::{LlsModel, NnModel, SpsdLlsModel, SpsdNnModel};

/// `(b/2)(1 - cos(pi (t - t0)/(t1 - t0)))` on `[t0, t1]`.
pub fn cosine_ramp(b: f64, t0: f64, t1: f64, t: f64) -> Result<f64> {
    if !(t0 < t1) {
        return Err(Error::invalid(format!("ramp needs t0 < t1, got {t0} and {t1}")));
    }
    let span = t1 - t0;
    let eps = 1e-12 * span.max(t1.abs());
    if t < t0 - eps || t > t1 + eps {
        return Err(Error::invalid(format!("ramp time {t} outside [{t0}, {t1}]")));
    }
    let s = ((t - t0) / span).clamp(0.0, 1.0);
    Ok(0.5 * b * (1.0 - (std::f64::consts::PI * s).cos()))
}

/// Two-stage profile: ramp to `b1` over `[0, tb]`, then add `b2` over
/// `[tb, end]`.
pub fn two_stage_ramp(b1: f64, b2: f64, tb: f64, end: f64, t: f64) -> Result<f64> {
    if t <= tb {
        cosine_ramp(b1, 0.0, tb, t)
    } else {
        Ok(b1 + cosine_ramp(b2, tb, end, t)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub id: usize,
    pub parameters: Vec<f64>,
    pub n_steps: usize,
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    #[serde(default = "default_end_time")]
    pub end_time: f64,
}

fn default_end_time() -> f64 {
    1.0
}

impl TrajectorySpec {
    pub fn new(id: usize, parameters: Vec<f64>, n_steps: usize) -> Self {
        TrajectorySpec {
            id,
            parameters,
            n_steps,
            breakpoints: Vec::new(),
            end_time: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("trajectory needs at least one step"));
        }
        if !(self.end_time > 0.0) {
            return Err(Error::invalid("trajectory end time must be positive"));
        }
        if self.breakpoints.iter().any(|&b| !(0.0..=self.end_time).contains(&b)) {
            return Err(Error::invalid("ramp breakpoints must lie inside [0, T]"));
        }
        Ok(())
    }

    /// Step times `T k / n` for `k = 1..=n`.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.n_steps)
            .map(|k| self.end_time * k as f64 / self.n_steps as f64)
            .collect()
    }
}

/// Maps a trajectory and pseudo-time to boundary data and body force.
pub trait LoadingProfile: Sync {
    fn load_case(&self, spec: &TrajectorySpec, t: f64) -> Result<LoadCase>;
}

#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub time: f64,
    pub state: StateVector,
    pub load: LoadCase,
    pub report: NewtonReport,
}

/// Solves every step of one trajectory in order, warm-starting each solve
/// from the previous step.
pub fn run_trajectory(
    model: &FemModel,
    profile: &dyn LoadingProfile,
    spec: &TrajectorySpec,
    opts: &SolverOptions,
    include_start: bool,
) -> Result<Vec<TrajectoryStep>> {
    spec.validate()?;
    let mut times = spec.times();
    if include_start {
        times.insert(0, 0.0);
    }
    let mut out: Vec<TrajectoryStep> = Vec::with_capacity(times.len());
    for t in times {
        let wrap = |e: Error| Error::TrajectoryFailed {
            trajectory: spec.id,
            time: t,
            source: Box::new(e),
        };
        let load = profile.load_case(spec, t).map_err(wrap)?;
        let prev = out.last().map(|s| &s.state);
        let sol = solve_monolithic(model, &load, opts, prev).map_err(wrap)?;
        out.push(TrajectoryStep {
            time: t,
            state: sol.state,
            load,
            report: sol.report,
        });
    }
    Ok(out)
}

/// One snapshot column per (trajectory, step), in trajectory order.
///
/// With `preload` set to a trajectory id, `f0` is the inner interface
/// force of that trajectory at `t = 0`; otherwise `f0 = 0`.
pub fn generate_snapshots(
    model: &FemModel,
    decomp: &Decomposition,
    profile: &dyn LoadingProfile,
    specs: &[TrajectorySpec],
    opts: &SolverOptions,
    preload: Option<usize>,
) -> Result<SnapshotSet> {
    if specs.is_empty() {
        return Err(Error::invalid("no loading trajectories given"));
    }
    let runs: Vec<Result<Vec<(f64, Vec<f64>, Vec<f64>)>>> = specs
        .par_iter()
        .map(|spec| {
            let steps = run_trajectory(model, profile, spec, opts, false)?;
            steps
                .into_iter()
                .map(|s| {
                    let f = interface_internal_force(decomp, model, &s.state)?;
                    Ok((s.time, decomp.interface_trace(&s.state), f))
                })
                .collect()
        })
        .collect();
    let m = decomp.n_interface();
    let mut ucols = Vec::new();
    let mut fcols = Vec::new();
    let mut provenance = Vec::new();
    for (spec, run) in specs.iter().zip(runs) {
        for (t, u, f) in run? {
            ucols.extend(u);
            fcols.extend(f);
            provenance.push(Provenance {
                trajectory: spec.id,
                time: t,
            });
        }
    }
    let n = provenance.len();
    let f0 = match preload {
        Some(id) => {
            let spec = specs
                .iter()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::invalid(format!("preload trajectory {id} not in the list")))?;
            let load = profile.load_case(spec, 0.0)?;
            let sol = solve_monolithic(model, &load, opts, None).map_err(|e| Error::TrajectoryFailed {
                trajectory: id,
                time: 0.0,
                source: Box::new(e),
            })?;
            interface_internal_force(decomp, model, &sol.state)?
        }
        None => vec![0.0; m],
    };
    SnapshotSet::new(
        DMatrix::from_vec(m, n, ucols),
        DMatrix::from_vec(m, n, fcols),
        f0,
        decomp.interface_dofs.clone(),
        provenance,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `||Y - A X||_F^2` in reduced coordinates.
    pub objective: f64,
    /// `||Y - A X||_F / ||Y||_F`.
    pub relative_error: f64,
}

fn reduced_data(s: &SnapshotSet, phi_in: &PodBasis, phi_out: &PodBasis) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = s.n_interface();
    for b in [phi_in, phi_out] {
        if b.rows() != n {
            return Err(Error::DimensionMismatch {
                what: "basis rows",
                expected: n,
                got: b.rows(),
            });
        }
        if b.dof_order != s.dof_order {
            return Err(Error::invalid("basis and snapshots use different interface dof orders"));
        }
    }
    if s.n_snapshots() == 0 {
        return Err(Error::invalid("empty snapshot set"));
    }
    Ok((phi_in.columns.tr_mul(&s.u), phi_out.columns.tr_mul(&s.shifted_forces())))
}

fn report(y: &DMatrix<f64>, pred: &DMatrix<f64>) -> FitReport {
    let objective = (y - pred).norm_squared();
    let ny = y.norm_squared();
    FitReport {
        objective,
        relative_error: if ny > 0.0 { (objective / ny).sqrt() } else { objective.sqrt() },
    }
}

/// Minimum-norm least squares `A = Y X^+` with `X = Phi_u^T U` and
/// `Y = Phi_f^T (F - f0)`.
pub fn fit_lls(s: &SnapshotSet, phi_f: &PodBasis, phi_u: &PodBasis) -> Result<(LlsModel, FitReport)> {
    let (x, y) = reduced_data(s, phi_u, phi_f)?;
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * x.nrows().max(x.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
    if rank < x.nrows() {
        log::warn!("reduced features have rank {rank} < {}; returning the minimum-norm solution", x.nrows());
    }
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::Singular(format!("pseudo-inverse failed: {e}")))?;
    let a_hat = &y * pinv;
    let rep = report(&y, &(&a_hat * &x));
    Ok((
        LlsModel {
            phi_f: phi_f.clone(),
            phi_u: phi_u.clone(),
            a_hat,
            f0: s.f0.clone(),
        },
        rep,
    ))
}

/// LLS objective `||Y - A X||_F^2` for a given reduced operator.
pub fn lls_objective(s: &SnapshotSet, phi_f: &PodBasis, phi_u: &PodBasis, a_hat: &DMatrix<f64>) -> Result<f64> {
    let (x, y) = reduced_data(s, phi_u, phi_f)?;
    Ok((y - a_hat * x).norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpsdLlsOptions {
    pub restarts: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SpsdLlsOptions {
    fn default() -> Self {
        SpsdLlsOptions {
            restarts: 5,
            iterations: 20_000,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub(crate) fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

fn rms(m: &DMatrix<f64>) -> f64 {
    let r = (m.norm_squared() / m.len().max(1) as f64).sqrt();
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

/// `||L L^T X - Y||_F^2 / N` and its gradient in the packed lower triangle.
fn spsd_lls_loss_grad(packed: &[f64], k: usize, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let l = unpack_lower(packed, k);
    let r = &l * (l.tr_mul(x)) - y;
    let n = x.ncols().max(1) as f64;
    let loss = r.norm_squared() / n;
    let gm = &r * x.transpose() * (2.0 / n);
    let gl = (&gm + gm.transpose()) * &l;
    (loss, pack_lower(&gl))
}

/// Lower-triangular factor of the PSD part of the symmetrized least-squares
/// operator, used as a deterministic first start.
fn psd_warm_start(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = x.nrows();
    let pinv = x.clone().pseudo_inverse(1e-12 * x.amax().max(1e-300)).ok()?;
    let a = y * pinv;
    let sym = (&a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut half = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        half.column_mut(j).scale_mut(s);
    }
    // half half^T = PSD part; QR of half^T gives half = R^T Q^T, so R^T is a
    // lower-triangular factor with the same product.
    let qr = half.transpose().qr();
    let l = qr.r().transpose();
    (l.nrows() == k).then_some(l)
}

/// Multi-start Adam on `min ||Y - L L^T X||` over lower-triangular `L`.
///
/// Restart 0 starts from the PSD projection of the least-squares solution;
/// the others from seeded random factors. Inputs are scaled to unit RMS
/// and the learning rate decays geometrically by a factor 1e-3.
pub fn fit_spsd_lls(s: &SnapshotSet, phi_star: &PodBasis, opts: &SpsdLlsOptions) -> Result<(SpsdLlsModel, FitReport)> {
    let (x, y) = reduced_data(s, phi_star, phi_star)?;
    let k = phi_star.k;
    let (sx, sy) = (rms(&x), rms(&y));
    let xs = &x / sx;
    let ys = &y / sy;
    let npar = k * (k + 1) / 2;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let decay = (1e-3f64).powf(1.0 / opts.iterations.max(1) as f64);
    for restart in 0..opts.restarts.max(1) {
        let mut p = if restart == 0 {
            match psd_warm_start(&xs, &ys) {
                Some(l) => pack_lower(&l),
                None => vec![0.0; npar],
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(restart as u64 * 0x9E37_79B9));
            let mut l = DMatrix::<f64>::identity(k, k);
            for v in l.iter_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
            pack_lower(&l)
        };
        let mut adam = Adam::new(npar);
        let mut lr = opts.learning_rate;
        let (mut run_best, _) = spsd_lls_loss_grad(&p, k, &xs, &ys);
        let mut run_best_p = p.clone();
        for _ in 0..opts.iterations {
            let (loss, g) = spsd_lls_loss_grad(&p, k, &xs, &ys);
            if !loss.is_finite() {
                break;
            }
            if loss < run_best {
                run_best = loss;
                run_best_p.clone_from(&p);
            }
            adam.step(&mut p, &g, lr);
            lr *= decay;
        }
        let (last, _) = spsd_lls_loss_grad(&p, k, &xs, &ys);
        if last < run_best {
            run_best = last;
            run_best_p = p;
        }
        log::debug!("spsd-lls restart {restart}: loss {run_best:e}");
        if best.as_ref().is_none_or(|(b, _)| run_best < *b) {
            best = Some((run_best, run_best_p));
        } else {
            log::info!("spsd-lls restart {restart} did not improve ({run_best:e})");
        }
    }
    let (_, p) = best.expect("at least one restart");
    let l_hat = unpack_lower(&p, k) * (sy / sx).sqrt();
    let rep = report(&y, &(&l_hat * l_hat.tr_mul(&x)));
    Ok((
        SpsdLlsModel {
            phi_star: phi_star.clone(),
            l_hat,
            f0: s.f0.clone(),
        },
        rep,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: Vec<f64>,
    /// Epochs after which the learning rate moves to the next entry.
    pub lr_boundaries: Vec<usize>,
    pub early_stop_window: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub hidden_layers: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 35_000,
            batch_size: 500,
            lr_schedule: vec![1e-3, 2e-4, 1e-4, 5e-5, 2e-5],
            lr_boundaries: vec![500, 1000, 2000, 5000, 15000],
            early_stop_window: 200,
            train_fraction: 0.8,
            validation_fraction: 0.2,
            hidden_layers: 3,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Small-batch variant: batch 60, initial learning rate 2.5e-4.
    pub fn preload_preset() -> Self {
        let mut c = TrainConfig::default();
        c.batch_size = 60;
        c.lr_schedule[0] = 2.5e-4;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_window == 0 || self.hidden_layers == 0 {
            return Err(Error::invalid("epochs, batch size, window and hidden layers must be positive"));
        }
        if self.lr_schedule.is_empty() || self.lr_schedule.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.validation_fraction > 0.0)
            || (self.train_fraction + self.validation_fraction - 1.0).abs() > 1e-12
        {
            return Err(Error::invalid("split fractions must be positive and sum to 1"));
        }
        if self.lr_boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("learning rate boundaries must increase"));
        }
        Ok(())
    }

    /// Learning rate at `epoch`: the entry indexed by the number of
    /// boundaries already passed, clamped to the last entry.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let passed = self.lr_boundaries.iter().filter(|&&b| epoch >= b).count();
        self.lr_schedule[passed.min(self.lr_schedule.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    /// Epoch with the smallest running-mean validation loss; its weights
    /// are the ones returned.
    pub best_epoch: usize,
    pub best_running_val: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", r.epoch, r.train_loss, r.val_loss, r.lr);
        }
        s
    }
}

type LossGrad = fn(&Mlp, &DMatrix<f64>, &DMatrix<f64>) -> (f64, Vec<f64>);
type Loss = fn(&Mlp, &DMatrix<f64>, &DMatrix<f64>) -> f64;

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

fn train_network(
    net: &mut Mlp,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
    loss_grad: LossGrad,
    loss: Loss,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = x.ncols();
    if n < 5 {
        return Err(Error::invalid(format!("need at least 5 snapshots to train a network, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.rng_seed));
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n - 1);
    let mut train_idx = order[..n_train].to_vec();
    let val_idx = order[n_train..].to_vec();
    let xv = select_columns(x, &val_idx);
    let yv = select_columns(y, &val_idx);

    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut log = Vec::new();
    let window = cfg.early_stop_window;
    let mut recent: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(window);
    let mut recent_sum = 0.0;
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stopped_early = false;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ (epoch as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D));
        train_idx.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let xb = select_columns(x, batch);
            let yb = select_columns(y, batch);
            let (l, g) = loss_grad(net, &xb, &yb);
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, loss: l });
            }
            train_sum += l * batch.len() as f64;
            adam.step(&mut params, &g, lr);
            net.set_params(&params);
        }
        let train_loss = train_sum / n_train as f64;
        let val_loss = loss(net, &xv, &yv);
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        log.push(LogRow {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        epochs_run = epoch + 1;
        if recent.len() == window {
            recent_sum -= recent.pop_front().unwrap();
        }
        recent.push_back(val_loss);
        recent_sum += val_loss;
        let running = recent_sum / recent.len() as f64;
        if running < best.0 {
            best = (running, epoch, params.clone());
        } else if epoch >= best.1 + window {
            stopped_early = true;
            break;
        }
    }
    net.set_params(&best.2);
    Ok(TrainReport {
        log,
        best_epoch: best.1,
        best_running_val: best.0,
        epochs_run,
        stopped_early,
    })
}

fn hidden_sizes(input: usize, output: usize, cfg: &TrainConfig) -> Vec<usize> {
    let mut s = vec![input; cfg.hidden_layers + 1];
    s.push(output);
    s
}

/// Direct network on reduced coordinates, three hidden layers of width
/// `K_u` by default.
pub fn fit_nn(s: &SnapshotSet, phi_f: &PodBasis, phi_u: &PodBasis, cfg: &TrainConfig) -> Result<(NnModel, TrainReport)> {
    let (x, y) = reduced_data(s, phi_u, phi_f)?;
    let (sx, sy) = (rms(&x), rms(&y));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut net = Mlp::new(&hidden_sizes(phi_u.k, phi_f.k, cfg), &mut rng)?;
    let rep = train_network(&mut net, &(x / sx), &(y / sy), cfg, direct_loss_grad, direct_loss)?;
    Ok((
        NnModel {
            phi_f: phi_f.clone(),
            phi_u: phi_u.clone(),
            net,
            in_scale: sx,
            out_scale: sy,
            f0: s.f0.clone(),
        },
        rep,
    ))
}

/// Stiffness network: output packs a lower-triangular `L` whose product
/// `L L^T` multiplies the reduced input.
pub fn fit_spsd_nn(s: &SnapshotSet, phi_star: &PodBasis, cfg: &TrainConfig) -> Result<(SpsdNnModel, TrainReport)> {
    let (x, y) = reduced_data(s, phi_star, phi_star)?;
    let (sx, sy) = (rms(&x), rms(&y));
    let k = phi_star.k;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut net = Mlp::new(&hidden_sizes(k, k * (k + 1) / 2, cfg), &mut rng)?;
    let rep = train_network(&mut net, &(x / sx), &(y / sy), cfg, spsd_loss_grad, spsd_loss)?;
    Ok((
        SpsdNnModel {
            phi_star: phi_star.clone(),
            net,
            in_scale: sx,
            out_scale: sy,
            f0: s.f0.clone(),
        },
        rep,
    ))
}

/// Relative Frobenius error `||M(U) - F|| / ||F - f0||` of a surrogate on a
/// snapshot set, in the full interface space.
pub fn relative_training_error(s: &SnapshotSet, model: &crate::surrogate::Surrogate) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..s.n_snapshots() {
        let u: Vec<f64> = s.u.column(j).iter().copied().collect();
        let pred = model.evaluate(&u)?;
        for (i, p) in pred.iter().enumerate() {
            let t = s.f[(i, j)];
            num += (p - t).powi(2);
            den += (t - s.f0[i]).powi(2);
        }
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_values() {
        assert!((cosine_ramp(0.3, 0.0, 0.5, 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(cosine_ramp(0.7, 0.2, 0.9, 0.2).unwrap(), 0.0);
        assert!((cosine_ramp(0.3, 0.0, 0.5, 0.25).unwrap() - 0.15).abs() < 1e-15);
        assert!(cosine_ramp(0.3, 0.0, 0.5, 0.6).is_err());
        assert!(cosine_ramp(0.3, 0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn schedule_boundaries() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate(0), 1e-3);
        assert_eq!(c.learning_rate(499), 1e-3);
        assert_eq!(c.learning_rate(500), 2e-4);
        assert_eq!(c.learning_rate(1000), 1e-4);
        assert_eq!(c.learning_rate(2000), 5e-5);
        assert_eq!(c.learning_rate(5000), 2e-5);
        assert_eq!(c.learning_rate(30000), 2e-5);
        let p = TrainConfig::preload_preset();
        assert_eq!((p.batch_size, p.lr_schedule[0]), (60, 2.5e-4));
    }

    #[test]
    fn config_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 10, "rng_seed": 4}"#).unwrap();
        assert_eq!(c.epochs, 10);
        assert_eq!(c.batch_size, 500);
        c.validate().unwrap();
        let bad = TrainConfig {
            train_fraction: 0.7,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::new(2);
        let mut p = vec![1.0, -1.0];
        a.step(&mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-8 && (p[1] + 0.9).abs() < 1e-8, "{p:?}");
    }
}
