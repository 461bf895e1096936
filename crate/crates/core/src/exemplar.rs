//! Preset problems: the 1D bar, the linear cube, and the gap-spring contact
//! cube with and without preload.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decomposition::Decomposition;
use crate::error::{Error, Result};
use crate::fem::{FemModel, GapSpring, LoadCase, Material};
use crate::mesh::{build_bar, build_box, select_interior_block, Mesh};
use crate::training::{two_stage_ramp, LoadingProfile, TrainConfig, TrajectorySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExemplarKind {
    Bar1d,
    Cube,
    GapContact,
    GapContactPreload,
}

impl ExemplarKind {
    pub const ALL: [ExemplarKind; 4] = [
        ExemplarKind::Bar1d,
        ExemplarKind::Cube,
        ExemplarKind::GapContact,
        ExemplarKind::GapContactPreload,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExemplarKind::Bar1d => "bar1d",
            ExemplarKind::Cube => "cube",
            ExemplarKind::GapContact => "gap-contact",
            ExemplarKind::GapContactPreload => "gap-contact-preload",
        }
    }
}

impl fmt::Display for ExemplarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExemplarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExemplarKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown exemplar '{s}' (expected one of: bar1d, cube, gap-contact, gap-contact-preload)"
                ))
            })
    }
}

/// Boundary data for each preset. Parameters per trajectory:
///
/// * `Bar`: `[body force density, right-end displacement]`, both ramped
///   linearly in `t`.
/// * `Cube`: `[b_x1, b_x2, b_z1, b_z2]`; top `u1` and `u3` follow two-stage
///   cosine ramps switching at the first breakpoint, `u2 = 0`.
/// * `Radial`: `[beta]` or `[beta, alpha]`; top `u1 = beta t`,
///   `u2 = alpha t`, `u3 = z_rate t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    Bar {
        left: usize,
        right: usize,
        n_dofs: usize,
        unit_body_force: Vec<f64>,
    },
    Cube {
        top: Vec<usize>,
        bottom: Vec<usize>,
        n_dofs: usize,
    },
    Radial {
        top: Vec<usize>,
        bottom: Vec<usize>,
        n_dofs: usize,
        z_rate: f64,
    },
}

fn clamp_nodes(load: &mut LoadCase, nodes: &[usize], values: [f64; 3]) {
    for &n in nodes {
        for (c, v) in values.iter().enumerate() {
            load.dirichlet.insert(3 * n + c, *v);
        }
    }
}

impl LoadingProfile for Profile {
    fn load_case(&self, spec: &TrajectorySpec, t: f64) -> Result<LoadCase> {
        let p = &spec.parameters;
        let need = |n: usize| {
            if p.len() < n {
                Err(Error::invalid(format!(
                    "trajectory {} needs {n} parameters, got {}",
                    spec.id,
                    p.len()
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Profile::Bar {
                left,
                right,
                n_dofs,
                unit_body_force,
            } => {
                need(2)?;
                let mut load = LoadCase::new(*n_dofs);
                load.dirichlet.insert(*left, 0.0);
                load.dirichlet.insert(*right, p[1] * t);
                load.body_force = unit_body_force.iter().map(|v| v * p[0] * t).collect();
                load.pseudo_time = t;
                Ok(load)
            }
            Profile::Cube { top, bottom, n_dofs } => {
                need(4)?;
                let tb = spec.breakpoints.first().copied().unwrap_or(0.5 * spec.end_time);
                let u1 = two_stage_ramp(p[0], p[1], tb, spec.end_time, t)?;
                let u3 = two_stage_ramp(p[2], p[3], tb, spec.end_time, t)?;
                let mut load = LoadCase::new(*n_dofs);
                clamp_nodes(&mut load, bottom, [0.0; 3]);
                clamp_nodes(&mut load, top, [u1, 0.0, u3]);
                load.pseudo_time = t;
                Ok(load)
            }
            Profile::Radial {
                top,
                bottom,
                n_dofs,
                z_rate,
            } => {
                need(1)?;
                let alpha = p.get(1).copied().unwrap_or(0.0);
                let mut load = LoadCase::new(*n_dofs);
                clamp_nodes(&mut load, bottom, [0.0; 3]);
                clamp_nodes(&mut load, top, [p[0] * t, alpha * t, z_rate * t]);
                load.pseudo_time = t;
                Ok(load)
            }
        }
    }
}

/// Reaction components summed over a constrained node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoiSpec {
    pub node_set: String,
    pub components: Vec<usize>,
}

impl QoiSpec {
    pub fn label(&self, component: usize) -> String {
        format!("{}_{}", self.node_set, ["x", "y", "z"][component.min(2)])
    }
}

/// A ready-to-run problem: model, split, loading and trajectories.
#[derive(Debug, Clone)]
pub struct Exemplar {
    pub kind: ExemplarKind,
    pub model: FemModel,
    pub decomp: Decomposition,
    pub profile: Profile,
    pub train: Vec<TrajectorySpec>,
    pub test: Vec<TrajectorySpec>,
    /// Trajectory whose `t = 0` state defines `f0`.
    pub preload: Option<usize>,
    pub qoi: QoiSpec,
    /// Basis dimensions swept by default in studies.
    pub k_sweep: Vec<usize>,
    pub train_config: TrainConfig,
}

/// Tunable constants of the presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExemplarOptions {
    /// Steps per trajectory; `None` uses the preset default.
    pub n_steps: Option<usize>,
    /// Cells per side of the box meshes.
    pub cells: usize,
    pub contact: ContactDesign,
}

impl Default for ExemplarOptions {
    fn default() -> Self {
        ExemplarOptions {
            n_steps: None,
            cells: 5,
            contact: ContactDesign::default(),
        }
    }
}

/// Geometry and stiffness of the gap-spring cube.
///
/// Two stiff plates (bottom and top cell layers) are joined by a soft
/// ring and by the inner block, which carries most of the load. Gap springs
/// tie each top-face node of the block to the bottom-face node below it
/// and close under shear in the `-x` direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactDesign {
    pub plate_modulus: f64,
    pub ring_modulus: f64,
    pub inner_modulus: f64,
    pub poisson_ratio: f64,
    pub gap: f64,
    pub spring_stiffness: f64,
    pub z_rate: f64,
    /// Training shear amplitudes `beta_i`.
    pub train_beta: Vec<f64>,
    pub test_beta: Vec<f64>,
    /// Axial prestress of the bolt column in the preload variant.
    pub preload_stress: f64,
}

impl Default for ContactDesign {
    fn default() -> Self {
        ContactDesign {
            plate_modulus: 28.5e6,
            ring_modulus: 28.5e3,
            inner_modulus: 29e5,
            poisson_ratio: 0.3,
            gap: 0.002,
            spring_stiffness: 2e6,
            z_rate: 1.0 / 400.0,
            train_beta: (0..=20).map(|i| -0.005 + 0.0005 * i as f64).collect(),
            test_beta: vec![-0.005, -0.00475, -0.0045, -0.00425, -0.0025, -0.00125, -0.001, -0.00025, 0.0],
            preload_stress: 1e4,
        }
    }
}

fn find_node(mesh: &Mesh, x: &[f64]) -> Result<usize> {
    mesh.nodes
        .iter()
        .position(|p| p.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-9))
        .ok_or_else(|| Error::invalid(format!("no node at {x:?}")))
}

fn centroid(mesh: &Mesh, e: usize) -> Vec<f64> {
    let conn = &mesh.elements[e];
    let mut c = vec![0.0; mesh.dimension];
    for &n in conn {
        for (d, v) in mesh.nodes[n].iter().enumerate() {
            c[d] += v / conn.len() as f64;
        }
    }
    c
}

fn box_dirichlet(mesh: &Mesh) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let top = mesh.node_set("top")?.to_vec();
    let bottom = mesh.node_set("bottom")?.to_vec();
    let mut dofs: Vec<usize> = top.iter().chain(&bottom).flat_map(|&n| [3 * n, 3 * n + 1, 3 * n + 2]).collect();
    dofs.sort_unstable();
    Ok((top, bottom, dofs))
}

fn with_steps(mut specs: Vec<TrajectorySpec>, n: usize) -> Vec<TrajectorySpec> {
    for s in &mut specs {
        s.n_steps = n;
    }
    specs
}

/// Bar of 16 elements on `[0, 1]` with interface nodes 2 and 14. The body
/// force acts on the outer elements only, so the inner response is linear
/// in the interface displacement.
pub fn bar1d(opts: &ExemplarOptions) -> Result<Exemplar> {
    let n_el = 16;
    let mesh = build_bar(n_el, 1.0)?;
    let dx = 1.0 / n_el as f64;
    let sel = select_interior_block(&mesh, &[2.0 * dx], &[(n_el - 2) as f64 * dx])?;
    let model = FemModel::new(mesh, Material::new(1.0, 0.0)?, 1.0)?;
    let decomp = Decomposition::new(&model, &sel, &[0, n_el])?;
    let unit_body_force = model.body_force_vector(Some(&decomp.outer_elements), &[1.0])?;
    let profile = Profile::Bar {
        left: 0,
        right: n_el,
        n_dofs: model.total_dofs(),
        unit_body_force,
    };
    let n = opts.n_steps.unwrap_or(10);
    let mut train = Vec::new();
    for (i, &b) in [0.5, 1.0, 2.0].iter().enumerate() {
        for (j, &d) in [-0.1, 0.0, 0.1].iter().enumerate() {
            train.push(TrajectorySpec::new(3 * i + j, vec![b, d], n));
        }
    }
    let test = vec![
        TrajectorySpec::new(100, vec![1.5, 0.05], n),
        TrajectorySpec::new(101, vec![0.75, -0.08], n),
    ];
    Ok(Exemplar {
        kind: ExemplarKind::Bar1d,
        model,
        decomp,
        profile,
        train,
        test,
        preload: None,
        qoi: QoiSpec {
            node_set: "left".into(),
            components: vec![0],
        },
        k_sweep: vec![1, 2],
        train_config: TrainConfig {
            epochs: 3000,
            ..TrainConfig::default()
        },
    })
}

/// Linear cube on `[-1.5, 1.5]^3` with a one-cell inner block at the
/// center, bottom clamped and the top driven by two-stage ramps.
pub fn cube(opts: &ExemplarOptions) -> Result<Exemplar> {
    let n = opts.cells;
    if n % 2 == 0 {
        return Err(Error::invalid("the cube preset needs an odd number of cells per side"));
    }
    let hw = 1.5;
    let mesh = build_box(n, hw)?;
    let h = hw / n as f64;
    let sel = select_interior_block(&mesh, &[-h; 3], &[h; 3])?;
    let model = FemModel::new(mesh, Material::new(28.5e6, 0.3)?, 1.0)?
        .with_material(&sel.inner_elements, Material::new(29e6, 0.3)?)?;
    let (top, bottom, dirichlet) = box_dirichlet(&model.mesh)?;
    let decomp = Decomposition::new(&model, &sel, &dirichlet)?;
    let profile = Profile::Cube {
        top,
        bottom,
        n_dofs: model.total_dofs(),
    };
    let steps = opts.n_steps.unwrap_or(100);
    let mut train = Vec::new();
    for corner in 0..16usize {
        let pick = |bit: usize, v: f64| if corner & (1 << bit) == 0 { -v } else { v };
        let mut s = TrajectorySpec::new(corner, vec![pick(3, 0.3), pick(2, 0.1), pick(1, 0.3), pick(0, 0.1)], steps);
        s.breakpoints = vec![0.5];
        train.push(s);
    }
    let rows = [
        [0.05, -0.01, -0.02, 0.01],
        [0.15, -0.10, -0.20, 0.15],
        [0.40, -0.10, -0.30, 0.10],
        [-0.30, -0.30, 0.50, -0.05],
    ];
    let test = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut s = TrajectorySpec::new(100 + i, r.to_vec(), steps);
            s.breakpoints = vec![0.5];
            s
        })
        .collect();
    Ok(Exemplar {
        kind: ExemplarKind::Cube,
        model,
        decomp,
        profile,
        train,
        test,
        preload: None,
        qoi: QoiSpec {
            node_set: "bottom".into(),
            components: vec![0, 2],
        },
        k_sweep: vec![1, 2, 4, 6, 8],
        train_config: TrainConfig::default(),
    })
}

/// Contact cube, optionally with a prestressed bolt column through the
/// center.
pub fn gap_contact(opts: &ExemplarOptions, preload: bool) -> Result<Exemplar> {
    let d = &opts.contact;
    let n = opts.cells;
    if n < 5 {
        return Err(Error::invalid("the contact preset needs at least 5 cells per side"));
    }
    let hw = 1.5;
    let mesh = build_box(n, hw)?;
    let h = 2.0 * hw / n as f64;
    let lo = -hw + h;
    let hi = hw - h;
    let sel = select_interior_block(&mesh, &[lo; 3], &[hi; 3])?;
    let ring: Vec<usize> = (0..mesh.n_elements())
        .filter(|&e| {
            let z = centroid(&mesh, e)[2];
            z > lo && z < hi && !sel.inner_elements.contains(&e)
        })
        .collect();

    let mut springs = Vec::new();
    let m = n - 1;
    for j in 0..=m - 1 {
        for i in 0..=m - 1 {
            let x = lo + h * i as f64;
            let y = lo + h * j as f64;
            let a = find_node(&mesh, &[x, y, lo])?;
            let b = find_node(&mesh, &[x, y, hi])?;
            springs.push(GapSpring::new([a, b], vec![-1.0, 0.0, 0.0], d.gap, d.spring_stiffness)?);
        }
    }
    let column: Vec<usize> = (0..mesh.n_elements())
        .filter(|&e| {
            let c = centroid(&mesh, e);
            c[0].abs() < 0.5 * h && c[1].abs() < 0.5 * h
        })
        .collect();

    let mut model = FemModel::new(mesh, Material::new(d.plate_modulus, d.poisson_ratio)?, 1.0)?
        .with_material(&ring, Material::new(d.ring_modulus, d.poisson_ratio)?)?
        .with_material(&sel.inner_elements, Material::new(d.inner_modulus, d.poisson_ratio)?)?
        .with_springs(springs)?;
    if preload {
        model = model.with_prestress(&column, &[0.0, 0.0, d.preload_stress, 0.0, 0.0, 0.0])?;
    }
    let (top, bottom, dirichlet) = box_dirichlet(&model.mesh)?;
    let decomp = Decomposition::new(&model, &sel, &dirichlet)?;
    let profile = Profile::Radial {
        top,
        bottom,
        n_dofs: model.total_dofs(),
        z_rate: d.z_rate,
    };
    let steps = opts.n_steps.unwrap_or(20);
    let train = d
        .train_beta
        .iter()
        .enumerate()
        .map(|(i, &b)| TrajectorySpec::new(i, vec![b], steps))
        .collect();
    let test = d
        .test_beta
        .iter()
        .enumerate()
        .map(|(i, &b)| TrajectorySpec::new(100 + i, vec![b], steps))
        .collect();
    Ok(Exemplar {
        kind: if preload {
            ExemplarKind::GapContactPreload
        } else {
            ExemplarKind::GapContact
        },
        model,
        decomp,
        profile,
        train: with_steps(train, steps),
        test,
        preload: preload.then_some(0),
        qoi: QoiSpec {
            node_set: "bottom".into(),
            components: vec![0, 2],
        },
        k_sweep: vec![1, 2, 3, 4, 6, 8],
        train_config: if preload {
            TrainConfig::preload_preset()
        } else {
            TrainConfig::default()
        },
    })
}

pub fn build(kind: ExemplarKind, opts: &ExemplarOptions) -> Result<Exemplar> {
    match kind {
        ExemplarKind::Bar1d => bar1d(opts),
        ExemplarKind::Cube => cube(opts),
        ExemplarKind::GapContact => gap_contact(opts, false),
        ExemplarKind::GapContactPreload => gap_contact(opts, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ExemplarKind::ALL {
            assert_eq!(k.as_str().parse::<ExemplarKind>().unwrap(), k);
        }
        let e = "bolt".parse::<ExemplarKind>().unwrap_err().to_string();
        assert!(e.contains("gap-contact-preload"), "{e}");
    }

    #[test]
    fn cube_training_grid_is_the_hypercube() {
        let ex = cube(&ExemplarOptions::default()).unwrap();
        assert_eq!(ex.train.len(), 16);
        assert_eq!(ex.train.iter().map(|s| s.n_steps).sum::<usize>(), 1600);
        let mut corners: Vec<Vec<f64>> = ex.train.iter().map(|s| s.parameters.clone()).collect();
        corners.dedup();
        assert_eq!(corners.len(), 16);
        assert!(ex.train.iter().all(|s| s.parameters.iter().zip([0.3, 0.1, 0.3, 0.1]).all(|(p, m)| p.abs() == m)));
        assert_eq!(ex.decomp.interface_nodes.len(), 8);
    }

    #[test]
    fn contact_springs_are_inner() {
        let ex = gap_contact(&ExemplarOptions::default(), false).unwrap();
        assert_eq!(ex.decomp.inner_springs.len(), 16);
        assert!(ex.decomp.outer_springs.is_empty());
        assert_eq!(ex.decomp.interface_nodes.len(), 56);
        assert_eq!(ex.train.len(), 21);
    }
}
