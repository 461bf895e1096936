//! Linear small-strain elasticity on line and hexahedral elements, a
//! piecewise-linear gap spring, Dirichlet elimination with reaction
//! recovery, and the Newton/CG monolithic solve.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{DofMap, Mesh};
use crate::solver::{newton, NewtonReport, NonlinearSystem, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

impl Material {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        if !(youngs_modulus > 0.0) || !youngs_modulus.is_finite() {
            return Err(Error::invalid(format!("Young's modulus must be positive, got {youngs_modulus}")));
        }
        if !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
            return Err(Error::invalid(format!("Poisson ratio must lie in (-1, 0.5), got {poisson_ratio}")));
        }
        Ok(Material {
            youngs_modulus,
            poisson_ratio,
        })
    }

    fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        (lambda, mu)
    }

    /// Isotropic elasticity matrix in Voigt order (xx, yy, zz, yz, xz, xy)
    /// with engineering shear strains.
    pub fn elasticity_matrix(&self) -> [[f64; 6]; 6] {
        let (l, m) = self.lame();
        let mut d = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                d[i][j] = l;
            }
            d[i][i] = l + 2.0 * m;
            d[i + 3][i + 3] = m;
        }
        d
    }
}

/// Penalty spring between two nodes that carries force only once the
/// relative displacement along `direction` reaches `gap`.
///
/// With `delta = direction . (u[b] - u[a])` the force on node `b` is
/// `stiffness * max(delta - gap, 0) * direction` and node `a` receives the
/// opposite. At `delta == gap` the tangent uses the closed stiffness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSpring {
    pub nodes: [usize; 2],
    pub direction: Vec<f64>,
    pub gap: f64,
    pub stiffness: f64,
}

impl GapSpring {
    pub fn new(nodes: [usize; 2], direction: Vec<f64>, gap: f64, stiffness: f64) -> Result<Self> {
        if nodes[0] == nodes[1] {
            return Err(Error::invalid("gap spring needs two distinct nodes"));
        }
        if !(gap >= 0.0) || !(stiffness >= 0.0) {
            return Err(Error::invalid("gap spring gap and stiffness must be nonnegative"));
        }
        let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("gap spring direction must be a nonzero vector"));
        }
        Ok(GapSpring {
            nodes,
            direction: direction.iter().map(|v| v / n).collect(),
            gap,
            stiffness,
        })
    }

    pub fn opening(&self, dofmap: &DofMap, u: &[f64]) -> f64 {
        let [a, b] = self.nodes;
        self.direction
            .iter()
            .enumerate()
            .map(|(c, d)| d * (u[dofmap.dof(b, c)] - u[dofmap.dof(a, c)]))
            .sum()
    }

    pub fn is_closed(&self, dofmap: &DofMap, u: &[f64]) -> bool {
        self.opening(dofmap, u) >= self.gap
    }

    /// Scalar spring force (zero while open).
    pub fn force(&self, dofmap: &DofMap, u: &[f64]) -> f64 {
        let delta = self.opening(dofmap, u);
        if delta >= self.gap {
            self.stiffness * (delta - self.gap)
        } else {
            0.0
        }
    }
}

/// Global displacement vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateSidecar {
    total_dofs: usize,
    checksum: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        StateVector { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Writes `path` (little-endian f64) and `path.json` with
    /// `{total_dofs, checksum}`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let sidecar = StateSidecar {
            total_dofs: self.values.len(),
            checksum: sha256_hex(&bytes),
        };
        std::fs::write(path, &bytes)?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let sidecar: StateSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        if bytes.len() != 8 * sidecar.total_dofs || sha256_hex(&bytes) != sidecar.checksum {
            return Err(Error::Checksum);
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(StateVector { values })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadCase {
    pub dirichlet: BTreeMap<usize, f64>,
    /// Consistent nodal body force, one entry per dof.
    pub body_force: Vec<f64>,
    pub pseudo_time: f64,
}

impl LoadCase {
    pub fn new(total_dofs: usize) -> Self {
        LoadCase {
            dirichlet: BTreeMap::new(),
            body_force: vec![0.0; total_dofs],
            pseudo_time: 0.0,
        }
    }

    pub fn free_dofs(&self, total_dofs: usize) -> Vec<usize> {
        (0..total_dofs).filter(|d| !self.dirichlet.contains_key(d)).collect()
    }
}

/// Which elements and springs take part in an assembly.
#[derive(Debug, Clone, Copy)]
pub enum Scope<'a> {
    All,
    Subset { elements: &'a [usize], springs: &'a [usize] },
}

/// Mesh plus per-element materials and the extra internal-force sources.
#[derive(Debug, Clone)]
pub struct FemModel {
    pub mesh: Mesh,
    pub dofmap: DofMap,
    pub materials: Vec<Material>,
    /// Cross-section area for line elements; ignored for hexes.
    pub area: f64,
    pub springs: Vec<GapSpring>,
    /// Optional initial stress per element (Voigt order for hexes, axial
    /// stress for lines).
    pub prestress: Vec<Option<Vec<f64>>>,
    element_dofs: Vec<Vec<usize>>,
    element_k: Vec<DMatrix<f64>>,
    element_prestress_force: Vec<Option<Vec<f64>>>,
}

const GAUSS: f64 = 0.577_350_269_189_625_8;
const HEX_REF: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Shape-function gradients in physical coordinates and `det J` at a
/// reference point.
fn hex_gradients(coords: &[[f64; 3]; 8], xi: [f64; 3]) -> ([[f64; 3]; 8], f64) {
    let mut dref = [[0.0; 3]; 8];
    for (a, r) in HEX_REF.iter().enumerate() {
        let f = [1.0 + r[0] * xi[0], 1.0 + r[1] * xi[1], 1.0 + r[2] * xi[2]];
        dref[a] = [
            0.125 * r[0] * f[1] * f[2],
            0.125 * f[0] * r[1] * f[2],
            0.125 * f[0] * f[1] * r[2],
        ];
    }
    let mut jac = Matrix3::zeros();
    for a in 0..8 {
        for i in 0..3 {
            for j in 0..3 {
                jac[(i, j)] += coords[a][i] * dref[a][j];
            }
        }
    }
    let det = jac.determinant();
    let jinv_t = jac.try_inverse().unwrap_or_else(Matrix3::zeros).transpose();
    let mut grads = [[0.0; 3]; 8];
    for a in 0..8 {
        let g = jinv_t * Vector3::new(dref[a][0], dref[a][1], dref[a][2]);
        grads[a] = [g[0], g[1], g[2]];
    }
    (grads, det)
}

fn gauss_points() -> impl Iterator<Item = [f64; 3]> {
    (0..8).map(|q| {
        [
            if q & 1 == 0 { -GAUSS } else { GAUSS },
            if q & 2 == 0 { -GAUSS } else { GAUSS },
            if q & 4 == 0 { -GAUSS } else { GAUSS },
        ]
    })
}

fn strain_displacement(grads: &[[f64; 3]; 8]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(6, 24);
    for (a, g) in grads.iter().enumerate() {
        let c = 3 * a;
        b[(0, c)] = g[0];
        b[(1, c + 1)] = g[1];
        b[(2, c + 2)] = g[2];
        b[(3, c + 1)] = g[2];
        b[(3, c + 2)] = g[1];
        b[(4, c)] = g[2];
        b[(4, c + 2)] = g[0];
        b[(5, c)] = g[1];
        b[(5, c + 1)] = g[0];
    }
    b
}

/// Stiffness of a trilinear hex by 2x2x2 Gauss quadrature.
pub fn hex_stiffness(coords: &[[f64; 3]; 8], material: &Material, element: usize) -> Result<DMatrix<f64>> {
    let d = material.elasticity_matrix();
    let dm = DMatrix::from_fn(6, 6, |i, j| d[i][j]);
    let mut k = DMatrix::zeros(24, 24);
    for xi in gauss_points() {
        let (grads, det) = hex_gradients(coords, xi);
        if !(det > 0.0) {
            return Err(Error::DegenerateElement { element, det });
        }
        let b = strain_displacement(&grads);
        k += b.transpose() * &dm * &b * det;
    }
    // exact symmetry for the assembled operator
    let kt = k.transpose();
    Ok((k + kt) * 0.5)
}

/// `(A E / dx) [[1, -1], [-1, 1]]`.
pub fn line_stiffness(x0: f64, x1: f64, youngs_modulus: f64, area: f64, element: usize) -> Result<DMatrix<f64>> {
    let dx = x1 - x0;
    if !(dx > 0.0) {
        return Err(Error::DegenerateElement { element, det: dx });
    }
    let k = area * youngs_modulus / dx;
    Ok(DMatrix::from_row_slice(2, 2, &[k, -k, -k, k]))
}

fn hex_prestress_force(coords: &[[f64; 3]; 8], stress: &[f64], element: usize) -> Result<Vec<f64>> {
    let s = nalgebra::DVector::from_column_slice(stress);
    let mut f = nalgebra::DVector::zeros(24);
    for xi in gauss_points() {
        let (grads, det) = hex_gradients(coords, xi);
        if !(det > 0.0) {
            return Err(Error::DegenerateElement { element, det });
        }
        f += strain_displacement(&grads).transpose() * &s * det;
    }
    Ok(f.as_slice().to_vec())
}

impl FemModel {
    /// Model with one material on every element. `area` is the line-element
    /// cross section (use 1.0 for hex meshes).
    pub fn new(mesh: Mesh, material: Material, area: f64) -> Result<Self> {
        mesh.validate()?;
        if mesh.dimension == 1 && !(area > 0.0) {
            return Err(Error::invalid("cross-section area must be positive"));
        }
        let dofmap = DofMap::for_mesh(&mesh);
        let element_dofs = mesh.elements.iter().map(|c| dofmap.element_dofs(c)).collect();
        let n_el = mesh.n_elements();
        let mut model = FemModel {
            mesh,
            dofmap,
            materials: vec![material; n_el],
            area,
            springs: Vec::new(),
            prestress: vec![None; n_el],
            element_dofs,
            element_k: Vec::with_capacity(n_el),
            element_prestress_force: vec![None; n_el],
        };
        for e in 0..n_el {
            let k = model.compute_element_stiffness(e)?;
            model.element_k.push(k);
        }
        Ok(model)
    }

    pub fn with_material(mut self, elements: &[usize], material: Material) -> Result<Self> {
        for &e in elements {
            if e >= self.mesh.n_elements() {
                return Err(Error::invalid(format!("element {e} out of range")));
            }
            self.materials[e] = material;
            self.element_k[e] = self.compute_element_stiffness(e)?;
        }
        Ok(self)
    }

    pub fn with_springs(mut self, springs: Vec<GapSpring>) -> Result<Self> {
        for s in &springs {
            if s.nodes.iter().any(|&n| n >= self.mesh.n_nodes()) {
                return Err(Error::invalid("gap spring references a missing node"));
            }
            if s.direction.len() != self.dofmap.dofs_per_node {
                return Err(Error::DimensionMismatch {
                    what: "gap spring direction",
                    expected: self.dofmap.dofs_per_node,
                    got: s.direction.len(),
                });
            }
        }
        self.springs = springs;
        Ok(self)
    }

    /// Adds a uniform initial stress on `elements`. Its nodal force
    /// `int B^T sigma0 dV` is constant and self-equilibrated.
    pub fn with_prestress(mut self, elements: &[usize], stress: &[f64]) -> Result<Self> {
        let expected = if self.mesh.dimension == 1 { 1 } else { 6 };
        if stress.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "prestress components",
                expected,
                got: stress.len(),
            });
        }
        for &e in elements {
            if e >= self.mesh.n_elements() {
                return Err(Error::invalid(format!("element {e} out of range")));
            }
            let force = if self.mesh.dimension == 1 {
                let s = stress[0] * self.area;
                vec![-s, s]
            } else {
                hex_prestress_force(&self.hex_coords(e), stress, e)?
            };
            self.prestress[e] = Some(stress.to_vec());
            self.element_prestress_force[e] = Some(force);
        }
        Ok(self)
    }

    pub fn total_dofs(&self) -> usize {
        self.dofmap.total_dofs()
    }

    fn hex_coords(&self, e: usize) -> [[f64; 3]; 8] {
        let mut c = [[0.0; 3]; 8];
        for (a, &n) in self.mesh.elements[e].iter().enumerate() {
            c[a].copy_from_slice(&self.mesh.nodes[n]);
        }
        c
    }

    fn compute_element_stiffness(&self, e: usize) -> Result<DMatrix<f64>> {
        let conn = &self.mesh.elements[e];
        if self.mesh.dimension == 1 {
            let x0 = self.mesh.nodes[conn[0]][0];
            let x1 = self.mesh.nodes[conn[1]][0];
            line_stiffness(x0, x1, self.materials[e].youngs_modulus, self.area, e)
        } else {
            hex_stiffness(&self.hex_coords(e), &self.materials[e], e)
        }
    }

    /// Element stiffness in local (node, component) dof order.
    pub fn element_stiffness(&self, element: usize) -> &DMatrix<f64> {
        &self.element_k[element]
    }

    pub fn element_dofs(&self, element: usize) -> &[usize] {
        &self.element_dofs[element]
    }

    /// Consistent nodal loads for a constant body force density (force per
    /// unit length for bars, per unit volume for hexes) over `elements`.
    pub fn body_force_vector(&self, elements: Option<&[usize]>, density: &[f64]) -> Result<Vec<f64>> {
        let dpn = self.dofmap.dofs_per_node;
        if density.len() != dpn {
            return Err(Error::DimensionMismatch {
                what: "body force density",
                expected: dpn,
                got: density.len(),
            });
        }
        let mut f = vec![0.0; self.total_dofs()];
        let all: Vec<usize>;
        let elems = match elements {
            Some(e) => e,
            None => {
                all = (0..self.mesh.n_elements()).collect();
                &all
            }
        };
        for &e in elems {
            let conn = &self.mesh.elements[e];
            let measure = if self.mesh.dimension == 1 {
                self.mesh.nodes[conn[1]][0] - self.mesh.nodes[conn[0]][0]
            } else {
                let c = self.hex_coords(e);
                gauss_points().map(|xi| hex_gradients(&c, xi).1).sum::<f64>()
            };
            let share = measure / conn.len() as f64;
            for &n in conn {
                for (c, rho) in density.iter().enumerate() {
                    f[self.dofmap.dof(n, c)] += rho * share;
                }
            }
        }
        Ok(f)
    }

    fn check_state(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.total_dofs() {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected: self.total_dofs(),
                got: u.len(),
            });
        }
        Ok(())
    }

    fn for_each_element(&self, scope: Scope<'_>, mut f: impl FnMut(usize)) {
        match scope {
            Scope::All => (0..self.mesh.n_elements()).for_each(&mut f),
            Scope::Subset { elements, .. } => elements.iter().copied().for_each(&mut f),
        }
    }

    fn for_each_spring(&self, scope: Scope<'_>, mut f: impl FnMut(&GapSpring)) {
        match scope {
            Scope::All => self.springs.iter().for_each(&mut f),
            Scope::Subset { springs, .. } => springs.iter().for_each(|&s| f(&self.springs[s])),
        }
    }

    /// Internal force `f(u)` from the elements and springs in `scope`.
    pub fn internal_force(&self, scope: Scope<'_>, u: &[f64]) -> Result<Vec<f64>> {
        self.check_state(u)?;
        let mut f = vec![0.0; self.total_dofs()];
        self.for_each_element(scope, |e| {
            let dofs = &self.element_dofs[e];
            let k = &self.element_k[e];
            for (i, &gi) in dofs.iter().enumerate() {
                let mut s = 0.0;
                for (j, &gj) in dofs.iter().enumerate() {
                    s += k[(i, j)] * u[gj];
                }
                f[gi] += s;
            }
            if let Some(p) = &self.element_prestress_force[e] {
                for (i, &gi) in dofs.iter().enumerate() {
                    f[gi] += p[i];
                }
            }
        });
        let dm = self.dofmap;
        self.for_each_spring(scope, |s| {
            let force = s.force(&dm, u);
            if force != 0.0 {
                for (c, d) in s.direction.iter().enumerate() {
                    f[dm.dof(s.nodes[1], c)] += force * d;
                    f[dm.dof(s.nodes[0], c)] -= force * d;
                }
            }
        });
        Ok(f)
    }

    /// Tangent `df/du` over `scope` as a full-size sparse matrix.
    pub fn tangent(&self, scope: Scope<'_>, u: &[f64]) -> Result<CsrMatrix> {
        self.check_state(u)?;
        let n = self.total_dofs();
        let mut trip = Vec::new();
        self.for_each_element(scope, |e| {
            let dofs = &self.element_dofs[e];
            let k = &self.element_k[e];
            for (i, &gi) in dofs.iter().enumerate() {
                for (j, &gj) in dofs.iter().enumerate() {
                    trip.push((gi, gj, k[(i, j)]));
                }
            }
        });
        let dm = self.dofmap;
        self.for_each_spring(scope, |s| {
            if s.is_closed(&dm, u) && s.stiffness > 0.0 {
                let nodes = s.nodes;
                for (p, &np) in nodes.iter().enumerate() {
                    for (q, &nq) in nodes.iter().enumerate() {
                        let sign = if p == q { 1.0 } else { -1.0 };
                        for (ci, di) in s.direction.iter().enumerate() {
                            for (cj, dj) in s.direction.iter().enumerate() {
                                trip.push((dm.dof(np, ci), dm.dof(nq, cj), sign * s.stiffness * di * dj));
                            }
                        }
                    }
                }
            }
        });
        Ok(CsrMatrix::from_triplets(n, n, trip))
    }

    /// `(internal_force, tangent)` over the whole model.
    pub fn assemble(&self, state: &StateVector) -> Result<(Vec<f64>, CsrMatrix)> {
        Ok((
            self.internal_force(Scope::All, &state.values)?,
            self.tangent(Scope::All, &state.values)?,
        ))
    }

    /// Reaction forces `f_int - f_ext` on every Dirichlet dof of `load`.
    pub fn reactions(&self, state: &StateVector, load: &LoadCase) -> Result<BTreeMap<usize, f64>> {
        let f = self.internal_force(Scope::All, &state.values)?;
        Ok(load
            .dirichlet
            .keys()
            .map(|&d| (d, f[d] - load.body_force[d]))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: StateVector,
    pub report: NewtonReport,
}

struct Monolithic<'a> {
    model: &'a FemModel,
    load: &'a LoadCase,
    free: Vec<usize>,
    base: Vec<f64>,
}

impl Monolithic<'_> {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut u = self.base.clone();
        for (k, &d) in self.free.iter().enumerate() {
            u[d] = x[k];
        }
        u
    }
}

impl NonlinearSystem for Monolithic<'_> {
    type Tangent<'b>
        = CsrMatrix
    where
        Self: 'b;

    fn n_free(&self) -> usize {
        self.free.len()
    }

    fn residual_and_tangent(&self, x: &[f64]) -> Result<(Vec<f64>, CsrMatrix)> {
        let u = self.full(x);
        let f = self.model.internal_force(Scope::All, &u)?;
        let r = self.free.iter().map(|&d| f[d] - self.load.body_force[d]).collect();
        let t = self.model.tangent(Scope::All, &u)?.submatrix(&self.free);
        Ok((r, t))
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.model.internal_force(Scope::All, &self.full(x))?;
        Ok(self.free.iter().map(|&d| f[d] - self.load.body_force[d]).collect())
    }

    fn force_scale(&self, x: &[f64]) -> Result<f64> {
        let f = self.model.internal_force(Scope::All, &self.full(x))?;
        Ok(f.iter().chain(&self.load.body_force).map(|v| v * v).sum::<f64>().sqrt())
    }
}

fn check_load(model: &FemModel, load: &LoadCase) -> Result<()> {
    let n = model.total_dofs();
    if load.body_force.len() != n {
        return Err(Error::DimensionMismatch {
            what: "body force",
            expected: n,
            got: load.body_force.len(),
        });
    }
    if let Some((&d, _)) = load.dirichlet.iter().next_back() {
        if d >= n {
            return Err(Error::invalid(format!("Dirichlet dof {d} out of range")));
        }
    }
    if load.dirichlet.values().any(|v| !v.is_finite()) || load.body_force.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("load case"));
    }
    Ok(())
}

/// Solves `f_int(u) = f_ext` on the free dofs with Newton's method and a
/// CG inner solve. `initial` seeds the free dofs (e.g. the previous load
/// step); Dirichlet values always come from `load`.
pub fn solve_monolithic(
    model: &FemModel,
    load: &LoadCase,
    opts: &SolverOptions,
    initial: Option<&StateVector>,
) -> Result<Solution> {
    check_load(model, load)?;
    let n = model.total_dofs();
    let free = load.free_dofs(n);
    let mut base = match initial {
        Some(s) => {
            model.check_state(&s.values)?;
            s.values.clone()
        }
        None => vec![0.0; n],
    };
    for (&d, &v) in &load.dirichlet {
        base[d] = v;
    }
    let x0 = free.iter().map(|&d| base[d]).collect();
    let sys = Monolithic {
        model,
        load,
        free,
        base,
    };
    let (x, report) = newton(&sys, x0, opts)?;
    Ok(Solution {
        state: StateVector { values: sys.full(&x) },
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_bar, build_box};

    fn unit_hex() -> [[f64; 3]; 8] {
        let mut c = [[0.0; 3]; 8];
        for (a, r) in HEX_REF.iter().enumerate() {
            c[a] = [0.5 * (r[0] + 1.0), 0.5 * (r[1] + 1.0), 0.5 * (r[2] + 1.0)];
        }
        c
    }

    #[test]
    fn line_element() {
        let k = line_stiffness(0.0, 2.0, 4.0, 0.5, 0).unwrap();
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert!(line_stiffness(1.0, 1.0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn hex_rigid_translation_is_zero_energy() {
        let mat = Material::new(210.0, 0.3).unwrap();
        let k = hex_stiffness(&unit_hex(), &mat, 0).unwrap();
        for c in 0..3 {
            let mut u = nalgebra::DVector::zeros(24);
            for a in 0..8 {
                u[3 * a + c] = 1.0;
            }
            assert!((&k * u).amax() < 1e-12 * k.amax());
        }
        assert!(crate::linalg::symmetry_defect(&k) == 0.0);
    }

    #[test]
    fn hex_rejects_inverted_element() {
        let mut c = unit_hex();
        c.swap(0, 6);
        let mat = Material::new(1.0, 0.0).unwrap();
        assert!(matches!(
            hex_stiffness(&c, &mat, 7),
            Err(Error::DegenerateElement { element: 7, .. })
        ));
    }

    #[test]
    fn material_bounds() {
        assert!(Material::new(0.0, 0.3).is_err());
        assert!(Material::new(1.0, 0.5).is_err());
        assert!(Material::new(1.0, -1.0).is_err());
        assert!(Material::new(1.0, 0.49).is_ok());
    }

    #[test]
    fn gap_spring_force_beyond_gap() {
        let dm = DofMap {
            dofs_per_node: 1,
            n_nodes: 2,
        };
        let s = GapSpring::new([0, 1], vec![1.0], 0.003, 1000.0).unwrap();
        let f = s.force(&dm, &[0.0, 0.004]);
        assert!((f - 1000.0 * 0.001).abs() < 1e-12);
        assert_eq!(s.force(&dm, &[0.0, 0.002]), 0.0);
        assert!(s.is_closed(&dm, &[0.0, 0.003]));
    }

    #[test]
    fn zero_state_zero_force() {
        let mesh = build_bar(16, 1.0).unwrap();
        let model = FemModel::new(mesh, Material::new(1.0, 0.0).unwrap(), 1.0).unwrap();
        let (f, _) = model.assemble(&StateVector::zeros(17)).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_file_round_trip_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.bin");
        let s = StateVector {
            values: vec![1.0, -2.5, 3.25e-7],
        };
        s.save(&p).unwrap();
        assert_eq!(StateVector::load(&p).unwrap(), s);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[3] ^= 1;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(StateVector::load(&p), Err(Error::Checksum)));
    }

    #[test]
    fn box_body_force_total() {
        let mesh = build_box(3, 1.5).unwrap();
        let model = FemModel::new(mesh, Material::new(1.0, 0.3).unwrap(), 1.0).unwrap();
        let f = model.body_force_vector(None, &[0.0, 0.0, -2.0]).unwrap();
        let total: f64 = f.iter().sum();
        assert!((total + 2.0 * 27.0).abs() < 1e-10);
    }
}
