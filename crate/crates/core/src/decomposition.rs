//! Outer/inner split of a model, interface force extraction, the exact
//! linear Schur closure and snapshot storage.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::fem::{FemModel, Scope, StateVector};
use crate::mesh::BlockSelection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub inner_elements: Vec<usize>,
    pub outer_elements: Vec<usize>,
    pub inner_springs: Vec<usize>,
    pub outer_springs: Vec<usize>,
    pub interface_nodes: Vec<usize>,
    /// Interface dofs ordered by (node, component).
    pub interface_dofs: Vec<usize>,
    pub inner_interior_dofs: Vec<usize>,
    /// Free dofs touched only by outer elements.
    pub outer_dofs: Vec<usize>,
    pub dirichlet_dofs: Vec<usize>,
}

impl Decomposition {
    /// Splits `model` along `selection`. Dirichlet dofs must lie on outer
    /// nodes; each gap spring must sit entirely on one side.
    pub fn new(model: &FemModel, selection: &BlockSelection, dirichlet_dofs: &[usize]) -> Result<Self> {
        let n_el = model.mesh.n_elements();
        let inner_set: BTreeSet<usize> = selection.inner_elements.iter().copied().collect();
        if inner_set.is_empty() || inner_set.iter().any(|&e| e >= n_el) {
            return Err(Error::invalid("inner element list is empty or out of range"));
        }
        let outer_elements: Vec<usize> = (0..n_el).filter(|e| !inner_set.contains(e)).collect();
        let mut inner_nodes = BTreeSet::new();
        for &e in &inner_set {
            inner_nodes.extend(model.mesh.elements[e].iter().copied());
        }
        let mut outer_nodes = BTreeSet::new();
        for &e in &outer_elements {
            outer_nodes.extend(model.mesh.elements[e].iter().copied());
        }
        let interface_nodes: Vec<usize> = inner_nodes.intersection(&outer_nodes).copied().collect();
        if interface_nodes != selection.interface_nodes {
            return Err(Error::invalid("interface nodes do not match the element split"));
        }
        let dm = model.dofmap;
        let dirichlet: BTreeSet<usize> = dirichlet_dofs.iter().copied().collect();
        if dirichlet.iter().any(|&d| d >= dm.total_dofs()) {
            return Err(Error::invalid("Dirichlet dof out of range"));
        }
        for &d in &dirichlet {
            if inner_nodes.contains(&dm.node_of(d).0) {
                return Err(Error::invalid(format!(
                    "Dirichlet dof {d} lies on the inner domain or interface"
                )));
            }
        }
        let interface_dofs = dm.node_dofs(&interface_nodes);
        let interior_nodes: Vec<usize> = inner_nodes.difference(&outer_nodes).copied().collect();
        let inner_interior_dofs = dm.node_dofs(&interior_nodes);
        let interior_set: BTreeSet<usize> = interior_nodes.iter().copied().collect();
        let outer_only: Vec<usize> = outer_nodes.difference(&inner_nodes).copied().collect();
        let outer_dofs: Vec<usize> = dm
            .node_dofs(&outer_only)
            .into_iter()
            .filter(|d| !dirichlet.contains(d))
            .collect();

        let mut inner_springs = Vec::new();
        let mut outer_springs = Vec::new();
        for (i, s) in model.springs.iter().enumerate() {
            if s.nodes.iter().all(|n| inner_nodes.contains(n)) {
                inner_springs.push(i);
            } else if s.nodes.iter().all(|n| !interior_set.contains(n)) {
                outer_springs.push(i);
            } else {
                return Err(Error::invalid(format!("gap spring {i} crosses the interface")));
            }
        }

        Ok(Decomposition {
            inner_elements: inner_set.into_iter().collect(),
            outer_elements,
            inner_springs,
            outer_springs,
            interface_nodes,
            interface_dofs,
            inner_interior_dofs,
            outer_dofs,
            dirichlet_dofs: dirichlet.into_iter().collect(),
        })
    }

    pub fn n_interface(&self) -> usize {
        self.interface_dofs.len()
    }

    pub fn inner_scope(&self) -> Scope<'_> {
        Scope::Subset {
            elements: &self.inner_elements,
            springs: &self.inner_springs,
        }
    }

    pub fn outer_scope(&self) -> Scope<'_> {
        Scope::Subset {
            elements: &self.outer_elements,
            springs: &self.outer_springs,
        }
    }

    /// Free dofs of the coarse problem: outer-only dofs then interface dofs,
    /// in ascending global order.
    pub fn coarse_free_dofs(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.outer_dofs.iter().chain(&self.interface_dofs).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn interface_trace(&self, state: &StateVector) -> Vec<f64> {
        self.interface_dofs.iter().map(|&d| state.values[d]).collect()
    }
}

/// Force the inner elements and springs exert at the interface dofs.
pub fn interface_internal_force(decomp: &Decomposition, model: &FemModel, state: &StateVector) -> Result<Vec<f64>> {
    if decomp.interface_dofs.iter().any(|&d| d >= model.total_dofs()) {
        return Err(Error::invalid("decomposition does not belong to this model"));
    }
    let f = model.internal_force(decomp.inner_scope(), &state.values)?;
    Ok(decomp.interface_dofs.iter().map(|&d| f[d]).collect())
}

/// Exact condensation of the linear inner domain onto the interface:
/// `K_schur = K_GG - K_GI K_II^-1 K_IG` and the offset `g0` from inner
/// body force and prestress.
pub fn schur_closure(decomp: &Decomposition, model: &FemModel, body_force: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !decomp.inner_springs.is_empty() {
        return Err(Error::invalid("Schur closure needs a linear inner domain (no gap springs)"));
    }
    let n = model.total_dofs();
    if body_force.len() != n {
        return Err(Error::DimensionMismatch {
            what: "body force",
            expected: n,
            got: body_force.len(),
        });
    }
    let zero = vec![0.0; n];
    let k = model.tangent(decomp.inner_scope(), &zero)?;
    let p = model.internal_force(decomp.inner_scope(), &zero)?;
    let g = &decomp.interface_dofs;
    let i = &decomp.inner_interior_dofs;
    let kgg = DMatrix::from_fn(g.len(), g.len(), |a, b| k.get(g[a], g[b]));
    let mut g0 = DVector::from_iterator(g.len(), g.iter().map(|&d| p[d]));
    if i.is_empty() {
        return Ok((kgg, g0.as_slice().to_vec()));
    }
    let kgi = DMatrix::from_fn(g.len(), i.len(), |a, b| k.get(g[a], i[b]));
    let kii = DMatrix::from_fn(i.len(), i.len(), |a, b| k.get(i[a], i[b]));
    let chol = kii
        .cholesky()
        .ok_or_else(|| Error::Singular("inner-interior stiffness block is not positive definite".into()))?;
    let x = chol.solve(&kgi.transpose());
    let mut schur = kgg - &kgi * x;
    let st = schur.transpose();
    schur = (schur + st) * 0.5;
    let rhs = DVector::from_iterator(i.len(), i.iter().map(|&d| body_force[d] - p[d]));
    g0 += &kgi * chol.solve(&rhs);
    Ok((schur, g0.as_slice().to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub trajectory: usize,
    pub time: f64,
}

/// Paired interface displacement and force snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub u: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub f0: Vec<f64>,
    pub dof_order: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    interface_dofs: usize,
    n_snapshots: usize,
    f0: Vec<f64>,
    dof_order: Vec<usize>,
    provenance: Vec<Provenance>,
}

const SNAPSHOT_KIND: &str = "snapshots";

impl SnapshotSet {
    pub fn new(u: DMatrix<f64>, f: DMatrix<f64>, f0: Vec<f64>, dof_order: Vec<usize>, provenance: Vec<Provenance>) -> Result<Self> {
        let s = SnapshotSet {
            u,
            f,
            f0,
            dof_order,
            provenance,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let m = self.u.nrows();
        let check = |what, expected, got| {
            if expected != got {
                Err(Error::DimensionMismatch { what, expected, got })
            } else {
                Ok(())
            }
        };
        check("force snapshot rows", m, self.f.nrows())?;
        check("force snapshot columns", self.u.ncols(), self.f.ncols())?;
        check("offset length", m, self.f0.len())?;
        check("dof order length", m, self.dof_order.len())?;
        check("provenance length", self.u.ncols(), self.provenance.len())?;
        Ok(())
    }

    pub fn n_snapshots(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_interface(&self) -> usize {
        self.u.nrows()
    }

    /// `F - f0 1^T`.
    pub fn shifted_forces(&self) -> DMatrix<f64> {
        let mut f = self.f.clone();
        for mut c in f.column_iter_mut() {
            for (v, o) in c.iter_mut().zip(&self.f0) {
                *v -= o;
            }
        }
        f
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = SnapshotHeader {
            interface_dofs: self.n_interface(),
            n_snapshots: self.n_snapshots(),
            f0: self.f0.clone(),
            dof_order: self.dof_order.clone(),
            provenance: self.provenance.clone(),
        };
        let payload: Vec<f64> = self.u.iter().chain(self.f.iter()).copied().collect();
        container::encode(SNAPSHOT_KIND, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, p): (SnapshotHeader, Vec<f64>) = container::decode(SNAPSHOT_KIND, bytes)?;
        let block = h.interface_dofs * h.n_snapshots;
        if p.len() != 2 * block {
            return Err(Error::Format("snapshot payload size mismatch".into()));
        }
        let u = DMatrix::from_column_slice(h.interface_dofs, h.n_snapshots, &p[..block]);
        let f = DMatrix::from_column_slice(h.interface_dofs, h.n_snapshots, &p[block..]);
        SnapshotSet::new(u, f, h.f0, h.dof_order, h.provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SnapshotSet::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Material;
    use crate::mesh::{build_bar, select_interior_block};

    fn bar7() -> (FemModel, Decomposition) {
        let mesh = build_bar(7, 7.0).unwrap();
        let sel = select_interior_block(&mesh, &[2.0], &[5.0]).unwrap();
        let model = FemModel::new(mesh, Material::new(1.0, 0.0).unwrap(), 1.0).unwrap();
        let d = Decomposition::new(&model, &sel, &[0, 7]).unwrap();
        (model, d)
    }

    #[test]
    fn bar_partition() {
        let (_, d) = bar7();
        assert_eq!(d.interface_dofs, vec![2, 5]);
        assert_eq!(d.inner_interior_dofs, vec![3, 4]);
        assert_eq!(d.outer_dofs, vec![1, 6]);
        assert_eq!(d.coarse_free_dofs(), vec![1, 2, 5, 6]);
    }

    #[test]
    fn three_springs_in_series() {
        let (model, d) = bar7();
        let (k, g0) = schur_closure(&d, &model, &vec![0.0; 8]).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]) / 3.0;
        assert!((k - expect).amax() < 1e-14);
        assert!(g0.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn dirichlet_on_inner_rejected() {
        let (model, _) = bar7();
        let sel = select_interior_block(&model.mesh, &[2.0], &[5.0]).unwrap();
        assert!(Decomposition::new(&model, &sel, &[0, 3]).is_err());
    }

    #[test]
    fn snapshot_bytes_round_trip() {
        let s = SnapshotSet::new(
            DMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 * 0.1),
            DMatrix::from_fn(3, 2, |i, j| (i + j) as f64 - 0.3),
            vec![0.5, 0.0, -1.0],
            vec![4, 5, 6],
            vec![
                Provenance { trajectory: 0, time: 0.0 },
                Provenance { trajectory: 1, time: 0.5 },
            ],
        )
        .unwrap();
        let back = SnapshotSet::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
