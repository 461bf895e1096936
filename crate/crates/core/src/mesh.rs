//! Structured meshes: a 1D bar of two-node line elements and a 3D box of
//! eight-node trilinear hexahedra, with named node sets and dof numbering.
//!
//! Nodes are ordered lexicographically by grid index with the first
//! coordinate varying fastest, so regeneration is bit-identical.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dimension: usize,
    /// One coordinate list per node, each of length `dimension`.
    pub nodes: Vec<Vec<f64>>,
    /// Node indices per element: 2 for lines, 8 for hexes.
    pub elements: Vec<Vec<usize>>,
    pub node_sets: BTreeMap<String, Vec<usize>>,
}

/// Map from (node, component) to a global degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DofMap {
    pub dofs_per_node: usize,
    pub n_nodes: usize,
}

impl DofMap {
    pub fn for_mesh(mesh: &Mesh) -> Self {
        DofMap {
            dofs_per_node: mesh.dimension,
            n_nodes: mesh.n_nodes(),
        }
    }

    pub fn total_dofs(&self) -> usize {
        self.dofs_per_node * self.n_nodes
    }

    #[inline]
    pub fn dof(&self, node: usize, component: usize) -> usize {
        debug_assert!(component < self.dofs_per_node);
        node * self.dofs_per_node + component
    }

    #[inline]
    pub fn node_of(&self, dof: usize) -> (usize, usize) {
        (dof / self.dofs_per_node, dof % self.dofs_per_node)
    }

    /// Global dofs of an element in local (node, component) order.
    pub fn element_dofs(&self, element_nodes: &[usize]) -> Vec<usize> {
        element_nodes
            .iter()
            .flat_map(|&n| (0..self.dofs_per_node).map(move |c| n * self.dofs_per_node + c))
            .collect()
    }

    pub fn node_dofs(&self, nodes: &[usize]) -> Vec<usize> {
        self.element_dofs(nodes)
    }
}

/// Result of carving an interior block out of a mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSelection {
    pub inner_elements: Vec<usize>,
    pub interface_nodes: Vec<usize>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn node_set(&self, name: &str) -> Result<&[usize]> {
        self.node_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("unknown node set '{name}'")))
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dimension];
        let mut hi = vec![f64::NEG_INFINITY; self.dimension];
        for x in &self.nodes {
            for d in 0..self.dimension {
                lo[d] = lo[d].min(x[d]);
                hi[d] = hi[d].max(x[d]);
            }
        }
        (lo, hi)
    }

    /// Checks the structural invariants: valid, distinct element node
    /// indices and sorted, duplicate-free node sets.
    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 && self.dimension != 3 {
            return Err(Error::invalid(format!(
                "mesh dimension must be 1 or 3, got {}",
                self.dimension
            )));
        }
        let per_element = if self.dimension == 1 { 2 } else { 8 };
        for (i, x) in self.nodes.iter().enumerate() {
            if x.len() != self.dimension {
                return Err(Error::invalid(format!("node {i} has {} coordinates", x.len())));
            }
        }
        for (e, conn) in self.elements.iter().enumerate() {
            if conn.len() != per_element {
                return Err(Error::invalid(format!(
                    "element {e} has {} nodes, expected {per_element}",
                    conn.len()
                )));
            }
            let mut seen = BTreeSet::new();
            for &n in conn {
                if n >= self.n_nodes() {
                    return Err(Error::invalid(format!("element {e} references node {n}")));
                }
                if !seen.insert(n) {
                    return Err(Error::invalid(format!("element {e} repeats node {n}")));
                }
            }
        }
        for (name, set) in &self.node_sets {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("node set '{name}' is not strictly sorted")));
            }
            if set.last().is_some_and(|&n| n >= self.n_nodes()) {
                return Err(Error::invalid(format!("node set '{name}' references a missing node")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mesh: Mesh = serde_json::from_str(text)?;
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Uniform bar on `[0, length]` with `n_elements` line elements.
pub fn build_bar(n_elements: usize, length: f64) -> Result<Mesh> {
    if n_elements < 2 {
        return Err(Error::invalid(format!(
            "bar needs at least 2 elements, got {n_elements}"
        )));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::invalid(format!("bar length must be positive, got {length}")));
    }
    let nodes = (0..=n_elements)
        .map(|i| vec![length * i as f64 / n_elements as f64])
        .collect();
    let elements = (0..n_elements).map(|e| vec![e, e + 1]).collect();
    let mut node_sets = BTreeMap::new();
    node_sets.insert("left".to_string(), vec![0]);
    node_sets.insert("right".to_string(), vec![n_elements]);
    Ok(Mesh {
        dimension: 1,
        nodes,
        elements,
        node_sets,
    })
}

/// Hex mesh of `[-half_width, half_width]^3` with `n` cells per side.
///
/// Local hex node order is the usual counter-clockwise bottom face followed by
/// the top face: `(-,-,-), (+,-,-), (+,+,-), (-,+,-), (-,-,+), ...`.
pub fn build_box(n: usize, half_width: f64) -> Result<Mesh> {
    if n < 3 {
        return Err(Error::invalid(format!(
            "box needs at least 3 cells per side to admit an interior block, got {n}"
        )));
    }
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(Error::invalid(format!("half width must be positive, got {half_width}")));
    }
    let np = n + 1;
    let coord = |i: usize| -half_width + 2.0 * half_width * i as f64 / n as f64;
    let id = |i: usize, j: usize, k: usize| i + np * (j + np * k);

    let mut nodes = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                nodes.push(vec![coord(i), coord(j), coord(k)]);
            }
        }
    }
    let mut elements = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                elements.push(vec![
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
            }
        }
    }
    let face = |k: usize| -> Vec<usize> {
        (0..np)
            .flat_map(|j| (0..np).map(move |i| id(i, j, k)))
            .collect()
    };
    let mut node_sets = BTreeMap::new();
    node_sets.insert("bottom".to_string(), face(0));
    node_sets.insert("top".to_string(), face(n));
    Ok(Mesh {
        dimension: 3,
        nodes,
        elements,
        node_sets,
    })
}

/// Splits the mesh into the elements inside the axis-aligned block
/// `[lo, hi]` and returns the interface nodes shared with the rest.
pub fn select_interior_block(mesh: &Mesh, lo: &[f64], hi: &[f64]) -> Result<BlockSelection> {
    let dim = mesh.dimension;
    if lo.len() != dim || hi.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "block corner",
            expected: dim,
            got: lo.len().min(hi.len()),
        });
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::invalid("block must satisfy lo < hi in every axis"));
    }
    let (bb_lo, bb_hi) = mesh.bounding_box();
    let extent = bb_lo
        .iter()
        .zip(&bb_hi)
        .map(|(a, b)| b - a)
        .fold(0.0_f64, f64::max);
    let tol = 1e-9 * extent.max(1.0);

    let inside = |x: &[f64]| (0..dim).all(|d| x[d] >= lo[d] - tol && x[d] <= hi[d] + tol);

    let mut inner = Vec::new();
    for (e, conn) in mesh.elements.iter().enumerate() {
        let all_in = conn.iter().all(|&n| inside(&mesh.nodes[n]));
        if all_in {
            inner.push(e);
            continue;
        }
        let overlaps = (0..dim).all(|d| {
            let emin = conn.iter().map(|&n| mesh.nodes[n][d]).fold(f64::INFINITY, f64::min);
            let emax = conn.iter().map(|&n| mesh.nodes[n][d]).fold(f64::NEG_INFINITY, f64::max);
            emax.min(hi[d]) - emin.max(lo[d]) > tol
        });
        if overlaps {
            return Err(Error::invalid(format!(
                "block boundary is not aligned with element faces (element {e} straddles it)"
            )));
        }
    }
    if inner.is_empty() {
        return Err(Error::invalid("interior block contains no elements"));
    }

    let on_boundary =
        |x: &[f64]| (0..dim).any(|d| (x[d] - bb_lo[d]).abs() <= tol || (x[d] - bb_hi[d]).abs() <= tol);
    let mut inner_nodes = BTreeSet::new();
    for &e in &inner {
        for &n in &mesh.elements[e] {
            if on_boundary(&mesh.nodes[n]) {
                return Err(Error::invalid(
                    "interior block touches the outer boundary of the mesh",
                ));
            }
            inner_nodes.insert(n);
        }
    }
    let inner_set: BTreeSet<usize> = inner.iter().copied().collect();
    let mut outer_nodes = BTreeSet::new();
    for (e, conn) in mesh.elements.iter().enumerate() {
        if !inner_set.contains(&e) {
            outer_nodes.extend(conn.iter().copied());
        }
    }
    let interface_nodes = inner_nodes.intersection(&outer_nodes).copied().collect();
    Ok(BlockSelection {
        inner_elements: inner,
        interface_nodes,
    })
}
