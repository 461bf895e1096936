//! Proper orthogonal decomposition by thin SVD and the combined
//! orthogonalized basis used by the stiffness models.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// Orthonormal columns, `rows x k`.
    pub columns: DMatrix<f64>,
    /// All singular values of the snapshot matrix, nonincreasing. Empty for
    /// a combined basis.
    pub singular_values: Vec<f64>,
    pub k: usize,
    pub dof_order: Vec<usize>,
    /// Columns that were filled in by completion rather than taken from
    /// the inputs (combined bases only).
    pub padded: Vec<usize>,
}

/// Makes the largest-magnitude entry of every column positive (first
/// occurrence wins ties).
fn fix_signs(m: &mut DMatrix<f64>) {
    for mut c in m.column_iter_mut() {
        let mut best = 0;
        for (i, v) in c.iter().enumerate() {
            if v.abs() > c[best].abs() {
                best = i;
            }
        }
        if c.len() > 0 && c[best] < 0.0 {
            c.neg_mut();
        }
    }
}

/// First `k` left singular vectors of `s`.
pub fn compute_pod(s: &DMatrix<f64>, k: usize) -> Result<PodBasis> {
    let (m, n) = s.shape();
    if k == 0 || k > m.min(n) {
        return Err(Error::invalid(format!(
            "basis dimension {k} outside 1..={} for a {m}x{n} snapshot matrix",
            m.min(n)
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("snapshot matrix"));
    }
    let svd = s.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut columns = DMatrix::from_fn(m, k, |r, c| u[(r, order[c])]);
    fix_signs(&mut columns);
    Ok(PodBasis {
        columns,
        singular_values,
        k,
        dof_order: (0..m).collect(),
        padded: Vec::new(),
    })
}

/// Fraction of squared singular values discarded when keeping `k`.
pub fn residual_energy(basis: &PodBasis, k: usize) -> Result<f64> {
    energy_beyond(&basis.singular_values, k)
}

pub fn energy_beyond(singular_values: &[f64], k: usize) -> Result<f64> {
    if k > singular_values.len() {
        return Err(Error::invalid(format!(
            "rank {k} exceeds the {} stored singular values",
            singular_values.len()
        )));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        log::warn!("all-zero snapshot matrix; residual energy taken as 0");
        return Ok(0.0);
    }
    let tail: f64 = singular_values[k..].iter().map(|s| s * s).sum();
    Ok(tail / total)
}

/// Smallest rank whose residual energy is at or below `tol`.
pub fn rank_for_energy(singular_values: &[f64], tol: f64) -> usize {
    (1..=singular_values.len())
        .find(|&k| energy_beyond(singular_values, k).map(|e| e <= tol).unwrap_or(false))
        .unwrap_or(singular_values.len())
}

fn orthogonalize_against(v: &mut [f64], q: &DMatrix<f64>, upto: usize) {
    for _ in 0..2 {
        for j in 0..upto {
            let c = q.column(j);
            let d: f64 = c.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(c.iter()) {
                *x -= d * y;
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Orthonormal basis for `[phi_f, phi_u]` with `k_f + k_u` columns.
///
/// Gram-Schmidt with reorthogonalization; a column whose remainder falls
/// below `1e-10` of the largest input column norm is replaced by the
/// coordinate direction with the largest remainder and recorded in
/// `padded`.
pub fn combine_orthogonalize(phi_f: &PodBasis, phi_u: &PodBasis) -> Result<PodBasis> {
    let m = phi_f.columns.nrows();
    if phi_u.columns.nrows() != m {
        return Err(Error::DimensionMismatch {
            what: "combined basis rows",
            expected: m,
            got: phi_u.columns.nrows(),
        });
    }
    let kstar = phi_f.k + phi_u.k;
    if kstar > m {
        return Err(Error::invalid(format!(
            "combined dimension {kstar} exceeds the {m} interface dofs"
        )));
    }
    let inputs: Vec<Vec<f64>> = phi_f
        .columns
        .column_iter()
        .chain(phi_u.columns.column_iter())
        .map(|c| c.iter().copied().collect())
        .collect();
    let scale = inputs.iter().map(|c| norm(c)).fold(0.0, f64::max);
    let mut q = DMatrix::zeros(m, kstar);
    let mut padded = Vec::new();
    for (j, col) in inputs.iter().enumerate() {
        let mut v = col.clone();
        orthogonalize_against(&mut v, &q, j);
        let mut nv = norm(&v);
        if !(nv > 1e-10 * scale) {
            let mut best = (f64::NEG_INFINITY, Vec::new());
            for e in 0..m {
                let mut w = vec![0.0; m];
                w[e] = 1.0;
                orthogonalize_against(&mut w, &q, j);
                let nw = norm(&w);
                if nw > best.0 + 1e-12 {
                    best = (nw, w);
                }
            }
            v = best.1;
            nv = best.0;
            padded.push(j);
        }
        for (r, x) in v.iter().enumerate() {
            q[(r, j)] = x / nv;
        }
    }
    if !padded.is_empty() {
        log::warn!("combined basis is rank deficient; padded columns {padded:?}");
    }
    Ok(PodBasis {
        columns: q,
        singular_values: Vec::new(),
        k: kstar,
        dof_order: phi_f.dof_order.clone(),
        padded,
    })
}

pub fn orthonormality_defect(basis: &DMatrix<f64>) -> f64 {
    let g = basis.transpose() * basis - DMatrix::identity(basis.ncols(), basis.ncols());
    g.amax()
}

/// `||Phi Phi^T S - S||_F^2 / ||S||_F^2`.
pub fn reconstruction_error(basis: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let total = s.norm_squared();
    if total == 0.0 {
        return 0.0;
    }
    let r = basis * (basis.transpose() * s) - s;
    r.norm_squared() / total
}

#[derive(Serialize, Deserialize)]
struct BasisHeader {
    rows: usize,
    #[serde(rename = "K")]
    k: usize,
    singular_values: Vec<f64>,
    dof_order: Vec<usize>,
    sign_convention: String,
    padded: Vec<usize>,
}

const BASIS_KIND: &str = "basis";
const SIGN_CONVENTION: &str = "max-abs-positive";

impl PodBasis {
    pub fn rows(&self) -> usize {
        self.columns.nrows()
    }

    /// Keeps the leading `k` columns.
    pub fn truncated(&self, k: usize) -> Result<PodBasis> {
        if k == 0 || k > self.k {
            return Err(Error::invalid(format!("cannot truncate a rank-{} basis to {k}", self.k)));
        }
        Ok(PodBasis {
            columns: self.columns.columns(0, k).into_owned(),
            singular_values: self.singular_values.clone(),
            k,
            dof_order: self.dof_order.clone(),
            padded: self.padded.iter().copied().filter(|&p| p < k).collect(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = BasisHeader {
            rows: self.rows(),
            k: self.k,
            singular_values: self.singular_values.clone(),
            dof_order: self.dof_order.clone(),
            sign_convention: SIGN_CONVENTION.into(),
            padded: self.padded.clone(),
        };
        container::encode(BASIS_KIND, &h, self.columns.as_slice())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, p): (BasisHeader, Vec<f64>) = container::decode(BASIS_KIND, bytes)?;
        if p.len() != h.rows * h.k || h.dof_order.len() != h.rows {
            return Err(Error::Format("basis payload size mismatch".into()));
        }
        if h.sign_convention != SIGN_CONVENTION {
            return Err(Error::Format(format!("unknown sign convention {}", h.sign_convention)));
        }
        Ok(PodBasis {
            columns: DMatrix::from_column_slice(h.rows, h.k, &p),
            singular_values: h.singular_values,
            k: h.k,
            dof_order: h.dof_order,
            padded: h.padded,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        PodBasis::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(m: usize, i: usize) -> PodBasis {
        let mut c = DMatrix::zeros(m, 1);
        c[(i, 0)] = 1.0;
        PodBasis {
            columns: c,
            singular_values: vec![1.0],
            k: 1,
            dof_order: (0..m).collect(),
            padded: vec![],
        }
    }

    #[test]
    fn diagonal_snapshot() {
        let s = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        let b = compute_pod(&s, 1).unwrap();
        assert_eq!(b.columns.as_slice(), &[1.0, 0.0]);
        assert_eq!(b.singular_values, vec![3.0, 0.0]);
    }

    #[test]
    fn rank_one_has_zero_residual() {
        let a = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let bb = nalgebra::DVector::from_vec(vec![2.0, 1.0, 1.0, -1.0]);
        let b = compute_pod(&(a * bb.transpose()), 1).unwrap();
        assert!(residual_energy(&b, 1).unwrap() < 1e-28);
    }

    #[test]
    fn energy_fraction() {
        assert!((energy_beyond(&[2.0, 1.0], 1).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(energy_beyond(&[2.0, 1.0], 2).unwrap(), 0.0);
        assert_eq!(energy_beyond(&[0.0, 0.0], 1).unwrap(), 0.0);
        assert!(energy_beyond(&[1.0], 2).is_err());
        assert_eq!(rank_for_energy(&[2.0, 1.0, 1e-9], 1e-12), 2);
    }

    #[test]
    fn rank_bounds() {
        let s = DMatrix::from_element(3, 2, 1.0);
        assert!(compute_pod(&s, 0).is_err());
        assert!(compute_pod(&s, 3).is_err());
        let mut bad = s.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(compute_pod(&bad, 1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn duplicate_inputs_are_padded() {
        let c = combine_orthogonalize(&e(4, 0), &e(4, 0)).unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.padded, vec![1]);
        assert!(orthonormality_defect(&c.columns) < 1e-15);
        assert_eq!(c.columns[(0, 0)], 1.0);
    }

    #[test]
    fn orthogonal_inputs_kept() {
        let c = combine_orthogonalize(&e(3, 0), &e(3, 1)).unwrap();
        assert!(c.padded.is_empty());
        assert_eq!(c.columns.column(1).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn basis_bytes_round_trip() {
        let s = DMatrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let b = compute_pod(&s, 2).unwrap();
        assert_eq!(PodBasis::from_bytes(&b.to_bytes().unwrap()).unwrap(), b);
    }
}
