//! The four interface model forms and the closure interface the coupled
//! solver consumes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::nn::{pack_lower, tril_dim, unpack_lower, Layer, Mlp};
use crate::pod::PodBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelForm {
    #[serde(rename = "lls")]
    Lls,
    #[serde(rename = "spsd-lls")]
    SpsdLls,
    #[serde(rename = "nn")]
    Nn,
    #[serde(rename = "spsd-nn")]
    SpsdNn,
}

impl ModelForm {
    pub const ALL: [ModelForm; 4] = [ModelForm::Lls, ModelForm::SpsdLls, ModelForm::Nn, ModelForm::SpsdNn];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelForm::Lls => "lls",
            ModelForm::SpsdLls => "spsd-lls",
            ModelForm::Nn => "nn",
            ModelForm::SpsdNn => "spsd-nn",
        }
    }

    pub fn is_spsd(&self) -> bool {
        matches!(self, ModelForm::SpsdLls | ModelForm::SpsdNn)
    }
}

impl fmt::Display for ModelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelForm::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model form '{s}'; valid forms: lls, spsd-lls, nn, spsd-nn")))
    }
}

/// Interface stiffness either as `factor * factor^T` or as a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum InterfaceStiffness {
    LowRank { factor: DMatrix<f64> },
    Dense(DMatrix<f64>),
}

impl InterfaceStiffness {
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            InterfaceStiffness::LowRank { factor } => factor * factor.transpose(),
            InterfaceStiffness::Dense(m) => m.clone(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            InterfaceStiffness::LowRank { factor } => factor * (factor.transpose() * x),
            InterfaceStiffness::Dense(m) => m * x,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            InterfaceStiffness::LowRank { factor } => factor.row_iter().map(|r| r.norm_squared()).collect(),
            InterfaceStiffness::Dense(m) => m.diagonal().as_slice().to_vec(),
        }
    }
}

/// Anything that closes the interface term of the coarse problem.
pub trait InterfaceModel: Send + Sync {
    fn form_name(&self) -> String;
    fn dof_order(&self) -> &[usize];
    fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>>;
    fn stiffness(&self, u: &[f64]) -> Result<InterfaceStiffness>;

    /// Low-rank difference between the exact Jacobian of `evaluate` and
    /// `stiffness`, as `(Phi, D)` with `dM/du = stiffness + Phi D Phi^T`.
    /// `None` when the stiffness already is the Jacobian.
    fn jacobian_correction(&self, _u: &[f64]) -> Result<Option<(DMatrix<f64>, DMatrix<f64>)>> {
        Ok(None)
    }
}

/// Affine closure `K u + g0`, used for the exact Schur complement and for
/// removing the inner domain altogether.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClosure {
    pub name: String,
    pub k: DMatrix<f64>,
    pub g0: Vec<f64>,
    pub dof_order: Vec<usize>,
}

impl LinearClosure {
    pub fn new(name: &str, k: DMatrix<f64>, g0: Vec<f64>, dof_order: Vec<usize>) -> Result<Self> {
        let n = dof_order.len();
        if k.shape() != (n, n) || g0.len() != n {
            return Err(Error::DimensionMismatch {
                what: "linear closure",
                expected: n,
                got: k.nrows(),
            });
        }
        Ok(LinearClosure {
            name: name.into(),
            k,
            g0,
            dof_order,
        })
    }

    pub fn zero(dof_order: Vec<usize>) -> Self {
        let n = dof_order.len();
        LinearClosure {
            name: "zero".into(),
            k: DMatrix::zeros(n, n),
            g0: vec![0.0; n],
            dof_order,
        }
    }
}

fn check_input(u: &[f64], n: usize) -> Result<()> {
    if u.len() != n {
        return Err(Error::DimensionMismatch {
            what: "interface displacement",
            expected: n,
            got: u.len(),
        });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("interface displacement"));
    }
    Ok(())
}

impl InterfaceModel for LinearClosure {
    fn form_name(&self) -> String {
        self.name.clone()
    }
    fn dof_order(&self) -> &[usize] {
        &self.dof_order
    }
    fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_input(u, self.dof_order.len())?;
        let f = &self.k * DVector::from_column_slice(u) + DVector::from_column_slice(&self.g0);
        Ok(f.as_slice().to_vec())
    }
    fn stiffness(&self, u: &[f64]) -> Result<InterfaceStiffness> {
        check_input(u, self.dof_order.len())?;
        Ok(InterfaceStiffness::Dense(self.k.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlsModel {
    pub phi_f: PodBasis,
    pub phi_u: PodBasis,
    /// `K_f x K_u`.
    pub a_hat: DMatrix<f64>,
    pub f0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpsdLlsModel {
    pub phi_star: PodBasis,
    /// Lower-triangular `K* x K*`.
    pub l_hat: DMatrix<f64>,
    pub f0: Vec<f64>,
}

/// Direct network `Phi_f * s_out * N(Phi_u^T u / s_in) + f0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NnModel {
    pub phi_f: PodBasis,
    pub phi_u: PodBasis,
    pub net: Mlp,
    pub in_scale: f64,
    pub out_scale: f64,
    pub f0: Vec<f64>,
}

/// Stiffness network: with `x = Phi*^T u` and `L` the unpacked output of
/// `N(x / s_in)`, the force is `Phi* (s_out / s_in) L L^T x + f0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsdNnModel {
    pub phi_star: PodBasis,
    pub net: Mlp,
    pub in_scale: f64,
    pub out_scale: f64,
    pub f0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Surrogate {
    Lls(LlsModel),
    SpsdLls(SpsdLlsModel),
    Nn(NnModel),
    SpsdNn(SpsdNnModel),
}

fn reduce(phi: &PodBasis, u: &[f64]) -> DVector<f64> {
    phi.columns.tr_mul(&DVector::from_column_slice(u))
}

impl SpsdNnModel {
    /// Reduced lower-triangular factor `L` at interface displacement `u`,
    /// already scaled so that the reduced stiffness is `L L^T`.
    pub fn reduced_factor(&self, u: &[f64]) -> DMatrix<f64> {
        let x = reduce(&self.phi_star, u) / self.in_scale;
        let out = self.net.forward(x.as_slice());
        unpack_lower(&out, self.phi_star.k) * (self.out_scale / self.in_scale).sqrt()
    }
}

impl SpsdNnModel {
    /// `D = d(g)/dz - c L L^T` for the reduced map `g(z) = c L L^T z`,
    /// `c = s_out / s_in`, from the network's input Jacobian.
    pub fn reduced_correction(&self, u: &[f64]) -> DMatrix<f64> {
        let k = self.phi_star.k;
        let z = reduce(&self.phi_star, u);
        let x = &z / self.in_scale;
        let l = unpack_lower(&self.net.forward(x.as_slice()), k);
        let jac = self.net.jacobian(x.as_slice());
        let c = self.out_scale / self.in_scale;
        let ltz = l.tr_mul(&z);
        let mut d = DMatrix::zeros(k, k);
        for j in 0..k {
            let dl = unpack_lower(jac.column(j).as_slice(), k) / self.in_scale;
            let col = &dl * &ltz + &l * dl.tr_mul(&z);
            d.set_column(j, &(col * c));
        }
        d
    }
}

impl Surrogate {
    pub fn form(&self) -> ModelForm {
        match self {
            Surrogate::Lls(_) => ModelForm::Lls,
            Surrogate::SpsdLls(_) => ModelForm::SpsdLls,
            Surrogate::Nn(_) => ModelForm::Nn,
            Surrogate::SpsdNn(_) => ModelForm::SpsdNn,
        }
    }

    pub fn f0(&self) -> &[f64] {
        match self {
            Surrogate::Lls(m) => &m.f0,
            Surrogate::SpsdLls(m) => &m.f0,
            Surrogate::Nn(m) => &m.f0,
            Surrogate::SpsdNn(m) => &m.f0,
        }
    }

    /// Output basis: `Phi_f` for direct forms, `Phi*` for stiffness forms.
    pub fn output_basis(&self) -> &PodBasis {
        match self {
            Surrogate::Lls(m) => &m.phi_f,
            Surrogate::SpsdLls(m) => &m.phi_star,
            Surrogate::Nn(m) => &m.phi_f,
            Surrogate::SpsdNn(m) => &m.phi_star,
        }
    }

    pub fn n_interface(&self) -> usize {
        self.f0().len()
    }

    fn dofs(&self) -> &[usize] {
        &self.output_basis().dof_order
    }

    /// `Phi* L` for the stiffness forms.
    pub fn spsd_factor(&self, u: &[f64]) -> Option<DMatrix<f64>> {
        match self {
            Surrogate::SpsdLls(m) => Some(&m.phi_star.columns * &m.l_hat),
            Surrogate::SpsdNn(m) => Some(&m.phi_star.columns * m.reduced_factor(u)),
            _ => None,
        }
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_input(u, self.n_interface())?;
        let f = match self {
            Surrogate::Lls(m) => &m.phi_f.columns * (&m.a_hat * reduce(&m.phi_u, u)),
            Surrogate::Nn(m) => {
                let x = reduce(&m.phi_u, u) / m.in_scale;
                let y = DVector::from_vec(m.net.forward(x.as_slice())) * m.out_scale;
                &m.phi_f.columns * y
            }
            Surrogate::SpsdLls(_) | Surrogate::SpsdNn(_) => {
                let factor = self.spsd_factor(u).unwrap();
                &factor * factor.tr_mul(&DVector::from_column_slice(u))
            }
        };
        let out: Vec<f64> = f.iter().zip(self.f0()).map(|(a, b)| a + b).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("surrogate output"));
        }
        Ok(out)
    }

    /// Finite-difference step for the direct-model Jacobian.
    pub fn fd_step(u: &[f64]) -> f64 {
        1e-6 * u.iter().fold(1.0_f64, |m, v| m.max(v.abs()))
    }

    /// Central-difference Jacobian of `evaluate`.
    pub fn fd_jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        check_input(u, self.n_interface())?;
        let n = u.len();
        let h = Self::fd_step(u);
        let mut j = DMatrix::zeros(n, n);
        let mut x = u.to_vec();
        for c in 0..n {
            x[c] = u[c] + h;
            let fp = self.evaluate(&x)?;
            x[c] = u[c] - h;
            let fm = self.evaluate(&x)?;
            x[c] = u[c];
            for r in 0..n {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    /// Stiffness forms return the low-rank factor `Phi* L`; direct forms the
    /// finite-difference Jacobian.
    pub fn stiffness(&self, u: &[f64]) -> Result<InterfaceStiffness> {
        check_input(u, self.n_interface())?;
        match self.spsd_factor(u) {
            Some(factor) => Ok(InterfaceStiffness::LowRank { factor }),
            None => Ok(InterfaceStiffness::Dense(self.fd_jacobian(u)?)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut header = ModelHeader {
            form: self.form(),
            dims: Dims {
                n_interface: self.n_interface(),
                ..Default::default()
            },
            dof_order: self.dofs().to_vec(),
            tril_order: "row-major".into(),
            in_scale: 1.0,
            out_scale: 1.0,
            padded: Vec::new(),
        };
        let push_basis = |b: &PodBasis, payload: &mut Vec<f64>| payload.extend_from_slice(b.columns.as_slice());
        match self {
            Surrogate::Lls(m) => {
                header.dims.k_f = m.phi_f.k;
                header.dims.k_u = m.phi_u.k;
                push_basis(&m.phi_f, &mut payload);
                push_basis(&m.phi_u, &mut payload);
                payload.extend_from_slice(m.a_hat.as_slice());
            }
            Surrogate::SpsdLls(m) => {
                header.dims.k_star = m.phi_star.k;
                header.padded = m.phi_star.padded.clone();
                push_basis(&m.phi_star, &mut payload);
                payload.extend(pack_lower(&m.l_hat));
            }
            Surrogate::Nn(m) => {
                header.dims.k_f = m.phi_f.k;
                header.dims.k_u = m.phi_u.k;
                header.dims.layer_sizes = m.net.sizes();
                header.in_scale = m.in_scale;
                header.out_scale = m.out_scale;
                push_basis(&m.phi_f, &mut payload);
                push_basis(&m.phi_u, &mut payload);
                payload.extend(m.net.params());
            }
            Surrogate::SpsdNn(m) => {
                header.dims.k_star = m.phi_star.k;
                header.dims.layer_sizes = m.net.sizes();
                header.in_scale = m.in_scale;
                header.out_scale = m.out_scale;
                header.padded = m.phi_star.padded.clone();
                push_basis(&m.phi_star, &mut payload);
                payload.extend(m.net.params());
            }
        }
        payload.extend_from_slice(self.f0());
        container::encode(MODEL_KIND, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, p): (ModelHeader, Vec<f64>) = container::decode(MODEL_KIND, bytes)?;
        let n = h.dims.n_interface;
        if h.dof_order.len() != n || h.tril_order != "row-major" {
            return Err(Error::Format("model header is inconsistent".into()));
        }
        let mut cur = Cursor { p: &p, pos: 0 };
        let basis = |cur: &mut Cursor, k: usize, padded: Vec<usize>| -> Result<PodBasis> {
            Ok(PodBasis {
                columns: DMatrix::from_column_slice(n, k, cur.take(n * k)?),
                singular_values: Vec::new(),
                k,
                dof_order: h.dof_order.clone(),
                padded,
            })
        };
        let net = |cur: &mut Cursor, sizes: &[usize]| -> Result<Mlp> {
            if sizes.len() < 2 {
                return Err(Error::Format("missing layer sizes".into()));
            }
            let mut layers = Vec::new();
            for w in sizes.windows(2) {
                let weight = DMatrix::from_column_slice(w[1], w[0], cur.take(w[0] * w[1])?);
                let bias = DVector::from_column_slice(cur.take(w[1])?);
                layers.push(Layer { weight, bias });
            }
            Ok(Mlp { layers })
        };
        let d = &h.dims;
        let model = match h.form {
            ModelForm::Lls => {
                let phi_f = basis(&mut cur, d.k_f, Vec::new())?;
                let phi_u = basis(&mut cur, d.k_u, Vec::new())?;
                let a_hat = DMatrix::from_column_slice(d.k_f, d.k_u, cur.take(d.k_f * d.k_u)?);
                Surrogate::Lls(LlsModel {
                    phi_f,
                    phi_u,
                    a_hat,
                    f0: cur.take(n)?.to_vec(),
                })
            }
            ModelForm::SpsdLls => {
                let phi_star = basis(&mut cur, d.k_star, h.padded.clone())?;
                let l_hat = unpack_lower(cur.take(d.k_star * (d.k_star + 1) / 2)?, d.k_star);
                Surrogate::SpsdLls(SpsdLlsModel {
                    phi_star,
                    l_hat,
                    f0: cur.take(n)?.to_vec(),
                })
            }
            ModelForm::Nn => {
                let phi_f = basis(&mut cur, d.k_f, Vec::new())?;
                let phi_u = basis(&mut cur, d.k_u, Vec::new())?;
                let net = net(&mut cur, &d.layer_sizes)?;
                if net.input_dim() != d.k_u || net.output_dim() != d.k_f {
                    return Err(Error::Format("network widths do not match the bases".into()));
                }
                Surrogate::Nn(NnModel {
                    phi_f,
                    phi_u,
                    net,
                    in_scale: h.in_scale,
                    out_scale: h.out_scale,
                    f0: cur.take(n)?.to_vec(),
                })
            }
            ModelForm::SpsdNn => {
                let phi_star = basis(&mut cur, d.k_star, h.padded.clone())?;
                let net = net(&mut cur, &d.layer_sizes)?;
                if net.input_dim() != d.k_star || tril_dim(net.output_dim()) != Some(d.k_star) {
                    return Err(Error::Format("network widths do not match the basis".into()));
                }
                Surrogate::SpsdNn(SpsdNnModel {
                    phi_star,
                    net,
                    in_scale: h.in_scale,
                    out_scale: h.out_scale,
                    f0: cur.take(n)?.to_vec(),
                })
            }
        };
        if cur.pos != p.len() {
            return Err(Error::Format("trailing model payload".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Surrogate::from_bytes(&std::fs::read(path)?)
    }
}

const MODEL_KIND: &str = "model";

#[derive(Debug, Default, Serialize, Deserialize)]
struct Dims {
    n_interface: usize,
    k_f: usize,
    k_u: usize,
    k_star: usize,
    layer_sizes: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    form: ModelForm,
    dims: Dims,
    dof_order: Vec<usize>,
    tril_order: String,
    in_scale: f64,
    out_scale: f64,
    padded: Vec<usize>,
}

struct Cursor<'a> {
    p: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        if self.pos + n > self.p.len() {
            return Err(Error::Format("model payload too short".into()));
        }
        let s = &self.p[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

impl InterfaceModel for Surrogate {
    fn form_name(&self) -> String {
        self.form().to_string()
    }
    fn dof_order(&self) -> &[usize] {
        self.dofs()
    }
    fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>> {
        Surrogate::evaluate(self, u)
    }
    fn stiffness(&self, u: &[f64]) -> Result<InterfaceStiffness> {
        Surrogate::stiffness(self, u)
    }
    fn jacobian_correction(&self, u: &[f64]) -> Result<Option<(DMatrix<f64>, DMatrix<f64>)>> {
        check_input(u, self.n_interface())?;
        Ok(match self {
            Surrogate::SpsdNn(m) => Some((m.phi_star.columns.clone(), m.reduced_correction(u))),
            _ => None,
        })
    }
}

/// Wraps a surrogate so that a dense stiffness is replaced by its symmetric
/// part `(J + J^T) / 2`.
pub struct Symmetrized<'a>(pub &'a Surrogate);

impl InterfaceModel for Symmetrized<'_> {
    fn form_name(&self) -> String {
        format!("{} (symmetrized)", self.0.form())
    }
    fn dof_order(&self) -> &[usize] {
        self.0.dofs()
    }
    fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.0.evaluate(u)
    }
    fn stiffness(&self, u: &[f64]) -> Result<InterfaceStiffness> {
        Ok(match self.0.stiffness(u)? {
            InterfaceStiffness::Dense(j) => InterfaceStiffness::Dense((&j + j.transpose()) * 0.5),
            lr => lr,
        })
    }
    fn jacobian_correction(&self, u: &[f64]) -> Result<Option<(DMatrix<f64>, DMatrix<f64>)>> {
        self.0.jacobian_correction(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(m: usize, k: usize) -> PodBasis {
        let mut c = DMatrix::zeros(m, k);
        for j in 0..k {
            c[(j, j)] = 1.0;
        }
        PodBasis {
            columns: c,
            singular_values: vec![],
            k,
            dof_order: (10..10 + m).collect(),
            padded: vec![],
        }
    }

    #[test]
    fn form_names() {
        for f in ModelForm::ALL {
            assert_eq!(f.as_str().parse::<ModelForm>().unwrap(), f);
        }
        let err = "linear".parse::<ModelForm>().unwrap_err().to_string();
        assert!(err.contains("spsd-nn"));
    }

    #[test]
    fn lls_doubles_projection() {
        let m = Surrogate::Lls(LlsModel {
            phi_f: basis(3, 2),
            phi_u: basis(3, 2),
            a_hat: DMatrix::identity(2, 2) * 2.0,
            f0: vec![0.0; 3],
        });
        assert_eq!(m.evaluate(&[1.0, -1.0, 5.0]).unwrap(), vec![2.0, -2.0, 0.0]);
        assert!(m.evaluate(&[1.0]).is_err());
        assert!(m.evaluate(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn spsd_zero_input_gives_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Surrogate::SpsdNn(SpsdNnModel {
            phi_star: basis(4, 2),
            net: Mlp::new(&[2, 2, 2, 2, 3], &mut rng).unwrap(),
            in_scale: 1.0,
            out_scale: 1.0,
            f0: vec![1.0, 2.0, 3.0, 4.0],
        });
        assert_eq!(m.evaluate(&[0.0; 4]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn identity_factor_projects() {
        let m = Surrogate::SpsdLls(SpsdLlsModel {
            phi_star: basis(3, 2),
            l_hat: DMatrix::identity(2, 2),
            f0: vec![0.0; 3],
        });
        let k = m.stiffness(&[0.0; 3]).unwrap().to_dense();
        let eig = k.symmetric_eigenvalues();
        for e in eig.iter() {
            assert!(e.abs() < 1e-15 || (e - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetrized_wrapper() {
        let m = Surrogate::Lls(LlsModel {
            phi_f: basis(2, 2),
            phi_u: basis(2, 2),
            a_hat: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
            f0: vec![0.0; 2],
        });
        let k = Symmetrized(&m).stiffness(&[0.0, 0.0]).unwrap().to_dense();
        assert!((k[(0, 1)] - 1.0).abs() < 1e-8 && (k[(1, 0)] - 1.0).abs() < 1e-8);
    }
}
