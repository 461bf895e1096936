//! Fully connected ReLU networks with hand-written backpropagation, and the
//! two reduced-space losses (direct force and lower-triangular stiffness).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// ReLU on hidden layers, identity on the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations kept from a batched forward pass.
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l` (post-ReLU for `l > 0`).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Widths `sizes[0] -> sizes[1] -> ... -> sizes[last]`, weights and biases
    /// drawn uniformly from `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid("network needs at least two nonzero layer widths"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound));
                let bias = DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.nrows()));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat parameters: per layer, weight column-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(l.weight.as_slice());
            p.extend_from_slice(l.bias.as_slice());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut o = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&p[o..o + n]);
            o += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&p[o..o + n]);
            o += n;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = DVector::from_column_slice(x);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = &l.weight * h + &l.bias;
            if i < last {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h.as_slice().to_vec()
    }

    /// Input Jacobian `d output / d input` (out x in). At a ReLU kink the
    /// inactive side is taken.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = DVector::from_column_slice(x);
        let mut j = DMatrix::identity(x.len(), x.len());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = &l.weight * h + &l.bias;
            j = &l.weight * j;
            if i < last {
                for (r, v) in h.iter_mut().enumerate() {
                    if *v <= 0.0 {
                        *v = 0.0;
                        j.row_mut(r).fill(0.0);
                    }
                }
            }
        }
        j
    }

    /// Signs of every hidden pre-activation.
    pub fn activation_pattern(&self, x: &[f64]) -> Vec<bool> {
        let mut h = DVector::from_column_slice(x);
        let mut pattern = Vec::new();
        for l in &self.layers[..self.layers.len() - 1] {
            h = &l.weight * h + &l.bias;
            pattern.extend(h.iter().map(|&v| v > 0.0));
            h.apply(|v| *v = v.max(0.0));
        }
        pattern
    }

    /// Forward pass on the columns of `x`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weight * &h;
            for mut c in z.column_iter_mut() {
                c += &l.bias;
            }
            inputs.push(h);
            if i < last {
                pre.push(z.clone());
                z.apply(|v| *v = v.max(0.0));
            }
            h = z;
        }
        (h, ForwardCache { inputs, pre })
    }

    /// Parameter gradient given `d loss / d output` for the cached batch.
    pub fn backward_batch(&self, cache: &ForwardCache, grad_out: &DMatrix<f64>) -> Vec<f64> {
        let n = self.layers.len();
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(n);
        let mut delta = grad_out.clone();
        for i in (0..n).rev() {
            let gw = &delta * cache.inputs[i].transpose();
            let gb = delta.column_sum();
            grads.push((gw, gb));
            if i > 0 {
                let mut back = self.layers[i].weight.transpose() * &delta;
                back.zip_apply(&cache.pre[i - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        flat
    }
}

/// Row-major lower-triangle index pairs `(i, j)`, `j <= i`.
pub fn tril_indices(k: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in 0..=i {
            v.push((i, j));
        }
    }
    v
}

/// Size `k` of the square matrix packed into `len` lower-triangle entries.
pub fn tril_dim(len: usize) -> Option<usize> {
    let k = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (k * (k + 1) / 2 == len).then_some(k)
}

pub fn unpack_lower(packed: &[f64], k: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(k, k);
    for (v, (i, j)) in packed.iter().zip(tril_indices(k)) {
        l[(i, j)] = *v;
    }
    l
}

pub fn pack_lower(l: &DMatrix<f64>) -> Vec<f64> {
    tril_indices(l.nrows()).into_iter().map(|(i, j)| l[(i, j)]).collect()
}

/// Mean squared error over all entries of `net(x) - y` and its parameter
/// gradient. Columns are samples.
pub fn direct_loss_grad(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let (out, cache) = net.forward_batch(x);
    let r = out - y;
    let scale = 1.0 / r.len().max(1) as f64;
    let loss = r.norm_squared() * scale;
    let g = r * (2.0 * scale);
    (loss, net.backward_batch(&cache, &g))
}

pub fn direct_loss(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let (out, _) = net.forward_batch(x);
    (out - y).norm_squared() / y.len().max(1) as f64
}

/// Applies `L(x) L(x)^T x` per column, where `L(x)` is the unpacked
/// network output. Returns the predictions and the per-sample `L`.
fn spsd_predict(out: &DMatrix<f64>, x: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let mut pred = DMatrix::zeros(k, x.ncols());
    let mut ls = Vec::with_capacity(x.ncols());
    for s in 0..x.ncols() {
        let l = unpack_lower(out.column(s).as_slice(), k);
        let xs = x.column(s);
        let z = l.transpose() * xs;
        pred.set_column(s, &(&l * z));
        ls.push(l);
    }
    (pred, ls)
}

/// Mean squared error of `L(x) L(x)^T x` against `y` with its parameter
/// gradient.
pub fn spsd_loss_grad(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let k = x.nrows();
    let (out, cache) = net.forward_batch(x);
    let (pred, ls) = spsd_predict(&out, x, k);
    let r = pred - y;
    let scale = 1.0 / r.len().max(1) as f64;
    let loss = r.norm_squared() * scale;
    let mut gout = DMatrix::zeros(out.nrows(), out.ncols());
    let idx = tril_indices(k);
    for s in 0..x.ncols() {
        let g = r.column(s) * (2.0 * scale);
        let xs = x.column(s);
        let l = &ls[s];
        let z = l.transpose() * xs;
        let ltg = l.transpose() * &g;
        for (p, &(i, j)) in idx.iter().enumerate() {
            gout[(p, s)] = g[i] * z[j] + xs[i] * ltg[j];
        }
    }
    (loss, net.backward_batch(&cache, &gout))
}

pub fn spsd_loss(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let (out, _) = net.forward_batch(x);
    let (pred, _) = spsd_predict(&out, x, x.nrows());
    (pred - y).norm_squared() / y.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_computed_forward() {
        // 2 -> 2 (ReLU) -> 1
        let net = Mlp {
            layers: vec![
                Layer {
                    weight: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]),
                    bias: DVector::from_vec(vec![0.0, -1.0]),
                },
                Layer {
                    weight: DMatrix::from_row_slice(1, 2, &[3.0, -2.0]),
                    bias: DVector::from_vec(vec![0.25]),
                },
            ],
        };
        // hidden pre = [1-2, 0.5+4-1] = [-1, 3.5] -> relu [0, 3.5]
        let y = net.forward(&[1.0, 2.0]);
        assert_eq!(y, vec![3.0 * 0.0 - 2.0 * 3.5 + 0.25]);
        assert_eq!(net.activation_pattern(&[1.0, 2.0]), vec![false, true]);
    }

    #[test]
    fn tril_packing_matches_row_major_order() {
        assert_eq!(tril_indices(3), vec![(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]);
        assert_eq!(tril_dim(6), Some(3));
        assert_eq!(tril_dim(7), None);
        let l = unpack_lower(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3);
        assert_eq!(l[(1, 0)], 2.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert_eq!(pack_lower(&l), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let p = net.params();
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
        let q: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        net.set_params(&q);
        assert_eq!(net.params(), q);
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[16, 8], &mut rng).unwrap();
        assert!(net.params().iter().all(|v| v.abs() < 0.25));
    }
}
