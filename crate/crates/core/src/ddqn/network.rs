//! Fully connected Q-network with ReLU hidden layers and a linear head.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out × in`, row-major.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Gradients with the same shapes as the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::config(format!("invalid layer dims {dims:?}")));
    }
    Ok(())
}

impl QNetwork {
    /// All-zero parameters.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|p| Dense {
                w: Array2::zeros((p[1], p[0])),
                b: Array1::zeros(p[1]),
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for l in &mut net.layers {
            let limit = (6.0 / l.w.ncols() as f64).sqrt();
            l.w.mapv_inplace(|_| rng.gen_range(-limit..limit));
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in declaration order: per layer, weights row-major then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.input_dim(),
                got: state.len(),
            });
        }
        let mut a = Array1::from(state.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.w.dot(&a) + &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Row-wise forward pass over a `batch × input_dim` matrix.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.pop().expect("output"))
    }

    /// Activations of every layer, input first.
    fn forward_cached(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.w.t()) + &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// `L = Σ_i (y_i - Q(s_i, a_i))²` and its exact gradient.
    pub fn loss_and_grad(
        &self,
        states: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        let n = states.nrows();
        if actions.len() != n || targets.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: actions.len().min(targets.len()),
            });
        }
        let n_out = self.output_dim();
        if let Some(&a) = actions.iter().find(|&&a| a >= n_out) {
            return Err(Error::InvalidAction {
                action: a,
                n_actions: n_out,
            });
        }
        let acts = self.forward_cached(states)?;
        let q = acts.last().expect("output");
        let mut delta = Array2::<f64>::zeros(q.raw_dim());
        let mut loss = 0.0;
        for i in 0..n {
            let err = targets[i] - q[[i, actions[i]]];
            loss += err * err;
            delta[[i, actions[i]]] = -2.0 * err;
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let a_prev = &acts[li];
            let gw = delta.t().dot(a_prev);
            let gb = delta.sum_axis(Axis(0));
            if li > 0 {
                let mut d_prev = delta.dot(&self.layers[li].w);
                // ReLU derivative from the stored (post-activation) values.
                ndarray::Zip::from(&mut d_prev)
                    .and(a_prev)
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = d_prev;
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::Array2;
    use rand::Rng;

    /// Straight loop-based evaluator over the flat parameter vector.
    fn naive_forward(dims: &[usize], flat: &[f64], s: &[f64]) -> Vec<f64> {
        let mut a = s.to_vec();
        let mut k = 0;
        for li in 0..dims.len() - 1 {
            let (nin, nout) = (dims[li], dims[li + 1]);
            let w = &flat[k..k + nin * nout];
            let b = &flat[k + nin * nout..k + nin * nout + nout];
            k += nin * nout + nout;
            let mut z = vec![0.0; nout];
            for o in 0..nout {
                let mut acc = b[o];
                for i in 0..nin {
                    acc += w[o * nin + i] * a[i];
                }
                z[o] = if li + 2 < dims.len() { acc.max(0.0) } else { acc };
            }
            a = z;
        }
        a
    }

    fn naive_loss(dims: &[usize], flat: &[f64], s: &Array2<f64>, a: &[usize], y: &[f64]) -> f64 {
        (0..s.nrows())
            .map(|i| {
                let q = naive_forward(dims, flat, s.row(i).as_slice().unwrap());
                (y[i] - q[a[i]]).powi(2)
            })
            .sum()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&[16, 500, 250, 125, 4]).unwrap();
        assert_eq!(net.forward(&[1.0; 16]).unwrap(), vec![0.0; 4]);
        assert!(net.forward(&[1.0; 3]).is_err());
    }

    #[test]
    fn single_affine_layer() {
        let mut net = QNetwork::zeros(&[1, 1]).unwrap();
        net.set_flat_params(&[2.5, -1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![6.5]);
        assert_eq!(net.forward(&[-3.0]).unwrap(), vec![-8.5]);
    }

    #[test]
    fn forward_matches_naive_evaluator() {
        let mut r = rng::stream(1, "net", 0);
        for k in 0..10 {
            let dims = [6, 20 + k, 11, 3];
            let net = QNetwork::he_uniform(&dims, &mut r).unwrap();
            let flat = net.flat_params();
            for _ in 0..20 {
                let s: Vec<f64> = (0..6).map(|_| r.gen_range(-2.0..2.0)).collect();
                let a = net.forward(&s).unwrap();
                let b = naive_forward(&dims, &flat, &s);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
                }
            }
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut r = rng::stream(2, "net", 0);
        let net = QNetwork::he_uniform(&[5, 9, 4], &mut r).unwrap();
        let x = Array2::from_shape_fn((7, 5), |_| r.gen_range(-1.0..1.0));
        let q = net.forward_batch(x.view()).unwrap();
        for i in 0..7 {
            let single = net.forward(x.row(i).as_slice().unwrap()).unwrap();
            for a in 0..4 {
                assert!((q[[i, a]] - single[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_parameter_closed_form() {
        let mut net = QNetwork::zeros(&[1, 1]).unwrap();
        let (w, s, y) = (0.7, 1.3, 2.0);
        net.set_flat_params(&[w, 0.0]).unwrap();
        let x = Array2::from_elem((1, 1), s);
        let (loss, g) = net.loss_and_grad(x.view(), &[0], &[y]).unwrap();
        assert!((loss - (y - w * s).powi(2)).abs() < 1e-15);
        assert!((g.layers[0].w[[0, 0]] - (-2.0 * s * (y - w * s))).abs() < 1e-14);
    }

    #[test]
    fn backprop_matches_central_differences() {
        let mut r = rng::stream(3, "gradcheck", 0);
        for case in 0..5 {
            let dims = [4, 7 + case, 5, 3];
            let net = QNetwork::he_uniform(&dims, &mut r).unwrap();
            let s = Array2::from_shape_fn((6, 4), |_| r.gen_range(-1.0..1.0));
            let a: Vec<usize> = (0..6).map(|_| r.gen_range(0..3)).collect();
            let y: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let (_, g) = net.loss_and_grad(s.view(), &a, &y).unwrap();
            let g = g.flat();
            let p = net.flat_params();
            let h = 1e-6;
            for k in 0..p.len() {
                let mut pp = p.clone();
                pp[k] += h;
                let up = naive_loss(&dims, &pp, &s, &a, &y);
                pp[k] -= 2.0 * h;
                let dn = naive_loss(&dims, &pp, &s, &a, &y);
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(g[k].abs()).max(1e-3), "k={k} fd={fd} bp={}", g[k]);
            }
        }
    }

    #[test]
    fn zero_error_gives_zero_gradient() {
        let mut r = rng::stream(4, "net", 0);
        let net = QNetwork::he_uniform(&[3, 8, 2], &mut r).unwrap();
        let s = Array2::from_shape_fn((4, 3), |_| r.gen_range(-1.0..1.0));
        let q = net.forward_batch(s.view()).unwrap();
        let a = [0, 1, 1, 0];
        let y: Vec<f64> = (0..4).map(|i| q[[i, a[i]]]).collect();
        let (loss, g) = net.loss_and_grad(s.view(), &a, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }
}
