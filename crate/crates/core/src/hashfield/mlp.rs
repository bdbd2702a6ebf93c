//! Bias-free ReLU perceptrons stored input-major inside a flat parameter
//! vector: layer `k` is a `dims[k] x dims[k+1]` block.

use crate::scalar::{axpy, dot, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    len: usize,
}

impl MlpLayout {
    pub fn new(dims: Vec<usize>, start: usize) -> Self {
        assert!(dims.len() >= 2);
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut at = start;
        for w in dims.windows(2) {
            offsets.push(at);
            at += w[0] * w[1];
        }
        Self {
            len: at - start,
            dims,
            offsets,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn start(&self) -> usize {
        self.offsets[0]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn layer_range(&self, k: usize) -> std::ops::Range<usize> {
        let a = self.offsets[k];
        a..a + self.dims[k] * self.dims[k + 1]
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Allocates activation buffers: `acts[0]` is the input, `acts[k+1]` the
    /// (post-ReLU for hidden layers) output of layer `k`.
    pub fn activation_buffers<T: Real>(&self) -> Vec<Vec<T>> {
        self.dims.iter().map(|&d| vec![T::zero(); d]).collect()
    }

    /// Runs the network on `acts[0]`, filling the remaining buffers.
    pub fn forward<T: Real>(&self, params: &[T], acts: &mut [Vec<T>]) {
        let last = self.n_layers() - 1;
        for k in 0..self.n_layers() {
            let (head, tail) = acts.split_at_mut(k + 1);
            let input = &head[k];
            let out = &mut tail[0];
            out.iter_mut().for_each(|o| *o = T::zero());
            let n_out = self.dims[k + 1];
            let w = &params[self.layer_range(k)];
            for (i, &a) in input.iter().enumerate() {
                if a != T::zero() {
                    axpy(a, &w[i * n_out..(i + 1) * n_out], out);
                }
            }
            if k != last {
                out.iter_mut().for_each(|o| *o = o.max(T::zero()));
            }
        }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the final linear output).
    /// Weight gradients are added into `grads` (indexed like `params`);
    /// returns the gradient w.r.t. the input in `d_in`.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        acts: &[Vec<T>],
        d_out: &[T],
        grads: &mut [T],
        scratch: &mut [Vec<T>],
        d_in: &mut [T],
    ) {
        let n = self.n_layers();
        scratch[n].copy_from_slice(d_out);
        for k in (0..n).rev() {
            let n_out = self.dims[k + 1];
            let range = self.layer_range(k);
            let (lo, hi) = scratch.split_at_mut(k + 1);
            let g = &hi[0];
            let input = &acts[k];
            let w = &params[range.clone()];
            let gw = &mut grads[range];
            let d_prev = &mut lo[k];
            for (i, &a) in input.iter().enumerate() {
                if a != T::zero() {
                    axpy(a, g, &mut gw[i * n_out..(i + 1) * n_out]);
                }
                d_prev[i] = dot(&w[i * n_out..(i + 1) * n_out], g);
            }
            if k > 0 {
                // acts[k] is a ReLU output.
                for (d, &a) in d_prev.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
        }
        d_in.copy_from_slice(&scratch[0]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let layout = MlpLayout::new(vec![5, 7, 6, 3], 0);
        let mut rng = Rng::new(11);
        let mut params: Vec<f64> = (0..layout.len()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let input: Vec<f64> = (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let up = [0.3, -1.2, 0.7];
        let loss = |p: &[f64], x: &[f64]| {
            let mut acts = layout.activation_buffers::<f64>();
            acts[0].copy_from_slice(x);
            layout.forward(p, &mut acts);
            acts[3].iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut acts = layout.activation_buffers::<f64>();
        acts[0].copy_from_slice(&input);
        layout.forward(&params, &mut acts);
        let mut grads = vec![0.0; layout.len()];
        let mut scratch = layout.activation_buffers::<f64>();
        let mut d_in = vec![0.0; 5];
        layout.backward(&params, &acts, &up, &mut grads, &mut scratch, &mut d_in);
        let h = 1e-6;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let lp = loss(&params, &input);
            params[i] = orig - h;
            let lm = loss(&params, &input);
            params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-6, "param {i}: {fd} vs {}", grads[i]);
        }
        for i in 0..5 {
            let mut x = input.clone();
            x[i] += h;
            let lp = loss(&params, &x);
            x[i] -= 2.0 * h;
            let lm = loss(&params, &x);
            assert!(((lp - lm) / (2.0 * h) - d_in[i]).abs() < 1e-6);
        }
    }
}
