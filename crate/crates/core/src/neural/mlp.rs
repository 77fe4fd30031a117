//! Dense multilayer perceptron with hand-written forward and backward
//! passes.
//!
//! Hidden layers apply ReLU; the output layer is linear so the network can
//! represent the negative action values that most reward functions produce.
//! Weights are flat row-major matrices, and the inner dot products run over
//! four independent accumulators to break the floating-point dependency
//! chain. The summation order is fixed, so results are bit-reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Layer widths, input first: [input, hidden..., output].
    pub sizes: Vec<usize>,
    /// Per layer: row-major `[out_dim x in_dim]` weight matrix.
    pub weights: Vec<Vec<f64>>,
    /// Per layer: `out_dim` biases.
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    /// He-uniform weights (bound sqrt(6/fan_in)), zero biases.
    pub fn he_uniform(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output layers");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Self { sizes: sizes.to_vec(), weights, biases }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2);
        let weights =
            (0..sizes.len() - 1).map(|l| vec![0.0; sizes[l] * sizes[l + 1]]).collect();
        let biases = (0..sizes.len() - 1).map(|l| vec![0.0; sizes[l + 1]]).collect();
        Self { sizes: sizes.to_vec(), weights, biases }
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input length {} does not match input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Output activations only.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.layer_count() - 1;
        let mut a = x.to_vec();
        for l in 0..=last {
            let mut z = vec![0.0; self.sizes[l + 1]];
            matvec(&self.weights[l], self.sizes[l + 1], self.sizes[l], &a, &mut z);
            for (zi, bi) in z.iter_mut().zip(&self.biases[l]) {
                *zi += bi;
            }
            if l != last {
                for zi in &mut z {
                    *zi = zi.max(0.0);
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Output plus the per-layer activations the backward pass needs.
    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let last = self.layer_count() - 1;
        let mut pre = Vec::with_capacity(self.layer_count());
        let mut post = Vec::with_capacity(self.layer_count());
        let mut a = x.to_vec();
        for l in 0..=last {
            let mut z = vec![0.0; self.sizes[l + 1]];
            matvec(&self.weights[l], self.sizes[l + 1], self.sizes[l], &a, &mut z);
            for (zi, bi) in z.iter_mut().zip(&self.biases[l]) {
                *zi += bi;
            }
            pre.push(z.clone());
            if l != last {
                for zi in &mut z {
                    *zi = zi.max(0.0);
                }
            }
            post.push(z.clone());
            a = z;
        }
        let out = post.last().unwrap().clone();
        Ok((out, ForwardCache { x: x.to_vec(), pre, post }))
    }
}

/// Activations recorded by one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Vec<f64>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation values per layer (output layer: identical to pre).
    post: Vec<Vec<f64>>,
}

/// Gradient tensors, shape-matched to `MlpParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            weights: p.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= factor;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= factor;
            }
        }
    }
}

/// Backpropagate `dout` (dLoss/dOutput) through the cached activations,
/// adding the parameter gradients into `grads` so batches can accumulate.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    dout: &[f64],
    grads: &mut MlpGrads,
) -> Result<()> {
    let layers = params.layer_count();
    if cache.x.len() != params.input_dim()
        || cache.pre.len() != layers
        || cache
            .pre
            .iter()
            .enumerate()
            .any(|(l, z)| z.len() != params.sizes[l + 1])
    {
        return Err(Error::Shape("forward cache does not match network shape".into()));
    }
    if dout.len() != params.output_dim() {
        return Err(Error::Shape(format!(
            "gradient length {} does not match output dim {}",
            dout.len(),
            params.output_dim()
        )));
    }

    let mut delta = dout.to_vec();
    for l in (0..layers).rev() {
        // Output layer is linear; hidden layers fold in the ReLU derivative
        // (0 at and below zero).
        if l != layers - 1 {
            for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let input = if l == 0 { &cache.x } else { &cache.post[l - 1] };
        let (rows, cols) = (params.sizes[l + 1], params.sizes[l]);
        let gw = &mut grads.weights[l];
        for r in 0..rows {
            let coef = delta[r];
            if coef != 0.0 {
                let row = &mut gw[r * cols..(r + 1) * cols];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += coef * xi;
                }
            }
        }
        for (g, d) in grads.biases[l].iter_mut().zip(&delta) {
            *g += d;
        }
        if l > 0 {
            delta = matvec_transposed(&params.weights[l], rows, cols, &delta);
        }
    }
    Ok(())
}

/// Squared TD error on the chosen action's value: loss plus dLoss/dQ.
pub fn td_loss(q: &[f64], action: usize, target: f64) -> (f64, Vec<f64>) {
    let diff = q[action] - target;
    let mut grad = vec![0.0; q.len()];
    grad[action] = 2.0 * diff;
    (diff * diff, grad)
}

/// y = W x with four running partial sums per row.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = [0.0f64; 4];
        let mut rw = row.chunks_exact(4);
        let mut rx = x.chunks_exact(4);
        for (cw, cx) in (&mut rw).zip(&mut rx) {
            acc[0] += cw[0] * cx[0];
            acc[1] += cw[1] * cx[1];
            acc[2] += cw[2] * cx[2];
            acc[3] += cw[3] * cx[3];
        }
        let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for (a, b) in rw.remainder().iter().zip(rx.remainder()) {
            s += a * b;
        }
        out[r] = s;
    }
}

/// y = W^T d, accumulated row by row so the matrix is walked contiguously.
fn matvec_transposed(w: &[f64], rows: usize, cols: usize, d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let coef = d[r];
        if coef != 0.0 {
            let row = &w[r * cols..(r + 1) * cols];
            for (o, wv) in out.iter_mut().zip(row) {
                *o += coef * wv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&[8, 16, 8, 2]);
        assert_eq!(p.forward(&[1.0; 8]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn output_bias_passes_through_zero_weights() {
        let mut p = MlpParams::zeros(&[4, 3, 2]);
        p.biases[1] = vec![1.0, -1.0];
        assert_eq!(p.forward(&[0.5; 4]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn input_shape_is_checked() {
        let p = MlpParams::zeros(&[4, 2]);
        assert!(p.forward(&[1.0; 3]).is_err());
    }

    // Plain nested-loop recomputation with none of the layout or unrolling
    // choices of the real pass.
    fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let last = p.layer_count() - 1;
        let mut a = x.to_vec();
        for l in 0..=last {
            let (rows, cols) = (p.sizes[l + 1], p.sizes[l]);
            let mut next = vec![0.0; rows];
            for r in 0..rows {
                let mut s = p.biases[l][r];
                for c in 0..cols {
                    s += p.weights[l][r * cols + c] * a[c];
                }
                next[r] = if l != last && s < 0.0 { 0.0 } else { s };
            }
            a = next;
        }
        a
    }

    #[test]
    fn forward_matches_naive_recomputation() {
        let mut rng = stream_rng(101, 1);
        for _ in 0..20 {
            let p = MlpParams::he_uniform(&[8, 16, 8, 2], &mut rng);
            let x: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let got = p.forward(&x).unwrap();
            let want = naive_forward(&p, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = stream_rng(101, 2);
        let p = MlpParams::he_uniform(&[6, 10, 2], &mut rng);
        let (_, cache) = p.forward_cached(&[0.3; 6]).unwrap();
        let mut g = MlpGrads::zeros_like(&p);
        backward(&p, &cache, &[0.0, 0.0], &mut g).unwrap();
        assert!(g.weights.iter().flatten().all(|&v| v == 0.0));
        assert!(g.biases.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_closed_form() {
        // L = q^2 on a one-layer linear net: dL/dW = 2 q x^T, dL/db = 2 q.
        let mut rng = stream_rng(101, 3);
        let p = MlpParams::he_uniform(&[3, 1], &mut rng);
        let x = [0.7, -0.2, 1.3];
        let (q, cache) = p.forward_cached(&x).unwrap();
        let mut g = MlpGrads::zeros_like(&p);
        backward(&p, &cache, &[2.0 * q[0]], &mut g).unwrap();
        for (i, xi) in x.iter().enumerate() {
            assert!((g.weights[0][i] - 2.0 * q[0] * xi).abs() < 1e-12);
        }
        assert!((g.biases[0][0] - 2.0 * q[0]).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream_rng(101, 4);
        let mut p = MlpParams::he_uniform(&[8, 16, 8, 2], &mut rng);
        let x: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let action = 1;
        let target = 0.37;

        let (q, cache) = p.forward_cached(&x).unwrap();
        let (_, dq) = td_loss(&q, action, target);
        let mut g = MlpGrads::zeros_like(&p);
        backward(&p, &cache, &dq, &mut g).unwrap();

        let h = 1e-5;
        let mut max_rel = 0.0f64;
        let loss_at = |p: &MlpParams| {
            let q = p.forward(&x).unwrap();
            td_loss(&q, action, target).0
        };
        for l in 0..p.layer_count() {
            for i in 0..p.weights[l].len() {
                let orig = p.weights[l][i];
                p.weights[l][i] = orig + h;
                let hi = loss_at(&p);
                p.weights[l][i] = orig - h;
                let lo = loss_at(&p);
                p.weights[l][i] = orig;
                let num = (hi - lo) / (2.0 * h);
                let ana = g.weights[l][i];
                let denom = ana.abs().max(num.abs()).max(1e-6);
                max_rel = max_rel.max((num - ana).abs() / denom);
            }
            for i in 0..p.biases[l].len() {
                let orig = p.biases[l][i];
                p.biases[l][i] = orig + h;
                let hi = loss_at(&p);
                p.biases[l][i] = orig - h;
                let lo = loss_at(&p);
                p.biases[l][i] = orig;
                let num = (hi - lo) / (2.0 * h);
                let ana = g.biases[l][i];
                let denom = ana.abs().max(num.abs()).max(1e-6);
                max_rel = max_rel.max((num - ana).abs() / denom);
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn td_loss_examples() {
        let (loss, grad) = td_loss(&[2.0, 5.0], 0, 2.0);
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0, 0.0]);
        let (loss, grad) = td_loss(&[2.0, 5.0], 1, 3.0);
        assert_eq!(loss, 4.0);
        assert_eq!(grad, vec![0.0, 4.0]);
    }

    #[test]
    fn same_seed_same_init() {
        let a = MlpParams::he_uniform(&[10, 20, 2], &mut stream_rng(55, 9));
        let b = MlpParams::he_uniform(&[10, 20, 2], &mut stream_rng(55, 9));
        assert_eq!(a, b);
        let c = MlpParams::he_uniform(&[10, 20, 2], &mut stream_rng(56, 9));
        assert_ne!(a, c);
    }
}
