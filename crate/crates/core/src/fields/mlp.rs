//! Fully connected network with forward-mode tangent propagation and a
//! hand-written reverse pass.
//!
//! A batch holds `channels` stacked blocks of `n` rows: block 0 carries
//! values, blocks `1..channels` carry tangents (directional derivatives of
//! the input). Tangents go through the same weights without bias and are
//! scaled by the activation slope, so the reverse pass differentiates the
//! spatial gradient as well as the value.

use serde::{Deserialize, Serialize};

use super::real::{gemm, Operand, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Softplus { beta: f64 },
    Relu,
}

impl Activation {
    /// Returns activation, first and second derivative at `z`.
    #[inline]
    fn eval<T: Real>(self, z: T) -> (T, T, T) {
        match self {
            Activation::Softplus { beta } => {
                let b = T::of(beta);
                let bz = b * z;
                // Beyond |bz| = 30 the curved part is below 1e-13.
                if bz > T::of(30.0) {
                    return (z, T::one(), T::zero());
                }
                if bz < T::of(-30.0) {
                    return (T::zero(), T::zero(), T::zero());
                }
                let e = (-bz.abs()).exp();
                let value = z.max(T::zero()) + e.ln_1p() / b;
                let s = if bz >= T::zero() { T::one() / (T::one() + e) } else { e / (T::one() + e) };
                (value, s, b * s * (T::one() - s))
            }
            Activation::Relu => {
                if z > T::zero() {
                    (z, T::one(), T::zero())
                } else {
                    (T::zero(), T::zero(), T::zero())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    /// `[input, hidden..., output]`.
    pub dims: Vec<usize>,
    /// Layer whose input is `[previous activation, network input] / sqrt(2)`.
    pub skip: Option<usize>,
    pub activation: Activation,
}

impl MlpShape {
    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn layer_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.dims[0]
        } else if self.skip == Some(layer) {
            self.dims[layer] + self.dims[0]
        } else {
            self.dims[layer]
        }
    }

    pub fn layer_out(&self, layer: usize) -> usize {
        self.dims[layer + 1]
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn num_params(&self) -> usize {
        (0..self.num_layers())
            .map(|l| self.layer_out(l) * (self.layer_in(l) + 1))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    shape: MlpShape,
    params: Vec<T>,
    /// `(weight offset, bias offset)` per layer. Weights are `out x in` row-major.
    offsets: Vec<(usize, usize)>,
}

/// Intermediate buffers of a forward pass kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pub n: usize,
    pub channels: usize,
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Real> MlpCache<T> {
    /// Network output, `channels * n` rows.
    pub fn output(&self) -> &[T] {
        self.pre.last().expect("at least one layer")
    }
}

impl<T: Real> Mlp<T> {
    pub fn zeros(shape: MlpShape) -> Self {
        assert!(shape.dims.len() >= 2, "network needs input and output sizes");
        if let Some(s) = shape.skip {
            assert!(s > 0 && s < shape.num_layers(), "skip layer out of range");
        }
        let mut offsets = Vec::new();
        let mut at = 0;
        for l in 0..shape.num_layers() {
            let w = shape.layer_out(l) * shape.layer_in(l);
            offsets.push((at, at + w));
            at += w + shape.layer_out(l);
        }
        Self {
            params: vec![T::zero(); at],
            shape,
            offsets,
        }
    }

    pub fn from_params(shape: MlpShape, params: Vec<T>) -> Option<Self> {
        let mut mlp = Self::zeros(shape);
        if params.len() != mlp.params.len() {
            return None;
        }
        mlp.params = params;
        Some(mlp)
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        let (w, b) = self.offsets[layer];
        w..b
    }

    fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let (_, b) = self.offsets[layer];
        b..b + self.shape.layer_out(layer)
    }

    pub fn weight(&self, layer: usize) -> &[T] {
        &self.params[self.weight_range(layer)]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [T] {
        let r = self.weight_range(layer);
        &mut self.params[r]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        let r = self.bias_range(layer);
        &mut self.params[r]
    }

    /// Runs the network on `channels * n` stacked input rows.
    pub fn forward(&self, input: &[T], n: usize, channels: usize) -> MlpCache<T> {
        let rows = n * channels;
        let d0 = self.shape.input_dim();
        assert_eq!(input.len(), rows * d0, "input size mismatch");
        let layers = self.shape.num_layers();
        let mut inputs: Vec<Vec<T>> = Vec::with_capacity(layers);
        let mut pre: Vec<Vec<T>> = Vec::with_capacity(layers);
        let mut current = input.to_vec();
        let inv_sqrt2 = T::of(std::f64::consts::FRAC_1_SQRT_2);

        for l in 0..layers {
            let d_in = self.shape.layer_in(l);
            let d_out = self.shape.layer_out(l);
            if self.shape.skip == Some(l) {
                let d_prev = self.shape.dims[l];
                let mut joined = vec![T::zero(); rows * d_in];
                for r in 0..rows {
                    let dst = &mut joined[r * d_in..(r + 1) * d_in];
                    for (d, s) in dst[..d_prev].iter_mut().zip(&current[r * d_prev..(r + 1) * d_prev]) {
                        *d = *s * inv_sqrt2;
                    }
                    for (d, s) in dst[d_prev..].iter_mut().zip(&input[r * d0..(r + 1) * d0]) {
                        *d = *s * inv_sqrt2;
                    }
                }
                current = joined;
            }
            let mut z = vec![T::zero(); rows * d_out];
            gemm(
                Operand::new(&current, rows, d_in),
                Operand::new(self.weight(l), d_out, d_in).t(),
                T::zero(),
                &mut z,
            );
            let bias = &self.params[self.bias_range(l)];
            for r in 0..n {
                for (v, b) in z[r * d_out..(r + 1) * d_out].iter_mut().zip(bias) {
                    *v += *b;
                }
            }
            let next = if l + 1 < layers {
                let act = self.shape.activation;
                let mut a = vec![T::zero(); rows * d_out];
                for i in 0..n * d_out {
                    let (value, slope, _) = act.eval(z[i]);
                    a[i] = value;
                    for c in 1..channels {
                        let j = c * n * d_out + i;
                        a[j] = slope * z[j];
                    }
                }
                Some(a)
            } else {
                None
            };
            inputs.push(std::mem::take(&mut current));
            pre.push(z);
            if let Some(a) = next {
                current = a;
            }
        }
        MlpCache {
            n,
            channels,
            inputs,
            pre,
        }
    }

    /// Accumulates parameter gradients into `grads` given the gradient of the
    /// loss with respect to every output row. Returns the input gradient when
    /// `want_input` is set.
    pub fn backward(&self, cache: &MlpCache<T>, grad_output: &[T], grads: &mut [T], want_input: bool) -> Option<Vec<T>> {
        let (n, channels) = (cache.n, cache.channels);
        let rows = n * channels;
        let layers = self.shape.num_layers();
        assert_eq!(grad_output.len(), rows * self.shape.output_dim(), "output gradient size mismatch");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size mismatch");
        let d0 = self.shape.input_dim();
        let inv_sqrt2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
        let mut grad_input = if want_input {
            Some(vec![T::zero(); rows * d0])
        } else {
            None
        };
        let mut g_z = grad_output.to_vec();

        for l in (0..layers).rev() {
            let d_in = self.shape.layer_in(l);
            let d_out = self.shape.layer_out(l);
            let h = &cache.inputs[l];
            gemm(
                Operand::new(&g_z, rows, d_out).t(),
                Operand::new(h, rows, d_in),
                T::one(),
                &mut grads[self.weight_range(l)],
            );
            let bias_grad = &mut grads[self.bias_range(l)];
            for r in 0..n {
                for (b, g) in bias_grad.iter_mut().zip(&g_z[r * d_out..(r + 1) * d_out]) {
                    *b += *g;
                }
            }
            let need_h = l > 0 || want_input;
            if !need_h {
                break;
            }
            let mut g_h = vec![T::zero(); rows * d_in];
            gemm(
                Operand::new(&g_z, rows, d_out),
                Operand::new(self.weight(l), d_out, d_in),
                T::zero(),
                &mut g_h,
            );
            let d_prev = if l == 0 { d0 } else { self.shape.dims[l] };
            if self.shape.skip == Some(l) {
                let mut g_prev = vec![T::zero(); rows * d_prev];
                for r in 0..rows {
                    let src = &g_h[r * d_in..(r + 1) * d_in];
                    for (d, s) in g_prev[r * d_prev..(r + 1) * d_prev].iter_mut().zip(&src[..d_prev]) {
                        *d = *s * inv_sqrt2;
                    }
                    if let Some(gx) = grad_input.as_mut() {
                        for (d, s) in gx[r * d0..(r + 1) * d0].iter_mut().zip(&src[d_prev..]) {
                            *d += *s * inv_sqrt2;
                        }
                    }
                }
                g_h = g_prev;
            }
            if l == 0 {
                if let Some(gx) = grad_input.as_mut() {
                    for (d, s) in gx.iter_mut().zip(&g_h) {
                        *d += *s;
                    }
                }
                break;
            }
            // Back through the activation of layer l - 1.
            let z = &cache.pre[l - 1];
            let act = self.shape.activation;
            let mut g_prev_z = vec![T::zero(); rows * d_prev];
            for i in 0..n * d_prev {
                let (_, slope, curvature) = act.eval(z[i]);
                let mut value_grad = g_h[i] * slope;
                for c in 1..channels {
                    let j = c * n * d_prev + i;
                    value_grad += g_h[j] * curvature * z[j];
                    g_prev_z[j] = g_h[j] * slope;
                }
                g_prev_z[i] = value_grad;
            }
            g_z = g_prev_z;
        }
        grad_input
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mlp(shape: MlpShape, seed: u64) -> Mlp<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = Mlp::zeros(shape);
        for p in mlp.params_mut() {
            *p = rng.random_range(-0.8..0.8);
        }
        mlp
    }

    fn shape() -> MlpShape {
        MlpShape {
            dims: vec![3, 6, 5, 4, 2],
            skip: Some(2),
            activation: Activation::Softplus { beta: 3.0 },
        }
    }

    /// Scalar objective mixing values and tangents, for finite differences.
    fn objective(mlp: &Mlp<f64>, input: &[f64], n: usize, weights: &[f64]) -> f64 {
        let cache = mlp.forward(input, n, 4);
        cache.output().iter().zip(weights).map(|(o, w)| o * w).sum::<f64>()
            + cache.output().iter().map(|o| o * o).sum::<f64>() * 0.1
    }

    #[test]
    fn param_and_input_gradients_match_finite_differences() {
        let mlp = random_mlp(shape(), 3);
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Value rows arbitrary, tangent rows = unit basis (as for raw xyz input).
        let mut input = vec![0.0; 4 * n * 3];
        for r in 0..n {
            for d in 0..3 {
                input[r * 3 + d] = rng.random_range(-1.0..1.0);
                input[(d + 1) * n * 3 + r * 3 + d] = 1.0;
            }
        }
        let weights: Vec<f64> = (0..4 * n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = mlp.forward(&input, n, 4);
        let g_out: Vec<f64> = cache
            .output()
            .iter()
            .zip(&weights)
            .map(|(o, w)| w + 0.2 * o)
            .collect();
        let mut grads = vec![0.0; mlp.num_params()];
        let g_in = mlp.backward(&cache, &g_out, &mut grads, true).unwrap();

        let h = 1e-6;
        for i in 0..mlp.num_params() {
            let mut plus = mlp.clone();
            plus.params_mut()[i] += h;
            let mut minus = mlp.clone();
            minus.params_mut()[i] -= h;
            let fd = (objective(&plus, &input, n, &weights) - objective(&minus, &input, n, &weights)) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", grads[i]);
        }
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus[i] += h;
            let mut minus = input.clone();
            minus[i] -= h;
            let fd = (objective(&mlp, &plus, n, &weights) - objective(&mlp, &minus, n, &weights)) / (2.0 * h);
            assert!((fd - g_in[i]).abs() < 1e-6 * (1.0 + fd.abs()), "input {i}");
        }
    }

    #[test]
    fn tangent_rows_are_directional_derivatives() {
        let mlp = random_mlp(shape(), 5);
        let x = [0.3, -0.2, 0.7];
        let mut input = vec![0.0; 12];
        input[..3].copy_from_slice(&x);
        for d in 0..3 {
            input[3 + d * 3 + d] = 1.0;
        }
        let cache = mlp.forward(&input, 1, 4);
        let eval = |p: [f64; 3]| mlp.forward(&p, 1, 1).output().to_vec();
        let h = 1e-6;
        for d in 0..3 {
            let mut a = x;
            a[d] += h;
            let mut b = x;
            b[d] -= h;
            let (fa, fb) = (eval(a), eval(b));
            for o in 0..2 {
                let fd = (fa[o] - fb[o]) / (2.0 * h);
                assert!((fd - cache.output()[(d + 1) * 2 + o]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn f32_and_f64_agree() {
        let mlp = random_mlp(shape(), 11);
        let as_f32 = Mlp::<f32>::from_params(mlp.shape().clone(), mlp.params().iter().map(|&p| p as f32).collect()).unwrap();
        let x = [0.1, 0.5, -0.4];
        let a = mlp.forward(&x, 1, 1).output().to_vec();
        let b = as_f32.forward(&x.map(|v| v as f32), 1, 1).output().to_vec();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - *q as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn relu_network_gradients() {
        let shape = MlpShape {
            dims: vec![4, 7, 3],
            skip: None,
            activation: Activation::Relu,
        };
        let mlp = random_mlp(shape, 2);
        let input = [0.2, -0.4, 0.9, 0.1, -0.3, 0.5, 0.2, 0.8];
        let cache = mlp.forward(&input, 2, 1);
        let g_out = vec![1.0; 6];
        let mut grads = vec![0.0; mlp.num_params()];
        mlp.backward(&cache, &g_out, &mut grads, false);
        let f = |m: &Mlp<f64>| m.forward(&input, 2, 1).output().iter().sum::<f64>();
        let h = 1e-6;
        for i in 0..mlp.num_params() {
            let mut p = mlp.clone();
            p.params_mut()[i] += h;
            let mut q = mlp.clone();
            q.params_mut()[i] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-6);
        }
    }
}
