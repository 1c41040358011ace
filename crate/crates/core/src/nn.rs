//! Dense feed-forward networks with hand-written reverse-mode gradients,
//! Adam updates and Polyak target averaging.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, z: &mut Array2<T>) {
        if self == Activation::Tanh {
            z.mapv_inplace(|x| x.tanh());
        }
    }

    /// Multiplies `grad` by the derivative, given the activation output `y`.
    fn backprop<T: Real>(self, y: &Array2<T>, grad: &mut Array2<T>) {
        if self == Activation::Tanh {
            grad.zip_mut_with(y, |g, &y| *g *= T::one() - y * y);
        }
    }
}

/// Affine layer, `y = x·W + b` with `W` of shape `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Layer<T: Real> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Layer<T> {
    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DenseNet<T: Real> {
    sizes: Vec<usize>,
    layers: Vec<Layer<T>>,
    hidden: Activation,
    output: Activation,
}

/// Layer inputs and outputs recorded by [`DenseNet::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real> {
    inputs: Vec<Array2<T>>,
    outputs: Vec<Array2<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.outputs.last().expect("network has at least one layer")
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T: Real> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Grads<T> {
    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.w.mapv_inplace(|x| x * s);
            l.b.mapv_inplace(|x| x * s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

impl<T: Real> DenseNet<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = T::lit((6.0 / (fan_in + fan_out) as f64).sqrt());
                let two = T::lit(2.0);
                Layer {
                    w: Array2::from_shape_simple_fn((fan_in, fan_out), || (T::sample_unit(rng) * two - T::one()) * limit),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
            hidden,
            output,
        }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                w: Array2::zeros((w[0], w[1])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
            hidden,
            output,
        }
    }

    pub fn from_layers(layers: Vec<Layer<T>>, hidden: Activation, output: Activation) -> Self {
        assert!(!layers.is_empty());
        let mut sizes = vec![layers[0].w.nrows()];
        for l in &layers {
            assert_eq!(l.w.nrows(), *sizes.last().unwrap(), "layer shapes do not chain");
            assert_eq!(l.w.ncols(), l.b.len());
            sizes.push(l.w.ncols());
        }
        Self {
            sizes,
            layers,
            hidden,
            output,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Scales the last layer's weights; used for small-output initialisation.
    pub fn scale_output_layer(&mut self, s: T) {
        let last = self.layers.last_mut().unwrap();
        last.w.mapv_inplace(|x| x * s);
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn activation(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        assert_eq!(x.ncols(), self.input_dim(), "input width does not match network");
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w);
            z += &l.b;
            self.activation(i).apply(&mut z);
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, T>) -> ForwardCache<T> {
        assert_eq!(x.ncols(), self.input_dim(), "input width does not match network");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w);
            z += &l.b;
            self.activation(i).apply(&mut z);
            inputs.push(h);
            h = z.clone();
            outputs.push(z);
        }
        ForwardCache { inputs, outputs }
    }

    pub fn forward_one(&self, x: &[T]) -> Vec<T> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous input");
        self.forward(view).into_raw_vec_and_offset().0
    }

    /// Reverse pass for the scalar `Σ_rows ⟨output_grad, net(x)⟩`.
    /// Returns parameter gradients and the gradient with respect to `x`.
    pub fn backward(&self, cache: &ForwardCache<T>, output_grad: ArrayView2<'_, T>) -> (Grads<T>, Array2<T>) {
        assert_eq!(output_grad.dim(), cache.output().dim(), "output gradient shape mismatch");
        let mut grad = output_grad.to_owned();
        let mut layers = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            self.activation(i).backprop(&cache.outputs[i], &mut grad);
            let w_grad = cache.inputs[i].t().dot(&grad);
            let b_grad = grad.sum_axis(Axis(0));
            let next = grad.dot(&self.layers[i].w.t());
            layers.push(Layer { w: w_grad, b: b_grad });
            grad = next;
        }
        layers.reverse();
        (Grads { layers }, grad)
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|x| x.is_finite())
    }
}

/// `target ← τ·online + (1−τ)·target`
pub fn soft_update<T: Real>(target: &mut DenseNet<T>, online: &DenseNet<T>, tau: T) {
    assert!(tau > T::zero() && tau <= T::one(), "tau must lie in (0, 1]");
    assert_eq!(target.sizes, online.sizes, "target/online shape mismatch");
    let keep = T::one() - tau;
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = tau * *o + keep * *t;
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Adam<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
}

impl<T: Real> Adam<T> {
    /// Decay rates 0.9/0.999, stability constant 1e-8.
    pub fn new(net: &DenseNet<T>, lr: T) -> Self {
        let zeros: Vec<_> = net.layers.iter().map(Layer::zeros_like).collect();
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, net: &mut DenseNet<T>, grads: &Grads<T>) {
        assert_eq!(grads.layers.len(), net.layers.len(), "gradient shape mismatch");
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let upd = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, &g, m, v| upd(p, g, m, v));
            ndarray::Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, &g, m, v| upd(p, g, m, v));
        }
    }
}

/// Adam for a single scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScalarAdam<T: Real> {
    pub lr: T,
    pub step: u64,
    m: T,
    v: T,
}

impl<T: Real> ScalarAdam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            step: 0,
            m: T::zero(),
            v: T::zero(),
        }
    }

    pub fn update(&mut self, p: &mut T, g: T) {
        let (b1, b2) = (T::lit(0.9), T::lit(0.999));
        self.step += 1;
        let t = self.step as i32;
        self.m = b1 * self.m + (T::one() - b1) * g;
        self.v = b2 * self.v + (T::one() - b2) * g * g;
        let mh = self.m / (T::one() - b1.powi(t));
        let vh = self.v / (T::one() - b2.powi(t));
        *p -= self.lr * mh / (vh.sqrt() + T::lit(1e-8));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn parameter_count() {
        let net = DenseNet::<f64>::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng());
        assert_eq!(net.num_params(), 4 * 4 + 5 * 2);
        assert_eq!(net.params().count(), net.num_params());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::<f64>::zeros(&[3, 5, 2], Activation::Tanh, Activation::Identity);
        assert_eq!(net.forward_one(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let net = DenseNet::from_layers(
            vec![Layer { w: Array2::<f64>::eye(3), b: Array1::zeros(3) }],
            Activation::Tanh,
            Activation::Identity,
        );
        assert_eq!(net.forward_one(&[1.5, -2.0, 0.25]), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn forward_matches_hand_rolled_loops() {
        let net = DenseNet::<f64>::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng());
        let x = [0.3, -1.2, 0.7];
        let mut h = x.to_vec();
        for (i, l) in net.layers().iter().enumerate() {
            let mut out = vec![0.0; l.w.ncols()];
            for (j, o) in out.iter_mut().enumerate() {
                let mut s = l.b[j];
                for (k, hk) in h.iter().enumerate() {
                    s += hk * l.w[[k, j]];
                }
                *o = if i + 1 < net.layers().len() { s.tanh() } else { s };
            }
            h = out;
        }
        let y = net.forward_one(&x);
        for (a, b) in y.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let net = DenseNet::<f64>::new(&[3, 2], Activation::Tanh, Activation::Identity, &mut rng());
        let x = array![[1.0, 2.0, -1.0]];
        let cache = net.forward_cached(x.view());
        let gy = array![[0.5, -2.0]];
        let (g, gx) = net.backward(&cache, gy.view());
        for i in 0..3 {
            for j in 0..2 {
                assert!((g.layers[0].w[[i, j]] - x[[0, i]] * gy[[0, j]]).abs() < 1e-15);
            }
        }
        assert_eq!(g.layers[0].b, array![0.5, -2.0]);
        let expect = gy.dot(&net.layers()[0].w.t());
        assert!((gx - expect).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = DenseNet::<f64>::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng());
        let x = array![[1.0, 2.0, -1.0], [0.0, 1.0, 0.5]];
        let cache = net.forward_cached(x.view());
        let (g, gx) = net.backward(&cache, Array2::zeros((2, 2)).view());
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng();
        let mut net = DenseNet::<f64>::new(&[4, 6, 5, 3], Activation::Tanh, Activation::Identity, &mut r);
        let x = Array2::from_shape_fn((3, 4), |_| r.random_range(-1.0..1.0));
        let gy = Array2::from_shape_fn((3, 3), |_| r.random_range(-1.0..1.0));
        let objective = |n: &DenseNet<f64>, x: &Array2<f64>| (n.forward(x.view()) * &gy).sum();
        let cache = net.forward_cached(x.view());
        let (g, gx) = net.backward(&cache, gy.view());
        let analytic: Vec<f64> = g.iter().copied().collect();
        let h = 1e-5;
        for i in 0..net.num_params() {
            let orig = *net.params_mut().nth(i).unwrap();
            *net.params_mut().nth(i).unwrap() = orig + h;
            let up = objective(&net, &x);
            *net.params_mut().nth(i).unwrap() = orig - h;
            let down = objective(&net, &x);
            *net.params_mut().nth(i).unwrap() = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {} vs {numeric}", analytic[i]);
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[idx] -= h;
            let numeric = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
            let a = gx.as_slice().unwrap()[idx];
            assert!((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6) < 1e-4);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut net = DenseNet::<f64>::new(&[2, 3], Activation::Tanh, Activation::Identity, &mut rng());
        let before = net.clone();
        let mut opt = Adam::new(&net, 1e-3);
        let zero = net.zero_grads();
        opt.update(&mut net, &zero);
        assert_eq!(net, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let mut net = DenseNet::<f64>::zeros(&[1, 1], Activation::Tanh, Activation::Identity);
        let mut opt = Adam::new(&net, 0.01);
        let mut g = net.zero_grads();
        g.layers[0].w[[0, 0]] = 3.7;
        opt.update(&mut net, &g);
        // m̂ = g, v̂ = g², step = lr·g/(|g|+eps)
        let expected = -0.01 * 3.7 / (3.7 + 1e-8);
        assert!((net.layers()[0].w[[0, 0]] - expected).abs() < 1e-15);
        // the untouched bias stays put
        assert_eq!(net.layers()[0].b[0], 0.0);
    }

    #[test]
    fn adam_tensors_independent() {
        let mut a = DenseNet::<f64>::zeros(&[2, 2], Activation::Tanh, Activation::Identity);
        let mut opt = Adam::new(&a, 0.1);
        let mut g = a.zero_grads();
        g.layers[0].w[[1, 0]] = 1.0;
        opt.update(&mut a, &g);
        let changed: Vec<_> = a.params().map(|&p| p != 0.0).collect();
        assert_eq!(changed.iter().filter(|&&c| c).count(), 1);
    }

    #[test]
    fn scalar_adam_first_step() {
        let mut p = 1.0f64;
        let mut opt = ScalarAdam::new(0.5);
        opt.update(&mut p, -2.0);
        assert!((p - (1.0 + 0.5 * 2.0 / (2.0 + 1e-8))).abs() < 1e-14);
    }

    #[test]
    fn soft_update_examples() {
        let online = DenseNet::<f64>::new(&[2, 3], Activation::Tanh, Activation::Identity, &mut rng());
        let mut target = DenseNet::zeros(&[2, 3], Activation::Tanh, Activation::Identity);
        soft_update(&mut target, &online, 1.0);
        assert_eq!(target, online);

        let mut t = DenseNet::<f64>::zeros(&[1, 1], Activation::Tanh, Activation::Identity);
        let mut o = t.clone();
        *o.params_mut().next().unwrap() = 2.0;
        soft_update(&mut t, &o, 0.5);
        assert_eq!(*t.params().next().unwrap(), 1.0);

        // geometric convergence
        let mut t = DenseNet::<f64>::zeros(&[1, 1], Activation::Tanh, Activation::Identity);
        let tau = 0.1;
        for n in 1..=20 {
            soft_update(&mut t, &o, tau);
            let err = 2.0 - *t.params().next().unwrap();
            assert!((err - 2.0 * (1.0 - tau).powi(n)).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic]
    fn soft_update_rejects_zero_tau() {
        let o = DenseNet::<f64>::zeros(&[1, 1], Activation::Tanh, Activation::Identity);
        let mut t = o.clone();
        soft_update(&mut t, &o, 0.0);
    }

    #[test]
    fn f32_networks_work() {
        let net = DenseNet::<f32>::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng());
        let y = net.forward_one(&[0.1, 0.2, 0.3]);
        assert_eq!(y.len(), 2);
        assert!(y.iter().all(|v| v.is_finite()));
    }
}
