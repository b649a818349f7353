//! Dense feed-forward networks with exact backprop and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `delta` in place by the derivative, expressed through the
    /// activation output `y`.
    fn backprop(self, delta: &mut Array2<f64>, y: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(delta).and(y).for_each(|d, &y| {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(delta).and(y).for_each(|d, &y| *d *= 1.0 - y * y),
        }
    }
}

/// Layer widths plus activations; two networks are compatible iff their
/// specs are equal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output width");
        Self { sizes, hidden, output }
    }

    pub fn describe(&self) -> String {
        let widths: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        format!("{}:{:?}:{:?}", widths.join("-"), self.hidden, self.output).to_lowercase()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs x outputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Parameter-shaped buffers: one (weights, bias) pair per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.raw_dim())))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations recorded by a batched forward pass.
pub struct ForwardCache {
    /// `outputs[0]` is the input batch, `outputs[l + 1]` the output of layer l.
    outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Uniform fan-in initialisation in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn new<R: Rng>(spec: MlpSpec, rng: &mut R) -> Self {
        let n = spec.sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (spec.sizes[l], spec.sizes[l + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let activation = if l + 1 == n { spec.output } else { spec.hidden };
                Dense {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..=bound)),
                    bias: Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..=bound)),
                    activation,
                }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let n = spec.sizes.len() - 1;
        let layers = (0..n)
            .map(|l| Dense {
                weights: Array2::zeros((spec.sizes[l], spec.sizes[l + 1])),
                bias: Array1::zeros(spec.sizes[l + 1]),
                activation: if l + 1 == n { spec.output } else { spec.hidden },
            })
            .collect();
        Self { spec, layers }
    }

    /// Builds a network from explicit layers; widths must chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("an MLP needs at least one layer".into()));
        }
        let mut sizes = vec![layers[0].weights.nrows()];
        for l in &layers {
            if l.weights.nrows() != *sizes.last().unwrap() {
                return Err(Error::Shape { expected: *sizes.last().unwrap(), got: l.weights.nrows() });
            }
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::Shape { expected: l.weights.ncols(), got: l.bias.len() });
            }
            sizes.push(l.weights.ncols());
        }
        let hidden = if layers.len() > 1 { layers[0].activation } else { Activation::Identity };
        let output = layers.last().unwrap().activation;
        Ok(Self { spec: MlpSpec { sizes, hidden, output }, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Flat mutable access to parameter `index` of layer `layer`, weights
    /// first (row-major) then bias.
    pub fn param_mut(&mut self, layer: usize, index: usize) -> &mut f64 {
        let l = &mut self.layers[layer];
        let nw = l.weights.len();
        if index < nw {
            let cols = l.weights.ncols();
            &mut l.weights[[index / cols, index % cols]]
        } else {
            &mut l.bias[index - nw]
        }
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        self.layers[layer].weights.len() + self.layers[layer].bias.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: input.len() });
        }
        let batch = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        Ok(self.forward_batch(batch)?.row(0).to_vec())
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&input)?;
        let mut x = input.to_owned();
        for l in &self.layers {
            let mut z = x.dot(&l.weights);
            z += &l.bias;
            l.activation.apply(&mut z);
            x = z;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_batch(&input)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_owned());
        for l in &self.layers {
            let mut z = outputs.last().unwrap().dot(&l.weights);
            z += &l.bias;
            l.activation.apply(&mut z);
            outputs.push(z);
        }
        Ok(ForwardCache { outputs })
    }

    /// Backprop of `sum_b upstream[b] . output[b]`. Returns parameter
    /// gradients summed over the batch and the gradient w.r.t. the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(Error::Shape { expected: out.len(), got: upstream.len() });
        }
        let mut delta = upstream.to_owned();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&mut delta, &cache.outputs[l + 1]);
            let input = &cache.outputs[l];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            delta = delta.dot(&layer.weights.t());
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn gradients(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: input.len() });
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape { expected: self.output_dim(), got: upstream.len() });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        let u = ArrayView2::from_shape((1, upstream.len()), upstream).expect("contiguous slice");
        let cache = self.forward_cached(x)?;
        Ok(self.backward(&cache, u)?.0)
    }

    /// `self <- tau * online + (1 - tau) * self`
    pub fn polyak_from(&mut self, online: &Mlp, tau: f64) {
        debug_assert_eq!(self.spec, online.spec);
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weights).and(&o.weights).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
            Zip::from(&mut t.bias).and(&o.bias).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
    }

    fn check_batch(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: input.ncols() });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam first/second moments for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self { config, t: 0, m: Gradients::zeros_like(net), v: Gradients::zeros_like(net) }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let step_size = lr / c1;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step_size * *m / ((*v / c2).sqrt() + eps);
        };
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.m.layers[l];
            let (vw, vb) = &mut self.v.layers[l];
            Zip::from(&mut layer.weights).and(gw).and(mw).and(vw).for_each(|p, &g, m, v| update(p, g, m, v));
            Zip::from(&mut layer.bias).and(gb).and(mb).and(vb).for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.m.layers.len() == net.layers.len()
            && self
                .m
                .layers
                .iter()
                .zip(&net.layers)
                .all(|((w, b), l)| w.dim() == l.weights.dim() && b.len() == l.bias.len())
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
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(MlpSpec::new(vec![4, 8, 2], Activation::Relu, Activation::Identity));
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense { weights: Array2::eye(3), bias: Array1::zeros(3), activation: Activation::Identity };
        let net = Mlp::from_layers(vec![layer]).unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::new(MlpSpec::new(vec![3, 4, 1], Activation::Relu, Activation::Identity), &mut rng());
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { expected: 3, got: 2 })));
        assert!(net.gradients(&[1.0, 2.0, 3.0], &[1.0, 1.0]).is_err());
        let bad = vec![
            Dense { weights: Array2::zeros((2, 3)), bias: Array1::zeros(3), activation: Activation::Relu },
            Dense { weights: Array2::zeros((4, 1)), bias: Array1::zeros(1), activation: Activation::Identity },
        ];
        assert!(Mlp::from_layers(bad).is_err());
    }

    #[test]
    fn matches_hand_rolled_forward() {
        let net = Mlp::new(MlpSpec::new(vec![3, 5, 4, 2], Activation::Relu, Activation::Tanh), &mut rng());
        let x = [0.3, -1.2, 0.7];
        let mut h: Vec<f64> = x.to_vec();
        for layer in net.layers() {
            let mut next = vec![0.0; layer.bias.len()];
            for (j, out) in next.iter_mut().enumerate() {
                let mut acc = layer.bias[j];
                for (i, xi) in h.iter().enumerate() {
                    acc += xi * layer.weights[[i, j]];
                }
                *out = match layer.activation {
                    Activation::Identity => acc,
                    Activation::Relu => acc.max(0.0),
                    Activation::Tanh => acc.tanh(),
                };
            }
            h = next;
        }
        let y = net.forward(&x).unwrap();
        for (a, b) in y.iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(y.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let net = Mlp::new(MlpSpec::new(vec![3, 6, 2], Activation::Relu, Activation::Identity), &mut rng());
        let g = net.gradients(&[1.0, 2.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn linear_neuron_weight_gradient_is_input() {
        let layer = Dense { weights: array![[0.7]], bias: array![0.1], activation: Activation::Identity };
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let g = net.gradients(&[2.5], &[1.0]).unwrap();
        assert_eq!(g.layers[0].0[[0, 0]], 2.5);
        assert_eq!(g.layers[0].1[0], 1.0);
    }

    #[test]
    fn batch_gradient_is_sum_of_singles() {
        let net = Mlp::new(MlpSpec::new(vec![2, 4, 1], Activation::Tanh, Activation::Identity), &mut rng());
        let xs = array![[0.1, 0.2], [-0.5, 0.9]];
        let us = array![[1.0], [-2.0]];
        let cache = net.forward_cached(xs.view()).unwrap();
        let (g, _) = net.backward(&cache, us.view()).unwrap();
        let g0 = net.gradients(&[0.1, 0.2], &[1.0]).unwrap();
        let g1 = net.gradients(&[-0.5, 0.9], &[-2.0]).unwrap();
        for l in 0..2 {
            let w = &g0.layers[l].0 + &g1.layers[l].0;
            assert!((&g.layers[l].0 - &w).iter().all(|d| d.abs() < 1e-14));
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let layer = Dense { weights: array![[1.0]], bias: array![0.0], activation: Activation::Identity };
        let mut net = Mlp::from_layers(vec![layer]).unwrap();
        let mut opt = Adam::new(&net, AdamConfig::with_lr(0.1));
        let g = Gradients { layers: vec![(array![[2.0]], array![-3.0])] };
        opt.step(&mut net, &g);
        // first bias-corrected step has magnitude lr
        assert!((net.layers()[0].weights[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((net.layers()[0].bias[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn polyak_extremes() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Relu, Activation::Identity);
        let online = Mlp::new(spec.clone(), &mut rng());
        let mut target = Mlp::zeros(spec);
        let before = target.clone();
        target.polyak_from(&online, 0.0);
        assert_eq!(target, before);
        target.polyak_from(&online, 1.0);
        assert_eq!(target, online);
    }
}
