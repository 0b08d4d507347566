use rand::seq::SliceRandom;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{self, KERNEL_VOL};
use super::{Activation, CnnArchitecture, CnnError, LayerSpec, Shape};
use crate::data_model::VoxelGrid;
use crate::learners::logistic::{sigmoid, softplus};
use crate::seeding::rng_from;

pub const DEEP_FEATURE_LEN: usize = 64;

/// Samples per gradient accumulation chunk. Fixed so the summation order,
/// and therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_like(&self) -> Self {
        Self {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn add_assign(&mut self, other: &Self) {
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: &str| Err(CnnError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean binary cross-entropy over the batches of each epoch.
    pub loss_history: Vec<f64>,
    /// L2 penalty at the end of each epoch.
    pub penalty_history: Vec<f64>,
    pub steps: usize,
}

/// Min-max intensity scaling fitted over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityNorm {
    pub min: f64,
    pub max: f64,
}

impl IntensityNorm {
    pub fn fit<'a>(grids: impl IntoIterator<Item = &'a VoxelGrid>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for g in grids {
            for &v in &g.data {
                min = min.min(v as f64);
                max = max.max(v as f64);
            }
        }
        if !min.is_finite() {
            return Self { min: 0.0, max: 1.0 };
        }
        Self { min, max }
    }

    pub fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((v - self.min) / span).clamp(0.0, 1.0)
    }
}

/// Normalizes a grid and fits it into a box of `dims`: larger grids are
/// centre-cropped, smaller ones centred in zero padding.
pub fn prepare_input(grid: &VoxelGrid, dims: [usize; 3], norm: &IntensityNorm) -> Vec<f64> {
    let mut out = vec![0.0; dims.iter().product()];
    let offset: [isize; 3] = std::array::from_fn(|a| (grid.dims[a] as isize - dims[a] as isize) / 2);
    for z in 0..dims[2] {
        let sz = z as isize + offset[2];
        if sz < 0 || sz >= grid.dims[2] as isize {
            continue;
        }
        for y in 0..dims[1] {
            let sy = y as isize + offset[1];
            if sy < 0 || sy >= grid.dims[1] as isize {
                continue;
            }
            for x in 0..dims[0] {
                let sx = x as isize + offset[0];
                if sx < 0 || sx >= grid.dims[0] as isize {
                    continue;
                }
                out[(z * dims[1] + y) * dims[0] + x] =
                    norm.apply(grid.get(sx as usize, sy as usize, sz as usize) as f64);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn3d {
    pub arch: CnnArchitecture,
    pub shapes: Vec<Shape>,
    pub params: Vec<LayerParams>,
}

struct Cache {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    logit: f64,
}

impl Cnn3d {
    /// Builds a model with fan-in scaled normal weights (He for relu layers,
    /// LeCun otherwise) and zero biases.
    pub fn build(arch: CnnArchitecture, seed: u64) -> Result<Self, CnnError> {
        let shapes = arch.output_shapes()?;
        let mut params = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let in_len = if i == 0 { arch.input_shape() } else { shapes[i - 1] };
            let (fan_in, n_out, act) = match *spec {
                LayerSpec::Conv3d {
                    channels,
                    activation,
                    ..
                } => (channel_count(in_len) * KERNEL_VOL, channels, activation),
                LayerSpec::Dense { units, activation, .. } => (in_len.len(), units, activation),
                _ => {
                    params.push(LayerParams::default());
                    continue;
                }
            };
            let gain = if act == Activation::Relu { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            let mut rng = rng_from(seed, &[i as u64]);
            params.push(LayerParams {
                weights: (0..fan_in * n_out).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; n_out],
            });
        }
        Ok(Self { arch, shapes, params })
    }

    /// Reassembles a model from stored parameters, checking their sizes.
    pub fn from_parts(arch: CnnArchitecture, params: Vec<LayerParams>) -> Result<Self, CnnError> {
        let template = Self::param_sizes(&arch)?;
        if params.len() != template.len()
            || params
                .iter()
                .zip(&template)
                .any(|(p, &(w, b))| p.weights.len() != w || p.bias.len() != b)
        {
            return Err(CnnError::Checkpoint("parameter sizes do not match the architecture".into()));
        }
        let shapes = arch.output_shapes()?;
        Ok(Self { arch, shapes, params })
    }

    fn param_sizes(arch: &CnnArchitecture) -> Result<Vec<(usize, usize)>, CnnError> {
        let shapes = arch.output_shapes()?;
        Ok(arch
            .layers
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let in_shape = if i == 0 { arch.input_shape() } else { shapes[i - 1] };
                match *spec {
                    LayerSpec::Conv3d { channels, .. } => {
                        (channels * channel_count(in_shape) * KERNEL_VOL, channels)
                    }
                    LayerSpec::Dense { units, .. } => (units * in_shape.len(), units),
                    _ => (0, 0),
                }
            })
            .collect())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(LayerParams::len).sum()
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_shape().len()
    }

    fn in_shape(&self, layer: usize) -> Shape {
        if layer == 0 {
            self.arch.input_shape()
        } else {
            self.shapes[layer - 1]
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<(), CnnError> {
        if input.len() != self.input_len() {
            return Err(CnnError::InputLength {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn forward_cached(&self, input: &[f64], upto: usize, scratch: &mut Vec<f64>) -> Cache {
        let mut acts = Vec::with_capacity(upto + 1);
        let mut argmax = vec![Vec::new(); upto];
        acts.push(input.to_vec());
        let mut logit = 0.0;
        for i in 0..upto {
            let x = &acts[i];
            let p = &self.params[i];
            let out = match (self.arch.layers[i], self.in_shape(i)) {
                (LayerSpec::Conv3d { activation, .. }, Shape::Volume { dims, channels }) => {
                    let mut o = layers::conv3d_forward(x, channels, dims, &p.weights, &p.bias, scratch);
                    activate(activation, &mut o);
                    o
                }
                (LayerSpec::MaxPool3d, Shape::Volume { dims, channels }) => {
                    let (o, a) = layers::maxpool_forward(x, channels, dims);
                    argmax[i] = a;
                    o
                }
                (LayerSpec::Flatten, _) => x.clone(),
                (LayerSpec::Dense { activation, .. }, _) => {
                    let mut o = layers::dense_forward(x, &p.weights, &p.bias);
                    if i + 1 == self.arch.layers.len() {
                        logit = o[0];
                    }
                    activate(activation, &mut o);
                    o
                }
                _ => unreachable!("architecture validated at build"),
            };
            acts.push(out);
        }
        Cache { acts, argmax, logit }
    }

    /// Accumulates into `grads` the gradient of the sample's cross-entropy
    /// scaled by `weight`, given the cached forward pass.
    fn backward(&self, cache: &Cache, label: u8, weight: f64, grads: &mut [LayerParams], scratch: &mut Vec<f64>) {
        let n = self.arch.layers.len();
        // the sigmoid and cross-entropy derivatives combine to p - y
        let mut g = vec![weight * (sigmoid(cache.logit) - label as f64)];
        for i in (0..n).rev() {
            let x = &cache.acts[i];
            let out = &cache.acts[i + 1];
            let need_input = i > 0;
            let p = &self.params[i];
            g = match (self.arch.layers[i], self.in_shape(i)) {
                (LayerSpec::Conv3d { activation, .. }, Shape::Volume { dims, channels }) => {
                    activation_grad(activation, out, &mut g);
                    let gr = &mut grads[i];
                    layers::conv3d_backward(
                        x,
                        channels,
                        dims,
                        &p.weights,
                        &g,
                        &mut gr.weights,
                        &mut gr.bias,
                        scratch,
                        need_input,
                    )
                }
                (LayerSpec::MaxPool3d, _) => layers::maxpool_backward(&g, &cache.argmax[i], x.len()),
                (LayerSpec::Flatten, _) => g,
                (LayerSpec::Dense { activation, .. }, _) => {
                    if i + 1 != n {
                        activation_grad(activation, out, &mut g);
                    }
                    let gr = &mut grads[i];
                    layers::dense_backward(x, &p.weights, &g, &mut gr.weights, &mut gr.bias, need_input)
                }
                _ => unreachable!("architecture validated at build"),
            };
        }
    }

    /// Malignancy probability for one prepared input.
    pub fn forward_one(&self, input: &[f64]) -> Result<f64, CnnError> {
        self.check_input(input)?;
        let cache = self.forward_cached(input, self.arch.layers.len(), &mut Vec::new());
        Ok(cache.acts.last().expect("nonempty")[0])
    }

    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>, CnnError> {
        inputs.par_iter().map(|x| self.forward_one(x)).collect()
    }

    /// Output of every layer, starting with the input itself.
    pub fn layer_outputs(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, CnnError> {
        self.check_input(input)?;
        Ok(self.forward_cached(input, self.arch.layers.len(), &mut Vec::new()).acts)
    }

    /// Activations of the 64-unit dense layer preceding the output.
    pub fn extract_features(&self, input: &[f64]) -> Result<Vec<f64>, CnnError> {
        self.check_input(input)?;
        let n = self.arch.layers.len();
        match self.shapes.get(n.wrapping_sub(2)) {
            Some(Shape::Flat(DEEP_FEATURE_LEN)) if matches!(self.arch.layers[n - 2], LayerSpec::Dense { .. }) => {}
            _ => return Err(CnnError::NoFeatureLayer),
        }
        let mut cache = self.forward_cached(input, n - 1, &mut Vec::new());
        Ok(cache.acts.pop().expect("nonempty"))
    }

    pub fn extract_features_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, CnnError> {
        inputs.par_iter().map(|x| self.extract_features(x)).collect()
    }

    /// Sum of `l2 · ‖W‖²` over regularized layers.
    pub fn penalty(&self) -> f64 {
        self.arch
            .layers
            .iter()
            .zip(&self.params)
            .map(|(spec, p)| layer_l2(spec) * p.weights.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Mean cross-entropy over the batch plus the L2 penalty, with gradients.
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], labels: &[u8]) -> Result<(f64, f64, Vec<LayerParams>), CnnError> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(CnnError::InvalidConfig(format!(
                "{} inputs for {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let weight = 1.0 / inputs.len() as f64;
        let n = self.arch.layers.len();
        let parts: Vec<(f64, Vec<LayerParams>)> = inputs
            .par_chunks(GRAD_CHUNK)
            .zip(labels.par_chunks(GRAD_CHUNK))
            .map(|(xs, ys)| {
                let mut grads: Vec<LayerParams> = self.params.iter().map(LayerParams::zeros_like).collect();
                let mut scratch = Vec::new();
                let mut loss = 0.0;
                for (x, &y) in xs.iter().zip(ys) {
                    let cache = self.forward_cached(x, n, &mut scratch);
                    loss += softplus(cache.logit) - y as f64 * cache.logit;
                    self.backward(&cache, y, weight, &mut grads, &mut scratch);
                }
                (loss, grads)
            })
            .collect();
        let mut iter = parts.into_iter();
        let (mut bce, mut grads) = iter.next().expect("nonempty batch");
        for (l, g) in iter {
            bce += l;
            grads.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b));
        }
        bce *= weight;
        for ((spec, p), g) in self.arch.layers.iter().zip(&self.params).zip(&mut grads) {
            let l2 = layer_l2(spec);
            if l2 > 0.0 {
                g.weights.iter_mut().zip(&p.weights).for_each(|(gw, w)| *gw += 2.0 * l2 * w);
            }
        }
        Ok((bce, self.penalty(), grads))
    }

    /// Minibatch Adam on cross-entropy plus the L2 penalty. Batch order is
    /// reshuffled each epoch from `(seed, epoch)`.
    pub fn train(&mut self, inputs: &[Vec<f64>], labels: &[u8], config: &TrainConfig) -> Result<TrainReport, CnnError> {
        config.validate()?;
        if inputs.len() != labels.len() {
            return Err(CnnError::InvalidConfig(format!(
                "{} inputs for {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let pos = labels.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == labels.len() || labels.iter().any(|&l| l > 1) {
            return Err(CnnError::DegenerateLabels);
        }
        let mut m: Vec<LayerParams> = self.params.iter().map(LayerParams::zeros_like).collect();
        let mut v = m.clone();
        let mut step = 0usize;
        let mut report = TrainReport {
            loss_history: Vec::with_capacity(config.epochs),
            penalty_history: Vec::with_capacity(config.epochs),
            steps: 0,
        };
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng_from(config.seed, &[epoch as u64]));
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
                let ys: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
                let (bce, penalty, grads) = self.loss_and_gradient(&xs, &ys)?;
                if !(bce + penalty).is_finite() {
                    return Err(CnnError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        learning_rate: config.learning_rate,
                    });
                }
                step += 1;
                let c1 = 1.0 - config.beta1.powi(step as i32);
                let c2 = 1.0 - config.beta2.powi(step as i32);
                for ((p, g), (mi, vi)) in self.params.iter_mut().zip(&grads).zip(m.iter_mut().zip(v.iter_mut())) {
                    let it = p
                        .weights
                        .iter_mut()
                        .zip(&g.weights)
                        .zip(mi.weights.iter_mut().zip(vi.weights.iter_mut()))
                        .chain(
                            p.bias
                                .iter_mut()
                                .zip(&g.bias)
                                .zip(mi.bias.iter_mut().zip(vi.bias.iter_mut())),
                        );
                    for ((w, &gr), (mw, vw)) in it {
                        *mw = config.beta1 * *mw + (1.0 - config.beta1) * gr;
                        *vw = config.beta2 * *vw + (1.0 - config.beta2) * gr * gr;
                        *w -= config.learning_rate * (*mw / c1) / ((*vw / c2).sqrt() + config.epsilon);
                    }
                }
                epoch_loss += bce;
                batches += 1;
            }
            let mean = epoch_loss / batches as f64;
            log::debug!("epoch {epoch}: loss {mean:.5}");
            report.loss_history.push(mean);
            report.penalty_history.push(self.penalty());
        }
        report.steps = step;
        Ok(report)
    }
}

fn channel_count(shape: Shape) -> usize {
    match shape {
        Shape::Volume { channels, .. } => channels,
        Shape::Flat(_) => 1,
    }
}

fn layer_l2(spec: &LayerSpec) -> f64 {
    match *spec {
        LayerSpec::Conv3d { l2, .. } | LayerSpec::Dense { l2, .. } => l2,
        _ => 0.0,
    }
}

fn activate(act: Activation, v: &mut [f64]) {
    match act {
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
        Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
        Activation::Linear => {}
    }
}

/// Turns a gradient w.r.t. activations into one w.r.t. pre-activations.
fn activation_grad(act: Activation, out: &[f64], g: &mut [f64]) {
    match act {
        Activation::Relu => g.iter_mut().zip(out).for_each(|(g, &o)| {
            if o <= 0.0 {
                *g = 0.0
            }
        }),
        Activation::Sigmoid => g.iter_mut().zip(out).for_each(|(g, &o)| *g *= o * (1.0 - o)),
        Activation::Linear => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::DEFAULT_BOX_DIMS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    fn micro_arch() -> CnnArchitecture {
        CnnArchitecture {
            input_dims: [4, 4, 4],
            input_channels: 1,
            layers: vec![
                LayerSpec::Conv3d {
                    channels: 2,
                    activation: Activation::Relu,
                    l2: 0.01,
                },
                LayerSpec::Conv3d {
                    channels: 2,
                    activation: Activation::Relu,
                    l2: 0.01,
                },
                LayerSpec::MaxPool3d,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 3,
                    activation: Activation::Relu,
                    l2: 0.0,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                    l2: 0.0,
                },
            ],
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Cnn3d::build(CnnArchitecture::small([8, 8, 4]), 5).unwrap();
        let b = Cnn3d::build(CnnArchitecture::small([8, 8, 4]), 5).unwrap();
        let c = Cnn3d::build(CnnArchitecture::small([8, 8, 4]), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert!(a.params.iter().all(|p| p.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_input_gives_one_half() {
        let m = Cnn3d::build(CnnArchitecture::small(DEFAULT_BOX_DIMS), 1).unwrap();
        let p = m.forward_one(&vec![0.0; m.input_len()]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn outputs_are_probabilities() {
        let m = Cnn3d::build(CnnArchitecture::small([8, 8, 4]), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| random_input(&mut rng, 256)).collect();
        for p in m.forward(&xs).unwrap() {
            assert!(p > 0.0 && p < 1.0);
        }
        assert_eq!(
            m.forward_one(&[0.0; 3]),
            Err(CnnError::InputLength { expected: 256, got: 3 })
        );
    }

    /// Hand-unrolled convolution followed by a dense sigmoid on a 4×4×2 box.
    #[test]
    fn two_layer_matches_unrolled_convolution() {
        let arch = CnnArchitecture {
            input_dims: [4, 4, 2],
            input_channels: 1,
            layers: vec![
                LayerSpec::Conv3d {
                    channels: 2,
                    activation: Activation::Relu,
                    l2: 0.0,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                    l2: 0.0,
                },
            ],
        };
        let mut m = Cnn3d::build(arch, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        m.params[0].bias = vec![0.1, -0.2];
        m.params[2].bias = vec![0.05];
        let x = random_input(&mut rng, 32);
        let w = &m.params[0].weights;
        let mut feat = vec![0.0; 64];
        for o in 0..2 {
            for z in 0..2i32 {
                for y in 0..4i32 {
                    for xx in 0..4i32 {
                        let mut acc = m.params[0].bias[o];
                        for kz in -1..=1i32 {
                            for ky in -1..=1i32 {
                                for kx in -1..=1i32 {
                                    let (sz, sy, sx) = (z + kz, y + ky, xx + kx);
                                    if !(0..2).contains(&sz) || !(0..4).contains(&sy) || !(0..4).contains(&sx) {
                                        continue;
                                    }
                                    let wi = o * 27 + ((kz + 1) * 9 + (ky + 1) * 3 + kx + 1) as usize;
                                    acc += w[wi] * x[(sz * 16 + sy * 4 + sx) as usize];
                                }
                            }
                        }
                        feat[o * 32 + (z * 16 + y * 4 + xx) as usize] = acc.max(0.0);
                    }
                }
            }
        }
        let z: f64 = m.params[2].bias[0] + feat.iter().zip(&m.params[2].weights).map(|(a, b)| a * b).sum::<f64>();
        let want = 1.0 / (1.0 + (-z).exp());
        assert!((m.forward_one(&x).unwrap() - want).abs() < 1e-6);
    }

    fn slot(m: &mut Cnn3d, layer: usize, which: usize, i: usize) -> &mut f64 {
        if which == 0 {
            &mut m.params[layer].weights[i]
        } else {
            &mut m.params[layer].bias[i]
        }
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let mut m = Cnn3d::build(micro_arch(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for p in &mut m.params {
            p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_input(&mut rng, 64)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys = [0u8, 1, 1, 0];
        let (_, _, grads) = m.loss_and_gradient(&refs, &ys).unwrap();
        let total = |m: &Cnn3d| {
            let (b, p, _) = m.loss_and_gradient(&refs, &ys).unwrap();
            b + p
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for l in 0..m.params.len() {
            for which in 0..2 {
                let n = if which == 0 { m.params[l].weights.len() } else { m.params[l].bias.len() };
                for i in 0..n {
                    let orig = *slot(&mut m, l, which, i);
                    *slot(&mut m, l, which, i) = orig + h;
                    let plus = total(&m);
                    *slot(&mut m, l, which, i) = orig - h;
                    let minus = total(&m);
                    *slot(&mut m, l, which, i) = orig;
                    let num = (plus - minus) / (2.0 * h);
                    let ana = if which == 0 { grads[l].weights[i] } else { grads[l].bias[i] };
                    let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-7);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn features_are_penultimate_activations() {
        let m = Cnn3d::build(CnnArchitecture::small([8, 8, 4]), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_input(&mut rng, 256);
        let f = m.extract_features(&x).unwrap();
        assert_eq!(f.len(), DEEP_FEATURE_LEN);
        assert!(f.iter().all(|v| v.is_finite() && *v >= 0.0));
        // instrumented oracle: apply the final dense layer by hand to recover the output
        let last = &m.params[m.params.len() - 1];
        let z = last.bias[0] + f.iter().zip(&last.weights).map(|(a, b)| a * b).sum::<f64>();
        assert!((sigmoid(z) - m.forward_one(&x).unwrap()).abs() < 1e-12);
        assert_eq!(m.layer_outputs(&x).unwrap()[m.arch.layers.len() - 1], f);

        let no_feat = Cnn3d::build(micro_arch(), 1).unwrap();
        assert_eq!(no_feat.extract_features(&[0.0; 64]), Err(CnnError::NoFeatureLayer));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let mut v = random_input(&mut rng, 256);
                if i % 2 == 1 {
                    v.iter_mut().for_each(|x| *x = (*x + 0.5).min(1.0));
                }
                v
            })
            .collect();
        let ys: Vec<u8> = (0..12).map(|i| (i % 2) as u8).collect();
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 4,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let mut a = Cnn3d::build(CnnArchitecture::small([8, 8, 4]), 7).unwrap();
        let mut b = a.clone();
        let ra = a.train(&xs, &ys, &cfg).unwrap();
        let rb = b.train(&xs, &ys, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(ra.steps, 45);
        assert!((ra.loss_history[0] - 2f64.ln()).abs() < 0.2, "{}", ra.loss_history[0]);
        assert!(ra.loss_history.last().unwrap() < &ra.loss_history[0]);
    }

    #[test]
    fn training_rejects_bad_inputs() {
        let mut m = Cnn3d::build(CnnArchitecture::small([8, 8, 4]), 7).unwrap();
        let xs = vec![vec![0.0; 256]; 2];
        assert_eq!(m.train(&xs, &[1, 1], &TrainConfig::default()), Err(CnnError::DegenerateLabels));
        let cfg = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(matches!(m.train(&xs, &[0, 1], &cfg), Err(CnnError::InvalidConfig(_))));
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_input(&mut rng, 256)).collect();
        let r = m.train(&xs, &[0, 1, 0, 1], &cfg);
        assert!(matches!(r, Err(CnnError::NonFiniteLoss { .. })), "{r:?}");
    }

    #[test]
    fn prepare_input_crops_and_pads() {
        use crate::data_model::GridKind;
        let mut g = VoxelGrid::zeros([4, 4, 2], [1.0; 3], GridKind::Intensity);
        g.set(1, 1, 0, 2.0);
        g.set(2, 2, 1, 4.0);
        let norm = IntensityNorm { min: 0.0, max: 4.0 };
        let same = prepare_input(&g, [4, 4, 2], &norm);
        assert_eq!(same[g.index(1, 1, 0)], 0.5);
        assert_eq!(same[g.index(2, 2, 1)], 1.0);
        let cropped = prepare_input(&g, [2, 2, 2], &norm);
        // offset (1,1,0): (1,1,0) → (0,0,0), (2,2,1) → (1,1,1)
        assert_eq!(cropped, vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let padded = prepare_input(&g, [6, 6, 2], &norm);
        assert_eq!(padded[(0 * 6 + 2) * 6 + 2], 0.5);
        assert_eq!(IntensityNorm::fit([&g]), IntensityNorm { min: 0.0, max: 4.0 });
    }
}
