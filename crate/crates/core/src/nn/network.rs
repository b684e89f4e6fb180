//! Dense layers and the encoder/decoder split network.
//!
//! A [`Network`] is an ordered list of [`DenseLayer`]s plus a split index:
//! layers `[0, split)` form the encoder, layers `[split, len)` the decoder.
//! Weights are `[out × in]` row-major, so a layer computes
//! `y = act(x · Wᵀ + b)` on a `[B × in]` batch.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{layout_len, Layout, ParamRole, ParamSlot, ParamVector};
use super::tensor::Tensor;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        weights.require_matrix("layer weights")?;
        ensure!(
            bias.shape() == [weights.rows()],
            Dimension,
            "bias shape {:?} does not match {} outputs",
            bias.shape(),
            weights.rows()
        );
        ensure!(
            weights.rows() > 0 && weights.cols() > 0,
            Dimension,
            "layer dimensions must be positive"
        );
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// He-normal weights (std `√(2/in)`), zero bias.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(input > 0 && output > 0, Validation, "layer dimensions must be positive");
        let std = (2.0 / input as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..input * output).map(|_| normal.sample(rng)).collect();
        Self::new(
            Tensor::from_parts_unchecked(vec![output, input], data),
            Tensor::zeros(vec![output]),
            activation,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, input: &Tensor) -> (Tensor, Tensor) {
        let (b, n_in, n_out) = (input.rows(), self.input_dim(), self.output_dim());
        let w = self.weights.data();
        let bias = self.bias.data();
        let mut pre = vec![0.0; b * n_out];
        for r in 0..b {
            let x = input.row(r);
            let out = &mut pre[r * n_out..(r + 1) * n_out];
            for (o, slot) in out.iter_mut().enumerate() {
                let wrow = &w[o * n_in..(o + 1) * n_in];
                *slot = bias[o] + dot(wrow, x);
            }
        }
        let act: Vec<f64> = pre.iter().map(|&z| self.activation.apply(z)).collect();
        (
            Tensor::from_parts_unchecked(vec![b, n_out], pre),
            Tensor::from_parts_unchecked(vec![b, n_out], act),
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-layer values recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    /// Output of layer `layer` (post-activation).
    pub fn output_of(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<DenseLayer>,
    split_index: usize,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>, split_index: usize) -> Result<Self> {
        ensure!(layers.len() >= 2, Validation, "a network needs at least two layers");
        ensure!(
            (1..layers.len()).contains(&split_index),
            Validation,
            "split index {} outside [1, {}]",
            split_index,
            layers.len() - 1
        );
        for (i, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].output_dim() == pair[1].input_dim(),
                Dimension,
                "layer {} outputs {} but layer {} expects {}",
                i,
                pair[0].output_dim(),
                i + 1,
                pair[1].input_dim()
            );
        }
        Ok(Self {
            layers,
            split_index,
        })
    }

    /// ReLU MLP with an identity output layer. `widths` lists every layer
    /// boundary, input first. `split` defaults to `layers - 1`.
    pub fn mlp<R: Rng + ?Sized>(widths: &[usize], split: Option<usize>, rng: &mut R) -> Result<Self> {
        ensure!(widths.len() >= 3, Validation, "need input, at least one hidden, and output width");
        let n_layers = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, split.unwrap_or(n_layers - 1))
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.split_index - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.layers[self.split_index..]
            .iter()
            .map(DenseLayer::param_count)
            .sum()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.param_count() - self.decoder_param_count()
    }

    pub fn layout(&self) -> Layout {
        self.layout_range(0, self.layers.len())
    }

    pub fn encoder_layout(&self) -> Layout {
        self.layout_range(0, self.split_index)
    }

    pub fn decoder_layout(&self) -> Layout {
        self.layout_range(self.split_index, self.layers.len())
    }

    fn layout_range(&self, start: usize, end: usize) -> Layout {
        (start..end)
            .flat_map(|l| {
                let layer = &self.layers[l];
                [
                    ParamSlot {
                        layer: l,
                        role: ParamRole::Weight,
                        shape: vec![layer.output_dim(), layer.input_dim()],
                    },
                    ParamSlot {
                        layer: l,
                        role: ParamRole::Bias,
                        shape: vec![layer.output_dim()],
                    },
                ]
            })
            .collect()
    }

    fn flatten_range(&self, start: usize, end: usize) -> ParamVector {
        let layout = self.layout_range(start, end);
        let mut values = Vec::with_capacity(layout_len(&layout));
        for layer in &self.layers[start..end] {
            values.extend_from_slice(layer.weights.data());
            values.extend_from_slice(layer.bias.data());
        }
        ParamVector::new(values, layout).expect("layout built from the same layers")
    }

    pub fn params(&self) -> ParamVector {
        self.flatten_range(0, self.layers.len())
    }

    pub fn encoder_params(&self) -> ParamVector {
        self.flatten_range(0, self.split_index)
    }

    pub fn decoder_params(&self) -> ParamVector {
        self.flatten_range(self.split_index, self.layers.len())
    }

    fn assign_range(&mut self, start: usize, end: usize, params: &ParamVector) -> Result<()> {
        ensure!(
            params.layout() == self.layout_range(start, end).as_slice(),
            Contract,
            "parameter layout does not match layers [{start}, {end})"
        );
        ensure!(params.all_finite(), Numerical, "non-finite parameters");
        let mut offset = 0;
        let values = params.values();
        for layer in &mut self.layers[start..end] {
            let nw = layer.weights.len();
            layer
                .weights
                .data_mut()
                .copy_from_slice(&values[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer
                .bias
                .data_mut()
                .copy_from_slice(&values[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        self.assign_range(0, self.layers.len(), params)
    }

    pub fn set_encoder(&mut self, params: &ParamVector) -> Result<()> {
        self.assign_range(0, self.split_index, params)
    }

    pub fn set_decoder(&mut self, params: &ParamVector) -> Result<()> {
        self.assign_range(self.split_index, self.layers.len(), params)
    }

    /// Fresh He-normal decoder layers; encoder untouched.
    pub fn reinit_decoder<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for l in self.split_index..self.layers.len() {
            let old = &self.layers[l];
            self.layers[l] = DenseLayer::init(old.input_dim(), old.output_dim(), old.activation, rng)?;
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.split_index == other.split_index
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.input_dim() == b.input_dim()
                    && a.output_dim() == b.output_dim()
                    && a.activation == b.activation
            })
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over parameter bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for layer in &self.layers {
            for v in layer.weights.data().iter().chain(layer.bias.data()) {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        batch.require_matrix("batch")?;
        ensure!(
            batch.cols() == self.input_dim(),
            Dimension,
            "batch width {} does not match input dim {}",
            batch.cols(),
            self.input_dim()
        );
        Ok(())
    }

    fn run(&self, batch: &Tensor, end: usize) -> Result<ForwardCache> {
        self.check_batch(batch)?;
        let mut activations = Vec::with_capacity(end + 1);
        let mut pre_activations = Vec::with_capacity(end);
        activations.push(batch.clone());
        for layer in &self.layers[..end] {
            let (pre, act) = layer.forward(activations.last().expect("non-empty"));
            pre_activations.push(pre);
            activations.push(act);
        }
        ensure!(
            activations.last().expect("non-empty").all_finite(),
            Numerical,
            "forward pass produced non-finite values"
        );
        Ok(ForwardCache {
            activations,
            pre_activations,
            fingerprint: self.fingerprint(),
        })
    }

    /// Logits `[B × C]` and the cache needed by [`Network::backward`].
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let cache = self.run(batch, self.layers.len())?;
        let logits = cache.activations.last().expect("non-empty").clone();
        Ok((logits, cache))
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut cache = self.run(batch, self.layers.len())?;
        Ok(cache.activations.pop().expect("non-empty"))
    }

    /// Output of the encoder layers only.
    pub fn encoder_output(&self, batch: &Tensor) -> Result<Tensor> {
        let mut cache = self.run(batch, self.split_index)?;
        Ok(cache.activations.pop().expect("non-empty"))
    }

    /// Runs the decoder on precomputed encoder features.
    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        features.require_matrix("features")?;
        ensure!(
            features.cols() == self.feature_dim(),
            Dimension,
            "feature width {} does not match {}",
            features.cols(),
            self.feature_dim()
        );
        let mut cur = features.clone();
        for layer in &self.layers[self.split_index..] {
            cur = layer.forward(&cur).1;
        }
        ensure!(cur.all_finite(), Numerical, "decoder produced non-finite values");
        Ok(cur)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(batch)?))
    }

    /// Gradient of the loss w.r.t. every parameter, given `∂L/∂logits`.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Tensor) -> Result<ParamVector> {
        self.backward_from(cache, self.layers.len(), loss_grad)
    }

    /// Gradient flowing only into the encoder from `∂L/∂features`. Decoder
    /// entries of the returned vector are zero.
    pub fn backward_encoder(&self, cache: &ForwardCache, feature_grad: &Tensor) -> Result<ParamVector> {
        self.backward_from(cache, self.split_index, feature_grad)
    }

    fn backward_from(&self, cache: &ForwardCache, end: usize, grad_out: &Tensor) -> Result<ParamVector> {
        ensure!(
            cache.pre_activations.len() >= end && cache.fingerprint == self.fingerprint(),
            Contract,
            "forward cache does not belong to this network state"
        );
        let expected = cache.activations[end].shape();
        ensure!(
            grad_out.shape() == expected,
            Dimension,
            "gradient shape {:?} does not match output shape {:?}",
            grad_out.shape(),
            expected
        );

        let layout = self.layout();
        let mut grads = ParamVector::zeros(layout);
        let offsets = self.layer_offsets();
        let mut delta = grad_out.data().to_vec();
        let b = cache.batch_size();

        for l in (0..end).rev() {
            let layer = &self.layers[l];
            let (n_in, n_out) = (layer.input_dim(), layer.output_dim());
            let pre = cache.pre_activations[l].data();
            for (d, &z) in delta.iter_mut().zip(pre) {
                *d *= layer.activation.derivative(z);
            }
            let input = &cache.activations[l];
            let out = grads.values_mut();
            let (w_off, b_off) = (offsets[l], offsets[l] + n_out * n_in);
            for r in 0..b {
                let x = input.row(r);
                let d_row = &delta[r * n_out..(r + 1) * n_out];
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    out[b_off + o] += d;
                    let gw = &mut out[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (g, &xi) in gw.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = layer.weights.data();
            let mut next = vec![0.0; b * n_in];
            for r in 0..b {
                let d_row = &delta[r * n_out..(r + 1) * n_out];
                let n_row = &mut next[r * n_in..(r + 1) * n_in];
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (n, &wv) in n_row.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *n += d * wv;
                    }
                }
            }
            delta = next;
        }
        Ok(grads)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        offsets
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::seed::rng_from;

    fn identity_layer(n: usize, act: Activation) -> DenseLayer {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        DenseLayer::new(
            Tensor::new(vec![n, n], w).unwrap(),
            Tensor::zeros(vec![n]),
            act,
        )
        .unwrap()
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = Network::new(
            vec![identity_layer(2, Activation::Identity), identity_layer(2, Activation::Identity)],
            1,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(net.logits(&x).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(net.encoder_output(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn empty_batch_gives_empty_logits() {
        let net = Network::mlp(&[3, 4, 2], None, &mut rng_from(1)).unwrap();
        let x = Tensor::new(vec![0, 3], vec![]).unwrap();
        let logits = net.logits(&x).unwrap();
        assert_eq!(logits.shape(), &[0, 2]);
    }

    #[test]
    fn hand_computed_two_layer_output() {
        // layer0: W=[[1,2],[-1,1]] b=[0.5,0] relu; layer1: W=[[2,-1]] b=[1]
        let l0 = DenseLayer::new(
            Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 1.0]).unwrap(),
            Tensor::new(vec![2], vec![0.5, 0.0]).unwrap(),
            Activation::Relu,
        )
        .unwrap();
        let l1 = DenseLayer::new(
            Tensor::new(vec![1, 2], vec![2.0, -1.0]).unwrap(),
            Tensor::new(vec![1], vec![1.0]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(vec![l0, l1], 1).unwrap();
        // x=[1,0]: h = relu([1.5, -1]) = [1.5, 0]; y = 2*1.5 - 0 + 1 = 4
        let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(net.logits(&x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn split_index_bounds_enforced() {
        let mut rng = rng_from(3);
        let layers = vec![
            DenseLayer::init(2, 3, Activation::Relu, &mut rng).unwrap(),
            DenseLayer::init(3, 2, Activation::Identity, &mut rng).unwrap(),
        ];
        assert!(Network::new(layers.clone(), 0).is_err());
        assert!(Network::new(layers.clone(), 2).is_err());
        assert!(Network::new(layers, 1).is_ok());
    }

    #[test]
    fn mismatched_chain_rejected() {
        let mut rng = rng_from(3);
        let layers = vec![
            DenseLayer::init(2, 3, Activation::Relu, &mut rng).unwrap(),
            DenseLayer::init(4, 2, Activation::Identity, &mut rng).unwrap(),
        ];
        assert!(matches!(Network::new(layers, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn wrong_batch_width_is_dimension_error() {
        let net = Network::mlp(&[3, 4, 2], None, &mut rng_from(1)).unwrap();
        let x = Tensor::zeros(vec![2, 5]);
        assert!(matches!(net.forward(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn encoder_output_matches_forward_cache() {
        let net = Network::mlp(&[4, 6, 5, 3], None, &mut rng_from(9)).unwrap();
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let feats = net.encoder_output(&x).unwrap();
        assert_eq!(&feats, cache.output_of(net.split_index() - 1));
        assert_eq!(net.decode(&feats).unwrap(), net.logits(&x).unwrap());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Network::mlp(&[2, 3, 2], None, &mut rng_from(2)).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let (logits, cache) = net.forward(&x).unwrap();
        net.reinit_decoder(&mut rng_from(5)).unwrap();
        let g = Tensor::zeros(logits.shape().to_vec());
        assert!(matches!(net.backward(&cache, &g), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_loss_grad_gives_zero_param_grad() {
        let net = Network::mlp(&[3, 4, 2], None, &mut rng_from(4)).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]]).unwrap();
        let (logits, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &Tensor::zeros(logits.shape().to_vec())).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert_eq!(g.layout(), net.layout().as_slice());
    }

    #[test]
    fn linear_squared_error_closed_form() {
        // Single linear output: L = ½(w·x + b − y)², ∂L/∂w = x·err, ∂L/∂b = err.
        let l0 = DenseLayer::new(
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
            Activation::Identity,
        )
        .unwrap();
        let l1 = DenseLayer::new(
            Tensor::new(vec![1, 2], vec![0.5, -0.25]).unwrap(),
            Tensor::new(vec![1], vec![0.1]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(vec![l0, l1], 1).unwrap();
        let x = Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap();
        let (out, cache) = net.forward(&x).unwrap();
        let err = out.data()[0] - 3.0; // 0.5*2 - 0.25*4 + 0.1 - 3 = -2.9
        assert!((err + 2.9).abs() < 1e-12);
        let g = net.backward(&cache, &Tensor::new(vec![1, 1], vec![err]).unwrap()).unwrap();
        let (_, dec) = g.split_at_layer(1);
        assert!((dec.values()[0] - 2.0 * err).abs() < 1e-12);
        assert!((dec.values()[1] - 4.0 * err).abs() < 1e-12);
        assert!((dec.values()[2] - err).abs() < 1e-12);
    }

    #[test]
    fn reinit_decoder_keeps_encoder() {
        let mut net = Network::mlp(&[3, 5, 4, 2], None, &mut rng_from(11)).unwrap();
        let enc = net.encoder_params();
        let dec = net.decoder_params();
        net.reinit_decoder(&mut rng_from(12)).unwrap();
        assert_eq!(net.encoder_params(), enc);
        assert_ne!(net.decoder_params(), dec);
    }
}
