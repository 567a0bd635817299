//! Miniature densely connected classifier.
//!
//! Layout: 3x3 stem conv, then dense blocks separated by transitions
//! (ReLU, 1x1 conv halving channels, 2x2 average pool), then ReLU, global
//! average pooling and a linear head. Every dense layer is ReLU followed by a
//! 3x3 conv producing `growth_rate` channels from the concatenation of the
//! block input and all earlier layer outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, conv2d, conv2d_backward, global_avg_pool,
    global_avg_pool_backward, linear, linear_backward, relu_backward, ConvGeom,
};
use super::loss::{cross_entropy, cross_entropy_grad, one_hot, softmax, softmax_backward, LossKind};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::{stream_for, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseBlockConfig {
    pub num_layers: usize,
    pub growth_rate: usize,
}

impl DenseBlockConfig {
    pub fn out_channels(&self, in_channels: usize) -> usize {
        in_channels + self.num_layers * self.growth_rate
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub blocks: Vec<DenseBlockConfig>,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 16,
            blocks: vec![
                DenseBlockConfig {
                    num_layers: 4,
                    growth_rate: 12,
                };
                3
            ],
            num_classes: 10,
        }
    }
}

/// Name and shape of every parameter tensor, in storage order.
pub type ParamSpec = (String, Vec<usize>);

impl ModelConfig {
    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.stem_channels == 0
            || self.blocks.is_empty()
            || self.num_classes == 0
            || self.blocks.iter().any(|b| b.num_layers > 0 && b.growth_rate == 0)
        {
            return Err(Error::InvalidParam(format!("invalid model config {self:?}")));
        }
        Ok(())
    }

    /// Input channel count of each block.
    pub fn block_inputs(&self) -> Vec<usize> {
        let mut c = self.stem_channels;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(c);
            c = b.out_channels(c);
            if i + 1 < self.blocks.len() {
                c = (c / 2).max(1);
            }
        }
        out
    }

    /// Channels entering the head.
    pub fn feature_channels(&self) -> usize {
        let inputs = self.block_inputs();
        self.blocks.last().expect("validated").out_channels(*inputs.last().expect("validated"))
    }

    /// Smallest square input side the pooling stack accepts.
    pub fn min_input_size(&self) -> usize {
        1 << (self.blocks.len() - 1)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut conv = |name: String, o: usize, c: usize, k: usize| {
            specs.push((format!("{name}.weight"), vec![o, c, k, k]));
            specs.push((format!("{name}.bias"), vec![o]));
        };
        conv("stem".into(), self.stem_channels, self.in_channels, 3);
        let inputs = self.block_inputs();
        for (b, (cfg, &c0)) in self.blocks.iter().zip(&inputs).enumerate() {
            for l in 0..cfg.num_layers {
                conv(format!("block{b}.layer{l}"), cfg.growth_rate, c0 + l * cfg.growth_rate, 3);
            }
            if b + 1 < self.blocks.len() {
                let out = cfg.out_channels(c0);
                conv(format!("transition{b}"), (out / 2).max(1), out, 1);
            }
        }
        specs.push(("head.weight".into(), vec![self.num_classes, self.feature_channels()]));
        specs.push(("head.bias".into(), vec![self.num_classes]));
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Cached activations of one dense block.
#[derive(Debug, Clone)]
pub struct DenseBlockCache<T> {
    /// Concatenated pre-activation features: block input then each layer's output.
    pub out: Tensor<T>,
    /// `relu(out)`.
    pub act: Tensor<T>,
}

fn layer_geom(c_in: usize, k: usize, h: usize, w: usize) -> ConvGeom {
    ConvGeom {
        in_channels: c_in,
        out_channels: k,
        height: h,
        width: w,
        kernel: 3,
        stride: 1,
        padding: 1,
    }
}

fn check_layers<T: Scalar>(
    c0: usize,
    cfg: &DenseBlockConfig,
    layers: &[(&Tensor<T>, &Tensor<T>)],
) -> Result<()> {
    if layers.len() != cfg.num_layers {
        return Err(Error::ShapeMismatch(format!(
            "dense block expects {} layers, got {}",
            cfg.num_layers,
            layers.len()
        )));
    }
    for (i, (w, b)) in layers.iter().enumerate() {
        let c = c0 + i * cfg.growth_rate;
        if w.shape() != [cfg.growth_rate, c, 3, 3] || b.shape() != [cfg.growth_rate] {
            return Err(Error::ShapeMismatch(format!(
                "dense layer {i}: weight {:?}, bias {:?}",
                w.shape(),
                b.shape()
            )));
        }
    }
    Ok(())
}

/// Runs a dense block. The output has `C0 + L k` channels.
pub fn dense_block_forward<T: Scalar>(
    input: &Tensor<T>,
    cfg: &DenseBlockConfig,
    layers: &[(&Tensor<T>, &Tensor<T>)],
) -> Result<DenseBlockCache<T>> {
    let (n, c0, h, w) = input.dims4()?;
    check_layers(c0, cfg, layers)?;
    let hw = h * w;
    let total = cfg.out_channels(c0);
    let stride = total * hw;
    let mut out = Tensor::zeros(vec![n, total, h, w]);
    let mut act = Tensor::zeros(vec![n, total, h, w]);
    for (img, (o, a)) in input.data().chunks_exact(c0 * hw).zip(
        out.data_mut()
            .chunks_exact_mut(stride)
            .zip(act.data_mut().chunks_exact_mut(stride)),
    ) {
        o[..c0 * hw].copy_from_slice(img);
        for (dst, &v) in a[..c0 * hw].iter_mut().zip(img) {
            *dst = v.max(T::zero());
        }
    }
    let mut scratch = Vec::new();
    for (i, (wt, bs)) in layers.iter().enumerate() {
        let c = c0 + i * cfg.growth_rate;
        let geom = layer_geom(c, cfg.growth_rate, h, w);
        let span = c * hw..(c + cfg.growth_rate) * hw;
        for (o, a) in out
            .data_mut()
            .chunks_exact_mut(stride)
            .zip(act.data_mut().chunks_exact_mut(stride))
        {
            geom.forward_image(&a[..c * hw], wt.data(), bs.data(), &mut o[span.clone()], &mut scratch);
            for (dst, &v) in a[span.clone()].iter_mut().zip(&o[span.clone()]) {
                *dst = v.max(T::zero());
            }
        }
    }
    Ok(DenseBlockCache { out, act })
}

/// Per-layer `(d_weight, d_bias)` pairs.
pub type LayerGrads<T> = Vec<(Tensor<T>, Tensor<T>)>;

/// Gradients of a dense block given `dL/d out`: the input gradient and one
/// `(d_weight, d_bias)` pair per layer.
pub fn dense_block_backward<T: Scalar>(
    cache: &DenseBlockCache<T>,
    cfg: &DenseBlockConfig,
    layers: &[(&Tensor<T>, &Tensor<T>)],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, LayerGrads<T>)> {
    let (n, total, h, w) = cache.out.dims4()?;
    if grad_out.shape() != cache.out.shape() {
        return Err(Error::ShapeMismatch("dense block grad shape".into()));
    }
    let c0 = total - cfg.num_layers * cfg.growth_rate;
    check_layers(c0, cfg, layers)?;
    let hw = h * w;
    let stride = total * hw;
    let mut d = grad_out.clone();
    let mut grads: Vec<(Tensor<T>, Tensor<T>)> = layers
        .iter()
        .map(|(w, b)| (Tensor::zeros(w.shape().to_vec()), Tensor::zeros(b.shape().to_vec())))
        .collect();
    let mut scratch = Vec::new();
    let mut d_act = Vec::new();
    for i in (0..cfg.num_layers).rev() {
        let c = c0 + i * cfg.growth_rate;
        let geom = layer_geom(c, cfg.growth_rate, h, w);
        let (wt, _) = layers[i];
        let (gw, gb) = &mut grads[i];
        for ((dimg, a), o) in d
            .data_mut()
            .chunks_exact_mut(stride)
            .zip(cache.act.data().chunks_exact(stride))
            .zip(cache.out.data().chunks_exact(stride))
        {
            let (lower, upper) = dimg.split_at_mut(c * hw);
            d_act.clear();
            d_act.resize(c * hw, T::zero());
            geom.backward_image(
                &a[..c * hw],
                wt.data(),
                &upper[..cfg.growth_rate * hw],
                gw.data_mut(),
                gb.data_mut(),
                Some(&mut d_act),
                &mut scratch,
            );
            for ((dst, &g), &pre) in lower.iter_mut().zip(&d_act).zip(&o[..c * hw]) {
                if pre > T::zero() {
                    *dst = *dst + g;
                }
            }
        }
    }
    let mut d_in = Tensor::zeros(vec![n, c0, h, w]);
    for (dst, src) in d_in
        .data_mut()
        .chunks_exact_mut(c0 * hw)
        .zip(d.data().chunks_exact(stride))
    {
        dst.copy_from_slice(&src[..c0 * hw]);
    }
    Ok((d_in, grads))
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Tensor<T>,
    blocks: Vec<DenseBlockCache<T>>,
    transitions: Vec<Tensor<T>>,
    features: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Sign of every ReLU input; two passes with equal patterns lie on the
    /// same linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|b| b.out.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }
}

#[derive(Debug, Clone)]
struct Layout {
    stem: usize,
    blocks: Vec<Vec<usize>>,
    transitions: Vec<usize>,
    head: usize,
}

impl Layout {
    fn new(config: &ModelConfig) -> Self {
        let mut next = 0;
        let mut take = || {
            let i = next;
            next += 2;
            i
        };
        let stem = take();
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (b, cfg) in config.blocks.iter().enumerate() {
            blocks.push((0..cfg.num_layers).map(|_| take()).collect());
            if b + 1 < config.blocks.len() {
                transitions.push(take());
            }
        }
        Self {
            stem,
            blocks,
            transitions,
            head: take(),
        }
    }
}

/// Classifier parameters plus the config that shapes them.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    layout: Layout,
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform weights, zero biases, drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_for(seed, Domain::Init, 0);
        let params = config
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".bias") {
                    return Tensor::zeros(shape);
                }
                let receptive: usize = shape[2..].iter().product();
                let fan_in = shape[1] * receptive;
                let fan_out = shape[0] * receptive;
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-limit..=limit)))
            })
            .collect();
        Self::from_params(config, params)
    }

    /// Wraps existing parameters, checking every shape against `config`.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "config needs {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in specs.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            layout: Layout::new(&config),
            names: specs.into_iter().map(|(n, _)| n).collect(),
            config,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            layout: self.layout.clone(),
        }
    }

    fn conv(&self, i: usize) -> (&Tensor<T>, &Tensor<T>) {
        (&self.params[i], &self.params[i + 1])
    }

    fn block_layers(&self, b: usize) -> Vec<(&Tensor<T>, &Tensor<T>)> {
        self.layout.blocks[b].iter().map(|&i| self.conv(i)).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (n, c, h, w) = x.dims4()?;
        let min = self.config.min_input_size();
        if n == 0 || c != self.config.in_channels || h < min || w < min {
            return Err(Error::ShapeMismatch(format!(
                "model expects N x {} x H x W with H, W >= {min}, got {:?}",
                self.config.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping everything needed for [`Model::backward`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let (sw, sb) = self.conv(self.layout.stem);
        let mut h = conv2d(x, sw, sb, 1, 1)?;
        let mut blocks = Vec::with_capacity(self.config.blocks.len());
        let mut transitions = Vec::new();
        for (b, cfg) in self.config.blocks.iter().enumerate() {
            let cache = dense_block_forward(&h, cfg, &self.block_layers(b))?;
            if let Some(&t) = self.layout.transitions.get(b) {
                let (tw, tb) = self.conv(t);
                let pre_pool = conv2d(&cache.act, tw, tb, 1, 0)?;
                h = avg_pool2(&pre_pool)?;
                transitions.push(pre_pool);
            }
            blocks.push(cache);
        }
        let features = global_avg_pool(&blocks.last().expect("validated").act)?;
        let (hw, hb) = self.conv(self.layout.head);
        let logits = linear(&features, hw, hb)?;
        let probs = softmax(&logits)?;
        Ok(ForwardCache {
            input: x.clone(),
            blocks,
            transitions,
            features,
            logits,
            probs,
        })
    }

    /// Class probabilities, `(n, classes)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.probs)
    }

    /// Raw head outputs, `(n, classes)`.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.logits)
    }

    /// Parameter gradients given `dL/dlogits`, aligned with [`Model::params`].
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut grads: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        let (hw, _) = self.conv(self.layout.head);
        let (d_feat, d_hw, d_hb) = linear_backward(&cache.features, hw, grad_logits)?;
        grads[self.layout.head] = d_hw;
        grads[self.layout.head + 1] = d_hb;

        let last = cache.blocks.last().expect("validated");
        let d_act = global_avg_pool_backward(last.act.shape(), &d_feat)?;
        let mut d_out = relu_backward(&last.out, &d_act)?;
        for b in (0..self.config.blocks.len()).rev() {
            let cfg = &self.config.blocks[b];
            let (d_in, layer_grads) =
                dense_block_backward(&cache.blocks[b], cfg, &self.block_layers(b), &d_out)?;
            for (&i, (dw, db)) in self.layout.blocks[b].iter().zip(layer_grads) {
                grads[i] = dw;
                grads[i + 1] = db;
            }
            if b == 0 {
                let (sw, sb) = self.conv(self.layout.stem);
                let (_, dw, db) = conv2d_backward(&cache.input, sw, sb, 1, 1, &d_in)?;
                grads[self.layout.stem] = dw;
                grads[self.layout.stem + 1] = db;
            } else {
                let t = self.layout.transitions[b - 1];
                let (tw, tb) = self.conv(t);
                let prev = &cache.blocks[b - 1];
                let d_pre_pool = avg_pool2_backward(cache.transitions[b - 1].shape(), &d_in)?;
                let (d_act, dw, db) = conv2d_backward(&prev.act, tw, tb, 1, 0, &d_pre_pool)?;
                grads[t] = dw;
                grads[t + 1] = db;
                d_out = relu_backward(&prev.out, &d_act)?;
            }
        }
        Ok(grads)
    }

    /// Batch loss and parameter gradients for integer labels.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
        kind: LossKind,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        let cache = self.forward_train(x)?;
        let target = one_hot(labels, self.num_classes())?;
        if target.shape() != cache.probs.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a batch of {}",
                labels.len(),
                cache.probs.shape()[0]
            )));
        }
        let loss = cross_entropy(&cache.probs, &target, kind)?;
        let d_probs = cross_entropy_grad(&cache.probs, &target, kind)?;
        let d_logits = softmax_backward(&cache.probs, &d_probs)?;
        let grads = self.backward(&cache, &d_logits)?;
        Ok((loss, grads))
    }
}
