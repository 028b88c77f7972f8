//! Minimal from-scratch trainer: 3×3 convolutions, batch normalization,
//! ReLU, 2×2 max pooling, inverted dropout, fully connected layers, a
//! soft-target cross-entropy loss, exact reverse-mode gradients, Adam,
//! and a finite-difference gradient checker.
//!
//! Everything is `f64`. Parallelism (rayon) only ever splits work across
//! disjoint output planes and keeps every floating-point reduction in a
//! fixed sequential order, so results are bitwise independent of the
//! worker count.

mod adam;
mod checkpoint;
mod gradcheck;

pub use adam::{adam_step, AdamParams, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, grad_check_network, GradCheckReport};

use crate::image::Image;
use crate::pairing::SoftLabel;
use crate::{dist, Error, Result};
use rand::Rng;
use rayon::prelude::*;

/// Dense N×C×H×W tensor; index `((n·C + c)·H + y)·W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    /// Stacks same-shaped images along the batch dimension.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("cannot batch zero images".into()))?;
        let (h, w, c) = (first.height(), first.width(), first.channels());
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if !img.same_shape(first) {
                return Err(Error::Shape("batched images must share dimensions".into()));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Tensor4 {
            n: images.len(),
            c,
            h,
            w,
            data,
        })
    }

    pub fn features(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &self.data[start..start + hw]
    }
}

/// Stacked images plus stacked soft targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor4,
    /// Row-major n×k target matrix.
    pub targets: Vec<f64>,
    pub n_classes: usize,
}

impl Batch {
    pub fn new(images: &[Image], targets: &[SoftLabel]) -> Result<Self> {
        if images.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} images but {} targets",
                images.len(),
                targets.len()
            )));
        }
        let n_classes = targets
            .first()
            .map(SoftLabel::n_classes)
            .ok_or_else(|| Error::Shape("cannot batch zero targets".into()))?;
        let images = Tensor4::from_images(images)?;
        let mut flat = Vec::with_capacity(targets.len() * n_classes);
        for t in targets {
            if t.n_classes() != n_classes {
                return Err(Error::Shape("targets must share the class count".into()));
            }
            flat.extend_from_slice(t.probs());
        }
        Ok(Batch {
            images,
            targets: flat,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.n
    }

    pub fn is_empty(&self) -> bool {
        self.images.n == 0
    }
}

/// One layer in a network description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    BatchNorm,
    /// 3×3 kernel, stride 1, zero padding 1 (shape preserving).
    Conv3x3 { out_channels: usize },
    ReLU,
    /// 2×2 window, stride 2, ceil semantics (odd edges keep a clipped window).
    MaxPool2x2,
    Dropout { rate: f64 },
    FullyConnected { out_units: usize },
    Softmax,
}

/// Ordered layer list plus the expected input shape (c, h, w).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The six-conv classifier: two fully connected layers with dropout on
    /// top of three conv/conv/pool blocks, batch norm before every
    /// parameterized layer.
    pub fn figure2(input: (usize, usize, usize), n_classes: usize) -> Self {
        Self::conv_stack(input, [64, 96, 96, 128, 128, 192], 512, (0.40, 0.30), n_classes)
    }

    /// Slimmed variant of the same stack for CPU-budget experiments.
    pub fn reduced(input: (usize, usize, usize), n_classes: usize) -> Self {
        Self::conv_stack(input, [16, 24, 24, 32, 32, 48], 128, (0.40, 0.30), n_classes)
    }

    /// Tiny stack (4×4 input, ≤8 channels) kept small enough for
    /// finite-difference checking of every parameter.
    pub fn shrunk(n_classes: usize) -> Self {
        Self::conv_stack((3, 4, 4), [4, 6, 6, 8, 8, 8], 16, (0.40, 0.30), n_classes)
    }

    pub fn conv_stack(
        input: (usize, usize, usize),
        channels: [usize; 6],
        fc_units: usize,
        dropout: (f64, f64),
        n_classes: usize,
    ) -> Self {
        use LayerSpec::*;
        let mut layers = Vec::new();
        for block in 0..3 {
            for ci in [channels[block * 2], channels[block * 2 + 1]] {
                layers.push(BatchNorm);
                layers.push(Conv3x3 { out_channels: ci });
                layers.push(ReLU);
            }
            layers.push(MaxPool2x2);
        }
        layers.push(BatchNorm);
        layers.push(Dropout { rate: dropout.0 });
        layers.push(FullyConnected { out_units: fc_units });
        layers.push(ReLU);
        layers.push(Dropout { rate: dropout.1 });
        layers.push(FullyConnected {
            out_units: n_classes,
        });
        layers.push(Softmax);
        NetworkSpec { input, layers }
    }

    /// Chains shapes through the layer list, rejecting inconsistent specs
    /// (dropout rate outside `[0,1)`, non-terminal softmax, zero dims).
    /// Returns the output shape after every layer.
    pub fn shape_chain(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (c0, h0, w0) = self.input;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::Config("input shape must be positive".into()));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax) => {}
            _ => return Err(Error::Config("network must end in softmax".into())),
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = (c0, h0, w0);
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::Config("softmax must be the terminal layer".into()));
            }
            cur = match *layer {
                LayerSpec::BatchNorm | LayerSpec::ReLU | LayerSpec::Softmax => cur,
                LayerSpec::Conv3x3 { out_channels } => {
                    if out_channels == 0 {
                        return Err(Error::Config(format!("layer {i}: zero conv channels")));
                    }
                    (out_channels, cur.1, cur.2)
                }
                LayerSpec::MaxPool2x2 => (cur.0, (cur.1 + 1) / 2, (cur.2 + 1) / 2),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!(
                            "layer {i}: dropout rate {rate} outside [0,1)"
                        )));
                    }
                    cur
                }
                LayerSpec::FullyConnected { out_units } => {
                    if out_units == 0 {
                        return Err(Error::Config(format!("layer {i}: zero FC units")));
                    }
                    (out_units, 1, 1)
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Class count read off the final fully connected layer.
    pub fn n_classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::FullyConnected { out_units } => Some(*out_units),
                _ => None,
            })
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvParams {
    /// `[out_c][in_c][ky][kx]`, 3×3.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_c: usize,
    pub out_c: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FcParams {
    /// `[out][in]` row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerState {
    BatchNorm(BatchNormState),
    Conv(ConvParams),
    ReLU,
    MaxPool,
    Dropout { rate: f64 },
    Fc(FcParams),
    Softmax,
}

/// Parameterized network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) spec: NetworkSpec,
    pub(crate) layers: Vec<LayerState>,
}

const BN_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;

impl Network {
    /// He-style fan-in scaled Gaussian init for conv/FC weights, zero
    /// biases, identity batch-norm.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let shapes = spec.shape_chain()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut cur = spec.input;
        for (i, layer) in spec.layers.iter().enumerate() {
            let state = match *layer {
                LayerSpec::BatchNorm => LayerState::BatchNorm(BatchNormState {
                    gamma: vec![1.0; cur.0],
                    beta: vec![0.0; cur.0],
                    running_mean: vec![0.0; cur.0],
                    running_var: vec![1.0; cur.0],
                    momentum: BN_MOMENTUM,
                    eps: BN_EPS,
                }),
                LayerSpec::Conv3x3 { out_channels } => {
                    let fan_in = cur.0 * 9;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let w = (0..out_channels * cur.0 * 9)
                        .map(|_| std * dist::standard_normal(rng))
                        .collect();
                    LayerState::Conv(ConvParams {
                        w,
                        b: vec![0.0; out_channels],
                        in_c: cur.0,
                        out_c: out_channels,
                    })
                }
                LayerSpec::ReLU => LayerState::ReLU,
                LayerSpec::MaxPool2x2 => LayerState::MaxPool,
                LayerSpec::Dropout { rate } => LayerState::Dropout { rate },
                LayerSpec::FullyConnected { out_units } => {
                    let in_dim = cur.0 * cur.1 * cur.2;
                    let std = (2.0 / in_dim as f64).sqrt();
                    let w = (0..out_units * in_dim)
                        .map(|_| std * dist::standard_normal(rng))
                        .collect();
                    LayerState::Fc(FcParams {
                        w,
                        b: vec![0.0; out_units],
                        in_dim,
                        out_dim: out_units,
                    })
                }
                LayerSpec::Softmax => LayerState::Softmax,
            };
            layers.push(state);
            cur = shapes[i];
        }
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes()
    }

    /// Trainable tensors in a fixed order (per layer: weights then biases,
    /// or gamma then beta). Gradients use the same order.
    pub(crate) fn param_tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerState::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                LayerState::Conv(c) => {
                    out.push(&mut c.w);
                    out.push(&mut c.b);
                }
                LayerState::Fc(f) => {
                    out.push(&mut f.w);
                    out.push(&mut f.b);
                }
                _ => {}
            }
        }
        out
    }

    pub(crate) fn param_tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerState::BatchNorm(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                LayerState::Conv(c) => {
                    out.push(&c.w);
                    out.push(&c.b);
                }
                LayerState::Fc(f) => {
                    out.push(&f.w);
                    out.push(&f.b);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (c, h, w) = self.spec.input;
        if (x.c, x.h, x.w) != (c, h, w) {
            return Err(Error::Shape(format!(
                "network expects {c}x{h}x{w} input, got {}x{}x{}",
                x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics for BN (running stats are
    /// updated), fresh inverted-dropout masks from `rng`. Returns the
    /// cache consumed by [`Network::backward`].
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        images: &Tensor4,
        rng: &mut R,
    ) -> Result<TrainCache> {
        let masks = self.sample_dropout_masks(images, rng);
        self.forward_train_with_masks(images, &masks)
    }

    /// Draws the per-element dropout scale masks this forward pass would
    /// use, in layer order. Exposed so gradient checking can hold masks
    /// fixed across evaluations.
    pub fn sample_dropout_masks<R: Rng + ?Sized>(
        &self,
        images: &Tensor4,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        let shapes = self.spec.shape_chain().expect("constructed spec is valid");
        let mut masks = Vec::new();
        let mut cur = (images.c, images.h, images.w);
        for (i, layer) in self.spec.layers.iter().enumerate() {
            if let LayerSpec::Dropout { rate } = layer {
                let len = images.n * cur.0 * cur.1 * cur.2;
                let keep_scale = 1.0 / (1.0 - rate);
                let mask = (0..len)
                    .map(|_| {
                        if rng.gen::<f64>() < *rate {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                    .collect();
                masks.push(mask);
            }
            cur = shapes[i];
        }
        masks
    }

    /// Training-mode forward with caller-supplied dropout masks (one per
    /// dropout layer, element count matching that layer's input).
    pub fn forward_train_with_masks(
        &mut self,
        images: &Tensor4,
        masks: &[Vec<f64>],
    ) -> Result<TrainCache> {
        self.check_input(images)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = images.clone();
        let mut mask_iter = masks.iter();
        for layer in &mut self.layers {
            match layer {
                LayerState::BatchNorm(bn) => {
                    let (y, cache) = bn_forward_train(&x, bn);
                    caches.push(LayerCache::BatchNorm(cache));
                    x = y;
                }
                LayerState::Conv(p) => {
                    let y = conv_forward(&x, p);
                    caches.push(LayerCache::Conv { input: x });
                    x = y;
                }
                LayerState::ReLU => {
                    let mask = relu_forward_inplace(&mut x);
                    caches.push(LayerCache::ReLU { active: mask });
                }
                LayerState::MaxPool => {
                    let (y, argmax) = maxpool_forward(&x);
                    caches.push(LayerCache::MaxPool {
                        argmax,
                        in_shape: (x.n, x.c, x.h, x.w),
                    });
                    x = y;
                }
                LayerState::Dropout { .. } => {
                    let mask = mask_iter.next().ok_or_else(|| {
                        Error::Shape("missing dropout mask for a dropout layer".into())
                    })?;
                    if mask.len() != x.data.len() {
                        return Err(Error::Shape(format!(
                            "dropout mask has {} elements, layer input has {}",
                            mask.len(),
                            x.data.len()
                        )));
                    }
                    for (v, m) in x.data.iter_mut().zip(mask) {
                        *v *= m;
                    }
                    caches.push(LayerCache::Dropout { mask: mask.clone() });
                }
                LayerState::Fc(p) => {
                    let y = fc_forward(&x, p)?;
                    caches.push(LayerCache::Fc { input: x });
                    x = y;
                }
                LayerState::Softmax => caches.push(LayerCache::None),
            }
        }
        let k = x.c;
        Ok(TrainCache {
            caches,
            logits: x.data,
            n: images.n,
            k,
        })
    }

    /// Eval-mode forward: running statistics for BN, identity dropout,
    /// no mutation, no cache. Returns row-major n×k logits.
    pub fn forward_eval(&self, images: &Tensor4) -> Result<Vec<f64>> {
        self.check_input(images)?;
        let mut x = images.clone();
        for layer in &self.layers {
            match layer {
                LayerState::BatchNorm(bn) => x = bn_forward_eval(&x, bn),
                LayerState::Conv(p) => x = conv_forward(&x, p),
                LayerState::ReLU => {
                    relu_forward_inplace(&mut x);
                }
                LayerState::MaxPool => x = maxpool_forward(&x).0,
                LayerState::Dropout { .. } => {}
                LayerState::Fc(p) => x = fc_forward(&x, p)?,
                LayerState::Softmax => {}
            }
        }
        Ok(x.data)
    }

    /// Exact gradients of the soft-target cross-entropy mean w.r.t. every
    /// parameter, reusing the forward cache (dropout masks included).
    pub fn backward(&self, cache: &TrainCache, targets: &[f64]) -> Result<Gradients> {
        if targets.len() != cache.n * cache.k {
            return Err(Error::Shape(format!(
                "targets have {} entries, expected {}x{}",
                targets.len(),
                cache.n,
                cache.k
            )));
        }
        if cache.caches.len() != self.layers.len() {
            return Err(Error::Shape(
                "forward cache does not match this network".into(),
            ));
        }
        // d loss / d logits = (softmax - target) / n, averaged loss.
        let probs = softmax_rows(&cache.logits, cache.n, cache.k);
        let inv_n = 1.0 / cache.n as f64;
        let mut dy = Tensor4 {
            n: cache.n,
            c: cache.k,
            h: 1,
            w: 1,
            data: probs
                .iter()
                .zip(targets)
                .map(|(p, t)| (p - t) * inv_n)
                .collect(),
        };
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.caches[i];
            match (layer, lc) {
                (LayerState::Softmax, _) => {}
                (LayerState::BatchNorm(bn), LayerCache::BatchNorm(c)) => {
                    let (dx, dgamma, dbeta) = bn_backward(&dy, c, bn);
                    grads[i] = LayerGrad::BatchNorm { dgamma, dbeta };
                    dy = dx;
                }
                (LayerState::Conv(p), LayerCache::Conv { input }) => {
                    let (dx, dw, db) = conv_backward(input, &dy, p);
                    grads[i] = LayerGrad::Conv { dw, db };
                    dy = dx;
                }
                (LayerState::ReLU, LayerCache::ReLU { active }) => {
                    for (g, &a) in dy.data.iter_mut().zip(active) {
                        if a == 0 {
                            *g = 0.0;
                        }
                    }
                }
                (LayerState::MaxPool, LayerCache::MaxPool { argmax, in_shape }) => {
                    dy = maxpool_backward(&dy, argmax, *in_shape);
                }
                (LayerState::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    for (g, m) in dy.data.iter_mut().zip(mask) {
                        *g *= m;
                    }
                }
                (LayerState::Fc(p), LayerCache::Fc { input }) => {
                    let (dx, dw, db) = fc_backward(input, &dy, p);
                    grads[i] = LayerGrad::Fc { dw, db };
                    dy = dx;
                }
                _ => {
                    return Err(Error::Shape(format!(
                        "cache entry {i} does not match layer"
                    )))
                }
            }
        }
        Ok(Gradients { layers: grads })
    }
}

/// Forward cache handed to [`Network::backward`].
pub struct TrainCache {
    caches: Vec<LayerCache>,
    /// Row-major n×k logits.
    pub logits: Vec<f64>,
    pub n: usize,
    pub k: usize,
}

impl TrainCache {
    /// Dropout scale masks in layer order (for replaying a forward pass).
    pub fn dropout_masks(&self) -> Vec<Vec<f64>> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                LayerCache::Dropout { mask } => Some(mask.clone()),
                _ => None,
            })
            .collect()
    }

    /// Hash of every discrete decision taken by the forward pass (ReLU
    /// activity, pool argmax). Two passes with equal signatures lie in
    /// the same smooth region of the loss.
    pub(crate) fn discrete_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for c in &self.caches {
            match c {
                LayerCache::ReLU { active } => {
                    for &a in active {
                        eat(u64::from(a));
                    }
                }
                LayerCache::MaxPool { argmax, .. } => {
                    for &i in argmax {
                        eat(i as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Smallest per-channel batch variance seen by any batch-norm layer.
    pub(crate) fn min_bn_variance(&self) -> f64 {
        self.caches
            .iter()
            .filter_map(|c| match c {
                LayerCache::BatchNorm(bn) => bn.var.iter().copied().reduce(f64::min),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }
}

enum LayerCache {
    BatchNorm(BnCache),
    Conv { input: Tensor4 },
    ReLU { active: Vec<u8> },
    MaxPool {
        argmax: Vec<usize>,
        in_shape: (usize, usize, usize, usize),
    },
    Dropout { mask: Vec<f64> },
    Fc { input: Tensor4 },
    None,
}

struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    var: Vec<f64>,
}

/// Per-parameter gradients in the same order as the network's tensors.
pub struct Gradients {
    layers: Vec<LayerGrad>,
}

#[derive(Clone)]
enum LayerGrad {
    BatchNorm { dgamma: Vec<f64>, dbeta: Vec<f64> },
    Conv { dw: Vec<f64>, db: Vec<f64> },
    Fc { dw: Vec<f64>, db: Vec<f64> },
    None,
}

impl Gradients {
    pub(crate) fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerGrad::BatchNorm { dgamma, dbeta } => {
                    out.push(dgamma);
                    out.push(dbeta);
                }
                LayerGrad::Conv { dw, db } | LayerGrad::Fc { dw, db } => {
                    out.push(dw);
                    out.push(db);
                }
                LayerGrad::None => {}
            }
        }
        out
    }

    /// Flattened copy in parameter order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn from_raw_for_tests(net: &Network, raw: Vec<Vec<f64>>) -> Gradients {
        let mut it = raw.into_iter();
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                LayerState::BatchNorm(_) => LayerGrad::BatchNorm {
                    dgamma: it.next().unwrap(),
                    dbeta: it.next().unwrap(),
                },
                LayerState::Conv(_) => LayerGrad::Conv {
                    dw: it.next().unwrap(),
                    db: it.next().unwrap(),
                },
                LayerState::Fc(_) => LayerGrad::Fc {
                    dw: it.next().unwrap(),
                    db: it.next().unwrap(),
                },
                _ => LayerGrad::None,
            })
            .collect();
        Gradients { layers }
    }
}

/// Row-wise softmax with log-sum-exp stabilization.
pub fn softmax_rows(logits: &[f64], n: usize, k: usize) -> Vec<f64> {
    assert_eq!(logits.len(), n * k);
    let mut out = vec![0.0; n * k];
    for r in 0..n {
        let row = &logits[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &l) in out[r * k..(r + 1) * k].iter_mut().zip(row) {
            let e = (l - m).exp();
            *o = e;
            denom += e;
        }
        for o in &mut out[r * k..(r + 1) * k] {
            *o /= denom;
        }
    }
    out
}

/// Mean over the batch of `−Σ_k target_k · log softmax(logits)_k`,
/// computed via log-sum-exp.
pub fn loss_xent_soft(logits: &[f64], targets: &[f64], n: usize, k: usize) -> f64 {
    assert_eq!(logits.len(), n * k);
    assert_eq!(targets.len(), n * k);
    let mut total = 0.0;
    for r in 0..n {
        let row = &logits[r * k..(r + 1) * k];
        let t = &targets[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
        total += t.iter().zip(row).map(|(&tv, &l)| tv * (lse - l)).sum::<f64>();
    }
    total / n as f64
}

// ---------------------------------------------------------------------------
// Layer kernels. Parallel loops split over disjoint (n, c) output planes;
// all accumulations run in fixed index order.
// ---------------------------------------------------------------------------

fn conv_forward(x: &Tensor4, p: &ConvParams) -> Tensor4 {
    debug_assert_eq!(x.c, p.in_c);
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let mut out = Tensor4::zeros(x.n, p.out_c, h, w);
    out.data
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let n = plane_idx / p.out_c;
            let oc = plane_idx % p.out_c;
            out_plane.fill(p.b[oc]);
            for ic in 0..p.in_c {
                let in_plane = x.plane(n, ic);
                let wk = &p.w[(oc * p.in_c + ic) * 9..(oc * p.in_c + ic) * 9 + 9];
                for ky in 0..3usize {
                    let (y_lo, y_hi) = conv_row_range(ky, h);
                    for y in y_lo..y_hi {
                        let iy = y + ky - 1;
                        let in_row = &in_plane[iy * w..iy * w + w];
                        let out_row = &mut out_plane[y * w..y * w + w];
                        add_shifted_rows(out_row, in_row, &wk[ky * 3..ky * 3 + 3], w);
                    }
                }
            }
        });
    out
}

/// Valid output rows for kernel row `ky` (input row `y + ky - 1` in bounds).
#[inline]
fn conv_row_range(ky: usize, h: usize) -> (usize, usize) {
    match ky {
        0 => (1, h),
        1 => (0, h),
        _ => (0, h - 1),
    }
}

/// out_row += k0·in_row shifted left + k1·in_row + k2·in_row shifted right.
#[inline]
fn add_shifted_rows(out_row: &mut [f64], in_row: &[f64], k: &[f64], w: usize) {
    let (k0, k1, k2) = (k[0], k[1], k[2]);
    for x in 1..w {
        out_row[x] += k0 * in_row[x - 1];
    }
    for x in 0..w {
        out_row[x] += k1 * in_row[x];
    }
    for x in 0..w - 1 {
        out_row[x] += k2 * in_row[x + 1];
    }
}

fn conv_backward(x: &Tensor4, dy: &Tensor4, p: &ConvParams) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let (h, w) = (x.h, x.w);
    let hw = h * w;

    // dW and db: parallel over output channels, sequential over n, y, x.
    let mut dw = vec![0.0; p.w.len()];
    let mut db = vec![0.0; p.out_c];
    dw.par_chunks_mut(p.in_c * 9)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(oc, (dw_oc, db_oc))| {
            for n in 0..x.n {
                let dy_plane = dy.plane(n, oc);
                *db_oc += dy_plane.iter().sum::<f64>();
                for ic in 0..p.in_c {
                    let in_plane = x.plane(n, ic);
                    for ky in 0..3usize {
                        let (y_lo, y_hi) = conv_row_range(ky, h);
                        for y in y_lo..y_hi {
                            let iy = y + ky - 1;
                            let dy_row = &dy_plane[y * w..y * w + w];
                            let in_row = &in_plane[iy * w..iy * w + w];
                            let base = ic * 9 + ky * 3;
                            // kx = 0: input shifted left of the output
                            let mut acc0 = 0.0;
                            for xx in 1..w {
                                acc0 += dy_row[xx] * in_row[xx - 1];
                            }
                            dw_oc[base] += acc0;
                            let mut acc1 = 0.0;
                            for xx in 0..w {
                                acc1 += dy_row[xx] * in_row[xx];
                            }
                            dw_oc[base + 1] += acc1;
                            let mut acc2 = 0.0;
                            for xx in 0..w - 1 {
                                acc2 += dy_row[xx] * in_row[xx + 1];
                            }
                            dw_oc[base + 2] += acc2;
                        }
                    }
                }
            }
        });

    // dX: parallel over (n, in_c) planes, sequential over output channels.
    let mut dx = Tensor4::zeros(x.n, p.in_c, h, w);
    dx.data
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane_idx, dx_plane)| {
            let n = plane_idx / p.in_c;
            let ic = plane_idx % p.in_c;
            for oc in 0..p.out_c {
                let dy_plane = dy.plane(n, oc);
                let wk = &p.w[(oc * p.in_c + ic) * 9..(oc * p.in_c + ic) * 9 + 9];
                for ky in 0..3usize {
                    let (y_lo, y_hi) = conv_row_range(ky, h);
                    for y in y_lo..y_hi {
                        let iy = y + ky - 1;
                        let dy_row = &dy_plane[y * w..y * w + w];
                        let dx_row = &mut dx_plane[iy * w..iy * w + w];
                        let (k0, k1, k2) = (wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]);
                        for xx in 1..w {
                            dx_row[xx - 1] += k0 * dy_row[xx];
                        }
                        for xx in 0..w {
                            dx_row[xx] += k1 * dy_row[xx];
                        }
                        for xx in 0..w - 1 {
                            dx_row[xx + 1] += k2 * dy_row[xx];
                        }
                    }
                }
            }
        });

    (dx, dw, db)
}

fn bn_forward_train(x: &Tensor4, bn: &mut BatchNormState) -> (Tensor4, BnCache) {
    let hw = x.h * x.w;
    let m = (x.n * hw) as f64;
    let c = x.c;
    let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let mut x_hat = vec![0.0; x.data.len()];
    let mut inv_std = vec![0.0; c];
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];

    // Per-channel statistics and normalization; channels are independent.
    // Slices of y/x_hat per channel are strided, so collect indices per
    // channel sequentially inside a parallel loop over channels.
    let stats: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ci| {
            let mut sum = 0.0;
            for n in 0..x.n {
                for v in x.plane(n, ci) {
                    sum += v;
                }
            }
            let mean = sum / m;
            let mut var_sum = 0.0;
            for n in 0..x.n {
                for v in x.plane(n, ci) {
                    let d = v - mean;
                    var_sum += d * d;
                }
            }
            (mean, var_sum / m)
        })
        .collect();
    for (ci, (mean, var)) in stats.iter().enumerate() {
        means[ci] = *mean;
        vars[ci] = *var;
        inv_std[ci] = 1.0 / (var + bn.eps).sqrt();
    }

    // Normalize + affine. Parallel over (n, c) planes.
    {
        let y_chunks = y.data.par_chunks_mut(hw);
        let xh_chunks = x_hat.par_chunks_mut(hw);
        y_chunks
            .zip(xh_chunks)
            .enumerate()
            .for_each(|(plane_idx, (y_plane, xh_plane))| {
                let n = plane_idx / c;
                let ci = plane_idx % c;
                let (mean, istd) = (means[ci], inv_std[ci]);
                let (g, b) = (bn.gamma[ci], bn.beta[ci]);
                for ((yv, xh), &xv) in y_plane.iter_mut().zip(xh_plane.iter_mut()).zip(x.plane(n, ci)) {
                    let h = (xv - mean) * istd;
                    *xh = h;
                    *yv = g * h + b;
                }
            });
    }

    for ci in 0..c {
        bn.running_mean[ci] = bn.momentum * bn.running_mean[ci] + (1.0 - bn.momentum) * means[ci];
        bn.running_var[ci] = bn.momentum * bn.running_var[ci] + (1.0 - bn.momentum) * vars[ci];
    }

    (
        y,
        BnCache {
            x_hat,
            inv_std,
            var: vars,
        },
    )
}

fn bn_forward_eval(x: &Tensor4, bn: &BatchNormState) -> Tensor4 {
    let hw = x.h * x.w;
    let c = x.c;
    let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
    y.data
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane_idx, y_plane)| {
            let n = plane_idx / c;
            let ci = plane_idx % c;
            let istd = 1.0 / (bn.running_var[ci] + bn.eps).sqrt();
            let (mean, g, b) = (bn.running_mean[ci], bn.gamma[ci], bn.beta[ci]);
            for (yv, &xv) in y_plane.iter_mut().zip(x.plane(n, ci)) {
                *yv = g * (xv - mean) * istd + b;
            }
        });
    y
}

fn bn_backward(dy: &Tensor4, cache: &BnCache, bn: &BatchNormState) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let hw = dy.h * dy.w;
    let c = dy.c;
    let m = (dy.n * hw) as f64;

    // Channel sums: sum(dy) and sum(dy * x_hat), fixed order per channel.
    let sums: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ci| {
            let mut s = 0.0;
            let mut sx = 0.0;
            for n in 0..dy.n {
                let base = (n * c + ci) * hw;
                for i in 0..hw {
                    let g = dy.data[base + i];
                    s += g;
                    sx += g * cache.x_hat[base + i];
                }
            }
            (s, sx)
        })
        .collect();

    let dbeta: Vec<f64> = sums.iter().map(|(s, _)| *s).collect();
    let dgamma: Vec<f64> = sums.iter().map(|(_, sx)| *sx).collect();

    let mut dx = Tensor4::zeros(dy.n, c, dy.h, dy.w);
    dx.data
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane_idx, dx_plane)| {
            let n = plane_idx / c;
            let ci = plane_idx % c;
            let (s, sx) = sums[ci];
            let scale = bn.gamma[ci] * cache.inv_std[ci];
            let base = (n * c + ci) * hw;
            for i in 0..hw {
                let g = dy.data[base + i];
                let xh = cache.x_hat[base + i];
                dx_plane[i] = scale * (g - s / m - xh * sx / m);
            }
        });

    (dx, dgamma, dbeta)
}

/// In-place ReLU; returns a 0/1 activity mask for backward.
fn relu_forward_inplace(x: &mut Tensor4) -> Vec<u8> {
    let mut mask = vec![0u8; x.data.len()];
    for (v, m) in x.data.iter_mut().zip(&mut mask) {
        if *v > 0.0 {
            *m = 1;
        } else {
            *v = 0.0;
        }
    }
    mask
}

fn maxpool_forward(x: &Tensor4) -> (Tensor4, Vec<usize>) {
    let oh = (x.h + 1) / 2;
    let ow = (x.w + 1) / 2;
    let hw = x.h * x.w;
    let ohw = oh * ow;
    let mut y = Tensor4::zeros(x.n, x.c, oh, ow);
    let mut argmax = vec![0usize; x.n * x.c * ohw];
    {
        let y_chunks = y.data.par_chunks_mut(ohw);
        let arg_chunks = argmax.par_chunks_mut(ohw);
        y_chunks
            .zip(arg_chunks)
            .enumerate()
            .for_each(|(plane_idx, (y_plane, arg_plane))| {
                let in_base = plane_idx * hw;
                let in_plane = &x.data[in_base..in_base + hw];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for yy in (2 * oy)..(2 * oy + 2).min(x.h) {
                            for xx in (2 * ox)..(2 * ox + 2).min(x.w) {
                                let idx = yy * x.w + xx;
                                let v = in_plane[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                        y_plane[oy * ow + ox] = best;
                        arg_plane[oy * ow + ox] = in_base + best_idx;
                    }
                }
            });
    }
    (y, argmax)
}

fn maxpool_backward(
    dy: &Tensor4,
    argmax: &[usize],
    in_shape: (usize, usize, usize, usize),
) -> Tensor4 {
    let (n, c, h, w) = in_shape;
    let mut dx = Tensor4::zeros(n, c, h, w);
    // Windows never overlap, so every argmax target is unique; still
    // accumulate in fixed order for clarity.
    for (&src, &g) in argmax.iter().zip(&dy.data) {
        dx.data[src] += g;
    }
    dx
}

fn fc_forward(x: &Tensor4, p: &FcParams) -> Result<Tensor4> {
    let features = x.features();
    if features != p.in_dim {
        return Err(Error::Shape(format!(
            "fully connected layer expects {} inputs, got {features}",
            p.in_dim
        )));
    }
    let mut y = Tensor4::zeros(x.n, p.out_dim, 1, 1);
    y.data
        .par_chunks_mut(p.out_dim)
        .enumerate()
        .for_each(|(n, y_row)| {
            let x_row = &x.data[n * features..(n + 1) * features];
            for (o, yv) in y_row.iter_mut().enumerate() {
                let w_row = &p.w[o * p.in_dim..(o + 1) * p.in_dim];
                let mut acc = p.b[o];
                for (wv, xv) in w_row.iter().zip(x_row) {
                    acc += wv * xv;
                }
                *yv = acc;
            }
        });
    Ok(y)
}

fn fc_backward(x: &Tensor4, dy: &Tensor4, p: &FcParams) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let features = p.in_dim;
    // dW parallel over output units, sequential over the batch.
    let mut dw = vec![0.0; p.w.len()];
    let mut db = vec![0.0; p.out_dim];
    dw.par_chunks_mut(features)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(o, (dw_row, db_o))| {
            for n in 0..x.n {
                let g = dy.data[n * p.out_dim + o];
                *db_o += g;
                let x_row = &x.data[n * features..(n + 1) * features];
                for (dwv, xv) in dw_row.iter_mut().zip(x_row) {
                    *dwv += g * xv;
                }
            }
        });

    // dX parallel over samples, sequential over output units.
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
    dx.data
        .par_chunks_mut(features)
        .enumerate()
        .for_each(|(n, dx_row)| {
            for o in 0..p.out_dim {
                let g = dy.data[n * p.out_dim + o];
                let w_row = &p.w[o * features..(o + 1) * features];
                for (dxv, wv) in dx_row.iter_mut().zip(w_row) {
                    *dxv += g * wv;
                }
            }
        });

    (dx, dw, db)
}
