//! C3D-style unit feature extractor: a stack of 3D convolutions (each
//! followed by ReLU) and 3D max-pools, then `fc6` (+ReLU), whose activation
//! is the unit feature, and a final classification layer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{relu, relu_backward, softmax_xent};
use super::conv::{conv3d, conv3d_backward, Conv3dGeometry};
use super::linear::{linear, linear_backward};
use super::pool::{maxpool3d, maxpool3d_backward, PoolGeometry};
use crate::error::{ensure, Result};
use crate::params::{GradStore, ParamSet};
use crate::rng::SeededRng;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 8 conv / 5 pool / 2 fc with a 4096-wide fc6.
    Full,
    /// 3 conv / 3 pool / 2 fc with a 128-wide fc6, trainable on a laptop.
    Tiny,
}

impl Preset {
    pub fn code(self) -> f64 {
        match self {
            Preset::Full => 0.0,
            Preset::Tiny => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(Preset::Full),
            1 => Some(Preset::Tiny),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Conv {
        out_channels: usize,
        kernel: [usize; 3],
        geometry: Conv3dGeometry,
    },
    Pool(PoolGeometry),
}

#[derive(Debug, Clone, PartialEq)]
pub struct C3dSpec {
    /// `[C, T, H, W]` of one video unit.
    pub input: [usize; 4],
    pub blocks: Vec<Block>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

fn conv(out_channels: usize) -> Block {
    Block::Conv {
        out_channels,
        kernel: [3, 3, 3],
        geometry: Conv3dGeometry::new([1, 1, 1], [1, 1, 1]),
    }
}

fn pool(window: [usize; 3]) -> Block {
    Block::Pool(PoolGeometry::new(window, window))
}

impl C3dSpec {
    pub fn preset(preset: Preset, num_classes: usize) -> Self {
        match preset {
            Preset::Full => Self::full(num_classes),
            Preset::Tiny => Self::tiny(num_classes),
        }
    }

    /// Canonical C3D layout on `3×16×112×112` units.
    pub fn full(num_classes: usize) -> Self {
        Self {
            input: [3, 16, 112, 112],
            blocks: vec![
                conv(64),
                pool([1, 2, 2]),
                conv(128),
                pool([2, 2, 2]),
                conv(256),
                conv(256),
                pool([2, 2, 2]),
                conv(512),
                conv(512),
                pool([2, 2, 2]),
                conv(512),
                conv(512),
                Block::Pool(PoolGeometry::new([2, 2, 2], [2, 2, 2]).with_pad([0, 1, 1])),
            ],
            feature_dim: 4096,
            num_classes,
        }
    }

    /// Reduced layout on the same unit shape. The leading pool brings the
    /// 112×112 frames to 28×28, which still exceeds the 12×16 information
    /// content of the degraded clips.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            input: [3, 16, 112, 112],
            blocks: vec![
                pool([2, 4, 4]),
                conv(8),
                pool([2, 2, 2]),
                conv(16),
                pool([2, 2, 2]),
                conv(32),
            ],
            feature_dim: 128,
            num_classes,
        }
    }

    /// `(conv, pool, fully-connected)` layer counts.
    pub fn layer_counts(&self) -> (usize, usize, usize) {
        let convs = self.blocks.iter().filter(|b| matches!(b, Block::Conv { .. })).count();
        (convs, self.blocks.len() - convs, 2)
    }

    /// Declared activation shape after every block, then fc6 and logits.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input;
        let mut trace = Vec::with_capacity(self.blocks.len() + 2);
        for block in &self.blocks {
            shape = match block {
                Block::Conv {
                    out_channels,
                    kernel,
                    geometry,
                } => {
                    let mut out = [*out_channels, 0, 0, 0];
                    for a in 0..3 {
                        out[a + 1] = super::conv::out_extent(
                            shape[a + 1],
                            kernel[a],
                            geometry.stride[a],
                            geometry.pad[a],
                        )
                        .ok_or_else(|| crate::error::invalid!("conv does not fit {:?}", shape))?;
                    }
                    out
                }
                Block::Pool(g) => g.output_dims(&shape)?,
            };
            trace.push(shape.to_vec());
        }
        trace.push(vec![self.feature_dim]);
        trace.push(vec![self.num_classes]);
        Ok(trace)
    }

    pub fn flat_dim(&self) -> Result<usize> {
        let trace = self.shape_trace()?;
        Ok(trace[trace.len() - 3].iter().product())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Learnable tensors of a C3D network plus the layout they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct C3dParams {
    pub spec: C3dSpec,
    pub convs: Vec<ConvLayer>,
    pub fc6_weight: Tensor,
    pub fc6_bias: Tensor,
    pub fc7_weight: Tensor,
    pub fc7_bias: Tensor,
}

/// Kaiming-uniform weights `U(±sqrt(6/fan_in))` and biases `U(±1/sqrt(fan_in))`.
fn kaiming(dims: &[usize], fan_in: usize, rng: &mut SeededRng) -> (Tensor, Tensor) {
    let wb = libm::sqrt(6.0 / fan_in as f64);
    let bb = 1.0 / libm::sqrt(fan_in as f64);
    let n: usize = dims.iter().product();
    let w = (0..n).map(|_| rng.random_range(-wb..wb)).collect();
    let b = (0..dims[0]).map(|_| rng.random_range(-bb..bb)).collect();
    (
        Tensor::from_vec(dims, w).expect("dims match"),
        Tensor::vector(b),
    )
}

impl C3dParams {
    pub fn init(spec: &C3dSpec, rng: &mut SeededRng) -> Result<Self> {
        let trace = spec.shape_trace()?;
        let mut in_ch = spec.input[0];
        let mut convs = Vec::new();
        for block in &spec.blocks {
            if let Block::Conv {
                out_channels,
                kernel,
                ..
            } = block
            {
                let fan_in = in_ch * kernel.iter().product::<usize>();
                let (weight, bias) = kaiming(
                    &[*out_channels, in_ch, kernel[0], kernel[1], kernel[2]],
                    fan_in,
                    rng,
                );
                convs.push(ConvLayer { weight, bias });
                in_ch = *out_channels;
            }
        }
        let flat: usize = trace[trace.len() - 3].iter().product();
        let (fc6_weight, fc6_bias) = kaiming(&[spec.feature_dim, flat], flat, rng);
        let (fc7_weight, fc7_bias) =
            kaiming(&[spec.num_classes, spec.feature_dim], spec.feature_dim, rng);
        Ok(Self {
            spec: spec.clone(),
            convs,
            fc6_weight,
            fc6_bias,
            fc7_weight,
            fc7_bias,
        })
    }

    /// Rebuilds parameters from named tensors (see `named_tensors`),
    /// checking every shape against `spec`.
    pub fn from_named<'a>(
        spec: &C3dSpec,
        mut lookup: impl FnMut(&str) -> Option<&'a Tensor>,
    ) -> Result<Self> {
        // shapes come from a zero-initialized template
        let template = Self::zeros(spec)?;
        let mut out = template.clone();
        let names: Vec<String> = template.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(out.tensors_mut()) {
            let t = lookup(name).ok_or_else(|| crate::error::invalid!("missing tensor {}", name))?;
            ensure!(
                t.dims() == slot.dims(),
                "tensor {} has shape {:?}, expected {:?}",
                name,
                t.dims(),
                slot.dims()
            );
            *slot = t.clone();
        }
        Ok(out)
    }

    fn zeros(spec: &C3dSpec) -> Result<Self> {
        let trace = spec.shape_trace()?;
        let mut in_ch = spec.input[0];
        let mut convs = Vec::new();
        for block in &spec.blocks {
            if let Block::Conv {
                out_channels,
                kernel,
                ..
            } = block
            {
                convs.push(ConvLayer {
                    weight: Tensor::zeros(&[*out_channels, in_ch, kernel[0], kernel[1], kernel[2]]),
                    bias: Tensor::zeros(&[*out_channels]),
                });
                in_ch = *out_channels;
            }
        }
        let flat: usize = trace[trace.len() - 3].iter().product();
        Ok(Self {
            spec: spec.clone(),
            convs,
            fc6_weight: Tensor::zeros(&[spec.feature_dim, flat]),
            fc6_bias: Tensor::zeros(&[spec.feature_dim]),
            fc7_weight: Tensor::zeros(&[spec.num_classes, spec.feature_dim]),
            fc7_bias: Tensor::zeros(&[spec.num_classes]),
        })
    }
}

impl ParamSet for C3dParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(self.convs.len() * 2 + 4);
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("c3d.conv{}.weight", i + 1), &c.weight));
            out.push((format!("c3d.conv{}.bias", i + 1), &c.bias));
        }
        out.push(("c3d.fc6.weight".into(), &self.fc6_weight));
        out.push(("c3d.fc6.bias".into(), &self.fc6_bias));
        out.push(("c3d.fc7.weight".into(), &self.fc7_weight));
        out.push(("c3d.fc7.bias".into(), &self.fc7_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(self.convs.len() * 2 + 4);
        for c in self.convs.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.fc6_weight);
        out.push(&mut self.fc6_bias);
        out.push(&mut self.fc7_weight);
        out.push(&mut self.fc7_bias);
        out
    }
}

enum BlockCache {
    Conv { input: Tensor, pre_act: Tensor },
    Pool { input_dims: Vec<usize>, output_dims: Vec<usize>, argmax: Vec<usize> },
}

/// Activations kept by the forward pass for the backward pass.
pub struct C3dTrace {
    blocks: Vec<BlockCache>,
    flat: Tensor,
    fc6_pre: Tensor,
    /// Post-ReLU fc6 activation: the unit feature.
    pub feature: Tensor,
    pub logits: Tensor,
}

impl C3dTrace {
    /// Observed shapes in the layout of [`C3dSpec::shape_trace`].
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(match b {
                BlockCache::Conv { pre_act, .. } => pre_act.dims().to_vec(),
                BlockCache::Pool { output_dims, .. } => output_dims.clone(),
            });
        }
        out.push(self.feature.dims().to_vec());
        out.push(self.logits.dims().to_vec());
        out
    }

    /// True when both traces took the same branch at every ReLU and pool,
    /// i.e. the network is the same linear-by-parts piece at both inputs.
    pub fn same_pattern(&self, other: &C3dTrace) -> bool {
        let signs = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).all(|(x, y)| (*x > 0.0) == (*y > 0.0));
        self.blocks.len() == other.blocks.len()
            && signs(&self.fc6_pre, &other.fc6_pre)
            && self.blocks.iter().zip(&other.blocks).all(|pair| match pair {
                (BlockCache::Conv { pre_act: a, .. }, BlockCache::Conv { pre_act: b, .. }) => signs(a, b),
                (BlockCache::Pool { argmax: a, .. }, BlockCache::Pool { argmax: b, .. }) => a == b,
                _ => false,
            })
    }
}

pub fn c3d_forward_trace(unit: &Tensor, params: &C3dParams) -> Result<C3dTrace> {
    let spec = &params.spec;
    ensure!(
        unit.dims() == spec.input,
        "unit tensor {:?} does not match network input {:?}",
        unit.dims(),
        spec.input
    );
    let mut x = unit.clone();
    let mut caches = Vec::with_capacity(spec.blocks.len());
    let mut conv_iter = params.convs.iter();
    for block in &spec.blocks {
        match block {
            Block::Conv { geometry, .. } => {
                let layer = conv_iter
                    .next()
                    .ok_or_else(|| crate::error::invalid!("fewer conv tensors than conv blocks"))?;
                let pre_act = conv3d(&x, &layer.weight, &layer.bias, geometry)?;
                let next = relu(&pre_act);
                caches.push(BlockCache::Conv { input: x, pre_act });
                x = next;
            }
            Block::Pool(g) => {
                let out = maxpool3d(&x, g)?;
                caches.push(BlockCache::Pool {
                    input_dims: x.dims().to_vec(),
                    output_dims: out.output.dims().to_vec(),
                    argmax: out.argmax,
                });
                x = out.output;
            }
        }
    }
    let flat_len = x.len();
    let flat = x.reshape(&[flat_len])?;
    let fc6_pre = linear(&flat, &params.fc6_weight, &params.fc6_bias)?;
    let feature = relu(&fc6_pre);
    let logits = linear(&feature, &params.fc7_weight, &params.fc7_bias)?;
    Ok(C3dTrace {
        blocks: caches,
        flat,
        fc6_pre,
        feature,
        logits,
    })
}

/// Unit feature (post-ReLU fc6) and classification logits.
pub fn c3d_forward(unit: &Tensor, params: &C3dParams) -> Result<(Tensor, Tensor)> {
    let trace = c3d_forward_trace(unit, params)?;
    Ok((trace.feature, trace.logits))
}

/// Parameter gradients given the gradient of a scalar loss with respect to
/// the logits.
pub fn c3d_backward(
    params: &C3dParams,
    trace: &C3dTrace,
    grad_logits: &Tensor,
) -> Result<GradStore<C3dParams>> {
    let mut grads = GradStore::zeros_for(params);
    let g7 = linear_backward(&trace.feature, &params.fc7_weight, grad_logits)?;
    grads.0.fc7_weight = g7.weight;
    grads.0.fc7_bias = g7.bias;
    let g6_pre = relu_backward(&trace.fc6_pre, &g7.input)?;
    let g6 = linear_backward(&trace.flat, &params.fc6_weight, &g6_pre)?;
    grads.0.fc6_weight = g6.weight;
    grads.0.fc6_bias = g6.bias;

    let mut upstream = g6.input;
    let mut conv_idx = params.convs.len();
    let first_conv = trace
        .blocks
        .iter()
        .position(|b| matches!(b, BlockCache::Conv { .. }));
    for (bi, (block, cache)) in params.spec.blocks.iter().zip(&trace.blocks).enumerate().rev() {
        match (block, cache) {
            (Block::Conv { geometry, .. }, BlockCache::Conv { input, pre_act }) => {
                conv_idx -= 1;
                let g_pre = relu_backward(pre_act, &upstream.reshape(pre_act.dims())?)?;
                let need_input = Some(bi) != first_conv;
                let g = conv3d_backward(input, &params.convs[conv_idx].weight, &g_pre, geometry, need_input)?;
                grads.0.convs[conv_idx].weight = g.weight;
                grads.0.convs[conv_idx].bias = g.bias;
                match g.input {
                    Some(dx) => upstream = dx,
                    None => break,
                }
            }
            (Block::Pool(_), BlockCache::Pool { input_dims, argmax, .. }) => {
                upstream = maxpool3d_backward(input_dims, argmax, &upstream)?;
            }
            _ => unreachable!("trace built from the same block list"),
        }
    }
    Ok(grads)
}

/// Per-unit cross-entropy loss, logits and parameter gradients.
pub fn c3d_loss_and_grad(
    unit: &Tensor,
    label: usize,
    params: &C3dParams,
) -> Result<(f64, Tensor, GradStore<C3dParams>)> {
    let trace = c3d_forward_trace(unit, params)?;
    let (loss, g_logits) = softmax_xent(&trace.logits, label)?;
    let grads = c3d_backward(params, &trace, &g_logits)?;
    Ok((loss, trace.logits, grads))
}
