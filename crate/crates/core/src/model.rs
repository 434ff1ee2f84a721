//! Sequence-level model: per-stream encoders over unit features, fusion of
//! the two stream representations and a shared classification head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};
use crate::fusion::{fuse, fuse_backward, ConvFusion, FusionKind, FusionParams};
use crate::gru::{classify, encode_final_backward, encode_final_trace, EncodeTrace, GruParams, HeadParams};
use crate::nn::{linear, linear_backward, relu, relu_backward, softmax_xent, Preset};
use crate::optim::RmspropConfig;
use crate::params::{GradStore, ParamSet};
use crate::rng::{seeded, SeededRng};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Spatial,
    Temporal,
}

impl Stream {
    pub const ALL: [Stream; 2] = [Stream::Spatial, Stream::Temporal];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Spatial => "spatial",
            Stream::Temporal => "temporal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spatial" => Some(Stream::Spatial),
            "temporal" => Some(Stream::Temporal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Streams {
    Spatial,
    Temporal,
    Both,
}

impl Streams {
    pub fn as_str(self) -> &'static str {
        match self {
            Streams::Spatial => "spatial",
            Streams::Temporal => "temporal",
            Streams::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spatial" => Some(Streams::Spatial),
            "temporal" => Some(Streams::Temporal),
            "both" => Some(Streams::Both),
            _ => None,
        }
    }

    pub fn uses(self, stream: Stream) -> bool {
        matches!(
            (self, stream),
            (Streams::Both, _) | (Streams::Spatial, Stream::Spatial) | (Streams::Temporal, Stream::Temporal)
        )
    }

    pub fn members(self) -> Vec<Stream> {
        Stream::ALL.into_iter().filter(|s| self.uses(*s)).collect()
    }

    fn code(self) -> f64 {
        match self {
            Streams::Spatial => 0.0,
            Streams::Temporal => 1.0,
            Streams::Both => 2.0,
        }
    }

    fn from_code(c: f64) -> Option<Self> {
        [Streams::Spatial, Streams::Temporal, Streams::Both].get(c as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GruVariant {
    Uni,
    Bi,
    /// Mean over units followed by a fully-connected layer.
    None,
}

impl GruVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            GruVariant::Uni => "uni",
            GruVariant::Bi => "bi",
            GruVariant::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uni" => Some(GruVariant::Uni),
            "bi" => Some(GruVariant::Bi),
            "none" => Some(GruVariant::None),
            _ => None,
        }
    }

    fn code(self) -> f64 {
        match self {
            GruVariant::Uni => 0.0,
            GruVariant::Bi => 1.0,
            GruVariant::None => 2.0,
        }
    }

    fn from_code(c: f64) -> Option<Self> {
        [GruVariant::Uni, GruVariant::Bi, GruVariant::None].get(c as usize).copied()
    }
}

/// Training hyperparameters for both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs of C3D training.
    pub epochs: usize,
    /// Epochs of sequence-model training on cached features.
    pub fusion_epochs: usize,
    pub batch_size: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub seed: u64,
    pub preset: Preset,
    pub streams: Streams,
    pub gru_direction: GruVariant,
    pub fusion_kind: FusionKind,
    /// Train on HIGH and LOW variants through one parameter set.
    pub coupled: bool,
    pub hidden_dim: usize,
    /// Output width of conv fusion; 0 means the stream width.
    pub fusion_out: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            epochs: 50,
            fusion_epochs: 50,
            batch_size: 256,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            seed: 0,
            preset: Preset::Full,
            streams: Streams::Both,
            gru_direction: GruVariant::Bi,
            fusion_kind: FusionKind::Sum,
            coupled: true,
            hidden_dim: 256,
            fusion_out: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults scaled for the tiny preset.
    pub fn tiny() -> Self {
        Self {
            preset: Preset::Tiny,
            batch_size: 16,
            hidden_dim: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be positive"
        );
        ensure!(self.weight_decay >= 0.0, "weight_decay must be non-negative");
        ensure!(self.epochs >= 1, "epochs must be at least 1");
        ensure!(self.fusion_epochs >= 1, "fusion_epochs must be at least 1");
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(
            self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0,
            "rmsprop_decay must be in (0, 1)"
        );
        ensure!(self.rmsprop_eps > 0.0, "rmsprop_eps must be positive");
        ensure!(self.hidden_dim >= 1, "hidden_dim must be at least 1");
        Ok(())
    }

    pub fn rmsprop(&self) -> RmspropConfig {
        RmspropConfig {
            learning_rate: self.learning_rate,
            decay: self.rmsprop_decay,
            eps: self.rmsprop_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn sequence_config(&self, feature_dim: usize, num_classes: usize) -> SequenceConfig {
        let rep = match self.gru_direction {
            GruVariant::Bi => 2 * self.hidden_dim,
            _ => self.hidden_dim,
        };
        SequenceConfig {
            streams: self.streams,
            gru: self.gru_direction,
            fusion: self.fusion_kind,
            feature_dim,
            hidden_dim: self.hidden_dim,
            fusion_out: if self.fusion_out == 0 { rep } else { self.fusion_out },
            num_classes,
        }
    }
}

/// Architecture of a [`SequenceModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceConfig {
    pub streams: Streams,
    pub gru: GruVariant,
    pub fusion: FusionKind,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub fusion_out: usize,
    pub num_classes: usize,
}

impl SequenceConfig {
    /// Width of one stream's representation.
    pub fn rep_dim(&self) -> usize {
        match self.gru {
            GruVariant::Bi => 2 * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }

    pub fn head_input_dim(&self) -> usize {
        match self.streams {
            Streams::Both => self.fusion.output_dim(self.rep_dim(), self.fusion_out),
            _ => self.rep_dim(),
        }
    }

    /// Flat numeric encoding, stored next to the weights in checkpoints.
    pub fn to_codes(&self) -> Vec<f64> {
        vec![
            self.streams.code(),
            self.gru.code(),
            self.fusion.code(),
            self.feature_dim as f64,
            self.hidden_dim as f64,
            self.fusion_out as f64,
            self.num_classes as f64,
        ]
    }

    pub fn from_codes(c: &[f64]) -> Result<Self> {
        ensure!(c.len() == 7, "model config code has {} entries, expected 7", c.len());
        let bad = || invalid!("unrecognized model config code {:?}", c);
        Ok(Self {
            streams: Streams::from_code(c[0]).ok_or_else(bad)?,
            gru: GruVariant::from_code(c[1]).ok_or_else(bad)?,
            fusion: FusionKind::from_code(c[2]).ok_or_else(bad)?,
            feature_dim: c[3] as usize,
            hidden_dim: c[4] as usize,
            fusion_out: c[5] as usize,
            num_classes: c[6] as usize,
        })
    }
}

/// Turns a stream's unit-feature sequence into one vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Gru { fwd: GruParams, bwd: Option<GruParams> },
    Pooled { weight: Tensor, bias: Tensor },
}

impl Encoder {
    fn init(cfg: &SequenceConfig, rng: &mut SeededRng) -> Self {
        let (f, h) = (cfg.feature_dim, cfg.hidden_dim);
        match cfg.gru {
            GruVariant::Uni => Encoder::Gru {
                fwd: GruParams::init(f, h, rng),
                bwd: None,
            },
            GruVariant::Bi => Encoder::Gru {
                fwd: GruParams::init(f, h, rng),
                bwd: Some(GruParams::init(f, h, rng)),
            },
            GruVariant::None => {
                let bound = libm::sqrt(6.0 / f as f64);
                let w = (0..h * f).map(|_| rng.random_range(-bound..bound)).collect();
                Encoder::Pooled {
                    weight: Tensor::from_vec(&[h, f], w).expect("dims match"),
                    bias: Tensor::zeros(&[h]),
                }
            }
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        match self {
            Encoder::Gru { fwd, bwd } => {
                let mut out: Vec<(String, &Tensor)> = fwd
                    .named_tensors()
                    .into_iter()
                    .map(|(n, t)| (format!("{}.gru.fwd.{}", prefix, n), t))
                    .collect();
                if let Some(b) = bwd {
                    out.extend(
                        b.named_tensors()
                            .into_iter()
                            .map(|(n, t)| (format!("{}.gru.bwd.{}", prefix, n), t)),
                    );
                }
                out
            }
            Encoder::Pooled { weight, bias } => vec![
                (format!("{}.fc.w", prefix), weight),
                (format!("{}.fc.b", prefix), bias),
            ],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Encoder::Gru { fwd, bwd } => {
                let mut out = fwd.tensors_mut();
                if let Some(b) = bwd {
                    out.extend(b.tensors_mut());
                }
                out
            }
            Encoder::Pooled { weight, bias } => vec![weight, bias],
        }
    }
}

enum EncoderTrace {
    Gru(EncodeTrace),
    Pooled { mean: Tensor, pre: Tensor, out: Tensor },
}

impl EncoderTrace {
    fn output(&self) -> &Tensor {
        match self {
            EncoderTrace::Gru(t) => &t.output,
            EncoderTrace::Pooled { out, .. } => out,
        }
    }
}

fn encode_trace(enc: &Encoder, xs: &[Tensor]) -> Result<EncoderTrace> {
    ensure!(!xs.is_empty(), "feature sequence is empty");
    match enc {
        Encoder::Gru { fwd, bwd } => Ok(EncoderTrace::Gru(encode_final_trace(xs, fwd, bwd.as_ref())?)),
        Encoder::Pooled { weight, bias } => {
            let mut mean = Tensor::zeros(xs[0].dims());
            for x in xs {
                mean.axpy(1.0 / xs.len() as f64, x)?;
            }
            let pre = linear(&mean, weight, bias)?;
            let out = relu(&pre);
            Ok(EncoderTrace::Pooled { mean, pre, out })
        }
    }
}

fn encode_backward(enc: &Encoder, trace: &EncoderTrace, grad: &Tensor, into: &mut Encoder) -> Result<()> {
    match (enc, trace, into) {
        (Encoder::Gru { fwd, bwd }, EncoderTrace::Gru(t), Encoder::Gru { fwd: gf, bwd: gb }) => {
            let (df, db, _) = encode_final_backward(t, fwd, bwd.as_ref(), grad)?;
            *gf = df.0;
            if let (Some(slot), Some(d)) = (gb.as_mut(), db) {
                *slot = d.0;
            }
            Ok(())
        }
        (
            Encoder::Pooled { weight, .. },
            EncoderTrace::Pooled { mean, pre, .. },
            Encoder::Pooled { weight: gw, bias: gbias },
        ) => {
            let dpre = relu_backward(pre, grad)?;
            let lg = linear_backward(mean, weight, &dpre)?;
            *gw = lg.weight;
            *gbias = lg.bias;
            Ok(())
        }
        _ => Err(invalid!("encoder, trace and gradient structures differ")),
    }
}

/// Per-stream feature sequences of one clip. Unused streams may be empty.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInput<'a> {
    pub spatial: &'a [Tensor],
    pub temporal: &'a [Tensor],
}

impl<'a> SequenceInput<'a> {
    fn get(&self, s: Stream) -> &'a [Tensor] {
        match s {
            Stream::Spatial => self.spatial,
            Stream::Temporal => self.temporal,
        }
    }
}

/// Encoders, fusion and head. With a single stream the representation goes
/// straight to the head.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub config: SequenceConfig,
    pub spatial: Option<Encoder>,
    pub temporal: Option<Encoder>,
    pub fusion: Option<FusionParams>,
    pub head: HeadParams,
}

struct ModelTrace {
    spatial: Option<EncoderTrace>,
    temporal: Option<EncoderTrace>,
    fused: Tensor,
    logits: Tensor,
}

impl SequenceModel {
    pub fn init(config: SequenceConfig, seed: u64) -> Result<Self> {
        ensure!(config.num_classes >= 2, "need at least two classes");
        ensure!(
            config.feature_dim >= 1 && config.hidden_dim >= 1,
            "feature and hidden widths must be positive"
        );
        let mut rng = seeded(seed, 0x5e9);
        let spatial = config
            .streams
            .uses(Stream::Spatial)
            .then(|| Encoder::init(&config, &mut rng));
        let temporal = config
            .streams
            .uses(Stream::Temporal)
            .then(|| Encoder::init(&config, &mut rng));
        let fusion = if config.streams == Streams::Both {
            Some(FusionParams::new(config.fusion, config.rep_dim(), config.fusion_out, &mut rng)?)
        } else {
            None
        };
        let head = HeadParams::init(config.head_input_dim(), config.num_classes, &mut rng);
        Ok(Self {
            config,
            spatial,
            temporal,
            fusion,
            head,
        })
    }

    fn encoder(&self, s: Stream) -> Option<&Encoder> {
        match s {
            Stream::Spatial => self.spatial.as_ref(),
            Stream::Temporal => self.temporal.as_ref(),
        }
    }

    fn trace(&self, input: &SequenceInput<'_>) -> Result<ModelTrace> {
        let mut traces = [None, None];
        for (slot, s) in traces.iter_mut().zip(Stream::ALL) {
            if let Some(enc) = self.encoder(s) {
                let xs = input.get(s);
                for x in xs {
                    ensure!(
                        x.len() == self.config.feature_dim,
                        "{} feature has length {}, expected {}",
                        s.as_str(),
                        x.len(),
                        self.config.feature_dim
                    );
                }
                *slot = Some(encode_trace(enc, xs)?);
            }
        }
        let [spatial, temporal] = traces;
        let fused = match (&spatial, &temporal, &self.fusion) {
            (Some(a), Some(b), Some(f)) => fuse(a.output(), b.output(), f)?,
            (Some(a), None, None) => a.output().clone(),
            (None, Some(b), None) => b.output().clone(),
            _ => return Err(invalid!("model streams and fusion are inconsistent")),
        };
        let logits = classify(&fused, &self.head)?;
        Ok(ModelTrace {
            spatial,
            temporal,
            fused,
            logits,
        })
    }

    pub fn logits(&self, input: &SequenceInput<'_>) -> Result<Tensor> {
        Ok(self.trace(input)?.logits)
    }

    pub fn predict(&self, input: &SequenceInput<'_>) -> Result<usize> {
        Ok(self.logits(input)?.argmax())
    }

    /// Cross-entropy loss, logits and gradients for one labelled sequence.
    pub fn loss_and_grad(
        &self,
        input: &SequenceInput<'_>,
        label: usize,
    ) -> Result<(f64, Tensor, GradStore<SequenceModel>)> {
        let tr = self.trace(input)?;
        let (loss, g_logits) = softmax_xent(&tr.logits, label)?;
        let mut grads = self.zeros_like();
        let hg = linear_backward(&tr.fused, &self.head.weight, &g_logits)?;
        grads.head.weight = hg.weight;
        grads.head.bias = hg.bias;
        let g_rep = hg.input;
        match (&tr.spatial, &tr.temporal, &self.fusion) {
            (Some(a), Some(b), Some(f)) => {
                let fg = fuse_backward(a.output(), b.output(), f, &g_rep)?;
                if let (Some(slot), Some(c)) = (grads.fusion.as_mut(), fg.conv) {
                    slot.conv = Some(c);
                }
                let (sa, ta) = (self.spatial.as_ref(), grads.spatial.as_mut());
                encode_backward(sa.expect("traced"), a, &fg.xa, ta.expect("same structure"))?;
                let (sb, tb) = (self.temporal.as_ref(), grads.temporal.as_mut());
                encode_backward(sb.expect("traced"), b, &fg.xb, tb.expect("same structure"))?;
            }
            (Some(a), None, _) => {
                let (s, t) = (self.spatial.as_ref(), grads.spatial.as_mut());
                encode_backward(s.expect("traced"), a, &g_rep, t.expect("same structure"))?;
            }
            (None, Some(b), _) => {
                let (s, t) = (self.temporal.as_ref(), grads.temporal.as_mut());
                encode_backward(s.expect("traced"), b, &g_rep, t.expect("same structure"))?;
            }
            _ => return Err(invalid!("model streams and fusion are inconsistent")),
        }
        Ok((loss, tr.logits, GradStore(grads)))
    }
}

impl ParamSet for SequenceModel {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for s in Stream::ALL {
            if let Some(e) = self.encoder(s) {
                out.extend(e.named(s.as_str()));
            }
        }
        if let Some(ConvFusion { filters, bias }) = self.fusion.as_ref().and_then(|f| f.conv.as_ref()) {
            out.push(("fusion.f".into(), filters));
            out.push(("fusion.b".into(), bias));
        }
        out.push(("head.w".into(), &self.head.weight));
        out.push(("head.b".into(), &self.head.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(e) = self.spatial.as_mut() {
            out.extend(e.tensors_mut());
        }
        if let Some(e) = self.temporal.as_mut() {
            out.extend(e.tensors_mut());
        }
        if let Some(c) = self.fusion.as_mut().and_then(|f| f.conv.as_mut()) {
            out.extend(c.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }
}
