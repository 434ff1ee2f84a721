//! Two-stage coupled training.
//!
//! Stage 1 trains one C3D network per stream on video units; when coupled,
//! every batch holds HIGH-derived and LOW units 1:1 and both go through the
//! one parameter set. Stage 2 trains the sequence model (GRU encoders,
//! fusion, head) on cached unit features with the same coupling. Testing
//! reads LOW features only.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use twostream_core::flow::{flow_clip, FlowParams};
use twostream_core::fusion::FusionKind;
use twostream_core::metrics::{ConfusionMatrix, EpochLog, RunReport};
use twostream_core::model::{GruVariant, SequenceInput, SequenceModel, Stream, Streams, TrainConfig};
use twostream_core::nn::{c3d_forward, c3d_loss_and_grad, C3dParams, C3dSpec};
use twostream_core::optim::{rmsprop_step, RmspropState};
use twostream_core::params::{reduce_in_order, GradStore, ParamSet};
use twostream_core::rng::seeded;
use twostream_core::synth::{
    clip_id, clip_stem, render_clip, split, DatasetManifest, ManifestEntry, SplitTag, SynthSpec,
};
use twostream_core::video::{frames_to_tensor, make_lr_clip, resize_to_net, unit_count, Resolution, VideoClip};
use twostream_core::Tensor;

use crate::checkpoint::{params_hash, Checkpoint};
use crate::error::{Error, Result};
use crate::parallel::try_par_map;

/// Frames per video unit.
pub const UNIT_LEN: usize = 16;

pub(crate) fn invalid(message: impl Into<String>) -> Error {
    Error::Core(twostream_core::Error::InvalidArgument(message.into()))
}

/// Network-size inputs of one clip: RGB and flow images at HIGH and LOW
/// resolution, as far as they were loaded.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub stem: String,
    pub label: usize,
    variants: HashMap<(Stream, Resolution), VideoClip>,
}

impl PreparedClip {
    pub fn new(stem: impl Into<String>, label: usize) -> Self {
        Self {
            stem: stem.into(),
            label,
            variants: HashMap::new(),
        }
    }

    /// Derives all four inputs from a HIGH clip at canvas size.
    pub fn from_high(stem: &str, high: &VideoClip, flow: &FlowParams) -> Result<Self> {
        let hi = resize_to_net(high)?;
        let mut lo = make_lr_clip(high)?;
        lo.source_id = clip_id(stem, Resolution::Low);
        let mut out = Self::new(stem, high.label);
        out.insert(Stream::Temporal, flow_clip(&hi, flow)?);
        out.insert(Stream::Temporal, flow_clip(&lo, flow)?);
        out.insert(Stream::Spatial, hi);
        out.insert(Stream::Spatial, lo);
        Ok(out)
    }

    pub fn insert(&mut self, stream: Stream, clip: VideoClip) {
        self.variants.insert((stream, clip.resolution), clip);
    }

    pub fn get(&self, stream: Stream, res: Resolution) -> Result<&VideoClip> {
        self.variants.get(&(stream, res)).ok_or_else(|| {
            invalid(format!(
                "clip {} has no {} {} input",
                self.stem,
                res.as_str(),
                stream.as_str()
            ))
        })
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub class_names: Vec<String>,
    pub clips: Vec<PreparedClip>,
}

/// Clip indices of a train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl PreparedData {
    /// Renders `spec` and derives every network input in memory.
    pub fn render(spec: &SynthSpec, flow: &FlowParams, threads: usize) -> Result<Self> {
        spec.validate()?;
        let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
            .flat_map(|c| (0..spec.clips_per_class).map(move |i| (c, i)))
            .collect();
        let clips = try_par_map(&jobs, threads, |&(c, i)| {
            let class = spec.classes[c];
            let high = render_clip(spec, class, i)?;
            PreparedClip::from_high(&clip_stem(class, i), &high, flow)
        })?;
        Ok(Self {
            class_names: spec.class_names(),
            clips,
        })
    }

    /// HIGH and LOW entries of every clip, unsplit.
    pub fn manifest(&self) -> DatasetManifest {
        let entries = self
            .clips
            .iter()
            .flat_map(|c| {
                [Resolution::High, Resolution::Low].map(|res| {
                    let id = clip_id(&c.stem, res);
                    ManifestEntry {
                        path: format!("clips/{}", id),
                        clip_id: id,
                        label: c.label,
                        split: SplitTag::All,
                        resolution: res,
                    }
                })
            })
            .collect();
        DatasetManifest { entries }
    }

    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Split> {
        let (train, _) = split(&self.manifest(), train_fraction, seed)?;
        Ok(self.split_from(&train))
    }

    /// Clips whose stem appears in `train` go to training, the rest to test.
    pub fn split_from(&self, train: &DatasetManifest) -> Split {
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, c) in self.clips.iter().enumerate() {
            if train.entries.iter().any(|e| e.stem() == c.stem) {
                tr.push(i);
            } else {
                te.push(i);
            }
        }
        Split { train: tr, test: te }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Frames `[16·index, 16·index + 16)` of a clip as a `[3, 16, H, W]` tensor,
/// the last frame repeated past the end.
pub fn unit_tensor(clip: &VideoClip, index: usize) -> Tensor {
    let frames = clip.frames();
    let picked: Vec<_> = (0..UNIT_LEN)
        .map(|k| frames[(index * UNIT_LEN + k).min(frames.len() - 1)].clone())
        .collect();
    frames_to_tensor(&picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub threads: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl RunOptions {
    pub fn threads(threads: usize) -> Self {
        Self {
            threads,
            max_steps: None,
        }
    }
}

/// What the HIGH and LOW paths of one optimizer step read.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Address of the parameter set the optimizer updates.
    pub params_addr: usize,
    pub hr_addrs: Vec<usize>,
    pub lr_addrs: Vec<usize>,
    /// Hash of the parameters as the first HIGH / LOW sample saw them.
    pub hr_snapshot: Option<String>,
    pub lr_snapshot: Option<String>,
}

impl StepRecord {
    /// Every sample of the step read the optimizer's parameter set.
    pub fn shared(&self) -> bool {
        self.hr_addrs.iter().chain(&self.lr_addrs).all(|&a| a == self.params_addr)
            && (self.hr_snapshot.is_none() || self.lr_snapshot.is_none() || self.hr_snapshot == self.lr_snapshot)
    }
}

/// Optional per-step instrumentation of a training run.
#[derive(Debug, Clone, Default)]
pub struct CouplingProbe {
    /// Also hash the parameters seen by each path (slow for large nets).
    pub snapshots: bool,
    pub records: Vec<StepRecord>,
}

struct Sample<'a, S> {
    item: &'a S,
    high: bool,
    first_of_kind: bool,
}

/// One prediction and its gradient.
pub(crate) struct SampleResult<P: ParamSet> {
    loss: f64,
    correct: bool,
    grads: GradStore<P>,
}

/// Shuffled 1:1 HIGH/LOW batches (LOW only when `hr` is empty).
fn plan_batches(n_lr: usize, n_hr: usize, batch: usize, rng: &mut impl rand::Rng) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut lr: Vec<usize> = (0..n_lr).collect();
    let mut hr: Vec<usize> = (0..n_hr).collect();
    lr.shuffle(rng);
    hr.shuffle(rng);
    if n_hr == 0 {
        return lr.chunks(batch).map(|c| (c.to_vec(), Vec::new())).collect();
    }
    let half = (batch / 2).max(1);
    let steps = n_lr.max(n_hr).div_ceil(half);
    (0..steps)
        .map(|k| {
            let take = |v: &[usize]| v.iter().skip(k * half).take(half).copied().collect::<Vec<_>>();
            (take(&lr), take(&hr))
        })
        .collect()
}

/// Shared optimizer loop of both stages. `lr` and `hr` are the LOW and
/// HIGH-derived samples; `eval` returns loss, correctness and gradients of
/// one sample under the given parameters.
#[allow(clippy::too_many_arguments)]
fn train_loop<P, S, F>(
    params: &mut P,
    lr: &[S],
    hr: &[S],
    cfg: &TrainConfig,
    epochs: usize,
    rng_stream: u64,
    opts: &RunOptions,
    mut probe: Option<&mut CouplingProbe>,
    eval: F,
) -> Result<Vec<EpochLog>>
where
    P: ParamSet + Send + Sync,
    S: Sync,
    F: Fn(&P, &S) -> Result<SampleResult<P>> + Sync,
{
    if lr.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let rms = cfg.rmsprop();
    let mut state = RmspropState::new(params);
    let mut rng = seeded(cfg.seed, rng_stream);
    let snapshots = probe.as_ref().is_some_and(|p| p.snapshots);
    let mut logs = Vec::new();
    let mut step = 0usize;
    'epochs: for epoch in 1..=epochs {
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (lr_idx, hr_idx) in plan_batches(lr.len(), hr.len(), cfg.batch_size, &mut rng) {
            if opts.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<Sample<'_, S>> = hr_idx
                .iter()
                .enumerate()
                .map(|(k, &i)| Sample { item: &hr[i], high: true, first_of_kind: k == 0 })
                .chain(lr_idx.iter().enumerate().map(|(k, &i)| Sample {
                    item: &lr[i],
                    high: false,
                    first_of_kind: k == 0,
                }))
                .collect();
            let shared: &P = params;
            let results = try_par_map(&batch, opts.threads, |s| {
                let p: &P = shared;
                let addr = std::ptr::from_ref(p) as usize;
                let snap = (snapshots && s.first_of_kind).then(|| params_hash(p));
                eval(p, s.item).map(|r| (r, addr, snap))
            })?;

            let record = StepRecord {
                step,
                params_addr: std::ptr::from_ref(shared) as usize,
                hr_addrs: results.iter().zip(&batch).filter(|(_, s)| s.high).map(|(r, _)| r.1).collect(),
                lr_addrs: results.iter().zip(&batch).filter(|(_, s)| !s.high).map(|(r, _)| r.1).collect(),
                hr_snapshot: results.iter().zip(&batch).find(|(_, s)| s.high).and_then(|(r, _)| r.2.clone()),
                lr_snapshot: results.iter().zip(&batch).find(|(_, s)| !s.high).and_then(|(r, _)| r.2.clone()),
            };
            if !record.shared() {
                return Err(invalid(format!("step {}: HIGH and LOW paths read different parameters", step)));
            }
            if let Some(p) = probe.as_deref_mut() {
                p.records.push(record);
            }

            let mut grads = Vec::with_capacity(results.len());
            for (r, _, _) in results {
                loss_sum += r.loss;
                correct += r.correct as usize;
                seen += 1;
                grads.push(r.grads);
            }
            let total = reduce_in_order(&*params, &grads, 1.0 / grads.len() as f64)?;
            rmsprop_step(params, &total, &mut state, &rms)?;
            step += 1;
        }
        logs.push(EpochLog {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            accuracy: correct as f64 / seen.max(1) as f64,
        });
    }
    Ok(logs)
}

/// Reference to one unit of one clip variant.
#[derive(Debug, Clone, Copy)]
struct UnitRef<'a> {
    clip: &'a VideoClip,
    unit: usize,
    label: usize,
}

fn units_of(clip: &VideoClip) -> impl Iterator<Item = UnitRef<'_>> {
    (0..unit_count(clip.len(), UNIT_LEN)).map(move |unit| UnitRef {
        clip,
        unit,
        label: clip.label,
    })
}

fn stream_code(stream: Stream) -> u64 {
    match stream {
        Stream::Spatial => 1,
        Stream::Temporal => 2,
    }
}

#[derive(Debug, Clone)]
pub struct C3dStage {
    pub params: C3dParams,
    pub log: Vec<EpochLog>,
}

/// Stage 1 for one stream over the clips at `train`.
pub fn train_c3d_stage(
    data: &PreparedData,
    train: &[usize],
    stream: Stream,
    cfg: &TrainConfig,
    opts: &RunOptions,
    probe: Option<&mut CouplingProbe>,
) -> Result<C3dStage> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("stage 1 needs at least one training clip"));
    }
    let mut lr = Vec::new();
    let mut hr = Vec::new();
    for &i in train {
        let c = &data.clips[i];
        lr.extend(units_of(c.get(stream, Resolution::Low)?));
        if cfg.coupled {
            hr.extend(units_of(c.get(stream, Resolution::High)?));
        }
    }
    let spec = C3dSpec::preset(cfg.preset, data.num_classes());
    let mut params = C3dParams::init(&spec, &mut seeded(cfg.seed, 0xc3d0 + stream_code(stream)))?;
    let log = train_loop(
        &mut params,
        &lr,
        &hr,
        cfg,
        cfg.epochs,
        0xc3d8 + stream_code(stream),
        opts,
        probe,
        |p, u| {
            let (loss, logits, grads) = c3d_loss_and_grad(&unit_tensor(u.clip, u.unit), u.label, p)?;
            Ok(SampleResult {
                loss,
                correct: logits.argmax() == u.label,
                grads,
            })
        },
    )?;
    Ok(C3dStage { params, log })
}

/// Unit-feature sequences of one stream, keyed by clip id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub stream: Stream,
    pub sequences: BTreeMap<String, Vec<Tensor>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExtractStats {
    pub computed: usize,
    pub cached: usize,
}

pub fn feature_cache_path(dir: &Path, stream: Stream, params: &C3dParams) -> PathBuf {
    dir.join(format!("features-{}-{}.ckpt", stream.as_str(), params_hash(params)))
}

fn feature_key(id: &str, t: usize) -> String {
    format!("feat.{}.{}", id, t + 1)
}

fn read_feature_cache(path: &Path) -> Result<BTreeMap<String, Vec<Tensor>>> {
    let ck = Checkpoint::load(path)?;
    let mut out: BTreeMap<String, Vec<(usize, Tensor)>> = BTreeMap::new();
    for name in ck.names() {
        let (id, t) = name
            .strip_prefix("feat.")
            .and_then(|r| r.rsplit_once('.'))
            .and_then(|(id, t)| t.parse::<usize>().ok().map(|t| (id, t)))
            .ok_or_else(|| Error::format(path, format!("unexpected tensor {} in feature cache", name)))?;
        let tensor = ck.get(name).expect("listed name").clone();
        out.entry(id.to_string()).or_default().push((t, tensor));
    }
    out.into_iter()
        .map(|(id, mut v)| {
            v.sort_by_key(|(t, _)| *t);
            if v.iter().enumerate().any(|(k, (t, _))| *t != k + 1) {
                return Err(Error::format(path, format!("feature sequence of {} has gaps", id)));
            }
            Ok((id, v.into_iter().map(|(_, t)| t).collect()))
        })
        .collect()
}

/// Reads a feature cache written by [`extract_features`].
pub fn load_features(path: &Path, stream: Stream) -> Result<FeatureSet> {
    Ok(FeatureSet {
        stream,
        sequences: read_feature_cache(path)?,
    })
}

/// fc6 features of every unit of every clip, rounded to `f32`. With a
/// cache directory, sequences already stored under the parameters' hash
/// are reused and new ones are added to the file.
pub fn extract_features(
    clips: &[(String, &VideoClip)],
    params: &C3dParams,
    stream: Stream,
    cache_dir: Option<&Path>,
    threads: usize,
) -> Result<(FeatureSet, ExtractStats)> {
    let cache_path = cache_dir.map(|d| feature_cache_path(d, stream, params));
    let mut sequences = match &cache_path {
        Some(p) if p.exists() => read_feature_cache(p)?,
        _ => BTreeMap::new(),
    };
    let mut stats = ExtractStats::default();
    let mut todo = Vec::new();
    for (id, clip) in clips {
        if sequences.contains_key(id) {
            stats.cached += 1;
        } else {
            todo.push((id.clone(), *clip));
        }
    }
    let fresh = try_par_map(&todo, threads, |(id, clip)| {
        let seq = units_of(clip)
            .map(|u| {
                let (mut f, _) = c3d_forward(&unit_tensor(u.clip, u.unit), params)?;
                f.round_to_f32();
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, Error>((id.clone(), seq))
    })?;
    stats.computed = fresh.len();
    sequences.extend(fresh);
    if let (Some(path), true) = (&cache_path, stats.computed > 0) {
        let mut ck = Checkpoint::new();
        for (id, seq) in &sequences {
            for (t, f) in seq.iter().enumerate() {
                ck.insert(feature_key(id, t), f);
            }
        }
        ck.save(path)?;
    }
    let wanted: Vec<&String> = clips.iter().map(|(id, _)| id).collect();
    sequences.retain(|id, _| wanted.contains(&id));
    Ok((FeatureSet { stream, sequences }, stats))
}

/// Feature sequences of both streams with a counter of HIGH-resolution
/// lookups.
#[derive(Debug)]
pub struct FeatureStore {
    spatial: Option<FeatureSet>,
    temporal: Option<FeatureSet>,
    high_reads: AtomicUsize,
}

impl FeatureStore {
    pub fn new(spatial: Option<FeatureSet>, temporal: Option<FeatureSet>) -> Self {
        Self {
            spatial,
            temporal,
            high_reads: AtomicUsize::new(0),
        }
    }

    pub fn set(&self, stream: Stream) -> Option<&FeatureSet> {
        match stream {
            Stream::Spatial => self.spatial.as_ref(),
            Stream::Temporal => self.temporal.as_ref(),
        }
    }

    pub fn sequence(&self, stream: Stream, stem: &str, res: Resolution) -> Result<&[Tensor]> {
        if res == Resolution::High {
            self.high_reads.fetch_add(1, Ordering::Relaxed);
        }
        let id = clip_id(stem, res);
        self.set(stream)
            .and_then(|s| s.sequences.get(&id))
            .map(Vec::as_slice)
            .ok_or_else(|| invalid(format!("no {} features for clip {}", stream.as_str(), id)))
    }

    /// HIGH-resolution lookups so far.
    pub fn high_reads(&self) -> usize {
        self.high_reads.load(Ordering::Relaxed)
    }

    fn feature_dim(&self, streams: Streams) -> Result<usize> {
        let dims: Vec<usize> = streams
            .members()
            .into_iter()
            .filter_map(|s| self.set(s))
            .filter_map(|s| s.sequences.values().flatten().next().map(Tensor::len))
            .collect();
        match dims.as_slice() {
            [d] => Ok(*d),
            [a, b] if a == b => Ok(*a),
            [_, _] => Err(invalid("spatial and temporal features differ in width")),
            _ => Err(invalid(format!("no features loaded for streams={}", streams.as_str()))),
        }
    }

    fn input<'a>(&'a self, streams: Streams, stem: &str, res: Resolution) -> Result<SequenceInput<'a>> {
        let get = |s: Stream| -> Result<&'a [Tensor]> {
            if streams.uses(s) {
                self.sequence(s, stem, res)
            } else {
                Ok(&[])
            }
        };
        let input = SequenceInput {
            spatial: get(Stream::Spatial)?,
            temporal: get(Stream::Temporal)?,
        };
        if streams == Streams::Both && input.spatial.len() != input.temporal.len() {
            return Err(invalid(format!(
                "clip {} has {} spatial but {} temporal features",
                clip_id(stem, res),
                input.spatial.len(),
                input.temporal.len()
            )));
        }
        Ok(input)
    }
}

/// A clip as stage 2 sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqSample {
    pub stem: String,
    pub label: usize,
}

impl SeqSample {
    pub fn of(data: &PreparedData, indices: &[usize]) -> Vec<SeqSample> {
        indices
            .iter()
            .map(|&i| SeqSample {
                stem: data.clips[i].stem.clone(),
                label: data.clips[i].label,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SequenceStage {
    pub model: SequenceModel,
    pub log: Vec<EpochLog>,
}

#[derive(Clone, Copy)]
struct SeqRef<'a> {
    sample: &'a SeqSample,
    res: Resolution,
}

/// Stage 2: sequence model on cached features of the training clips.
pub fn train_twostream_stage(
    store: &FeatureStore,
    train: &[SeqSample],
    num_classes: usize,
    cfg: &TrainConfig,
    opts: &RunOptions,
    probe: Option<&mut CouplingProbe>,
) -> Result<SequenceStage> {
    cfg.validate()?;
    let lr: Vec<SeqRef<'_>> = train.iter().map(|sample| SeqRef { sample, res: Resolution::Low }).collect();
    let hr: Vec<SeqRef<'_>> = if cfg.coupled {
        train.iter().map(|sample| SeqRef { sample, res: Resolution::High }).collect()
    } else {
        Vec::new()
    };
    for s in lr.iter().chain(&hr) {
        store.input(cfg.streams, &s.sample.stem, s.res)?;
    }
    let feature_dim = store.feature_dim(cfg.streams)?;
    let mut model = SequenceModel::init(cfg.sequence_config(feature_dim, num_classes), cfg.seed)?;
    let log = train_loop(
        &mut model,
        &lr,
        &hr,
        cfg,
        cfg.fusion_epochs,
        0x5e92,
        opts,
        probe,
        |m, s| {
            let input = store.input(cfg.streams, &s.sample.stem, s.res)?;
            let (loss, logits, grads) = m.loss_and_grad(&input, s.sample.label)?;
            Ok(SampleResult {
                loss,
                correct: logits.argmax() == s.sample.label,
                grads,
            })
        },
    )?;
    Ok(SequenceStage { model, log })
}

/// Accuracy and confusion matrix on LOW-resolution test features. The
/// report's epoch log is left empty.
pub fn evaluate(model: &SequenceModel, store: &FeatureStore, test: &[SeqSample], class_names: &[String]) -> Result<RunReport> {
    if test.is_empty() {
        return Err(invalid("test set is empty"));
    }
    let mut confusion = ConfusionMatrix::new(class_names.len());
    for s in test {
        let input = store.input(model.config.streams, &s.stem, Resolution::Low)?;
        confusion.record(s.label, model.predict(&input)?)?;
    }
    Ok(RunReport::new(class_names.to_vec(), Vec::new(), confusion))
}

/// Clip ids (with clips) whose features a split needs: HIGH and LOW of
/// training clips when coupled, LOW of everything else.
pub fn feature_inputs<'a>(
    data: &'a PreparedData,
    split: &Split,
    stream: Stream,
    coupled: bool,
) -> Result<Vec<(String, &'a VideoClip)>> {
    let mut out = Vec::new();
    for &i in &split.train {
        let c = &data.clips[i];
        if coupled {
            out.push((clip_id(&c.stem, Resolution::High), c.get(stream, Resolution::High)?));
        }
        out.push((clip_id(&c.stem, Resolution::Low), c.get(stream, Resolution::Low)?));
    }
    for &i in &split.test {
        let c = &data.clips[i];
        out.push((clip_id(&c.stem, Resolution::Low), c.get(stream, Resolution::Low)?));
    }
    Ok(out)
}

/// One cell of an ablation grid, applied on top of a base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub streams: Streams,
    pub gru: GruVariant,
    pub fusion: FusionKind,
}

impl GridCell {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            streams: self.streams,
            gru_direction: self.gru,
            fusion_kind: self.fusion,
            ..base.clone()
        }
    }
}

/// Grid file: the seeds every cell is trained with, and the cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub seeds: Vec<u64>,
    pub cell: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: GridCell,
    /// Test accuracy per seed, in grid seed order.
    pub accuracies: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }

    pub fn median(&self) -> f64 {
        let mut v = self.accuracies.clone();
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => 0.0,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }
}

/// Outcome of one seed of one grid cell.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub seed: u64,
    pub cell: GridCell,
    pub report: RunReport,
    /// HIGH-resolution feature lookups made while evaluating.
    pub eval_high_reads: usize,
}

/// Stage-1 networks and features of one seed, shared by all grid cells.
pub struct SeedContext {
    pub split: Split,
    pub c3d: BTreeMap<&'static str, C3dStage>,
    pub store: FeatureStore,
}

/// Splits with `cfg.seed`, then trains and extracts every stream in
/// `streams`.
pub fn prepare_seed(
    data: &PreparedData,
    cfg: &TrainConfig,
    train_fraction: f64,
    streams: &[Stream],
    opts: &RunOptions,
) -> Result<SeedContext> {
    let split = data.split(train_fraction, cfg.seed)?;
    let mut c3d = BTreeMap::new();
    let mut sets = [None, None];
    for &s in streams {
        let stage = train_c3d_stage(data, &split.train, s, cfg, opts, None)?;
        let inputs = feature_inputs(data, &split, s, cfg.coupled)?;
        let (set, _) = extract_features(&inputs, &stage.params, s, None, opts.threads)?;
        sets[stream_code(s) as usize - 1] = Some(set);
        c3d.insert(s.as_str(), stage);
    }
    let [spatial, temporal] = sets;
    Ok(SeedContext {
        split,
        c3d,
        store: FeatureStore::new(spatial, temporal),
    })
}

/// Stage 2 and evaluation of one cell on a prepared seed.
pub fn run_cell(
    data: &PreparedData,
    ctx: &SeedContext,
    cell: GridCell,
    base: &TrainConfig,
    opts: &RunOptions,
) -> Result<CellRun> {
    let cfg = cell.apply(base);
    let stage = train_twostream_stage(
        &ctx.store,
        &SeqSample::of(data, &ctx.split.train),
        data.num_classes(),
        &cfg,
        opts,
        None,
    )?;
    let before = ctx.store.high_reads();
    let mut report = evaluate(&stage.model, &ctx.store, &SeqSample::of(data, &ctx.split.test), &data.class_names)?;
    let eval_high_reads = ctx.store.high_reads() - before;
    report.epochs = stage.log;
    Ok(CellRun {
        seed: cfg.seed,
        cell,
        report,
        eval_high_reads,
    })
}

/// Every cell of `grid` for every seed; stage 1 runs once per seed and
/// stream. Returns the table and the individual runs.
pub fn ablation_run(
    data: &PreparedData,
    grid: &AblationGrid,
    base: &TrainConfig,
    train_fraction: f64,
    opts: &RunOptions,
) -> Result<(Vec<AblationRow>, Vec<CellRun>)> {
    if grid.cell.is_empty() || grid.seeds.is_empty() {
        return Err(invalid("ablation grid needs at least one cell and one seed"));
    }
    let streams: Vec<Stream> = Stream::ALL
        .into_iter()
        .filter(|&s| grid.cell.iter().any(|c| c.streams.uses(s)))
        .collect();
    let mut rows: Vec<AblationRow> = grid
        .cell
        .iter()
        .map(|&cell| AblationRow {
            cell,
            accuracies: Vec::new(),
        })
        .collect();
    let mut runs = Vec::new();
    for &seed in &grid.seeds {
        let cfg = TrainConfig { seed, ..base.clone() };
        let ctx = prepare_seed(data, &cfg, train_fraction, &streams, opts)?;
        for row in rows.iter_mut() {
            let run = run_cell(data, &ctx, row.cell, &cfg, opts)?;
            row.accuracies.push(run.report.test_accuracy);
            runs.push(run);
        }
    }
    Ok((rows, runs))
}

/// `stream,gru,fusion,accuracy_mean,accuracy_per_seed` with per-seed
/// accuracies joined by `;`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("stream,gru,fusion,accuracy_mean,accuracy_per_seed\n");
    for r in rows {
        let per_seed: Vec<String> = r.accuracies.iter().map(|a| format!("{:.6}", a)).collect();
        out.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            r.cell.streams.as_str(),
            r.cell.gru.as_str(),
            r.cell.fusion.as_str(),
            r.mean(),
            per_seed.join(";")
        ));
    }
    out
}
