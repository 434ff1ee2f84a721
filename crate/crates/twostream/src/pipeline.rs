//! On-disk pipeline under one work directory:
//!
//! ```text
//! config.toml                     resolved run configuration
//! manifest.tsv                    dataset manifest
//! clips/<clip_id>/00001.png …     HIGH clips at canvas size, LOW at 112×112
//! flow/<clip_id>/00001.png …      HSL flow images at 112×112
//! checkpoints/c3d-<stream>.ckpt   stage-1 networks
//! checkpoints/twostream.ckpt      stage-2 sequence model
//! cache/features-<stream>-<hash>.ckpt
//! reports/                        logs, run report, confusion CSV, ablation CSV
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use twostream_core::model::{Stream, Streams, TrainConfig};
use twostream_core::synth::{clip_id, render_clip, split, DatasetManifest, ManifestEntry, SplitTag};
use twostream_core::video::{make_lr_clip, resize_to_net, Resolution};

use crate::checkpoint::{
    c3d_checkpoint, c3d_from_checkpoint, model_checkpoint, model_from_checkpoint, Checkpoint,
};
use crate::config::RunConfig;
use crate::coupler::{
    ablation_csv, ablation_run, evaluate, extract_features, feature_cache_path, feature_inputs, invalid,
    load_features, train_c3d_stage, train_twostream_stage, AblationGrid, AblationRow, C3dStage, ExtractStats,
    FeatureStore, PreparedClip, PreparedData, RunOptions, SeqSample, SequenceStage,
};
use crate::error::{Error, IoContext, Result};
use crate::frames_io::{read_clip, write_clip};
use crate::manifest;
use crate::parallel::try_par_map;
use crate::report::{confusion_csv, load_epochs, save_epochs, save_report, summary_text};
use twostream_core::flow::flow_clip;
use twostream_core::metrics::RunReport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.tsv")
    }

    pub fn clip_dir(&self, id: &str) -> PathBuf {
        self.root.join("clips").join(id)
    }

    pub fn flow_dir(&self, id: &str) -> PathBuf {
        self.root.join("flow").join(id)
    }

    pub fn c3d_checkpoint(&self, stream: Stream) -> PathBuf {
        self.root.join("checkpoints").join(format!("c3d-{}.ckpt", stream.as_str()))
    }

    pub fn model_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("twostream.ckpt")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }

    fn ensure_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)
    }
}

/// Reads the manifest and checks it was generated from `cfg.data`.
pub fn read_manifest(wd: &Workdir, cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = wd.manifest();
    let (m, hash) = manifest::read(&path)?;
    if hash != manifest::spec_hash(&cfg.data) {
        return Err(Error::Config(format!(
            "{} was generated from a different [data] section; re-run synth",
            path.display()
        )));
    }
    let classes = cfg.data.classes.len();
    if let Some(e) = m.entries.iter().find(|e| e.label >= classes) {
        return Err(Error::format(&path, format!("clip {} has label {} but only {} classes exist", e.clip_id, e.label, classes)));
    }
    Ok(m)
}

/// Renders the HIGH clips, splits them and writes the manifest and the
/// resolved configuration.
pub fn synth(wd: &Workdir, cfg: &RunConfig, threads: usize) -> Result<DatasetManifest> {
    cfg.validate()?;
    let spec = &cfg.data;
    let (train, test) = split(&DatasetManifest::for_spec(spec), cfg.train.train_fraction, cfg.train.seed)?;
    let split_of: BTreeMap<String, SplitTag> = train
        .entries
        .iter()
        .chain(&test.entries)
        .map(|e| (e.clip_id.clone(), e.split))
        .collect();
    let mut m = DatasetManifest::for_spec(spec);
    m.entries.retain(|e| e.resolution == Resolution::High);
    for e in m.entries.iter_mut() {
        e.split = split_of[&e.clip_id];
    }
    wd.ensure_dir(wd.root())?;
    try_par_map(&m.entries, threads, |e| {
        let class = spec.classes[e.label];
        let index: usize = e.stem().rsplit('_').next().and_then(|n| n.parse().ok()).expect("stem ends in an index");
        let clip = render_clip(spec, class, index)?;
        write_clip(&wd.root.join(&e.path), &clip)
    })?;
    manifest::write(&wd.manifest(), &m, &manifest::spec_hash(spec))?;
    cfg.save(&wd.config())?;
    Ok(m)
}

/// Writes the LOW sibling of every HIGH clip and lists it in the manifest.
pub fn preprocess(wd: &Workdir, cfg: &RunConfig, threads: usize) -> Result<DatasetManifest> {
    let m = read_manifest(wd, cfg)?;
    let highs: Vec<ManifestEntry> = m.entries.iter().filter(|e| e.resolution == Resolution::High).cloned().collect();
    let lows = try_par_map(&highs, threads, |e| {
        let high = read_clip(&wd.root.join(&e.path), e.label, Resolution::High, &e.clip_id)?;
        let id = clip_id(e.stem(), Resolution::Low);
        let low = make_lr_clip(&high)?;
        let path = format!("clips/{}", id);
        write_clip(&wd.root.join(&path), &low)?;
        Ok::<_, Error>(ManifestEntry {
            clip_id: id,
            label: e.label,
            path,
            split: e.split,
            resolution: Resolution::Low,
        })
    })?;
    let mut out = DatasetManifest::default();
    for (h, l) in highs.into_iter().zip(lows) {
        out.entries.push(h);
        out.entries.push(l);
    }
    manifest::write(&wd.manifest(), &out, &manifest::spec_hash(&cfg.data))?;
    Ok(out)
}

/// Flow images of every clip in the manifest (HIGH clips are first
/// brought to network size).
pub fn flow(wd: &Workdir, cfg: &RunConfig, threads: usize) -> Result<usize> {
    let m = read_manifest(wd, cfg)?;
    manifest::check_paths(&m, wd.root())?;
    try_par_map(&m.entries, threads, |e| {
        let clip = read_clip(&wd.root.join(&e.path), e.label, e.resolution, &e.clip_id)?;
        let net = resize_to_net(&clip)?;
        write_clip(&wd.flow_dir(&e.clip_id), &flow_clip(&net, &cfg.flow)?)
    })?;
    Ok(m.len())
}

/// Loads the network inputs `want` asks for, per manifest entry.
fn load_inputs<F>(wd: &Workdir, cfg: &RunConfig, m: &DatasetManifest, threads: usize, want: F) -> Result<PreparedData>
where
    F: Fn(&ManifestEntry) -> Vec<Stream> + Sync,
{
    let jobs: Vec<(&ManifestEntry, Stream)> = m
        .entries
        .iter()
        .flat_map(|e| want(e).into_iter().map(move |s| (e, s)))
        .collect();
    let loaded = try_par_map(&jobs, threads, |&(e, s)| {
        let dir = match s {
            Stream::Spatial => wd.root.join(&e.path),
            Stream::Temporal => wd.flow_dir(&e.clip_id),
        };
        let clip = read_clip(&dir, e.label, e.resolution, &e.clip_id)?;
        Ok::<_, Error>(resize_to_net(&clip)?)
    })?;
    let mut order: Vec<String> = Vec::new();
    let mut clips: BTreeMap<String, PreparedClip> = BTreeMap::new();
    for ((e, s), clip) in jobs.iter().zip(loaded) {
        let stem = e.stem().to_string();
        if !clips.contains_key(&stem) {
            order.push(stem.clone());
        }
        clips
            .entry(stem.clone())
            .or_insert_with(|| PreparedClip::new(stem, e.label))
            .insert(*s, clip);
    }
    Ok(PreparedData {
        class_names: cfg.data.class_names(),
        clips: order.into_iter().map(|s| clips.remove(&s).expect("collected")).collect(),
    })
}

fn train_manifest(m: &DatasetManifest) -> DatasetManifest {
    DatasetManifest {
        entries: m.with_split(SplitTag::Train).into_iter().cloned().collect(),
    }
}

/// Stage 1 for one stream on the manifest's training split.
pub fn train_c3d(wd: &Workdir, cfg: &RunConfig, stream: Stream, threads: usize) -> Result<C3dStage> {
    cfg.validate()?;
    let tc = cfg.train_config();
    let m = read_manifest(wd, cfg)?;
    let data = load_inputs(wd, cfg, &m, threads, |e| {
        let used = e.split == SplitTag::Train && (e.resolution == Resolution::Low || tc.coupled);
        if used {
            vec![stream]
        } else {
            Vec::new()
        }
    })?;
    let split = data.split_from(&train_manifest(&m));
    let stage = train_c3d_stage(&data, &split.train, stream, &tc, &RunOptions::threads(threads), None)?;
    c3d_checkpoint(&stage.params).save(&wd.c3d_checkpoint(stream))?;
    wd.ensure_dir(&wd.reports())?;
    save_epochs(&wd.report(&format!("c3d-{}-log.toml", stream.as_str())), &stage.log)?;
    Ok(stage)
}

fn load_c3d(wd: &Workdir, stream: Stream) -> Result<twostream_core::nn::C3dParams> {
    let path = wd.c3d_checkpoint(stream);
    if !path.exists() {
        return Err(Error::format(&path, format!("no {} network; run train-c3d --stream {} first", stream.as_str(), stream.as_str())));
    }
    c3d_from_checkpoint(&Checkpoint::load(&path)?, &path)
}

/// Feature caches for `streams`; already cached clips are not recomputed.
pub fn extract(wd: &Workdir, cfg: &RunConfig, streams: &[Stream], threads: usize) -> Result<Vec<(Stream, ExtractStats)>> {
    let coupled = cfg.train.coupled;
    let m = read_manifest(wd, cfg)?;
    let mut out = Vec::new();
    for &stream in streams {
        let params = load_c3d(wd, stream)?;
        let data = load_inputs(wd, cfg, &m, threads, |e| {
            let used = e.resolution == Resolution::Low || (coupled && e.split == SplitTag::Train);
            if used {
                vec![stream]
            } else {
                Vec::new()
            }
        })?;
        let split = data.split_from(&train_manifest(&m));
        let inputs = feature_inputs(&data, &split, stream, coupled)?;
        let (_, stats) = extract_features(&inputs, &params, stream, Some(&wd.cache()), threads)?;
        out.push((stream, stats));
    }
    Ok(out)
}

fn load_store(wd: &Workdir, streams: Streams) -> Result<FeatureStore> {
    let mut sets = BTreeMap::new();
    for s in streams.members() {
        let path = feature_cache_path(&wd.cache(), s, &load_c3d(wd, s)?);
        if !path.exists() {
            return Err(Error::format(&path, format!("no cached {} features; run extract first", s.as_str())));
        }
        sets.insert(s.as_str(), load_features(&path, s)?);
    }
    Ok(FeatureStore::new(sets.remove("spatial"), sets.remove("temporal")))
}

fn samples(m: &DatasetManifest, tag: SplitTag) -> Vec<SeqSample> {
    m.entries
        .iter()
        .filter(|e| e.split == tag && e.resolution == Resolution::Low)
        .map(|e| SeqSample {
            stem: e.stem().to_string(),
            label: e.label,
        })
        .collect()
}

/// Stage 2 on the cached features of the training split.
pub fn train_fusion(wd: &Workdir, cfg: &RunConfig, threads: usize) -> Result<SequenceStage> {
    cfg.validate()?;
    let tc: TrainConfig = cfg.train_config();
    let m = read_manifest(wd, cfg)?;
    let store = load_store(wd, tc.streams)?;
    let stage = train_twostream_stage(
        &store,
        &samples(&m, SplitTag::Train),
        cfg.data.classes.len(),
        &tc,
        &RunOptions::threads(threads),
        None,
    )?;
    model_checkpoint(&stage.model).save(&wd.model_checkpoint())?;
    wd.ensure_dir(&wd.reports())?;
    save_epochs(&wd.report("fusion-log.toml"), &stage.log)?;
    Ok(stage)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: RunReport,
    /// HIGH-resolution feature lookups during evaluation.
    pub high_reads: usize,
}

/// Evaluates a sequence-model checkpoint on the LOW test clips and writes
/// `run_report.toml`, `summary.txt` and `confusion.csv`.
pub fn eval(wd: &Workdir, cfg: &RunConfig, checkpoint: &Path) -> Result<Evaluation> {
    if !checkpoint.exists() {
        return Err(Error::Config(format!("--checkpoint {} does not exist", checkpoint.display())));
    }
    let model = model_from_checkpoint(&Checkpoint::load(checkpoint)?, checkpoint)?;
    let m = read_manifest(wd, cfg)?;
    let store = load_store(wd, model.config.streams)?;
    let mut report = evaluate(&model, &store, &samples(&m, SplitTag::Test), &cfg.data.class_names())?;
    let high_reads = store.high_reads();
    let log = wd.report("fusion-log.toml");
    if log.exists() {
        report.epochs = load_epochs(&log)?;
    }
    write_report(wd, &report)?;
    Ok(Evaluation { report, high_reads })
}

pub fn write_report(wd: &Workdir, report: &RunReport) -> Result<()> {
    wd.ensure_dir(&wd.reports())?;
    save_report(&wd.report("run_report.toml"), report)?;
    let summary = wd.report("summary.txt");
    fs::write(&summary, summary_text(report)).at(&summary)?;
    let csv = wd.report("confusion.csv");
    fs::write(&csv, confusion_csv(report)).at(&csv)
}

/// Ablation over every clip on disk, re-split per grid seed; writes
/// `ablation.csv`.
pub fn ablate(wd: &Workdir, cfg: &RunConfig, grid: &AblationGrid, threads: usize) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let m = read_manifest(wd, cfg)?;
    manifest::check_paths(&m, wd.root())?;
    if m.with_resolution(Resolution::Low).is_empty() {
        return Err(invalid("the manifest lists no LOW clips; run preprocess first"));
    }
    let data = load_inputs(wd, cfg, &m, threads, |_| Stream::ALL.to_vec())?;
    let (rows, _) = ablation_run(&data, grid, &cfg.train_config(), cfg.train.train_fraction, &RunOptions::threads(threads))?;
    wd.ensure_dir(&wd.reports())?;
    let path = wd.report("ablation.csv");
    fs::write(&path, ablation_csv(&rows)).at(&path)?;
    Ok(rows)
}
