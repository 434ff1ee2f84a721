mod common;

use common::{eight_clips, small_spec, tiny_config};
use twostream::checkpoint::Checkpoint;
use twostream::coupler::*;
use twostream_core::flow::FlowParams;
use twostream_core::fusion::FusionKind;
use twostream_core::model::{GruVariant, Stream, Streams, TrainConfig};
use twostream_core::nn::{C3dParams, C3dSpec, Preset};
use twostream_core::rng::seeded;
use twostream_core::synth::ActionClass;
use twostream_core::video::Resolution;

fn all(data: &PreparedData) -> Vec<usize> {
    (0..data.clips.len()).collect()
}

#[test]
fn c3d_overfits_eight_clips() {
    let data = eight_clips();
    let cfg = TrainConfig {
        epochs: 40,
        ..tiny_config(0)
    };
    let stage = train_c3d_stage(data, &all(data), Stream::Spatial, &cfg, &RunOptions::threads(1), None).unwrap();
    let best = stage.log.iter().map(|l| l.accuracy).fold(0.0, f64::max);
    assert_eq!(best, 1.0, "{:?}", stage.log);
}

#[test]
fn c3d_loss_falls_by_epoch_three() {
    let data = eight_clips();
    for seed in 0..3 {
        let cfg = TrainConfig {
            epochs: 3,
            ..tiny_config(seed)
        };
        let stage = train_c3d_stage(data, &all(data), Stream::Temporal, &cfg, &RunOptions::threads(1), None).unwrap();
        assert!(stage.log[2].loss < stage.log[0].loss, "seed {}: {:?}", seed, stage.log);
    }
}

#[test]
fn coupled_paths_share_one_parameter_set() {
    let data = eight_clips();
    let mut probe = CouplingProbe {
        snapshots: true,
        ..Default::default()
    };
    let opts = RunOptions {
        threads: 2,
        max_steps: Some(5),
    };
    train_c3d_stage(data, &all(data), Stream::Spatial, &tiny_config(1), &opts, Some(&mut probe)).unwrap();
    assert_eq!(probe.records.len(), 5);
    let mut previous = None;
    for r in &probe.records {
        assert!(r.shared());
        assert!(!r.hr_addrs.is_empty() && !r.lr_addrs.is_empty());
        assert_eq!(r.hr_addrs.len(), r.lr_addrs.len());
        let snap = r.hr_snapshot.clone().unwrap();
        assert_eq!(Some(&snap), r.lr_snapshot.as_ref());
        // the optimizer moved the shared parameters between steps
        assert_ne!(previous.as_ref(), Some(&snap));
        previous = Some(snap);
    }
}

#[test]
fn uncoupled_batches_hold_low_units_only() {
    let data = eight_clips();
    let mut probe = CouplingProbe::default();
    let cfg = TrainConfig {
        coupled: false,
        ..tiny_config(0)
    };
    let opts = RunOptions {
        threads: 1,
        max_steps: Some(2),
    };
    train_c3d_stage(data, &all(data), Stream::Spatial, &cfg, &opts, Some(&mut probe)).unwrap();
    assert!(probe.records.iter().all(|r| r.hr_addrs.is_empty() && r.lr_addrs.len() == 8));
}

#[test]
fn empty_training_set_is_rejected() {
    let data = eight_clips();
    let err = train_c3d_stage(data, &[], Stream::Spatial, &tiny_config(0), &RunOptions::threads(1), None).unwrap_err();
    assert!(err.is_validation(), "{}", err);
}

#[test]
fn training_is_independent_of_thread_count() {
    let data = eight_clips();
    let cfg = TrainConfig {
        epochs: 1,
        ..tiny_config(4)
    };
    let run = |threads| {
        train_c3d_stage(data, &all(data), Stream::Temporal, &cfg, &RunOptions::threads(threads), None)
            .unwrap()
            .params
    };
    assert_eq!(run(1), run(3));
}

fn untrained(seed: u64, classes: usize) -> C3dParams {
    C3dParams::init(&C3dSpec::preset(Preset::Tiny, classes), &mut seeded(seed, 9)).unwrap()
}

fn features(data: &PreparedData, split: &Split, coupled: bool, seed: u64) -> FeatureStore {
    let mut sets = Vec::new();
    for s in Stream::ALL {
        let inputs = feature_inputs(data, split, s, coupled).unwrap();
        sets.push(extract_features(&inputs, &untrained(seed, data.num_classes()), s, None, 1).unwrap().0);
    }
    let temporal = sets.pop();
    FeatureStore::new(sets.pop(), temporal)
}

#[test]
fn extraction_cache_is_idempotent() {
    let data = eight_clips();
    let dir = tempfile::tempdir().unwrap();
    let params = untrained(2, 2);
    let split = Split {
        train: all(data),
        test: Vec::new(),
    };
    let inputs = feature_inputs(data, &split, Stream::Spatial, true).unwrap();
    let (fresh, s1) = extract_features(&inputs, &params, Stream::Spatial, Some(dir.path()), 1).unwrap();
    assert_eq!((s1.computed, s1.cached), (16, 0));
    // two units per 32-frame clip
    assert!(fresh.sequences.values().all(|s| s.len() == 2 && s[0].len() == 128));

    let path = feature_cache_path(dir.path(), Stream::Spatial, &params);
    let bytes = std::fs::read(&path).unwrap();
    let (again, s2) = extract_features(&inputs, &params, Stream::Spatial, Some(dir.path()), 2).unwrap();
    assert_eq!((s2.computed, s2.cached), (0, 16));
    assert_eq!(fresh, again);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);

    let mut ck = Checkpoint::new();
    for (id, seq) in &fresh.sequences {
        for (t, f) in seq.iter().enumerate() {
            ck.insert(format!("feat.{}.{}", id, t + 1), f);
        }
    }
    assert_eq!(ck.to_bytes(), bytes);
    assert_eq!(load_features(&path, Stream::Spatial).unwrap(), fresh);
}

#[test]
fn sequence_model_overfits_sixteen_clips() {
    let spec = small_spec(
        &[ActionClass::MoveLeft, ActionClass::MoveRight, ActionClass::MoveUp, ActionClass::MoveDown],
        4,
    );
    let data = PreparedData::render(&spec, &FlowParams::default(), 1).unwrap();
    let split = Split {
        train: all(&data),
        test: all(&data),
    };
    let store = features(&data, &split, true, 5);
    let cfg = TrainConfig {
        fusion_epochs: 300,
        ..tiny_config(0)
    };
    let stage =
        train_twostream_stage(&store, &SeqSample::of(&data, &split.train), 4, &cfg, &RunOptions::threads(1), None)
            .unwrap();
    let first = stage.log.iter().position(|l| l.accuracy == 1.0);
    assert!(first.is_some(), "last epoch {:?}", stage.log.last());
}

#[test]
fn no_gru_baseline_trains() {
    let data = eight_clips();
    let split = Split {
        train: all(data),
        test: all(data),
    };
    let store = features(data, &split, true, 6);
    let cfg = TrainConfig {
        streams: Streams::Spatial,
        gru_direction: GruVariant::None,
        fusion_epochs: 30,
        ..tiny_config(0)
    };
    let stage =
        train_twostream_stage(&store, &SeqSample::of(data, &split.train), 2, &cfg, &RunOptions::threads(1), None)
            .unwrap();
    assert!(stage.model.spatial.is_some() && stage.model.temporal.is_none() && stage.model.fusion.is_none());
    assert!(stage.log.last().unwrap().loss < stage.log[0].loss);
}

#[test]
fn evaluation_reads_no_high_features() {
    let data = eight_clips();
    let split = data.split(0.5, 3).unwrap();
    let store = features(data, &split, true, 7);
    let stage = train_twostream_stage(
        &store,
        &SeqSample::of(data, &split.train),
        2,
        &tiny_config(0),
        &RunOptions::threads(1),
        None,
    )
    .unwrap();
    assert!(store.high_reads() > 0, "coupled training reads HIGH features");
    let before = store.high_reads();
    let test = SeqSample::of(data, &split.test);
    let report = evaluate(&stage.model, &store, &test, &data.class_names).unwrap();
    assert_eq!(store.high_reads(), before);
    assert_eq!(report.confusion.total(), test.len() as u64);
    assert_eq!(report.test_accuracy, report.confusion.accuracy());
    let per_class: Vec<u64> = (0..2).map(|c| test.iter().filter(|s| s.label == c).count() as u64).collect();
    assert_eq!(report.confusion.row_sums(), per_class);
    // test clips have no HIGH features at all
    for s in &test {
        assert!(store.sequence(Stream::Spatial, &s.stem, Resolution::High).is_err());
    }
}

#[test]
fn stage_two_input_errors() {
    let data = eight_clips();
    let split = Split {
        train: vec![0, 1, 4, 5],
        test: vec![2, 6],
    };
    let store = features(data, &split, false, 8);
    let opts = RunOptions::threads(1);
    // coupled training needs HIGH features the store lacks
    let err = train_twostream_stage(&store, &SeqSample::of(data, &split.train), 2, &tiny_config(0), &opts, None)
        .unwrap_err();
    assert!(err.is_validation(), "{}", err);
    // a clip missing from both streams
    let ghost = vec![SeqSample {
        stem: "move_left_999".into(),
        label: 0,
    }];
    let cfg = TrainConfig {
        coupled: false,
        ..tiny_config(0)
    };
    assert!(train_twostream_stage(&store, &ghost, 2, &cfg, &opts, None).is_err());
    let model = train_twostream_stage(&store, &SeqSample::of(data, &split.train), 2, &cfg, &opts, None)
        .unwrap()
        .model;
    assert!(evaluate(&model, &store, &[], &data.class_names).is_err());
}

#[test]
fn ablation_rows_and_determinism() {
    let data = eight_clips();
    let cell = GridCell {
        streams: Streams::Both,
        gru: GruVariant::Uni,
        fusion: FusionKind::Max,
    };
    let grid = AblationGrid {
        seeds: vec![0, 1],
        cell: vec![
            cell,
            GridCell {
                streams: Streams::Temporal,
                ..cell
            },
            cell,
        ],
    };
    let cfg = TrainConfig {
        epochs: 1,
        fusion_epochs: 3,
        ..tiny_config(0)
    };
    let (rows, runs) = ablation_run(data, &grid, &cfg, 0.5, &RunOptions::threads(1)).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(runs.len(), 6);
    assert!(rows.iter().all(|r| r.accuracies.len() == 2));
    assert_eq!(rows[0].accuracies, rows[2].accuracies);
    assert!(runs.iter().all(|r| r.eval_high_reads == 0));

    let csv = ablation_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "stream,gru,fusion,accuracy_mean,accuracy_per_seed");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("temporal,uni,max,"));
    assert_eq!(lines[1].split(',').nth(4).unwrap().split(';').count(), 2);
}

#[test]
fn median_and_mean() {
    let cell = GridCell {
        streams: Streams::Both,
        gru: GruVariant::Bi,
        fusion: FusionKind::Sum,
    };
    let row = AblationRow {
        cell,
        accuracies: vec![0.9, 0.5, 1.0],
    };
    assert_eq!(row.median(), 0.9);
    assert!((row.mean() - 0.8).abs() < 1e-12);
}
