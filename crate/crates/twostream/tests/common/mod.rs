#![allow(dead_code)]

use std::sync::OnceLock;

use twostream::coupler::PreparedData;
use twostream_core::flow::FlowParams;
use twostream_core::model::TrainConfig;
use twostream_core::synth::{ActionClass, SynthSpec};

/// Small, fast-to-render spec: 120×160 canvas, 32 frames (two units).
pub fn small_spec(classes: &[ActionClass], clips_per_class: usize) -> SynthSpec {
    SynthSpec {
        classes: classes.to_vec(),
        clips_per_class,
        height: 120,
        width: 160,
        sprite_size: 32,
        speed: 2.0,
        ..SynthSpec::default()
    }
}

/// 2 classes × 4 clips with all four network inputs.
pub fn eight_clips() -> &'static PreparedData {
    static DATA: OnceLock<PreparedData> = OnceLock::new();
    DATA.get_or_init(|| {
        let spec = small_spec(&[ActionClass::MoveLeft, ActionClass::MoveRight], 4);
        PreparedData::render(&spec, &FlowParams::default(), 1).unwrap()
    })
}

pub fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        batch_size: 8,
        hidden_dim: 16,
        ..TrainConfig::tiny()
    }
}

/// Config for a disk pipeline that finishes in seconds.
pub const SMALL_RUN: &str = r#"[data]
classes = ["MOVE_LEFT", "MOVE_RIGHT"]
clips_per_class = 3
height = 120
width = 160
sprite_size = 32
speed = 2.0

[model]
preset = "tiny"
hidden_dim = 8

[train]
epochs = 2
fusion_epochs = 4
batch_size = 4
"#;
