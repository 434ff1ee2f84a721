use std::path::Path;

use proptest::prelude::*;
use twostream::frames_io::*;
use twostream::manifest::*;
use twostream_core::synth::{ActionClass, DatasetManifest, SplitTag, SynthSpec};
use twostream_core::video::{Frame, Resolution, VideoClip};

fn origin() -> &'static Path {
    Path::new("manifest.tsv")
}

fn sample_manifest() -> DatasetManifest {
    let spec = SynthSpec {
        clips_per_class: 2,
        ..SynthSpec::default()
    };
    let mut m = DatasetManifest::for_spec(&spec);
    for (i, e) in m.entries.iter_mut().enumerate() {
        e.split = if i % 3 == 0 { SplitTag::Test } else { SplitTag::Train };
    }
    m
}

#[test]
fn tsv_round_trip() {
    let m = sample_manifest();
    let hash = spec_hash(&SynthSpec::default());
    let text = to_tsv(&m, &hash);
    assert!(text.starts_with(&format!("#spec_hash\t{}\n", hash)));
    assert_eq!(text.lines().count(), m.len() + 1);
    let (back, h) = parse_tsv(&text, origin()).unwrap();
    assert_eq!(back, m);
    assert_eq!(h, hash);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.tsv");
    write(&path, &m, &hash).unwrap();
    assert_eq!(read(&path).unwrap(), (m, hash));
}

#[test]
fn rows_use_the_documented_columns() {
    let m = sample_manifest();
    let text = to_tsv(&m, "ab");
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    let e = &m.entries[0];
    assert_eq!(row, [e.clip_id.as_str(), "0", &format!("clips/{}", e.clip_id), "test", e.resolution.as_str()]);
}

#[test]
fn malformed_manifests_are_rejected() {
    let body = "move_left_000_hi\t0\tclips/move_left_000_hi\ttrain\tHIGH\n";
    for text in [
        String::new(),
        body.to_string(),
        format!("#spec_hash\t\n{}", body),
        format!("#spec_hash\txyz\n{}", body),
        "#spec_hash\tab\nmove_left_000_hi\t0\tclips/x\ttrain\n".to_string(),
        "#spec_hash\tab\nmove_left_000_hi\tzero\tclips/x\ttrain\tHIGH\n".to_string(),
        "#spec_hash\tab\nmove_left_000_hi\t0\tclips/x\tval\tHIGH\n".to_string(),
        "#spec_hash\tab\nmove_left_000_hi\t0\tclips/x\ttrain\tMID\n".to_string(),
        format!("#spec_hash\tab\n{}{}", body, body),
    ] {
        assert!(parse_tsv(&text, origin()).is_err(), "{:?}", text);
    }
}

#[test]
fn spec_hash_tracks_every_field() {
    let base = SynthSpec::default();
    let h = spec_hash(&base);
    assert_eq!(h.len(), 64);
    assert_eq!(h, spec_hash(&base.clone()));
    let variants = [
        SynthSpec { seed: 1, ..base.clone() },
        SynthSpec { noise: base.noise + 0.01, ..base.clone() },
        SynthSpec { classes: vec![ActionClass::MoveUp, ActionClass::MoveDown], ..base.clone() },
    ];
    for v in &variants {
        assert_ne!(spec_hash(v), h);
    }
}

#[test]
fn missing_clip_directories_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = sample_manifest();
    assert!(check_paths(&m, dir.path()).is_err());
    for e in &m.entries {
        std::fs::create_dir_all(dir.path().join(&e.path)).unwrap();
    }
    check_paths(&m, dir.path()).unwrap();
}

#[test]
fn frame_names_are_one_based() {
    assert_eq!(frame_file_name(0), "00001.png");
    assert_eq!(frame_file_name(31), "00032.png");
}

proptest! {
    #[test]
    fn quantization_is_within_half_a_level(p in 0.0f32..=1.0) {
        let back = dequantize(quantize(p));
        prop_assert!((back - p).abs() <= 0.5 / 65535.0 + 1e-7);
        prop_assert_eq!(quantize(back), quantize(p));
    }

    #[test]
    fn png_frames_round_trip(
        (h, w, levels) in (1usize..6, 1usize..6)
            .prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(any::<u16>(), h * w * 3)))
    ) {
        let frame = Frame::new(h, w, levels.iter().map(|&l| dequantize(l)).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        write_frame(&path, &frame).unwrap();
        prop_assert_eq!(read_frame(&path).unwrap(), frame);
    }
}

#[test]
fn clips_round_trip_and_drop_stale_frames() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<Frame> = (0..5).map(|i| Frame::filled(3, 4, dequantize(1000 * i))).collect();
    let long = VideoClip::new(frames.clone(), 1, Resolution::Low, "c").unwrap();
    write_clip(dir.path(), &long).unwrap();
    assert_eq!(read_clip(dir.path(), 1, Resolution::Low, "c").unwrap(), long);

    let short = VideoClip::new(frames[..2].to_vec(), 1, Resolution::Low, "c").unwrap();
    write_clip(dir.path(), &short).unwrap();
    assert_eq!(frame_paths(dir.path()).unwrap().len(), 2);
    assert_eq!(read_clip(dir.path(), 1, Resolution::Low, "c").unwrap(), short);
}

#[test]
fn clipping_out_of_range_pixels() {
    assert_eq!(quantize(-0.5), 0);
    assert_eq!(quantize(2.0), 65535);
}
