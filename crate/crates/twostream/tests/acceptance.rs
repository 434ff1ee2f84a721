//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use twostream::checkpoint::{c3d_checkpoint, c3d_from_checkpoint, model_checkpoint, model_from_checkpoint, Checkpoint};
use twostream::coupler::*;
use twostream::parallel::default_threads;
use twostream_core::flow::{estimate_flow, FlowField, FlowParams};
use twostream_core::fusion::{fuse_cat, fuse_conv, fuse_sum, ConvFusion, FusionKind};
use twostream_core::gradcheck::{run_suite, SuiteConfig};
use twostream_core::gru::{gru_cell, GruParams};
use twostream_core::model::{GruVariant, Stream, Streams, TrainConfig};
use twostream_core::params::ParamSet;
use twostream_core::rng::seeded;
use twostream_core::synth::SynthSpec;
use twostream_core::video::{average_downsample, bicubic_upsample, cubic_weights, Frame, CHANNELS};
use twostream_core::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// 1 ----------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let required = [
        "conv3d", "maxpool3d", "linear", "relu", "softmax_xent", "gru_cell", "gru_sequence", "fuse_sum",
        "fuse_max", "fuse_cat", "fuse_conv", "c3d_network",
    ];
    let start = Instant::now();
    let results = match run_suite(&SuiteConfig::tiny(0)) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|op| !results.iter().any(|r| r.op == *op))
        .collect();
    let (worst_op, worst) = results
        .iter()
        .map(|r| (r.op.as_str(), r.worst))
        .fold(("", 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    outcome(
        missing.is_empty() && worst < 1e-4 && elapsed < Duration::from_secs(300),
        format!(
            "{} ops over 10 seeds, worst rel err {:.2e} ({}), missing {:?}, {:.1}s",
            results.len(),
            worst,
            worst_op,
            missing,
            elapsed.as_secs_f64()
        ),
    )
}

// 2 ----------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU step written out element by element.
fn gru_scalar(p: &GruParams, x: &[f64], hp: &[f64]) -> Vec<f64> {
    let matvec = |m: &Tensor, i: usize, v: &[f64]| (0..v.len()).map(|j| m.data()[i * v.len() + j] * v[j]).sum::<f64>();
    let n = hp.len();
    let z: Vec<f64> = (0..n)
        .map(|i| sigmoid(matvec(&p.w_z, i, x) + matvec(&p.u_z, i, hp) + p.b_z.data()[i]))
        .collect();
    let r: Vec<f64> = (0..n)
        .map(|i| sigmoid(matvec(&p.w_r, i, x) + matvec(&p.u_r, i, hp) + p.b_r.data()[i]))
        .collect();
    let rh: Vec<f64> = (0..n).map(|i| r[i] * hp[i]).collect();
    (0..n)
        .map(|i| {
            let cand = (matvec(&p.w_h, i, x) + matvec(&p.u_h, i, &rh) + p.b_h.data()[i]).tanh();
            z[i] * hp[i] + (1.0 - z[i]) * cand
        })
        .collect()
}

fn operator_fidelity() -> Outcome {
    let mut gru_err = 0.0f64;
    for seed in 0..10 {
        let mut rng = seeded(seed, 77);
        let mut p = GruParams::zeros(9, 6);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let x: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hp: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = gru_cell(&Tensor::vector(x.clone()), &Tensor::vector(hp.clone()), &p).unwrap();
        gru_err = gru_err.max(max_abs_diff(got.h.data().iter().copied(), gru_scalar(&p, &x, &hp)));
    }

    // y_{2d} = xa_d, y_{2d-1} = xb_d with 1-based d
    let d = 7;
    let xa: Vec<f64> = (1..=d).map(|i| 100.0 + i as f64).collect();
    let xb: Vec<f64> = (1..=d).map(|i| -(i as f64)).collect();
    let y = fuse_cat(&Tensor::vector(xa.clone()), &Tensor::vector(xb.clone())).unwrap();
    let cat_ok = y.len() == 2 * d && (1..=d).all(|i| y.data()[2 * i - 1] == xa[i - 1] && y.data()[2 * i - 2] == xb[i - 1]);

    let mut conv_err = 0.0f64;
    for seed in 0..5 {
        let mut rng = seeded(seed, 78);
        let a = Tensor::vector((0..d).map(|_| rng.random_range(-5.0..5.0)).collect());
        let b = Tensor::vector((0..d).map(|_| rng.random_range(-5.0..5.0)).collect());
        let conv = fuse_conv(&a, &b, &ConvFusion::pair_summing(d)).unwrap();
        let sum = fuse_sum(&a, &b).unwrap();
        conv_err = conv_err.max(max_abs_diff(conv.data().iter().copied(), sum.data().iter().copied()));
    }
    outcome(
        gru_err < 1e-10 && cat_ok && conv_err < 1e-12,
        format!("gru_cell vs scalar {:.1e}, cat interleave {}, conv-vs-sum {:.1e}", gru_err, cat_ok, conv_err),
    )
}

// 3 ----------------------------------------------------------------------

fn block_mean(f: &Frame, out_h: usize, out_w: usize) -> Vec<f64> {
    let (bh, bw) = (f.height() / out_h, f.width() / out_w);
    let mut out = Vec::with_capacity(out_h * out_w * CHANNELS);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for c in 0..CHANNELS {
                let mut s = 0.0;
                for y in oy * bh..(oy + 1) * bh {
                    for x in ox * bw..(ox + 1) * bw {
                        s += f.get(y, x, c) as f64;
                    }
                }
                out.push(s / (bh * bw) as f64);
            }
        }
    }
    out
}

fn preprocessing_fidelity() -> Outcome {
    let mut rng = seeded(5, 0);
    let px = (0..240 * 320 * CHANNELS).map(|_| rng.random::<f32>()).collect();
    let f = Frame::new(240, 320, px).unwrap();
    let down = average_downsample(&f, 12, 16).unwrap();
    let down_err = max_abs_diff(down.pixels().iter().map(|&p| p as f64), block_mean(&f, 12, 16));

    let w = cubic_weights(0.5);
    let weight_err = max_abs_diff(w, [-0.0625, 0.5625, 0.5625, -0.0625]);

    let constant = bicubic_upsample(&Frame::filled(12, 16, 0.3), 112, 112).unwrap();
    let const_err = constant.pixels().iter().map(|&p| (p as f64 - 0.3).abs()).fold(0.0, f64::max);

    let ramp_px = (0..12).flat_map(|_| (0..16).flat_map(|x| [x as f32 / 16.0; 3])).collect();
    let up = bicubic_upsample(&Frame::new(12, 16, ramp_px).unwrap(), 112, 112).unwrap();
    let mut ramp_err = 0.0f64;
    for x in 0..112 {
        let sx = (x as f64 + 0.5) * 16.0 / 112.0 - 0.5;
        if (1.0..=14.0).contains(&sx) {
            for y in 0..112 {
                ramp_err = ramp_err.max((up.get(y, x, 0) as f64 - sx / 16.0).abs());
            }
        }
    }
    outcome(
        down_err < 1e-6 && weight_err < 1e-15 && const_err < 1e-6 && ramp_err < 1e-6,
        format!(
            "block mean {:.1e}, weights(0.5) {:?}, constant {:.1e}, ramp {:.1e}",
            down_err, w, const_err, ramp_err
        ),
    )
}

// 4 ----------------------------------------------------------------------

fn textured(dx: f64, dy: f64) -> Frame {
    let mut px = Vec::with_capacity(112 * 112 * CHANNELS);
    for y in 0..112 {
        for x in 0..112 {
            let (u, v) = (x as f64 - dx, y as f64 - dy);
            let t = 0.5 + 0.2 * (0.29 * u + 0.19 * v).sin() + 0.15 * (0.21 * v - 0.43 * u + 1.0).sin()
                + 0.1 * (0.51 * u + 0.45 * v + 2.0).cos();
            px.extend([t as f32, (0.8 * t + 0.1) as f32, (1.0 - 0.7 * t) as f32]);
        }
    }
    Frame::new(112, 112, px).unwrap()
}

fn interior_epe(f: &FlowField, u: f64, v: f64) -> f64 {
    let mut e = Vec::new();
    for y in 8..f.height - 8 {
        for x in 8..f.width - 8 {
            let i = y * f.width + x;
            e.push(((f.u[i] - u).powi(2) + (f.v[i] - v).powi(2)).sqrt());
        }
    }
    median(e)
}

fn flow_quality() -> Outcome {
    let p = FlowParams::default();
    let start = Instant::now();
    let base = textured(0.0, 0.0);
    let mut worst_epe = 0.0f64;
    for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0)] {
        let f = estimate_flow(&base, &textured(dx, dy), &p).unwrap();
        worst_epe = worst_epe.max(interior_epe(&f, dx, dy));
    }
    let still = estimate_flow(&base, &base, &p).unwrap();
    let still_max = still.u.iter().chain(&still.v).fold(0.0f64, |m, x| m.max(x.abs()));
    let elapsed = start.elapsed();
    outcome(
        worst_epe < 0.3 && still_max < 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "worst median EPE {:.2e} px over 5 shifts, identical-frame max {:.1e}, {:.1}s",
            worst_epe,
            still_max,
            elapsed.as_secs_f64()
        ),
    )
}

// 5, 6, 7 ----------------------------------------------------------------

const STAGE1_EPOCHS: usize = 15;
const FUSION_EPOCHS: usize = 40;
const TRAIN_FRACTION: f64 = 2.0 / 3.0;

fn cell(streams: Streams, gru: GruVariant) -> GridCell {
    GridCell {
        streams,
        gru,
        fusion: FusionKind::Sum,
    }
}

struct Benchmark {
    data: PreparedData,
    rows: Vec<AblationRow>,
    runs: Vec<CellRun>,
    prep: Duration,
    train: Duration,
}

fn run_benchmark(threads: usize) -> twostream::Result<Benchmark> {
    let start = Instant::now();
    let data = PreparedData::render(&SynthSpec::default(), &FlowParams::default(), threads)?;
    let prep = start.elapsed();
    let grid = AblationGrid {
        seeds: vec![0, 1, 2],
        cell: vec![
            cell(Streams::Both, GruVariant::Bi),
            cell(Streams::Spatial, GruVariant::Bi),
            cell(Streams::Temporal, GruVariant::Bi),
            cell(Streams::Both, GruVariant::None),
        ],
    };
    let base = TrainConfig {
        epochs: STAGE1_EPOCHS,
        fusion_epochs: FUSION_EPOCHS,
        ..TrainConfig::tiny()
    };
    let start = Instant::now();
    let (rows, runs) = ablation_run(&data, &grid, &base, TRAIN_FRACTION, &RunOptions::threads(threads))?;
    Ok(Benchmark {
        data,
        rows,
        runs,
        prep,
        train: start.elapsed(),
    })
}

fn end_to_end(b: &Benchmark) -> Outcome {
    let split = b.data.split(TRAIN_FRACTION, 0).unwrap();
    let row = &b.rows[0];
    let total = b.prep + b.train;
    let med = median(row.accuracies.clone());
    outcome(
        med >= 0.9 && total < Duration::from_secs(900) && split.train.len() == 40 && split.test.len() == 20,
        format!(
            "{}/{} clips, per-seed {:?}, median {:.3}, prep {:.0}s + training {:.0}s",
            split.train.len(),
            split.test.len(),
            row.accuracies,
            med,
            b.prep.as_secs_f64(),
            b.train.as_secs_f64()
        ),
    )
}

fn ablation_trend(b: &Benchmark) -> Outcome {
    let m: Vec<f64> = b.rows.iter().map(|r| median(r.accuracies.clone())).collect();
    let (both, spatial, temporal, none) = (m[0], m[1], m[2], m[3]);
    let checks = [
        ("two-stream >= spatial", both >= spatial),
        ("spatial >= temporal", spatial >= temporal),
        ("bi-GRU >= no-GRU", both >= none),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let per_seed: Vec<String> = b
        .rows
        .iter()
        .map(|r| format!("{}/{} {:?}", r.cell.streams.as_str(), r.cell.gru.as_str(), r.accuracies))
        .collect();
    outcome(
        failed.is_empty(),
        format!(
            "medians both {:.3}, spatial {:.3}, temporal {:.3}, no-GRU {:.3}; violated {:?}; {}",
            both,
            spatial,
            temporal,
            none,
            failed,
            per_seed.join(", ")
        ),
    )
}

fn coupling_protocol(b: &Benchmark, threads: usize) -> Outcome {
    let high_reads: usize = b.runs.iter().map(|r| r.eval_high_reads).sum();
    let split = b.data.split(TRAIN_FRACTION, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 4,
        ..TrainConfig::tiny()
    };
    let opts = RunOptions {
        threads,
        max_steps: Some(100),
    };
    let mut probe = CouplingProbe {
        snapshots: true,
        ..Default::default()
    };
    if let Err(e) = train_c3d_stage(&b.data, &split.train, Stream::Spatial, &cfg, &opts, Some(&mut probe)) {
        return outcome(false, e.to_string());
    }
    let steps = probe.records.len();
    let shared = probe
        .records
        .iter()
        .filter(|r| r.shared() && !r.hr_addrs.is_empty() && !r.lr_addrs.is_empty() && r.hr_snapshot.is_some())
        .count();
    outcome(
        high_reads == 0 && steps == 100 && shared == 100,
        format!(
            "HIGH reads during {} evaluations: {}; coupled steps with one shared parameter set: {}/{}",
            b.runs.len(),
            high_reads,
            shared,
            steps
        ),
    )
}

// 8 ----------------------------------------------------------------------

fn cli(workdir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_twostream"))
        .arg("--workdir")
        .arg(workdir)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{:?}: {}", args, String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(workdir: &Path, config: &Path) -> Result<(), String> {
    let ckpt = workdir.join("checkpoints/twostream.ckpt");
    let steps: [Vec<&str>; 9] = [
        vec!["--config", config.to_str().unwrap(), "--seed", "11", "synth"],
        vec!["preprocess"],
        vec!["flow"],
        vec!["train-c3d", "--stream", "spatial"],
        vec!["train-c3d", "--stream", "temporal"],
        vec!["extract"],
        vec!["train-fusion"],
        vec!["eval", "--checkpoint", ckpt.to_str().unwrap()],
        vec!["report"],
    ];
    steps.iter().try_for_each(|s| cli(workdir, s))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn resave(path: &Path, model: bool) -> Result<bool, String> {
    let original = std::fs::read(path).map_err(|e| e.to_string())?;
    let ck = Checkpoint::load(path).map_err(|e| e.to_string())?;
    let rebuilt = if model {
        model_checkpoint(&model_from_checkpoint(&ck, path).map_err(|e| e.to_string())?)
    } else {
        c3d_checkpoint(&c3d_from_checkpoint(&ck, path).map_err(|e| e.to_string())?)
    };
    let copy = path.with_extension("resaved");
    rebuilt.save(&copy).map_err(|e| e.to_string())?;
    let same = std::fs::read(&copy).map_err(|e| e.to_string())? == original;
    std::fs::remove_file(&copy).map_err(|e| e.to_string())?;
    Ok(same)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, common::SMALL_RUN).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = pipeline(&a, &config).and_then(|_| pipeline(&b, &config)) {
        return outcome(false, e);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<&PathBuf> = ta
        .keys()
        .chain(tb.keys())
        .filter(|k| ta.get(*k) != tb.get(*k))
        .collect();
    let resaved: Result<Vec<bool>, String> = [
        ("checkpoints/c3d-spatial.ckpt", false),
        ("checkpoints/c3d-temporal.ckpt", false),
        ("checkpoints/twostream.ckpt", true),
    ]
    .iter()
    .map(|&(p, model)| resave(&a.join(p), model))
    .collect();
    match resaved {
        Ok(same) => outcome(
            differing.is_empty() && same.iter().all(|&s| s),
            format!(
                "{} files compared across two runs, {} differ; save-load-save identical for {}/3 checkpoints",
                ta.len(),
                differing.len(),
                same.iter().filter(|&&s| s).count()
            ),
        ),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    // honour `cargo test -- --list` and name filters from other targets
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let threads = default_threads();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient suite", gradient_suite()),
        ("2 operator fidelity", operator_fidelity()),
        ("3 preprocessing fidelity", preprocessing_fidelity()),
        ("4 flow quality", flow_quality()),
    ];
    match run_benchmark(threads) {
        Ok(b) => {
            results.push(("5 end-to-end learning", end_to_end(&b)));
            results.push(("6 ablation trend", ablation_trend(&b)));
            results.push(("7 coupling protocol", coupling_protocol(&b, threads)));
        }
        Err(e) => {
            for name in ["5 end-to-end learning", "6 ablation trend", "7 coupling protocol"] {
                results.push((name, outcome(false, format!("benchmark failed: {}", e))));
            }
        }
    }
    results.push(("8 determinism and serialization", determinism()));

    println!();
    for (name, o) in &results {
        println!("{} criterion {}: {}", if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("\nacceptance: {} passed, {} failed\n", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
