//! Central finite-difference checks of every backward pass.
//!
//! Each check builds a small random instance, reduces the op's output to a
//! scalar with random weights (or uses the op's own loss), and compares the
//! analytic gradient with `(L(x + h) − L(x − h)) / 2h` entry by entry.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{ensure, Result};
use crate::fusion::{fuse, fuse_backward, ConvFusion, FusionKind, FusionParams};
use crate::gru::{
    classify, gru_cell, gru_cell_backward, gru_sequence, gru_sequence_backward, Direction, GruParams,
    HeadParams,
};
use crate::model::{GruVariant, SequenceInput, SequenceModel, Streams, TrainConfig};
use crate::nn::{
    c3d_backward, c3d_forward_trace, conv3d, conv3d_backward, linear, linear_backward, maxpool3d,
    maxpool3d_backward, relu, relu_backward, softmax_xent, C3dParams, C3dSpec, Conv3dGeometry,
    PoolGeometry, Preset,
};
use crate::params::ParamSet;
use crate::rng::{seeded, SeededRng};
use crate::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Magnitude below which errors are measured in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / libm::fabs(analytic).max(libm::fabs(numeric)).max(REL_FLOOR)
}

/// Worst relative error of one op over all checked entries and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: String,
    pub worst: f64,
    pub entries: usize,
}

/// Names of the checked ops, in report order.
pub const OPS: [&str; 14] = [
    "conv3d",
    "maxpool3d",
    "linear",
    "relu",
    "softmax_xent",
    "gru_cell",
    "gru_sequence",
    "fuse_sum",
    "fuse_max",
    "fuse_cat",
    "fuse_conv",
    "head",
    "sequence_model",
    "c3d_network",
];

fn uniform(rng: &mut SeededRng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("dims match")
}

/// Tensors flattened into one vector so a single perturbation loop covers
/// all of them.
struct Packed {
    dims: Vec<Vec<usize>>,
    flat: Vec<f64>,
}

impl Packed {
    fn new(ts: &[&Tensor]) -> Self {
        Self {
            dims: ts.iter().map(|t| t.dims().to_vec()).collect(),
            flat: ts.iter().flat_map(|t| t.data().iter().copied()).collect(),
        }
    }

    fn unpack(dims: &[Vec<usize>], flat: &[f64]) -> Vec<Tensor> {
        let mut off = 0;
        dims.iter()
            .map(|d| {
                let n: usize = d.iter().product();
                let t = Tensor::from_vec(d, flat[off..off + n].to_vec()).expect("dims match");
                off += n;
                t
            })
            .collect()
    }

    /// Worst error of `analytic` (packed like the inputs) against central
    /// differences of `loss`.
    fn compare(mut self, analytic: &[&Tensor], loss: impl Fn(&[Tensor]) -> Result<f64>) -> Result<(f64, usize)> {
        let grad: Vec<f64> = analytic.iter().flat_map(|t| t.data().iter().copied()).collect();
        ensure!(grad.len() == self.flat.len(), "analytic gradient does not match the inputs");
        let mut worst: f64 = 0.0;
        for i in 0..self.flat.len() {
            let orig = self.flat[i];
            self.flat[i] = orig + STEP;
            let up = loss(&Self::unpack(&self.dims, &self.flat))?;
            self.flat[i] = orig - STEP;
            let down = loss(&Self::unpack(&self.dims, &self.flat))?;
            self.flat[i] = orig;
            worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * STEP)));
        }
        Ok((worst, self.flat.len()))
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check_conv3d(rng: &mut SeededRng) -> Result<(f64, usize)> {
    let g = Conv3dGeometry::new(
        [1, rng.random_range(1..=2), rng.random_range(1..=2)],
        [rng.random_range(0..=1), rng.random_range(0..=1), rng.random_range(0..=1)],
    );
    let x = uniform(rng, &[2, 3, 5, 5], -1.0, 1.0);
    let w = uniform(rng, &[3, 2, 2, 3, 3], -1.0, 1.0);
    let b = uniform(rng, &[3], -1.0, 1.0);
    let y = conv3d(&x, &w, &b, &g)?;
    let wts = uniform(rng, y.dims(), -1.0, 1.0);
    let gr = conv3d_backward(&x, &w, &wts, &g, true)?;
    let gx = gr.input.expect("input gradient requested");
    Packed::new(&[&x, &w, &b]).compare(&[&gx, &gr.weight, &gr.bias], |t| {
        Ok(dot(&conv3d(&t[0], &t[1], &t[2], &g)?, &wts))
    })
}

fn check_maxpool3d(rng: &mut SeededRng) -> Result<(f64, usize)> {
    // distinct values spaced far beyond the step keep every window tie-free
    let n = 2 * 4 * 5 * 5;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    vals.shuffle(rng);
    let x = Tensor::from_vec(&[2, 4, 5, 5], vals)?;
    let g = PoolGeometry::new([2, 2, 2], [2, 2, 2]).with_pad([0, rng.random_range(0..=1), 1]);
    let p = maxpool3d(&x, &g)?;
    let wts = uniform(rng, p.output.dims(), -1.0, 1.0);
    let gx = maxpool3d_backward(x.dims(), &p.argmax, &wts)?;
    Packed::new(&[&x]).compare(&[&gx], |t| Ok(dot(&maxpool3d(&t[0], &g)?.output, &wts)))
}

fn check_linear(rng: &mut SeededRng) -> Result<(f64, usize)> {
    let x = uniform(rng, &[7], -1.0, 1.0);
    let w = uniform(rng, &[4, 7], -1.0, 1.0);
    let b = uniform(rng, &[4], -1.0, 1.0);
    let wts = uniform(rng, &[4], -1.0, 1.0);
    let gr = linear_backward(&x, &w, &wts)?;
    Packed::new(&[&x, &w, &b]).compare(&[&gr.input, &gr.weight, &gr.bias], |t| {
        Ok(dot(&linear(&t[0], &t[1], &t[2])?, &wts))
    })
}

fn check_relu(rng: &mut SeededRng) -> Result<(f64, usize)> {
    let vals = (0..24)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor::vector(vals);
    let wts = uniform(rng, &[24], -1.0, 1.0);
    let gx = relu_backward(&x, &wts)?;
    Packed::new(&[&x]).compare(&[&gx], |t| Ok(dot(&relu(&t[0]), &wts)))
}

fn check_softmax_xent(rng: &mut SeededRng) -> Result<(f64, usize)> {
    let x = uniform(rng, &[6], -3.0, 3.0);
    let label = rng.random_range(0..6);
    let (_, g) = softmax_xent(&x, label)?;
    Packed::new(&[&x]).compare(&[&g], |t| Ok(softmax_xent(&t[0], label)?.0))
}

fn gru_from(t: &[Tensor]) -> GruParams {
    GruParams {
        w_z: t[0].clone(),
        w_r: t[1].clone(),
        w_h: t[2].clone(),
        u_z: t[3].clone(),
        u_r: t[4].clone(),
        u_h: t[5].clone(),
        b_z: t[6].clone(),
        b_r: t[7].clone(),
        b_h: t[8].clone(),
    }
}

fn random_gru(rng: &mut SeededRng, f: usize, h: usize) -> GruParams {
    let mut p = GruParams::zeros(f, h);
    for t in p.tensors_mut() {
        let d = t.dims().to_vec();
        *t = uniform(rng, &d, -0.8, 0.8);
    }
    p
}

fn check_gru_cell(rng: &mut SeededRng) -> Result<(f64, usize)> {
    let p = random_gru(rng, 5, 4);
    let x = uniform(rng, &[5], -1.0, 1.0);
    let hp = uniform(rng, &[4], -1.0, 1.0);
    let wts = uniform(rng, &[4], -1.0, 1.0);
    let st = gru_cell(&x, &hp, &p)?;
    let mut gp = GruParams::zeros(5, 4);
    let (dx, dh) = gru_cell_backward(&x, &hp, &st, &p, &wts, &mut gp)?;
    let mut inputs = p.tensors();
    inputs.extend([&x, &hp]);
    let mut analytic = gp.tensors();
    analytic.extend([&dx, &dh]);
    Packed::new(&inputs).compare(&analytic, |t| Ok(dot(&gru_cell(&t[9], &t[10], &gru_from(t))?.h, &wts)))
}

fn check_gru_sequence(rng: &mut SeededRng) -> Result<(f64, usize)> {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for dir in [Direction::Fwd, Direction::Bwd] {
        let p = random_gru(rng, 5, 4);
        let xs: Vec<Tensor> = (0..3).map(|_| uniform(rng, &[5], -1.0, 1.0)).collect();
        let wts: Vec<Tensor> = (0..3).map(|_| uniform(rng, &[4], -1.0, 1.0)).collect();
        let tr = gru_sequence(&xs, &p, dir)?;
        let (gp, dxs) = gru_sequence_backward(&tr, &p, &wts)?;
        let mut inputs = p.tensors();
        inputs.extend(xs.iter());
        let mut analytic = gp.0.tensors();
        analytic.extend(dxs.iter());
        let (w, n) = Packed::new(&inputs).compare(&analytic, |t| {
            let tr = gru_sequence(&t[9..], &gru_from(t), dir)?;
            Ok(tr.hidden_states().iter().zip(&wts).map(|(h, w)| dot(h, w)).sum())
        })?;
        worst = worst.max(w);
        count += n;
    }
    Ok((worst, count))
}

fn check_fusion(rng: &mut SeededRng, kind: FusionKind) -> Result<(f64, usize)> {
    let d = 5;
    let xa = uniform(rng, &[d], -1.0, 1.0);
    // keep max fusion away from ties
    let xb = Tensor::vector(
        xa.data()
            .iter()
            .map(|&a| {
                let gap = rng.random_range(0.05..0.5);
                if rng.random_bool(0.5) {
                    a + gap
                } else {
                    a - gap
                }
            })
            .collect(),
    );
    let d_out = if rng.random_bool(0.5) { d } else { 2 * d };
    let mut params = FusionParams::new(kind, d, d_out, rng)?;
    if let Some(c) = params.conv.as_mut() {
        c.bias = uniform(rng, &[d_out], -1.0, 1.0);
    }
    let y = fuse(&xa, &xb, &params)?;
    let wts = uniform(rng, y.dims(), -1.0, 1.0);
    let g = fuse_backward(&xa, &xb, &params, &wts)?;
    let mut inputs = vec![&xa, &xb];
    let mut analytic = vec![&g.xa, &g.xb];
    if let (Some(c), Some(gc)) = (params.conv.as_ref(), g.conv.as_ref()) {
        inputs.extend([&c.filters, &c.bias]);
        analytic.extend([&gc.filters, &gc.bias]);
    }
    Packed::new(&inputs).compare(&analytic, |t| {
        let mut p = params.clone();
        if kind == FusionKind::Conv {
            p.conv = Some(ConvFusion {
                filters: t[2].clone(),
                bias: t[3].clone(),
            });
        }
        Ok(dot(&fuse(&t[0], &t[1], &p)?, &wts))
    })
}

fn check_head(rng: &mut SeededRng) -> Result<(f64, usize)> {
    let head = HeadParams::init(6, 4, rng);
    let rep = uniform(rng, &[6], -1.0, 1.0);
    let label = rng.random_range(0..4);
    let (_, gl) = softmax_xent(&classify(&rep, &head)?, label)?;
    let gr = linear_backward(&rep, &head.weight, &gl)?;
    Packed::new(&[&rep, &head.weight, &head.bias]).compare(&[&gr.input, &gr.weight, &gr.bias], |t| {
        let h = HeadParams {
            weight: t[1].clone(),
            bias: t[2].clone(),
        };
        Ok(softmax_xent(&classify(&t[0], &h)?, label)?.0)
    })
}

fn check_sequence_model(rng: &mut SeededRng, seed: u64) -> Result<(f64, usize)> {
    let gru = [GruVariant::Uni, GruVariant::Bi, GruVariant::None][rng.random_range(0..3)];
    let kind = [FusionKind::Sum, FusionKind::Max, FusionKind::Cat, FusionKind::Conv][rng.random_range(0..4)];
    let cfg = TrainConfig {
        streams: Streams::Both,
        gru_direction: gru,
        fusion_kind: kind,
        hidden_dim: 4,
        ..TrainConfig::tiny()
    }
    .sequence_config(5, 3);
    let model = SequenceModel::init(cfg, seed)?;
    let a: Vec<Tensor> = (0..3).map(|_| uniform(rng, &[5], 0.0, 1.0)).collect();
    let b: Vec<Tensor> = (0..3).map(|_| uniform(rng, &[5], 0.0, 1.0)).collect();
    let input = SequenceInput {
        spatial: &a,
        temporal: &b,
    };
    let label = rng.random_range(0..3);
    let (_, _, g) = model.loss_and_grad(&input, label)?;
    let dims: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.dims().to_vec()).collect();
    Packed::new(&model.tensors()).compare(&g.0.tensors(), |t| {
        let mut m = model.clone();
        for (slot, v) in m.tensors_mut().into_iter().zip(t) {
            *slot = v.clone();
        }
        debug_assert_eq!(dims.len(), t.len());
        Ok(softmax_xent(&m.logits(&input)?, label)?.0)
    })
}

/// Loss gradient of a whole C3D network at `samples` random entries of every
/// parameter tensor. Entries whose perturbation flips a ReLU or a pool
/// winner straddle a kink, where differences do not estimate the gradient;
/// they are replaced by other entries.
fn check_c3d(rng: &mut SeededRng, preset: Preset, samples: usize) -> Result<(f64, usize)> {
    let spec = C3dSpec::preset(preset, 4);
    let mut params = C3dParams::init(&spec, rng)?;
    let unit = uniform(rng, &spec.input, 0.0, 1.0);
    let label = rng.random_range(0..4);
    let base = c3d_forward_trace(&unit, &params)?;
    let (_, g_logits) = softmax_xent(&base.logits, label)?;
    let grads = c3d_backward(&params, &base, &g_logits)?;
    let analytic: Vec<Vec<f64>> = grads.0.tensors().iter().map(|t| t.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (ti, g) in analytic.iter().enumerate() {
        let mut idx: Vec<usize> = (0..g.len()).collect();
        idx.shuffle(rng);
        let mut taken = 0;
        for j in idx {
            if taken == samples {
                break;
            }
            let orig = params.tensors()[ti].data()[j];
            params.tensors_mut()[ti].data_mut()[j] = orig + STEP;
            let up = c3d_forward_trace(&unit, &params)?;
            params.tensors_mut()[ti].data_mut()[j] = orig - STEP;
            let down = c3d_forward_trace(&unit, &params)?;
            params.tensors_mut()[ti].data_mut()[j] = orig;
            if !(base.same_pattern(&up) && base.same_pattern(&down)) {
                continue;
            }
            let num = (softmax_xent(&up.logits, label)?.0 - softmax_xent(&down.logits, label)?.0) / (2.0 * STEP);
            worst = worst.max(rel_err(g[j], num));
            taken += 1;
        }
        count += taken;
    }
    Ok((worst, count))
}

/// Settings of [`run_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seeds: Vec<u64>,
    pub preset: Preset,
    /// Entries checked per parameter tensor of the C3D network.
    pub network_samples: usize,
}

impl SuiteConfig {
    /// Ten consecutive seeds starting at `seed`, tiny network.
    pub fn tiny(seed: u64) -> Self {
        Self {
            seeds: (seed..seed + 10).collect(),
            preset: Preset::Tiny,
            network_samples: 12,
        }
    }
}

/// Runs one named check for one seed.
pub fn check_op(op: &str, seed: u64, cfg: &SuiteConfig) -> Result<(f64, usize)> {
    let stream = OPS.iter().position(|&o| o == op).ok_or_else(|| crate::error::invalid!("unknown op {}", op))?;
    let mut rng = seeded(seed, 0x6c00 + stream as u64);
    match op {
        "conv3d" => check_conv3d(&mut rng),
        "maxpool3d" => check_maxpool3d(&mut rng),
        "linear" => check_linear(&mut rng),
        "relu" => check_relu(&mut rng),
        "softmax_xent" => check_softmax_xent(&mut rng),
        "gru_cell" => check_gru_cell(&mut rng),
        "gru_sequence" => check_gru_sequence(&mut rng),
        "fuse_sum" => check_fusion(&mut rng, FusionKind::Sum),
        "fuse_max" => check_fusion(&mut rng, FusionKind::Max),
        "fuse_cat" => check_fusion(&mut rng, FusionKind::Cat),
        "fuse_conv" => check_fusion(&mut rng, FusionKind::Conv),
        "head" => check_head(&mut rng),
        "sequence_model" => check_sequence_model(&mut rng, seed),
        _ => check_c3d(&mut rng, cfg.preset, cfg.network_samples),
    }
}

/// Every op over every seed; one row per op with its worst error.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<OpCheck>> {
    ensure!(!cfg.seeds.is_empty(), "gradient suite needs at least one seed");
    OPS.iter()
        .map(|&op| {
            let mut row = OpCheck {
                op: String::from(op),
                worst: 0.0,
                entries: 0,
            };
            for &seed in &cfg.seeds {
                let (w, n) = check_op(op, seed, cfg)?;
                row.worst = row.worst.max(w);
                row.entries += n;
            }
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((rel_err(1e-9, 0.0) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn small_ops_pass_one_seed() {
        let cfg = SuiteConfig::tiny(0);
        for op in &OPS[..13] {
            let (w, n) = check_op(op, 3, &cfg).unwrap();
            assert!(n > 0);
            assert!(w < 1e-4, "{}: {}", op, w);
        }
    }
}
