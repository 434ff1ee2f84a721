//! Gated recurrent sequence encoder over per-unit features.
//!
//! One step computes
//!
//! ```text
//! z = σ(Wz·x + Uz·h' + bz)
//! r = σ(Wr·x + Ur·h' + br)
//! n = tanh(Wh·x + Uh·(r ∘ h') + bh)
//! h = z ∘ h' + (1 − z) ∘ n
//! ```
//!
//! where `h'` is the previous state. Note that `z` gates the previous state,
//! not the candidate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{linear, linear_backward};
use crate::params::{GradStore, ParamSet};
use crate::rng::SeededRng;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Fwd,
    Bwd,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Fwd => "fwd",
            Direction::Bwd => "bwd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

/// Serialized suffixes of the nine tensors, in `GruParams` field order.
pub const GRU_TENSOR_NAMES: [&str; 9] = ["Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh"];

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(&[hidden_dim, input_dim]);
        let u = || Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = || Tensor::zeros(&[hidden_dim]);
        Self {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    /// Uniform `±1/sqrt(hidden_dim)` initialization.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let bound = 1.0 / libm::sqrt(hidden_dim as f64);
        for t in p.tensors_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.dims()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.dims()[0]
    }

    fn validate(&self) -> Result<()> {
        let (h, f) = (self.hidden_dim(), self.input_dim());
        for w in [&self.w_z, &self.w_r, &self.w_h] {
            ensure!(w.dims() == [h, f], "GRU input weights must all be [{}, {}]", h, f);
        }
        for u in [&self.u_z, &self.u_r, &self.u_h] {
            ensure!(u.dims() == [h, h], "GRU recurrent weights must all be [{}, {}]", h, h);
        }
        for b in [&self.b_z, &self.b_r, &self.b_h] {
            ensure!(b.dims() == [h], "GRU biases must all be [{}]", h);
        }
        Ok(())
    }
}

impl ParamSet for GruParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let ts = [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z,
            &self.b_r, &self.b_h,
        ];
        GRU_TENSOR_NAMES
            .iter()
            .zip(ts)
            .map(|(n, t)| (String::from(*n), t))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

/// Prefixed names, e.g. `gru.fwd.Wz`.
pub fn gru_tensor_name(prefix: &str, suffix: &str) -> String {
    format!("{prefix}.{suffix}")
}

/// One GRU step with the gate activations kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub h: Tensor,
    pub z: Tensor,
    pub r: Tensor,
    pub n: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::vector(a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

pub fn gru_cell(x: &Tensor, h_prev: &Tensor, p: &GruParams) -> Result<GruState> {
    p.validate()?;
    let hd = p.hidden_dim();
    ensure!(
        h_prev.len() == hd,
        "hidden state has length {}, expected {}",
        h_prev.len(),
        hd
    );
    ensure!(
        x.len() == p.input_dim(),
        "GRU input has length {}, expected {}",
        x.len(),
        p.input_dim()
    );
    let zero = Tensor::zeros(&[hd]);
    let xz = linear(x, &p.w_z, &p.b_z)?;
    let xr = linear(x, &p.w_r, &p.b_r)?;
    let xh = linear(x, &p.w_h, &p.b_h)?;
    let hz = linear(h_prev, &p.u_z, &zero)?;
    let hr = linear(h_prev, &p.u_r, &zero)?;
    let z = zip_map(&xz, &hz, |a, b| sigmoid(a + b));
    let r = zip_map(&xr, &hr, |a, b| sigmoid(a + b));
    let gated = zip_map(&r, h_prev, |a, b| a * b);
    let hh = linear(&gated, &p.u_h, &zero)?;
    let n = zip_map(&xh, &hh, |a, b| libm::tanh(a + b));
    let h = Tensor::vector(
        (0..hd)
            .map(|i| {
                let zi = z.data()[i];
                zi * h_prev.data()[i] + (1.0 - zi) * n.data()[i]
            })
            .collect(),
    );
    Ok(GruState { h, z, r, n })
}

/// Gradients of one step. Parameter gradients are added into `grads`;
/// returns the gradients with respect to `x` and `h_prev`.
pub fn gru_cell_backward(
    x: &Tensor,
    h_prev: &Tensor,
    st: &GruState,
    p: &GruParams,
    dh: &Tensor,
    grads: &mut GruParams,
) -> Result<(Tensor, Tensor)> {
    let hd = p.hidden_dim();
    let (z, r, n, hp) = (st.z.data(), st.r.data(), st.n.data(), h_prev.data());
    let dh = dh.data();
    let mut dhp = vec![0.0; hd];
    let mut d_az = vec![0.0; hd];
    let mut d_an = vec![0.0; hd];
    for i in 0..hd {
        dhp[i] = dh[i] * z[i];
        let dz = dh[i] * (hp[i] - n[i]);
        let dn = dh[i] * (1.0 - z[i]);
        d_az[i] = dz * z[i] * (1.0 - z[i]);
        d_an[i] = dn * (1.0 - n[i] * n[i]);
    }
    let d_az = Tensor::vector(d_az);
    let d_an = Tensor::vector(d_an);
    let gated = zip_map(&st.r, h_prev, |a, b| a * b);

    // candidate
    let g_wh = linear_backward(x, &p.w_h, &d_an)?;
    let g_uh = linear_backward(&gated, &p.u_h, &d_an)?;
    let d_gated = g_uh.input.data();
    let mut d_ar = vec![0.0; hd];
    for i in 0..hd {
        dhp[i] += d_gated[i] * r[i];
        d_ar[i] = d_gated[i] * hp[i] * r[i] * (1.0 - r[i]);
    }
    let d_ar = Tensor::vector(d_ar);

    let g_wz = linear_backward(x, &p.w_z, &d_az)?;
    let g_uz = linear_backward(h_prev, &p.u_z, &d_az)?;
    let g_wr = linear_backward(x, &p.w_r, &d_ar)?;
    let g_ur = linear_backward(h_prev, &p.u_r, &d_ar)?;

    grads.w_z.axpy(1.0, &g_wz.weight)?;
    grads.w_r.axpy(1.0, &g_wr.weight)?;
    grads.w_h.axpy(1.0, &g_wh.weight)?;
    grads.u_z.axpy(1.0, &g_uz.weight)?;
    grads.u_r.axpy(1.0, &g_ur.weight)?;
    grads.u_h.axpy(1.0, &g_uh.weight)?;
    grads.b_z.axpy(1.0, &d_az)?;
    grads.b_r.axpy(1.0, &d_ar)?;
    grads.b_h.axpy(1.0, &d_an)?;

    let mut dx = g_wz.input;
    dx.axpy(1.0, &g_wr.input)?;
    dx.axpy(1.0, &g_wh.input)?;
    for (i, (a, b)) in g_uz.input.data().iter().zip(g_ur.input.data()).enumerate() {
        dhp[i] += a + b;
    }
    Ok((dx, Tensor::vector(dhp)))
}

/// Forward pass over a sequence, keeping every step for BPTT.
#[derive(Debug, Clone)]
pub struct GruTrace {
    pub direction: Direction,
    /// Inputs in processing order (reversed for `Bwd`).
    inputs: Vec<Tensor>,
    /// `h_0, h_1, ..., h_T` in processing order.
    hidden: Vec<Tensor>,
    pub states: Vec<GruState>,
}

impl GruTrace {
    /// Hidden states `h_1..h_T` in processing order.
    pub fn hidden_states(&self) -> &[Tensor] {
        &self.hidden[1..]
    }

    pub fn final_state(&self) -> &Tensor {
        &self.hidden[self.hidden.len() - 1]
    }
}

/// Runs the cell over `xs` from `h_0 = 0`, in reverse order for `Bwd`.
pub fn gru_sequence(xs: &[Tensor], p: &GruParams, direction: Direction) -> Result<GruTrace> {
    ensure!(!xs.is_empty(), "GRU sequence must have at least one step");
    let inputs: Vec<Tensor> = match direction {
        Direction::Fwd => xs.to_vec(),
        Direction::Bwd => xs.iter().rev().cloned().collect(),
    };
    let mut hidden = Vec::with_capacity(xs.len() + 1);
    hidden.push(Tensor::zeros(&[p.hidden_dim()]));
    let mut states = Vec::with_capacity(xs.len());
    for x in &inputs {
        let st = gru_cell(x, &hidden[hidden.len() - 1], p)?;
        hidden.push(st.h.clone());
        states.push(st);
    }
    Ok(GruTrace {
        direction,
        inputs,
        hidden,
        states,
    })
}

/// Backpropagation through time.
///
/// `grad_hidden[t]` is the loss gradient with respect to the `t`-th hidden
/// state in processing order. Returns parameter gradients and input
/// gradients in the caller's original (not processing) order.
pub fn gru_sequence_backward(
    trace: &GruTrace,
    p: &GruParams,
    grad_hidden: &[Tensor],
) -> Result<(GradStore<GruParams>, Vec<Tensor>)> {
    let steps = trace.states.len();
    ensure!(
        grad_hidden.len() == steps,
        "need one hidden gradient per step ({}), got {}",
        steps,
        grad_hidden.len()
    );
    let mut grads = GruParams::zeros(p.input_dim(), p.hidden_dim());
    let mut dxs = vec![Tensor::zeros(&[p.input_dim()]); steps];
    let mut carry = Tensor::zeros(&[p.hidden_dim()]);
    for t in (0..steps).rev() {
        let mut dh = grad_hidden[t].clone();
        dh.axpy(1.0, &carry)?;
        let (dx, dhp) = gru_cell_backward(
            &trace.inputs[t],
            &trace.hidden[t],
            &trace.states[t],
            p,
            &dh,
            &mut grads,
        )?;
        dxs[t] = dx;
        carry = dhp;
    }
    if trace.direction == Direction::Bwd {
        dxs.reverse();
    }
    Ok((GradStore(grads), dxs))
}

/// Backpropagation when only the final state feeds the loss.
pub fn gru_final_backward(
    trace: &GruTrace,
    p: &GruParams,
    grad_final: &Tensor,
) -> Result<(GradStore<GruParams>, Vec<Tensor>)> {
    let steps = trace.states.len();
    let mut gh = vec![Tensor::zeros(&[p.hidden_dim()]); steps];
    gh[steps - 1] = grad_final.clone();
    gru_sequence_backward(trace, p, &gh)
}

/// Forward trace(s) of `encode_final`.
pub struct EncodeTrace {
    pub fwd: GruTrace,
    pub bwd: Option<GruTrace>,
    pub output: Tensor,
}

/// Final hidden state `h_T`, or `[h_T^fwd ; h_T^bwd]` when a backward
/// parameter set is supplied.
pub fn encode_final_trace(
    xs: &[Tensor],
    fwd: &GruParams,
    bwd: Option<&GruParams>,
) -> Result<EncodeTrace> {
    let tf = gru_sequence(xs, fwd, Direction::Fwd)?;
    let mut out: Vec<f64> = tf.final_state().data().to_vec();
    let tb = match bwd {
        Some(pb) => {
            let tb = gru_sequence(xs, pb, Direction::Bwd)?;
            out.extend_from_slice(tb.final_state().data());
            Some(tb)
        }
        None => None,
    };
    Ok(EncodeTrace {
        fwd: tf,
        bwd: tb,
        output: Tensor::vector(out),
    })
}

pub fn encode_final(xs: &[Tensor], fwd: &GruParams, bwd: Option<&GruParams>) -> Result<Tensor> {
    encode_final_trace(xs, fwd, bwd).map(|t| t.output)
}

/// Gradients of `encode_final` given the gradient of its output.
pub fn encode_final_backward(
    trace: &EncodeTrace,
    fwd: &GruParams,
    bwd: Option<&GruParams>,
    grad_out: &Tensor,
) -> Result<(GradStore<GruParams>, Option<GradStore<GruParams>>, Vec<Tensor>)> {
    let hd = fwd.hidden_dim();
    ensure!(
        grad_out.len() == trace.output.len(),
        "encoding gradient has length {}, expected {}",
        grad_out.len(),
        trace.output.len()
    );
    let g = grad_out.data();
    let (gf, mut dxs) = gru_final_backward(&trace.fwd, fwd, &Tensor::vector(g[..hd].to_vec()))?;
    let gb = match (&trace.bwd, bwd) {
        (Some(tb), Some(pb)) => {
            let (gb, dxb) = gru_final_backward(tb, pb, &Tensor::vector(g[hd..].to_vec()))?;
            for (a, b) in dxs.iter_mut().zip(&dxb) {
                a.axpy(1.0, b)?;
            }
            Some(gb)
        }
        _ => None,
    };
    Ok((gf, gb, dxs))
}

/// Final linear classifier applied to a sequence representation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl HeadParams {
    pub fn init(input_dim: usize, num_classes: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / libm::sqrt(input_dim as f64);
        let w = (0..num_classes * input_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..num_classes).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Tensor::from_vec(&[num_classes, input_dim], w).expect("dims match"),
            bias: Tensor::vector(b),
        }
    }
}

impl ParamSet for HeadParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.weight), ("b".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Logits of the head; the softmax is applied by the loss.
pub fn classify(rep: &Tensor, head: &HeadParams) -> Result<Tensor> {
    linear(rep, &head.weight, &head.bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_params_halve_state() {
        let p = GruParams::zeros(3, 4);
        let v = Tensor::vector(vec![1.0, -2.0, 0.5, 4.0]);
        let st = gru_cell(&Tensor::vector(vec![0.3, 0.1, -0.7]), &v, &p).unwrap();
        assert!(st.z.data().iter().all(|&z| z == 0.5));
        assert!(st.r.data().iter().all(|&r| r == 0.5));
        assert!(st.n.data().iter().all(|&n| n == 0.0));
        assert_eq!(st.h.data(), &[0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn saturated_update_gate_copies_state() {
        let mut p = GruParams::zeros(2, 3);
        p.b_z.fill(20.0);
        let v = Tensor::vector(vec![0.9, -0.4, 0.2]);
        let st = gru_cell(&Tensor::vector(vec![5.0, -5.0]), &v, &p).unwrap();
        for (a, b) in st.h.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_errors() {
        let p = GruParams::zeros(2, 3);
        assert!(gru_cell(&Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &p).is_err());
        assert!(gru_cell(&Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &p).is_err());
        assert!(gru_sequence(&[], &p, Direction::Fwd).is_err());
    }

    #[test]
    fn single_step_sequence_matches_cell() {
        let p = GruParams::init(3, 4, &mut seeded(2, 0));
        let x = Tensor::vector(vec![0.2, -0.1, 0.7]);
        let tr = gru_sequence(core::slice::from_ref(&x), &p, Direction::Fwd).unwrap();
        let st = gru_cell(&x, &Tensor::zeros(&[4]), &p).unwrap();
        assert_eq!(tr.final_state(), &st.h);
    }

    #[test]
    fn zero_params_keep_zero_state() {
        let p = GruParams::zeros(2, 3);
        let xs: Vec<Tensor> = (0..4).map(|i| Tensor::vector(vec![i as f64, 1.0])).collect();
        let tr = gru_sequence(&xs, &p, Direction::Fwd).unwrap();
        assert!(tr.hidden_states().iter().all(|h| h.data().iter().all(|&v| v == 0.0)));
        let enc = encode_final(&xs[..2], &p, None).unwrap();
        assert_eq!(enc, Tensor::zeros(&[3]));
    }

    #[test]
    fn bidirectional_length() {
        let mut rng = seeded(4, 0);
        let pf = GruParams::init(3, 5, &mut rng);
        let pb = GruParams::init(3, 5, &mut rng);
        let xs: Vec<Tensor> = (0..3).map(|i| Tensor::vector(vec![i as f64, 0.5, -1.0])).collect();
        assert_eq!(encode_final(&xs, &pf, Some(&pb)).unwrap().len(), 10);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let head = HeadParams {
            weight: Tensor::zeros(&[4, 3]),
            bias: Tensor::zeros(&[4]),
        };
        let logits = classify(&Tensor::vector(vec![1.0, 2.0, 3.0]), &head).unwrap();
        assert_eq!(logits, Tensor::zeros(&[4]));
    }
}
