use alloc::vec;
use alloc::vec::Vec;

use super::conv::out_extent;
use crate::error::{ensure, invalid, Result};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub window: [usize; 3],
    pub stride: [usize; 3],
    /// Implicit padding; padded cells never win the max.
    pub pad: [usize; 3],
}

impl PoolGeometry {
    pub fn new(window: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            window,
            stride,
            pad: [0; 3],
        }
    }

    pub fn with_pad(mut self, pad: [usize; 3]) -> Self {
        self.pad = pad;
        self
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<[usize; 4]> {
        ensure!(input.len() == 4, "maxpool3d input must be [C,T,H,W], got {:?}", input);
        ensure!(self.stride.iter().all(|&s| s >= 1), "pool stride must be >= 1");
        ensure!(
            (0..3).all(|a| self.pad[a] < self.window[a]),
            "pool padding must be smaller than the window"
        );
        let mut out = [input[0], 0, 0, 0];
        for a in 0..3 {
            out[a + 1] = out_extent(input[a + 1], self.window[a], self.stride[a], self.pad[a])
                .ok_or_else(|| {
                    invalid!(
                        "pool window {:?} larger than padded input {:?}",
                        self.window,
                        input
                    )
                })?;
        }
        Ok(out)
    }
}

/// Max-pool output together with the flat input index that won each window.
pub struct PoolOutput {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Valid input range `[lo, hi)` of each output position along one axis.
fn window_ranges(n: usize, out: usize, window: usize, stride: usize, pad: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|o| {
            let lo = (o * stride) as isize - pad as isize;
            let hi = lo + window as isize;
            (lo.max(0) as usize, (hi.min(n as isize)).max(0) as usize)
        })
        .collect()
}

/// Channel-wise 3D max pooling. Ties resolve to the lowest flat input index.
pub fn maxpool3d(input: &Tensor, g: &PoolGeometry) -> Result<PoolOutput> {
    let [c, to, ho, wo] = g.output_dims(input.dims())?;
    let [t, h, w] = [input.dims()[1], input.dims()[2], input.dims()[3]];
    let rt = window_ranges(t, to, g.window[0], g.stride[0], g.pad[0]);
    let ry = window_ranges(h, ho, g.window[1], g.stride[1], g.pad[1]);
    let rx = window_ranges(w, wo, g.window[2], g.stride[2], g.pad[2]);
    let x = input.data();
    let mut out = vec![0.0f64; c * to * ho * wo];
    let mut arg = vec![0usize; out.len()];
    let mut k = 0;
    for ch in 0..c {
        for &(t0, t1) in &rt {
            for &(y0, y1) in &ry {
                for &(x0, x1) in &rx {
                    let mut best_idx = ((ch * t + t0) * h + y0) * w + x0;
                    let mut best = x[best_idx];
                    // row-major scan, strict comparison: first max wins
                    for it in t0..t1 {
                        for iy in y0..y1 {
                            let row = ((ch * t + it) * h + iy) * w;
                            for (ix, &v) in x[row + x0..row + x1].iter().enumerate() {
                                if v > best {
                                    best = v;
                                    best_idx = row + x0 + ix;
                                }
                            }
                        }
                    }
                    out[k] = best;
                    arg[k] = best_idx;
                    k += 1;
                }
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::from_vec(&[c, to, ho, wo], out)?,
        argmax: arg,
    })
}

/// Routes each output gradient to the input position that won its window.
pub fn maxpool3d_backward(input_dims: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    ensure!(
        argmax.len() == grad_out.len(),
        "argmax has {} entries but grad_out has {}",
        argmax.len(),
        grad_out.len()
    );
    let mut dx = Tensor::zeros(input_dims);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}
