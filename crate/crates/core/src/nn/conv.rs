//! 3D cross-correlation over `[C, T, H, W]` volumes.
//!
//! Both passes lower one output time slice at a time to a matrix product
//! (im2col), which bounds the scratch buffer to `C·kT·kH·kW × Ho·Wo`.

use alloc::vec;

use crate::error::{ensure, Result};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self { stride, pad }
    }

    pub fn unit() -> Self {
        Self::new([1; 3], [0; 3])
    }
}

pub struct Conv3dGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Output extent along one axis, or `None` if the kernel does not fit.
pub(crate) fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    (stride >= 1 && k >= 1 && padded >= k).then(|| (padded - k) / stride + 1)
}

struct Shapes {
    c: usize,
    t: usize,
    h: usize,
    w: usize,
    o: usize,
    k: [usize; 3],
    out: [usize; 3],
}

fn check(input: &Tensor, weight: &Tensor, bias: &Tensor, g: &Conv3dGeometry) -> Result<Shapes> {
    ensure!(input.rank() == 4, "conv3d input must be [C,T,H,W], got {:?}", input.dims());
    ensure!(
        weight.rank() == 5,
        "conv3d weight must be [O,C,kT,kH,kW], got {:?}",
        weight.dims()
    );
    let [c, t, h, w] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let wd = weight.dims();
    ensure!(
        wd[1] == c,
        "conv3d channel mismatch: input has {} channels, weight expects {}",
        c,
        wd[1]
    );
    ensure!(
        bias.dims() == [wd[0]],
        "conv3d bias must be [{}], got {:?}",
        wd[0],
        bias.dims()
    );
    ensure!(g.stride.iter().all(|&s| s >= 1), "conv3d stride must be >= 1");
    let k = [wd[2], wd[3], wd[4]];
    let mut out = [0; 3];
    for (a, n) in [t, h, w].into_iter().enumerate() {
        out[a] = out_extent(n, k[a], g.stride[a], g.pad[a]).ok_or_else(|| {
            crate::error::invalid!(
                "conv3d kernel {:?} does not fit input {:?} with pad {:?}",
                k,
                input.dims(),
                g.pad
            )
        })?;
    }
    Ok(Shapes {
        c,
        t,
        h,
        w,
        o: wd[0],
        k,
        out,
    })
}

/// Fills `cols` (`[C·kT·kH·kW, Ho·Wo]`) for output time slice `ot`.
fn im2col_slice(x: &[f64], s: &Shapes, g: &Conv3dGeometry, ot: usize, cols: &mut [f64]) {
    let [kt, kh, kw] = s.k;
    let [_, ho, wo] = s.out;
    let n = ho * wo;
    let mut row = 0;
    for c in 0..s.c {
        for dt in 0..kt {
            let it = (ot * g.stride[0] + dt) as isize - g.pad[0] as isize;
            for dy in 0..kh {
                for dx in 0..kw {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    row += 1;
                    if it < 0 || it as usize >= s.t {
                        dst.fill(0.0);
                        continue;
                    }
                    let plane = &x[(c * s.t + it as usize) * s.h * s.w..][..s.h * s.w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride[1] + dy) as isize - g.pad[1] as isize;
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy as usize >= s.h {
                            drow.fill(0.0);
                            continue;
                        }
                        let srow = &plane[iy as usize * s.w..][..s.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride[2] + dx) as isize - g.pad[2] as isize;
                            *d = if ix < 0 || ix as usize >= s.w {
                                0.0
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` for output slice `ot` back into `dx`.
fn col2im_slice(cols: &[f64], s: &Shapes, g: &Conv3dGeometry, ot: usize, dx: &mut [f64]) {
    let [kt, kh, kw] = s.k;
    let [_, ho, wo] = s.out;
    let n = ho * wo;
    let mut row = 0;
    for c in 0..s.c {
        for dt in 0..kt {
            let it = (ot * g.stride[0] + dt) as isize - g.pad[0] as isize;
            for dy in 0..kh {
                for dxk in 0..kw {
                    let src = &cols[row * n..(row + 1) * n];
                    row += 1;
                    if it < 0 || it as usize >= s.t {
                        continue;
                    }
                    let plane = &mut dx[(c * s.t + it as usize) * s.h * s.w..][..s.h * s.w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride[1] + dy) as isize - g.pad[1] as isize;
                        if iy < 0 || iy as usize >= s.h {
                            continue;
                        }
                        let drow = &mut plane[iy as usize * s.w..][..s.w];
                        for ox in 0..wo {
                            let ix = (ox * g.stride[2] + dxk) as isize - g.pad[2] as isize;
                            if ix >= 0 && (ix as usize) < s.w {
                                drow[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] = beta·c + a[m×k] · b[k×n]`, all row-major unless strides say
/// otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller-provided strides address only elements inside the
    // slices: a is m×k, b is k×n and c is m×n row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward 3D cross-correlation (no kernel flip) with zero padding.
pub fn conv3d(input: &Tensor, weight: &Tensor, bias: &Tensor, g: &Conv3dGeometry) -> Result<Tensor> {
    let s = check(input, weight, bias, g)?;
    let [to, ho, wo] = s.out;
    let n = ho * wo;
    let kk = s.c * s.k.iter().product::<usize>();
    let mut out = vec![0.0f64; s.o * to * n];
    let mut cols = vec![0.0f64; kk * n];
    let mut slice = vec![0.0f64; s.o * n];
    for ot in 0..to {
        im2col_slice(input.data(), &s, g, ot, &mut cols);
        gemm(s.o, kk, n, weight.data(), (kk, 1), &cols, (n, 1), 0.0, &mut slice);
        for o in 0..s.o {
            let b = bias.data()[o];
            let dst = &mut out[(o * to + ot) * n..][..n];
            for (d, v) in dst.iter_mut().zip(&slice[o * n..(o + 1) * n]) {
                *d = v + b;
            }
        }
    }
    Tensor::from_vec(&[s.o, to, ho, wo], out)
}

/// Gradients of `conv3d` given the upstream gradient `grad_out`.
///
/// The input gradient is skipped when `need_input` is false (first layer).
pub fn conv3d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    g: &Conv3dGeometry,
    need_input: bool,
) -> Result<Conv3dGrads> {
    let bias = Tensor::zeros(&[weight.dims().first().copied().unwrap_or(0)]);
    let s = check(input, weight, &bias, g)?;
    let [to, ho, wo] = s.out;
    ensure!(
        grad_out.dims() == [s.o, to, ho, wo],
        "conv3d grad_out must be {:?}, got {:?}",
        [s.o, to, ho, wo],
        grad_out.dims()
    );
    let n = ho * wo;
    let kk = s.c * s.k.iter().product::<usize>();
    let mut dw = vec![0.0f64; s.o * kk];
    let mut db = vec![0.0f64; s.o];
    let mut dx = if need_input {
        Some(vec![0.0f64; input.len()])
    } else {
        None
    };
    let mut cols = vec![0.0f64; kk * n];
    let mut gslice = vec![0.0f64; s.o * n];
    let go = grad_out.data();
    for ot in 0..to {
        for o in 0..s.o {
            let src = &go[(o * to + ot) * n..][..n];
            gslice[o * n..(o + 1) * n].copy_from_slice(src);
            db[o] += src.iter().sum::<f64>();
        }
        im2col_slice(input.data(), &s, g, ot, &mut cols);
        // dW += G[o×n] · colsᵀ[n×kk]
        gemm(s.o, n, kk, &gslice, (n, 1), &cols, (1, n), 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            // dcols[kk×n] = Wᵀ[kk×o] · G[o×n]
            gemm(kk, s.o, n, weight.data(), (1, kk), &gslice, (n, 1), 0.0, &mut cols);
            col2im_slice(&cols, &s, g, ot, dx);
        }
    }
    Ok(Conv3dGrads {
        input: dx
            .map(|d| Tensor::from_vec(input.dims(), d))
            .transpose()?,
        weight: Tensor::from_vec(weight.dims(), dw)?,
        bias: Tensor::vector(db),
    })
}
