//! Fusion of the spatial-stream and temporal-stream representations.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::params::ParamSet;
use crate::rng::SeededRng;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Sum,
    Max,
    Cat,
    Conv,
}

impl FusionKind {
    pub fn code(self) -> f64 {
        match self {
            FusionKind::Sum => 0.0,
            FusionKind::Max => 1.0,
            FusionKind::Cat => 2.0,
            FusionKind::Conv => 3.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(FusionKind::Sum),
            1 => Some(FusionKind::Max),
            2 => Some(FusionKind::Cat),
            3 => Some(FusionKind::Conv),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Sum => "sum",
            FusionKind::Max => "max",
            FusionKind::Cat => "cat",
            FusionKind::Conv => "conv",
        }
    }

    /// Length of the fused vector for `D`-long inputs.
    pub fn output_dim(self, d: usize, conv_out: usize) -> usize {
        match self {
            FusionKind::Sum | FusionKind::Max => d,
            FusionKind::Cat => 2 * d,
            FusionKind::Conv => conv_out,
        }
    }
}

/// Filter bank `f` (`2D × D_out`) and bias `b` (`D_out`) of conv fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFusion {
    pub filters: Tensor,
    pub bias: Tensor,
}

impl ConvFusion {
    pub fn init(d: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / libm::sqrt((2 * d) as f64);
        let f = (0..2 * d * d_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            filters: Tensor::from_vec(&[2 * d, d_out], f).expect("dims match"),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    /// Filter bank whose output channel `d` adds the pair `(xa_d, xb_d)`.
    pub fn pair_summing(d: usize) -> Self {
        let mut f = Tensor::zeros(&[2 * d, d]);
        for i in 0..d {
            f.data_mut()[(2 * i) * d + i] = 1.0;
            f.data_mut()[(2 * i + 1) * d + i] = 1.0;
        }
        Self {
            filters: f,
            bias: Tensor::zeros(&[d]),
        }
    }
}

impl ParamSet for ConvFusion {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("f".into(), &self.filters), ("b".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.filters, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub kind: FusionKind,
    /// Present exactly when `kind == Conv`.
    pub conv: Option<ConvFusion>,
}

impl FusionParams {
    pub fn new(kind: FusionKind, d: usize, d_out: usize, rng: &mut SeededRng) -> Result<Self> {
        let conv = if kind == FusionKind::Conv {
            ensure!(
                d_out == d || d_out == 2 * d,
                "conv fusion output must be D or 2D ({} or {}), got {}",
                d,
                2 * d,
                d_out
            );
            Some(ConvFusion::init(d, d_out, rng))
        } else {
            None
        };
        Ok(Self { kind, conv })
    }
}

fn same_len(xa: &Tensor, xb: &Tensor) -> Result<usize> {
    ensure!(
        xa.len() == xb.len(),
        "fusion inputs differ in length: {} vs {}",
        xa.len(),
        xb.len()
    );
    Ok(xa.len())
}

/// `y_d = xa_d + xb_d`.
pub fn fuse_sum(xa: &Tensor, xb: &Tensor) -> Result<Tensor> {
    same_len(xa, xb)?;
    Ok(Tensor::vector(
        xa.data().iter().zip(xb.data()).map(|(a, b)| a + b).collect(),
    ))
}

/// `y_d = max(xa_d, xb_d)`.
pub fn fuse_max(xa: &Tensor, xb: &Tensor) -> Result<Tensor> {
    same_len(xa, xb)?;
    Ok(Tensor::vector(
        xa.data().iter().zip(xb.data()).map(|(&a, &b)| a.max(b)).collect(),
    ))
}

/// Interleaved stacking `(xb_1, xa_1, xb_2, xa_2, ...)`: with 1-based
/// indices `y_{2d} = xa_d` and `y_{2d-1} = xb_d`.
pub fn fuse_cat(xa: &Tensor, xb: &Tensor) -> Result<Tensor> {
    let d = same_len(xa, xb)?;
    let mut y = Vec::with_capacity(2 * d);
    for (a, b) in xa.data().iter().zip(xb.data()) {
        y.push(*b);
        y.push(*a);
    }
    Ok(Tensor::vector(y))
}

/// Inverse of [`fuse_cat`]: returns `(xa, xb)`.
pub fn deinterleave(y: &Tensor) -> Result<(Tensor, Tensor)> {
    ensure!(y.len() % 2 == 0, "interleaved vector must have even length");
    let xb = y.data().iter().step_by(2).copied().collect();
    let xa = y.data().iter().skip(1).step_by(2).copied().collect();
    Ok((Tensor::vector(xa), Tensor::vector(xb)))
}

/// `y = fᵀ · fuse_cat(xa, xb) + b`.
pub fn fuse_conv(xa: &Tensor, xb: &Tensor, params: &ConvFusion) -> Result<Tensor> {
    let d = same_len(xa, xb)?;
    let fd = params.filters.dims();
    ensure!(
        fd.len() == 2 && fd[0] == 2 * d,
        "conv fusion filters must be [{}, D_out], got {:?}",
        2 * d,
        fd
    );
    let d_out = fd[1];
    ensure!(params.bias.dims() == [d_out], "conv fusion bias must be [{}]", d_out);
    let cat = fuse_cat(xa, xb)?;
    let f = params.filters.data();
    let mut y = params.bias.data().to_vec();
    for (j, &c) in cat.data().iter().enumerate() {
        let row = &f[j * d_out..(j + 1) * d_out];
        for (yo, w) in y.iter_mut().zip(row) {
            *yo += w * c;
        }
    }
    Ok(Tensor::vector(y))
}

/// Gradients of a fusion with respect to both inputs (and conv parameters).
pub struct FusionGrads {
    pub xa: Tensor,
    pub xb: Tensor,
    pub conv: Option<ConvFusion>,
}

pub fn fuse(xa: &Tensor, xb: &Tensor, params: &FusionParams) -> Result<Tensor> {
    match params.kind {
        FusionKind::Sum => fuse_sum(xa, xb),
        FusionKind::Max => fuse_max(xa, xb),
        FusionKind::Cat => fuse_cat(xa, xb),
        FusionKind::Conv => {
            let conv = params
                .conv
                .as_ref()
                .ok_or_else(|| crate::error::invalid!("conv fusion without filter bank"))?;
            fuse_conv(xa, xb, conv)
        }
    }
}

/// Backward pass of [`fuse`]. Max routes each gradient to the larger
/// operand, with ties going to `xa`.
pub fn fuse_backward(
    xa: &Tensor,
    xb: &Tensor,
    params: &FusionParams,
    grad_out: &Tensor,
) -> Result<FusionGrads> {
    let d = same_len(xa, xb)?;
    let g = grad_out.data();
    let expected = match (&params.kind, &params.conv) {
        (FusionKind::Conv, Some(c)) => c.bias.len(),
        (kind, _) => kind.output_dim(d, 0),
    };
    ensure!(
        g.len() == expected,
        "fusion gradient has length {}, expected {}",
        g.len(),
        expected
    );
    match params.kind {
        FusionKind::Sum => Ok(FusionGrads {
            xa: grad_out.clone(),
            xb: grad_out.clone(),
            conv: None,
        }),
        FusionKind::Max => {
            let mut ga = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for i in 0..d {
                if xa.data()[i] >= xb.data()[i] {
                    ga[i] = g[i];
                } else {
                    gb[i] = g[i];
                }
            }
            Ok(FusionGrads {
                xa: Tensor::vector(ga),
                xb: Tensor::vector(gb),
                conv: None,
            })
        }
        FusionKind::Cat => {
            let (ga, gb) = deinterleave(grad_out)?;
            Ok(FusionGrads {
                xa: ga,
                xb: gb,
                conv: None,
            })
        }
        FusionKind::Conv => {
            let conv = params
                .conv
                .as_ref()
                .ok_or_else(|| crate::error::invalid!("conv fusion without filter bank"))?;
            let d_out = conv.bias.len();
            let cat = fuse_cat(xa, xb)?;
            let f = conv.filters.data();
            let mut df = vec![0.0; f.len()];
            let mut dcat = vec![0.0; 2 * d];
            for (j, &c) in cat.data().iter().enumerate() {
                let row = &f[j * d_out..(j + 1) * d_out];
                let drow = &mut df[j * d_out..(j + 1) * d_out];
                let mut acc = 0.0;
                for o in 0..d_out {
                    drow[o] = c * g[o];
                    acc += row[o] * g[o];
                }
                dcat[j] = acc;
            }
            let (ga, gb) = deinterleave(&Tensor::vector(dcat))?;
            Ok(FusionGrads {
                xa: ga,
                xb: gb,
                conv: Some(ConvFusion {
                    filters: Tensor::from_vec(conv.filters.dims(), df)?,
                    bias: grad_out.clone(),
                }),
            })
        }
    }
}
