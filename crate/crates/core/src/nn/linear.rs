use crate::error::{ensure, Result};
use crate::Tensor;

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    ensure!(weight.rank() == 2, "linear weight must be [D_out, D_in], got {:?}", weight.dims());
    let (d_out, d_in) = (weight.dims()[0], weight.dims()[1]);
    ensure!(
        input.len() == d_in,
        "linear expects input length {}, got {}",
        d_in,
        input.len()
    );
    ensure!(bias.dims() == [d_out], "linear bias must be [{}], got {:?}", d_out, bias.dims());
    Ok((d_out, d_in))
}

/// `y = W x + b`; `x` may have any shape with `D_in` elements.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d_out, d_in) = check(input, weight, bias)?;
    let x = input.data();
    let w = weight.data();
    let y = (0..d_out)
        .map(|o| {
            let row = &w[o * d_in..(o + 1) * d_in];
            bias.data()[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Ok(Tensor::vector(y))
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let bias = Tensor::zeros(&[weight.dims().first().copied().unwrap_or(0)]);
    let (d_out, d_in) = check(input, weight, &bias)?;
    ensure!(grad_out.len() == d_out, "linear grad_out must have {} entries", d_out);
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut dw = Tensor::zeros(weight.dims());
    let mut dx = Tensor::zeros(input.dims());
    {
        let dwd = dw.data_mut();
        let dxd = dx.data_mut();
        for o in 0..d_out {
            let go = g[o];
            if go == 0.0 {
                continue;
            }
            let row = &w[o * d_in..(o + 1) * d_in];
            let drow = &mut dwd[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                drow[i] = go * x[i];
                dxd[i] += go * row[i];
            }
        }
    }
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: Tensor::vector(g.to_vec()),
    })
}
