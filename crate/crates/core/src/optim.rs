//! RMSprop with coupled (L2) weight decay.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::params::{GradStore, ParamSet};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.99,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Running average of squared gradients, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub mean_square: Vec<Tensor>,
}

impl RmspropState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        Self {
            mean_square: params.tensors().iter().map(|t| Tensor::zeros_like(t)).collect(),
        }
    }
}

/// One update, elementwise:
///
/// ```text
/// g ← g + λ·θ
/// v ← ρ·v + (1 − ρ)·g²
/// θ ← θ − lr·g / (√v + ε)
/// ```
///
/// Fails without touching anything if a gradient is not finite.
pub fn rmsprop_step<P: ParamSet>(
    params: &mut P,
    grads: &GradStore<P>,
    state: &mut RmspropState,
    cfg: &RmspropConfig,
) -> Result<()> {
    let named = grads.0.named_tensors();
    for (name, g) in &named {
        if let Some((i, v)) = g.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: String::from(name.as_str()),
                index: i,
                value: *v,
            });
        }
    }
    let targets = params.tensors_mut();
    ensure!(
        targets.len() == named.len() && targets.len() == state.mean_square.len(),
        "parameter, gradient and optimizer state structures differ"
    );
    for ((theta, (name, g)), v) in targets.into_iter().zip(&named).zip(&mut state.mean_square) {
        ensure!(
            theta.dims() == g.dims() && theta.dims() == v.dims(),
            "shape mismatch for {}: {:?} / {:?} / {:?}",
            name,
            theta.dims(),
            g.dims(),
            v.dims()
        );
        let th = theta.data_mut();
        for ((t, &gi), vi) in th.iter_mut().zip(g.data()).zip(v.data_mut()) {
            let grad = gi + cfg.weight_decay * *t;
            *vi = cfg.decay * *vi + (1.0 - cfg.decay) * grad * grad;
            *t -= cfg.learning_rate * grad / (libm::sqrt(*vi) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::HeadParams;
    use alloc::vec;

    fn head(w: f64) -> HeadParams {
        HeadParams {
            weight: Tensor::filled(&[1, 1], w),
            bias: Tensor::filled(&[1], w),
        }
    }

    #[test]
    fn single_unit_gradient_step() {
        let mut p = head(0.0);
        let g = GradStore(head(1.0));
        let mut st = RmspropState::new(&p);
        let cfg = RmspropConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        rmsprop_step(&mut p, &g, &mut st, &cfg).unwrap();
        let expected = -1e-3 / (0.01f64.sqrt() + 1e-8);
        assert!((p.weight.data()[0] - expected).abs() < 1e-15);
        assert!((expected + 9.99999e-3).abs() < 1e-8);
        assert!((st.mean_square[0].data()[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop_and_decays_state() {
        let mut p = head(0.4);
        let before = p.clone();
        let mut st = RmspropState::new(&p);
        st.mean_square[0].fill(0.5);
        let cfg = RmspropConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        rmsprop_step(&mut p, &GradStore(head(0.0)), &mut st, &cfg).unwrap();
        assert_eq!(p, before);
        assert!((st.mean_square[0].data()[0] - 0.5 * 0.99).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = head(0.4);
        let before = p.clone();
        let mut st = RmspropState::new(&p);
        let mut g = head(0.0);
        g.bias = Tensor::vector(vec![f64::NAN]);
        let err = rmsprop_step(&mut p, &GradStore(g), &mut st, &RmspropConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref tensor, .. } if tensor == "b"));
        assert_eq!(p, before);
    }

    #[test]
    fn deterministic() {
        let cfg = RmspropConfig::default();
        let run = || {
            let mut p = head(0.3);
            let mut st = RmspropState::new(&p);
            rmsprop_step(&mut p, &GradStore(head(-0.7)), &mut st, &cfg).unwrap();
            (p, st)
        };
        assert_eq!(run(), run());
    }
}
