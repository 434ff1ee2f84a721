//! Uniform access to the learnable tensors of a model.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::Tensor;

/// A fixed, ordered collection of named learnable tensors.
///
/// Gradients are stored in a value of the same type (see [`GradStore`]), so
/// `tensors()` of a parameter set and of its gradients line up index by
/// index.
pub trait ParamSet: Clone {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Same structure with every tensor zeroed.
    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        out
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Gradients for a parameter set `P`, shape-matched to it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore<P: ParamSet>(pub P);

impl<P: ParamSet> GradStore<P> {
    pub fn zeros_for(params: &P) -> Self {
        Self(params.zeros_like())
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &GradStore<P>) -> Result<()> {
        let src = other.0.tensors();
        let dst = self.0.tensors_mut();
        ensure!(src.len() == dst.len(), "gradient stores differ in structure");
        for (d, s) in dst.into_iter().zip(src) {
            d.axpy(1.0, s)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.tensors_mut().into_iter().for_each(|t| t.scale(alpha));
    }

    /// Concatenation of all gradient entries in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Sum of per-sample gradients in the order given, then scaled by `scale`.
///
/// The fixed summation order keeps the result independent of how the
/// per-sample gradients were scheduled across workers.
pub fn reduce_in_order<P: ParamSet>(
    template: &P,
    grads: &[GradStore<P>],
    scale: f64,
) -> Result<GradStore<P>> {
    let mut total = GradStore::zeros_for(template);
    for g in grads {
        total.accumulate(g)?;
    }
    total.scale(scale);
    Ok(total)
}

/// Overwrites every tensor of `params` with the tensor `lookup` returns for
/// its name, checking shapes. Nothing is modified on error.
pub fn assign_named<'a, P: ParamSet>(
    params: &mut P,
    mut lookup: impl FnMut(&str) -> Option<&'a Tensor>,
) -> Result<()> {
    let mut found = Vec::new();
    for (name, slot) in params.named_tensors() {
        let t = lookup(&name).ok_or_else(|| crate::error::invalid!("missing tensor {}", name))?;
        ensure!(
            t.dims() == slot.dims(),
            "tensor {} has shape {:?}, expected {:?}",
            name,
            t.dims(),
            slot.dims()
        );
        found.push(t);
    }
    for (slot, t) in params.tensors_mut().into_iter().zip(found) {
        *slot = t.clone();
    }
    Ok(())
}
