use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// The forward output; `y > 0` exactly where `x > 0`.
#[derive(Debug, Clone)]
pub struct ReluCache {
    output: Tensor,
}

impl ReluCache {
    /// Which units were active.
    pub fn active(&self) -> impl Iterator<Item = bool> + '_ {
        self.output.data().iter().map(|&y| y > 0.0)
    }
}

pub fn relu_in_place(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn relu_forward(x: &Tensor) -> (Tensor, ReluCache) {
    relu_forward_owned(x.clone())
}

/// [`relu_forward`] reusing the input's storage; the cache shares the output.
pub fn relu_forward_owned(mut x: Tensor) -> (Tensor, ReluCache) {
    relu_in_place(&mut x);
    (x.clone(), ReluCache { output: x })
}

/// Passes the gradient where the input was positive; the subgradient at 0 is 0.
pub fn relu_backward(grad_y: &Tensor, cache: ReluCache) -> Result<Tensor> {
    let mut g = grad_y.clone();
    relu_backward_in_place(&mut g, &cache)?;
    Ok(g)
}

/// [`relu_backward`] overwriting the upstream gradient.
pub fn relu_backward_in_place(grad: &mut Tensor, cache: &ReluCache) -> Result<()> {
    if grad.shape() != cache.output.shape() {
        return Err(Error::shape(format!(
            "relu backward expects grad of shape {}, got {}",
            cache.output.shape(),
            grad.shape()
        )));
    }
    for (gv, &y) in grad.data_mut().iter_mut().zip(cache.output.data()) {
        if y <= 0.0 {
            *gv = 0.0 as Real;
        }
    }
    Ok(())
}
