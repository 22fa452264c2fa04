use crate::error::{Error, Result};
use crate::tensor::{Activation, Real, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-3;

fn check<T: Real>(y: &Tensor<T>, z: &Tensor<T>, eps: f64) -> Result<()> {
    if y.shape() != z.shape() {
        return Err(Error::shape(format!(
            "charbonnier: target {:?} vs prediction {:?}",
            y.shape(),
            z.shape()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::config("charbonnier epsilon must be positive"));
    }
    Ok(())
}

/// `sum sqrt((y - sigma(z))^2 + eps^2)` over all elements, accumulated in f64.
pub fn charbonnier_loss<T: Real>(y: &Tensor<T>, z_tilde: &Tensor<T>, sigma: Activation, eps: f64) -> Result<f64> {
    check(y, z_tilde, eps)?;
    let e2 = eps * eps;
    Ok(y.data()
        .iter()
        .zip(z_tilde.data())
        .map(|(&t, &z)| {
            let r = t.as_f64() - sigma.apply_scalar(z.as_f64());
            (r * r + e2).sqrt()
        })
        .sum())
}

/// Loss and its gradient with respect to `z_tilde`.
pub fn charbonnier_grad<T: Real>(
    y: &Tensor<T>,
    z_tilde: &Tensor<T>,
    sigma: Activation,
    eps: f64,
) -> Result<(f64, Tensor<T>)> {
    check(y, z_tilde, eps)?;
    let e2 = eps * eps;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for (&t, &z) in y.data().iter().zip(z_tilde.data()) {
        let z = z.as_f64();
        let r = t.as_f64() - sigma.apply_scalar(z);
        let s = (r * r + e2).sqrt();
        loss += s;
        grad.push(T::of(-r / s * sigma.derivative(z)));
    }
    let (c, h, w) = y.shape();
    Ok((loss, Tensor::new(c, h, w, grad)?))
}
