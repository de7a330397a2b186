use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

/// `(fan_in, fan_out)` of a weight shaped `[.., d_in, d_out]`; leading axes
/// (e.g. a convolution's width) count as receptive field.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Config(format!("xavier init needs a weight with >= 2 axes, got {shape:?}")));
    }
    let n = shape.len();
    let receptive: usize = shape[..n - 2].iter().product();
    Ok((shape[n - 2] * receptive, shape[n - 1] * receptive))
}

pub fn xavier_bound(shape: &[usize]) -> Result<f64> {
    let (fan_in, fan_out) = fans(shape)?;
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Entries i.i.d. uniform on `[−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))]`.
pub fn xavier_uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<RealTensor> {
    let bound = xavier_bound(shape)?;
    Ok(RealTensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..=bound)))
}
