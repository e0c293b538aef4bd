//! Sinusoidal position/feature encodings.

use crate::nn::tensor::Tensor;
use crate::{Error, Result};

/// Encodes each component of `values` into `dim / values.len()` interleaved
/// sin/cos features and concatenates them.
///
/// Per component with budget `2K`, frequency `k` of `K` is
/// `w_k = 10000^(-k / K)`, and the slots are
/// `[sin(v*w_0), cos(v*w_0), sin(v*w_1), cos(v*w_1), ...]`.
/// So for a scalar and `dim = 4`: `[sin v, cos v, sin(0.01 v), cos(0.01 v)]`.
///
/// `dim` must be divisible by `2 * values.len()`.
pub fn sinusoidal_encode(values: &[f64], dim: usize) -> Result<Tensor> {
    if values.is_empty() {
        return Err(Error::shape("sinusoidal_encode: empty input"));
    }
    if dim == 0 || dim % (2 * values.len()) != 0 {
        return Err(Error::shape(format!(
            "sinusoidal_encode: dim {dim} not divisible by 2*{}",
            values.len()
        )));
    }
    let per = dim / values.len();
    let freqs = per / 2;
    let mut out = Vec::with_capacity(dim);
    for &v in values {
        for k in 0..freqs {
            let w = 10000f64.powf(-(k as f64) / freqs as f64);
            out.push((v * w).sin());
            out.push((v * w).cos());
        }
    }
    Tensor::from_vec(&[dim], out)
}
