//! Finite-difference verification of reverse-mode gradients.
//!
//! Central differences on a sampled subset of each parameter tensor, compared
//! against the analytic gradients from a tape. Sampling keeps full-model
//! checks affordable while still touching every parameter tensor.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::tensor::ParamStore;
use crate::Result;

/// Absolute slack added on top of the relative tolerance, so near-zero
/// gradient pairs do not fail on rounding noise.
pub const ABS_TOL: f64 = 1e-8;

#[derive(Debug)]
pub struct GradCheckOutcome {
    /// Number of (parameter, element) pairs compared.
    pub checked: usize,
    /// Worst relative disagreement seen.
    pub max_rel_err: f64,
    /// Human-readable description of each failing comparison.
    pub failures: Vec<String>,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares `grads` against central finite differences of `loss`.
///
/// For every parameter named in `grads`, up to `samples_per_param` elements
/// are drawn (deterministically from `seed`), perturbed by `±eps`, and the
/// difference quotient is required to match the analytic gradient within
/// `rel_tol` (relative to the larger magnitude) plus [`ABS_TOL`].
/// The store is mutated during probing but restored exactly.
pub fn check_param_grads(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
    samples_per_param: usize,
    eps: f64,
    rel_tol: f64,
    seed: u64,
) -> Result<GradCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcome = GradCheckOutcome {
        checked: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    for (name, g) in grads {
        let numel = store.get(name)?.numel();
        if numel != g.len() {
            return Err(crate::Error::shape(format!(
                "gradient for {name:?} has {} elements, parameter has {numel}",
                g.len()
            )));
        }
        let indices = if numel <= samples_per_param {
            (0..numel).collect::<Vec<_>>()
        } else {
            rand::seq::index::sample(&mut rng, numel, samples_per_param).into_vec()
        };
        for idx in indices {
            let orig = store.get(name)?.data[idx];
            store.get_mut(name)?.data[idx] = orig + eps;
            let plus = loss(store)?;
            store.get_mut(name)?.data[idx] = orig - eps;
            let minus = loss(store)?;
            store.get_mut(name)?.data[idx] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            let ad = g[idx];
            let err = (ad - fd).abs();
            let scale = ad.abs().max(fd.abs());
            let rel = err / (scale + 1e-12);
            outcome.checked += 1;
            if rel > outcome.max_rel_err && err > ABS_TOL {
                outcome.max_rel_err = rel;
            }
            if err > rel_tol * scale + ABS_TOL {
                outcome.failures.push(format!(
                    "{name}[{idx}]: analytic {ad:.6e} vs finite-diff {fd:.6e} (rel {rel:.3e})"
                ));
            }
        }
    }
    Ok(outcome)
}
