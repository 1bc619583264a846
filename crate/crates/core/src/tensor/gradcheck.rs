//! Finite-difference validation of reverse-mode gradients.
//!
//! The checker rebuilds the forward graph from scratch for every probe, so
//! it exercises exactly the same code path training uses. Relative error is
//! `|analytic - numeric| / max(1, |numeric|)`, i.e. absolute error for small
//! gradients and relative error for large ones.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Tape, TensorId};
use crate::error::NumericError;

/// One leaf to perturb: a name (for diagnostics), its shape, and base values.
#[derive(Clone, Debug)]
pub struct GradCheckParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GradCheckParam {
    pub fn new(name: &str, shape: &[usize], values: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            values: values.to_vec(),
        }
    }
}

fn eval_loss<F>(build: &F, params: &[GradCheckParam], values: &[Vec<f64>]) -> f64
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .zip(values)
        .map(|(p, v)| tape.param(&p.shape, v.clone()))
        .collect();
    let loss = build(&mut tape, &ids);
    assert_eq!(tape.numel(loss), 1, "grad_check needs a scalar loss");
    tape.data(loss)[0]
}

/// Checks every component of every parameter. Returns the maximum relative
/// error across all components.
pub fn grad_check<F>(build: F, params: &[GradCheckParam], h: f64) -> Result<f64, NumericError>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    grad_check_sampled(build, params, h, usize::MAX)
}

/// Like [`grad_check`], but probes at most `max_components` evenly spaced
/// components per parameter (always including the first and last). Analytic
/// gradients are still computed for every component in one backward pass;
/// only the finite-difference probes are subsampled.
pub fn grad_check_sampled<F>(
    build: F,
    params: &[GradCheckParam],
    h: f64,
    max_components: usize,
) -> Result<f64, NumericError>
where
    F: Fn(&mut Tape, &[TensorId]) -> TensorId,
{
    assert!(h > 0.0, "step size must be positive");
    assert!(max_components > 0, "need at least one probe per parameter");

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| tape.param(&p.shape, p.values.clone()))
        .collect();
    let loss = build(&mut tape, &ids);
    assert_eq!(tape.numel(loss), 1, "grad_check needs a scalar loss");
    if !tape.data(loss)[0].is_finite() {
        return Err(NumericError {
            context: "loss is non-finite at the base point".into(),
        });
    }
    tape.backward(loss).expect("loss verified scalar above");
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .zip(&ids)
        .map(|(p, &id)| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| alloc::vec![0.0; p.values.len()])
        })
        .collect();
    for (p, grad) in params.iter().zip(&analytic) {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NumericError {
                context: format!("analytic gradient for '{}' is non-finite", p.name),
            });
        }
    }

    let base: Vec<Vec<f64>> = params.iter().map(|p| p.values.clone()).collect();
    let mut max_err = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for j in probe_indices(p.values.len(), max_components) {
            let mut plus = base.clone();
            plus[pi][j] += h;
            let f_plus = eval_loss(&build, params, &plus);
            let mut minus = base.clone();
            minus[pi][j] -= h;
            let f_minus = eval_loss(&build, params, &minus);
            let numeric = (f_plus - f_minus) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(NumericError {
                    context: format!(
                        "finite difference for '{}' component {j} is non-finite",
                        p.name
                    ),
                });
            }
            let err = (analytic[pi][j] - numeric).abs() / numeric.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Evenly spaced component indices, first and last always included.
fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    if max >= len {
        return (0..len).collect();
    }
    if max == 1 {
        return alloc::vec![0];
    }
    let mut out = Vec::with_capacity(max);
    for i in 0..max {
        let idx = i * (len - 1) / (max - 1);
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    out
}
