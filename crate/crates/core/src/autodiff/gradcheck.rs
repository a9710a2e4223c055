//! Central finite-difference gradient checking.
//!
//! The numeric side evaluates the loss closure on plain (unbound) tensors,
//! so it never touches the backward pass it is checking.

use crate::autodiff::{Graph, Tensor};
use crate::error::Result;

/// Worst-case errors observed by [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub max_rel: f64,
    pub max_abs: f64,
    pub elements: usize,
}

/// Central differences of `f` at `inputs`: one gradient tensor per input.
/// `f` must return a one-element tensor.
pub fn central_difference<F>(f: &F, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[k].numel()];
        for e in 0..inputs[k].numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
                let mut data = probe[k].data().to_vec();
                data[e] += delta;
                probe[k] = Tensor::from_vec(data, inputs[k].shape())?;
                Ok(f(&probe)?.item())
            };
            grad[e] = (eval(h)? - eval(-h)?) / (2.0 * h);
        }
        grads.push(Tensor::from_vec(grad, inputs[k].shape())?);
    }
    Ok(grads)
}

/// Compare the backward pass of `f` against central differences.
///
/// An element passes if `|analytic - numeric|` is below `abs_floor` or the
/// relative error (against the larger magnitude) is below `rel_tol`.
pub fn check_gradients<F>(
    f: &F,
    inputs: &[Tensor],
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> std::result::Result<CheckReport, String>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let graph = Graph::new();
    let bound: Vec<Tensor> = inputs.iter().map(|t| graph.leaf(t)).collect();
    let loss = f(&bound).map_err(|e| format!("forward failed: {e}"))?;
    let grads = graph.backward(&loss).map_err(|e| format!("backward failed: {e}"))?;
    let numeric = central_difference(f, inputs, h).map_err(|e| format!("fd failed: {e}"))?;

    let mut report = CheckReport {
        max_rel: 0.0,
        max_abs: 0.0,
        elements: 0,
    };
    for (k, num) in numeric.iter().enumerate() {
        let ana = grads
            .wrt(&bound[k])
            .ok_or_else(|| format!("input {k} has no gradient"))?;
        for e in 0..num.numel() {
            let (a, n) = (ana.data()[e], num.data()[e]);
            let abs = (a - n).abs();
            let scale = a.abs().max(n.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            report.max_abs = report.max_abs.max(abs);
            report.elements += 1;
            if abs > abs_floor && rel > rel_tol {
                return Err(format!(
                    "gradient mismatch at input {k} element {e}: analytic {a:.12e}, numeric {n:.12e}, abs {abs:.3e}, rel {rel:.3e}"
                ));
            }
            if scale > abs_floor {
                report.max_rel = report.max_rel.max(rel);
            }
        }
    }
    Ok(report)
}
