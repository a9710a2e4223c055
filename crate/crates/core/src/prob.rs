//! Probabilistic heads and loss primitives.
//!
//! Every loss reduces the same way: sum over feature dimensions, mean over
//! time frames. Batch averaging happens in the training loop.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Log-variances are clamped to this range before use so exp() stays sane
/// at early training steps.
pub const LOG_VAR_RANGE: (f64, f64) = (-10.0, 10.0);

/// Per-frame diagonal-Gaussian parameters (mean, log sigma^2).
#[derive(Clone)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianParams {
    /// Pairs a mean with a log-variance of identical shape, clamping the
    /// log-variance into [`LOG_VAR_RANGE`].
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<GaussianParams> {
        if mean.shape() != log_var.shape() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_params",
                lhs: mean.shape().to_vec(),
                rhs: log_var.shape().to_vec(),
            });
        }
        let log_var = log_var.clamp(LOG_VAR_RANGE.0, LOG_VAR_RANGE.1);
        Ok(GaussianParams { mean, log_var })
    }

    pub fn shape(&self) -> &[usize] {
        self.mean.shape()
    }
}

/// A reparameterized draw: `value = mean + exp(log_var/2) * noise`.
#[derive(Clone)]
pub struct LatentSample {
    pub value: Tensor,
    pub noise: Tensor,
}

/// Standard-normal noise of the given shape from a seeded stream.
pub fn standard_normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(data, shape).expect("sized buffer")
}

/// Reparameterization trick: the sample is differentiable in mean and
/// log-variance while the noise stays a constant.
pub fn reparam_sample(g: &GaussianParams, noise: &Tensor) -> Result<LatentSample> {
    if noise.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op: "reparam_sample",
            lhs: g.shape().to_vec(),
            rhs: noise.shape().to_vec(),
        });
    }
    let eps = noise.detach();
    let std = g.log_var.scale(0.5).exp();
    let value = g.mean.add(&std.mul(&eps)?)?;
    Ok(LatentSample { value, noise: eps })
}

/// KL( N(mean, diag exp(log_var)) || N(0, I) ), summed over dimensions and
/// averaged over frames: per frame 1/2 sum_d (exp(l) + mu^2 - 1 - l).
pub fn kld_to_standard_normal(g: &GaussianParams) -> Result<Tensor> {
    let frames = g.mean.num_rows() as f64;
    let ones = Tensor::filled(g.shape(), 1.0);
    let elems = g
        .log_var
        .exp()
        .add(&g.mean.square())?
        .sub(&ones)?
        .sub(&g.log_var)?;
    Ok(elems.sum()?.scale(0.5 / frames))
}

/// Heteroscedastic Gaussian negative log-likelihood with the constant term
/// dropped: per frame 1/2 sum_d ((target-mu)^2 exp(-l) + l).
pub fn hetero_nll(target: &Tensor, g: &GaussianParams) -> Result<Tensor> {
    if target.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op: "hetero_nll",
            lhs: target.shape().to_vec(),
            rhs: g.shape().to_vec(),
        });
    }
    let frames = target.num_rows() as f64;
    let residual = target.detach().sub(&g.mean)?;
    let precision = g.log_var.scale(-1.0).exp();
    let elems = residual.square().mul(&precision)?.add(&g.log_var)?;
    Ok(elems.sum()?.scale(0.5 / frames))
}

/// Plain squared error: sum over dimensions, mean over frames.
pub fn mse(target: &Tensor, pred: &Tensor) -> Result<Tensor> {
    if target.shape() != pred.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: target.shape().to_vec(),
            rhs: pred.shape().to_vec(),
        });
    }
    let frames = target.num_rows() as f64;
    let sq = target.detach().sub(pred)?.square();
    Ok(sq.sum()?.scale(1.0 / frames))
}

/// Mean over frames of -log softmax(logits)[label].
///
/// Computed as mean_t [ logsumexp(logits_t) - logits_t[label_t] ] with a
/// constant max shift, so no softmax underflow enters the log.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.shape().len() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::InvalidShape {
            op: "cross_entropy",
            message: format!(
                "logits {:?} vs {} labels",
                logits.shape(),
                labels.len()
            ),
        });
    }
    let (t_len, classes) = (logits.shape()[0], logits.shape()[1]);
    if t_len == 0 {
        return Err(Error::InvalidShape {
            op: "cross_entropy",
            message: "no frames".to_string(),
        });
    }
    let mut onehot = vec![0.0; t_len * classes];
    for (t, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                frame: t,
                label,
                num_classes: classes,
            });
        }
        onehot[t * classes + label] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, &[t_len, classes])?;

    // Row maxima enter only as constants: they shift values, not gradients.
    let mut max_broadcast = vec![0.0; t_len * classes];
    let mut max_total = 0.0;
    for t in 0..t_len {
        let row = logits.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max_broadcast[t * classes..(t + 1) * classes].fill(m);
        max_total += m;
    }
    let shift = Tensor::from_vec(max_broadcast, &[t_len, classes])?;

    let shifted = logits.sub(&shift)?;
    let row_sums = shifted.exp().matmul(&Tensor::filled(&[classes, 1], 1.0))?;
    let lse = row_sums.log().sum()?.add(&Tensor::scalar(max_total))?;
    let picked = logits.mul(&onehot)?.sum()?;
    Ok(lse.sub(&picked)?.scale(1.0 / t_len as f64))
}
