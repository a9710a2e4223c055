//! The trainable systems: standard VAE, DA baseline, joint VAE with an
//! approximated posterior, joint VAE with a relaxed posterior (DA
//! front-end), the composite graph with the acoustic model, and a plain
//! acoustic-model baseline.
//!
//! All forward passes work on bound tensors during training (gradients
//! recorded) and on plain tensors at inference, where sampling is replaced
//! by the posterior mean.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::layers::{splice, Bind, Linear, LstmStack};
use crate::prob::{
    cross_entropy, hetero_nll, kld_to_standard_normal, mse, reparam_sample, GaussianParams,
    LatentSample,
};
use crate::train::LossWeights;

/// Layer counts and widths for every component. Defaults are desk scale;
/// larger setups are plain config changes.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub decoder_x_layers: usize,
    pub decoder_x_hidden: usize,
    pub decoder_y_layers: usize,
    pub decoder_y_hidden: usize,
    pub da_layers: usize,
    pub da_hidden: usize,
    pub am_layers: usize,
    pub am_hidden: usize,
    pub num_classes: usize,
    pub splice_context: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 8,
            latent_dim: 8,
            encoder_layers: 3,
            encoder_hidden: 32,
            decoder_x_layers: 2,
            decoder_x_hidden: 32,
            decoder_y_layers: 2,
            decoder_y_hidden: 32,
            da_layers: 2,
            da_hidden: 32,
            am_layers: 3,
            am_hidden: 48,
            num_classes: 10,
            splice_context: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature-dim", self.feature_dim),
            ("latent-dim", self.latent_dim),
            ("encoder-layers", self.encoder_layers),
            ("encoder-hidden", self.encoder_hidden),
            ("decoder-x-layers", self.decoder_x_layers),
            ("decoder-x-hidden", self.decoder_x_hidden),
            ("decoder-y-layers", self.decoder_y_layers),
            ("decoder-y-hidden", self.decoder_y_hidden),
            ("da-layers", self.da_layers),
            ("da-hidden", self.da_hidden),
            ("am-layers", self.am_layers),
            ("am-hidden", self.am_hidden),
            ("num-classes", self.num_classes),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Width of a spliced frame.
    pub fn spliced_dim(&self) -> usize {
        (2 * self.splice_context + 1) * self.feature_dim
    }
}

/// Which system a parameter set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Encoder + decoder over the far-field features only.
    Vae,
    /// Feature-mapping network + acoustic model.
    Da,
    /// Joint VAE with the posterior approximated from far-field input alone.
    JvaeApprox,
    /// Joint VAE with a DA front-end feeding the encoder.
    JvaeRelaxed,
    /// Relaxed joint VAE trained end to end with the acoustic model.
    Matched,
    /// Acoustic model trained directly on far-field features.
    Am,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::Da => "da",
            ModelKind::JvaeApprox => "jvae-approx",
            ModelKind::JvaeRelaxed => "jvae-relaxed",
            ModelKind::Matched => "matched",
            ModelKind::Am => "am",
        }
    }
}

/// Two parallel linear heads predicting mean and log-variance.
#[derive(Clone)]
pub struct GaussianHead {
    pub mean: Linear,
    pub log_var: Linear,
}

impl GaussianHead {
    fn init(seed: u64, name: &str, in_dim: usize, out_dim: usize) -> GaussianHead {
        GaussianHead {
            mean: Linear::init(seed, &format!("{name}.mean"), in_dim, out_dim),
            log_var: Linear::init(seed, &format!("{name}.logvar"), in_dim, out_dim),
        }
    }

    fn forward(&self, hidden: &Tensor) -> Result<GaussianParams> {
        GaussianParams::new(self.mean.forward(hidden)?, self.log_var.forward(hidden)?)
    }

    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.mean.for_each_param(&format!("{prefix}.mean"), f);
        self.log_var.for_each_param(&format!("{prefix}.logvar"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.mean.for_each_param_mut(&format!("{prefix}.mean"), f);
        self.log_var
            .for_each_param_mut(&format!("{prefix}.logvar"), f);
    }

    fn bind(&self, graph: &Graph) -> GaussianHead {
        GaussianHead {
            mean: self.mean.bind(graph),
            log_var: self.log_var.bind(graph),
        }
    }
}

/// LSTM stack with a single linear output head.
#[derive(Clone)]
struct Regressor {
    stack: LstmStack,
    head: Linear,
}

impl Regressor {
    fn init(
        seed: u64,
        name: &str,
        layers: usize,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Regressor {
        Regressor {
            stack: LstmStack::init(seed, &format!("{name}.lstm"), layers, in_dim, hidden),
            head: Linear::init(seed, &format!("{name}.out"), hidden, out_dim),
        }
    }

    fn forward(&self, seq: &Tensor) -> Result<Tensor> {
        self.head.forward(&self.stack.forward(seq)?)
    }

    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.stack.for_each_param(&format!("{prefix}.lstm"), f);
        self.head.for_each_param(&format!("{prefix}.out"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.stack
            .for_each_param_mut(&format!("{prefix}.lstm"), f);
        self.head.for_each_param_mut(&format!("{prefix}.out"), f);
    }

    fn bind(&self, graph: &Graph) -> Regressor {
        Regressor {
            stack: self.stack.bind(graph),
            head: self.head.bind(graph),
        }
    }
}

/// LSTM stack with a Gaussian head.
#[derive(Clone)]
struct GaussianNet {
    stack: LstmStack,
    head: GaussianHead,
}

impl GaussianNet {
    fn init(
        seed: u64,
        name: &str,
        layers: usize,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> GaussianNet {
        GaussianNet {
            stack: LstmStack::init(seed, &format!("{name}.lstm"), layers, in_dim, hidden),
            head: GaussianHead::init(seed, name, hidden, out_dim),
        }
    }

    fn forward(&self, seq: &Tensor) -> Result<GaussianParams> {
        self.head.forward(&self.stack.forward(seq)?)
    }

    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.stack.for_each_param(&format!("{prefix}.lstm"), f);
        self.head.for_each(prefix, f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.stack
            .for_each_param_mut(&format!("{prefix}.lstm"), f);
        self.head.for_each_mut(prefix, f);
    }

    fn bind(&self, graph: &Graph) -> GaussianNet {
        GaussianNet {
            stack: self.stack.bind(graph),
            head: self.head.bind(graph),
        }
    }
}

/// Per-term loss values extracted from one forward pass. Absent terms mean
/// the objective does not produce them.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTermValues {
    pub mse_x: Option<f64>,
    pub mse_y: Option<f64>,
    pub kld: Option<f64>,
    pub mse_da: Option<f64>,
    pub ce: Option<f64>,
    pub total: f64,
}

impl LossTermValues {
    /// Weighted sum of the present terms; the logged total must equal this
    /// to 1e-10. The mapping from terms to weights depends on the system:
    /// the DA baseline's own loss is `lambda1 * MSE + lambda2 * CE`, while
    /// the joint objectives weight the DA term with `lambda_da` and
    /// classification with `beta`.
    pub fn weighted_sum(&self, kind: ModelKind, w: &LossWeights) -> f64 {
        let term = |v: Option<f64>, weight: f64| v.map_or(0.0, |v| weight * v);
        match kind {
            ModelKind::Da => term(self.mse_da, w.lambda1) + term(self.ce, w.lambda2),
            ModelKind::Am => term(self.ce, w.beta),
            ModelKind::Vae
            | ModelKind::JvaeApprox
            | ModelKind::JvaeRelaxed
            | ModelKind::Matched => {
                term(self.mse_x, w.lambda1)
                    + term(self.mse_y, w.lambda2)
                    + term(self.kld, w.lambda3)
                    + term(self.mse_da, w.lambda_da)
                    + term(self.ce, w.beta)
            }
        }
    }

    pub fn all_finite(&self) -> Option<&'static str> {
        let checks = [
            ("mse_x", self.mse_x),
            ("mse_y", self.mse_y),
            ("kld", self.kld),
            ("mse_da", self.mse_da),
            ("ce", self.ce),
            ("total", Some(self.total)),
        ];
        for (name, v) in checks {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Some(name);
                }
            }
        }
        None
    }
}

/// Everything one forward pass produced: intermediate tensors for
/// inspection plus the scalar loss tensor to differentiate.
pub struct ForwardTrace {
    pub da_pred: Option<Tensor>,
    pub z_posterior: Option<GaussianParams>,
    pub z_sample: Option<LatentSample>,
    pub x_recon: Option<GaussianParams>,
    pub y_pred: Option<GaussianParams>,
    pub am_logits: Option<Tensor>,
    pub terms: LossTermValues,
    /// Scalar loss; graph-bound when the forward ran on bound parameters.
    pub total: Tensor,
}

impl Default for ForwardTrace {
    fn default() -> Self {
        ForwardTrace {
            da_pred: None,
            z_posterior: None,
            z_sample: None,
            x_recon: None,
            y_pred: None,
            am_logits: None,
            terms: LossTermValues::default(),
            total: Tensor::scalar(0.0),
        }
    }
}

/// Fold `sum_i w_i * term_i` in a fixed term order.
fn weighted_total(parts: &[(f64, &Tensor)]) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for (w, term) in parts {
        let scaled = term.scale(*w);
        acc = Some(match acc {
            None => scaled,
            Some(prev) => prev.add(&scaled)?,
        });
    }
    Ok(acc.unwrap_or_else(|| Tensor::scalar(0.0)))
}

fn require_aligned(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "aligned_pair",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    Ok(())
}

/// One system's parameters. Only the components the kind needs exist.
#[derive(Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub kind: ModelKind,
    da: Option<Regressor>,
    encoder: Option<GaussianNet>,
    decoder_x: Option<GaussianNet>,
    decoder_y: Option<GaussianNet>,
    am: Option<Regressor>,
}

impl Model {
    /// Fresh parameters for `kind`. Components shared between kinds (same
    /// name, same shape) initialize identically for the same seed.
    pub fn new(cfg: &ModelConfig, kind: ModelKind, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let d = cfg.feature_dim;
        let dz = cfg.latent_dim;

        let needs_da = matches!(kind, ModelKind::Da | ModelKind::JvaeRelaxed | ModelKind::Matched);
        let needs_vae = matches!(
            kind,
            ModelKind::Vae | ModelKind::JvaeApprox | ModelKind::JvaeRelaxed | ModelKind::Matched
        );
        let needs_y_decoder = matches!(
            kind,
            ModelKind::JvaeApprox | ModelKind::JvaeRelaxed | ModelKind::Matched
        );
        let needs_am = matches!(kind, ModelKind::Da | ModelKind::Matched | ModelKind::Am);

        // The relaxed posterior's encoder sees the raw far-field frame next
        // to the spliced DA prediction.
        let encoder_in = if needs_da && needs_vae {
            d + cfg.spliced_dim()
        } else {
            d
        };

        Ok(Model {
            cfg: cfg.clone(),
            kind,
            da: needs_da.then(|| {
                Regressor::init(seed, "da", cfg.da_layers, d, cfg.da_hidden, d)
            }),
            encoder: needs_vae.then(|| {
                GaussianNet::init(
                    seed,
                    "encoder",
                    cfg.encoder_layers,
                    encoder_in,
                    cfg.encoder_hidden,
                    dz,
                )
            }),
            decoder_x: needs_vae.then(|| {
                GaussianNet::init(
                    seed,
                    "decoder_x",
                    cfg.decoder_x_layers,
                    dz,
                    cfg.decoder_x_hidden,
                    d,
                )
            }),
            decoder_y: needs_y_decoder.then(|| {
                GaussianNet::init(
                    seed,
                    "decoder_y",
                    cfg.decoder_y_layers,
                    dz + d,
                    cfg.decoder_y_hidden,
                    d,
                )
            }),
            am: needs_am.then(|| {
                Regressor::init(
                    seed,
                    "am",
                    cfg.am_layers,
                    cfg.spliced_dim(),
                    cfg.am_hidden,
                    cfg.num_classes,
                )
            }),
        })
    }

    /// Copy whose parameters are tracked leaves of `graph`.
    pub fn bind(&self, graph: &Graph) -> Model {
        Model {
            cfg: self.cfg.clone(),
            kind: self.kind,
            da: self.da.as_ref().map(|c| c.bind(graph)),
            encoder: self.encoder.as_ref().map(|c| c.bind(graph)),
            decoder_x: self.decoder_x.as_ref().map(|c| c.bind(graph)),
            decoder_y: self.decoder_y.as_ref().map(|c| c.bind(graph)),
            am: self.am.as_ref().map(|c| c.bind(graph)),
        }
    }

    /// Visit all parameters in a fixed, name-stable order.
    pub fn for_each_param(&self, f: &mut dyn FnMut(String, &Tensor)) {
        if let Some(c) = &self.da {
            c.for_each("da", f);
        }
        if let Some(c) = &self.encoder {
            c.for_each("encoder", f);
        }
        if let Some(c) = &self.decoder_x {
            c.for_each("decoder_x", f);
        }
        if let Some(c) = &self.decoder_y {
            c.for_each("decoder_y", f);
        }
        if let Some(c) = &self.am {
            c.for_each("am", f);
        }
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(c) = &mut self.da {
            c.for_each_mut("da", f);
        }
        if let Some(c) = &mut self.encoder {
            c.for_each_mut("encoder", f);
        }
        if let Some(c) = &mut self.decoder_x {
            c.for_each_mut("decoder_x", f);
        }
        if let Some(c) = &mut self.decoder_y {
            c.for_each_mut("decoder_y", f);
        }
        if let Some(c) = &mut self.am {
            c.for_each_mut("am", f);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, t| n += t.numel());
        n
    }

    fn da_net(&self) -> Result<&Regressor> {
        self.da
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} model has no DA network", self.kind.name())))
    }

    fn encoder_net(&self) -> Result<&GaussianNet> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} model has no encoder", self.kind.name())))
    }

    fn decoder_x_net(&self) -> Result<&GaussianNet> {
        self.decoder_x.as_ref().ok_or_else(|| {
            Error::Config(format!("{} model has no feature decoder", self.kind.name()))
        })
    }

    fn decoder_y_net(&self) -> Result<&GaussianNet> {
        self.decoder_y.as_ref().ok_or_else(|| {
            Error::Config(format!("{} model has no target decoder", self.kind.name()))
        })
    }

    fn am_net(&self) -> Result<&Regressor> {
        self.am.as_ref().ok_or_else(|| {
            Error::Config(format!("{} model has no acoustic model", self.kind.name()))
        })
    }

    /// Standard VAE on the far-field features: reconstruction NLL plus KL
    /// to the isotropic prior.
    pub fn vae_forward(
        &self,
        x: &Tensor,
        noise: &Tensor,
        w: &LossWeights,
    ) -> Result<ForwardTrace> {
        let z_post = self.encoder_net()?.forward(x)?;
        let sample = reparam_sample(&z_post, noise)?;
        let x_recon = self.decoder_x_net()?.forward(&sample.value)?;
        let mse_x = hetero_nll(x, &x_recon)?;
        let kld = kld_to_standard_normal(&z_post)?;
        let total = weighted_total(&[(w.lambda1, &mse_x), (w.lambda3, &kld)])?;
        Ok(ForwardTrace {
            z_posterior: Some(z_post),
            z_sample: Some(sample),
            x_recon: Some(x_recon),
            terms: LossTermValues {
                mse_x: Some(mse_x.item()),
                kld: Some(kld.item()),
                total: total.item(),
                ..Default::default()
            },
            total,
            ..Default::default()
        })
    }

    /// DA baseline: feature mapping trained jointly with the acoustic model.
    pub fn da_forward(
        &self,
        x: &Tensor,
        y: &Tensor,
        labels: &[usize],
        w: &LossWeights,
    ) -> Result<ForwardTrace> {
        require_aligned(x, y)?;
        let da_pred = self.da_net()?.forward(x)?;
        let logits = self
            .am_net()?
            .forward(&splice(&da_pred, self.cfg.splice_context)?)?;
        let mse_da = mse(y, &da_pred)?;
        let ce = cross_entropy(&logits, labels)?;
        let total = weighted_total(&[(w.lambda1, &mse_da), (w.lambda2, &ce)])?;
        Ok(ForwardTrace {
            da_pred: Some(da_pred),
            am_logits: Some(logits),
            terms: LossTermValues {
                mse_da: Some(mse_da.item()),
                ce: Some(ce.item()),
                total: total.item(),
                ..Default::default()
            },
            total,
            ..Default::default()
        })
    }

    /// Joint VAE with the approximated posterior: encode from x alone,
    /// reconstruct x from the latent and predict y from latent plus x.
    ///
    /// With `detach_y_path` the target-decoder branch receives detached
    /// copies of the latent sample and the input, so no gradient reaches
    /// shared components through it; combined with a zero y weight this
    /// degenerates to the standard VAE step for step.
    pub fn jvae_approx_forward(
        &self,
        x: &Tensor,
        y: &Tensor,
        noise: &Tensor,
        w: &LossWeights,
        detach_y_path: bool,
    ) -> Result<ForwardTrace> {
        require_aligned(x, y)?;
        // x-side first, in the same construction order as vae_forward.
        let z_post = self.encoder_net()?.forward(x)?;
        let sample = reparam_sample(&z_post, noise)?;
        let x_recon = self.decoder_x_net()?.forward(&sample.value)?;
        let mse_x = hetero_nll(x, &x_recon)?;
        let kld = kld_to_standard_normal(&z_post)?;

        let (z_in, x_in) = if detach_y_path {
            (sample.value.detach(), x.detach())
        } else {
            (sample.value.clone(), x.clone())
        };
        let y_pred = self
            .decoder_y_net()?
            .forward(&Tensor::concat(&[&z_in, &x_in], 1)?)?;
        let mse_y = hetero_nll(y, &y_pred)?;

        let total = weighted_total(&[
            (w.lambda1, &mse_x),
            (w.lambda2, &mse_y),
            (w.lambda3, &kld),
        ])?;
        Ok(ForwardTrace {
            z_posterior: Some(z_post),
            z_sample: Some(sample),
            x_recon: Some(x_recon),
            y_pred: Some(y_pred),
            terms: LossTermValues {
                mse_x: Some(mse_x.item()),
                mse_y: Some(mse_y.item()),
                kld: Some(kld.item()),
                total: total.item(),
                ..Default::default()
            },
            total,
            ..Default::default()
        })
    }

    /// Joint VAE with the relaxed posterior: a DA front-end predicts the
    /// close-talk features, whose spliced frames join the raw input as
    /// encoder input. With `y = None` this is the inference path: the
    /// prediction is produced and no loss terms exist.
    pub fn jvae_relaxed_forward(
        &self,
        x: &Tensor,
        y: Option<&Tensor>,
        noise: &Tensor,
        w: &LossWeights,
    ) -> Result<ForwardTrace> {
        if let Some(y) = y {
            require_aligned(x, y)?;
        }
        let da_pred = self.da_net()?.forward(x)?;
        let enc_in = Tensor::concat(&[x, &splice(&da_pred, self.cfg.splice_context)?], 1)?;
        let z_post = self.encoder_net()?.forward(&enc_in)?;
        let sample = reparam_sample(&z_post, noise)?;
        let x_recon = self.decoder_x_net()?.forward(&sample.value)?;
        let y_pred = self
            .decoder_y_net()?
            .forward(&Tensor::concat(&[&sample.value, x], 1)?)?;

        let (terms, total) = match y {
            None => (LossTermValues::default(), Tensor::scalar(0.0)),
            Some(y) => {
                let mse_x = hetero_nll(x, &x_recon)?;
                let mse_y = hetero_nll(y, &y_pred)?;
                let kld = kld_to_standard_normal(&z_post)?;
                let mse_da = mse(y, &da_pred)?;
                let total = weighted_total(&[
                    (w.lambda1, &mse_x),
                    (w.lambda2, &mse_y),
                    (w.lambda3, &kld),
                    (w.lambda_da, &mse_da),
                ])?;
                (
                    LossTermValues {
                        mse_x: Some(mse_x.item()),
                        mse_y: Some(mse_y.item()),
                        kld: Some(kld.item()),
                        mse_da: Some(mse_da.item()),
                        ce: None,
                        total: total.item(),
                    },
                    total,
                )
            }
        };
        Ok(ForwardTrace {
            da_pred: Some(da_pred),
            z_posterior: Some(z_post),
            z_sample: Some(sample),
            x_recon: Some(x_recon),
            y_pred: Some(y_pred),
            am_logits: None,
            terms,
            total,
        })
    }

    /// Matched-scenario composite: relaxed joint VAE plus the acoustic
    /// model consuming the spliced predicted close-talk mean. The mean is
    /// not detached, so classification gradients reach every component.
    pub fn matched_forward(
        &self,
        x: &Tensor,
        y: &Tensor,
        labels: &[usize],
        noise: &Tensor,
        w: &LossWeights,
    ) -> Result<ForwardTrace> {
        let mut trace = self.jvae_relaxed_forward(x, Some(y), noise, w)?;
        let mu_ihm = &trace.y_pred.as_ref().expect("relaxed forward sets y_pred").mean;
        let logits = self
            .am_net()?
            .forward(&splice(mu_ihm, self.cfg.splice_context)?)?;
        let ce = cross_entropy(&logits, labels)?;
        let total = trace.total.add(&ce.scale(w.beta))?;
        trace.terms.ce = Some(ce.item());
        trace.terms.total = total.item();
        trace.am_logits = Some(logits);
        trace.total = total;
        Ok(trace)
    }

    /// Acoustic model trained directly on (spliced) input features.
    pub fn am_forward(&self, x: &Tensor, labels: &[usize], w: &LossWeights) -> Result<ForwardTrace> {
        let logits = self
            .am_net()?
            .forward(&splice(x, self.cfg.splice_context)?)?;
        let ce = cross_entropy(&logits, labels)?;
        let total = weighted_total(&[(w.beta, &ce)])?;
        Ok(ForwardTrace {
            am_logits: Some(logits),
            terms: LossTermValues {
                ce: Some(ce.item()),
                total: total.item(),
                ..Default::default()
            },
            total,
            ..Default::default()
        })
    }

    /// Deterministic enhancement of far-field features: the latent is the
    /// posterior mean and the output is the predicted close-talk mean. No
    /// close-talk data is accepted or read.
    pub fn enhance(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.detach();
        match self.kind {
            ModelKind::Am | ModelKind::Vae => Ok(x),
            ModelKind::Da => self.da_net()?.forward(&x),
            ModelKind::JvaeApprox => {
                let z_post = self.encoder_net()?.forward(&x)?;
                let y_pred = self
                    .decoder_y_net()?
                    .forward(&Tensor::concat(&[&z_post.mean, &x], 1)?)?;
                Ok(y_pred.mean)
            }
            ModelKind::JvaeRelaxed | ModelKind::Matched => {
                let da_pred = self.da_net()?.forward(&x)?;
                let enc_in =
                    Tensor::concat(&[&x, &splice(&da_pred, self.cfg.splice_context)?], 1)?;
                let z_post = self.encoder_net()?.forward(&enc_in)?;
                let y_pred = self
                    .decoder_y_net()?
                    .forward(&Tensor::concat(&[&z_post.mean, &x], 1)?)?;
                Ok(y_pred.mean)
            }
        }
    }

    /// Frame labels by arg-max over the acoustic model's logits.
    pub fn classify(&self, features: &Tensor) -> Result<Vec<usize>> {
        let logits = self
            .am_net()?
            .forward(&splice(&features.detach(), self.cfg.splice_context)?)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.num_rows())
        .map(|t| {
            let row = logits.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub const CHECKPOINT_TAG: &str = "JVAE-CKPT-1";

/// Write all parameters as a flat container of named f64 arrays: a text
/// manifest (name, shape, byte offset into the data section) followed by a
/// DATA marker and raw little-endian doubles.
pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.for_each_param(&mut |name, t| {
        entries.push((name, t.shape().to_vec(), t.data().to_vec()));
    });
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<std::fs::File>, s: String| -> Result<()> {
        out.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    };
    write(&mut out, format!("{CHECKPOINT_TAG}\n"))?;
    write(&mut out, format!("{}\n", entries.len()))?;
    let mut offset = 0usize;
    for (name, shape, data) in &entries {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        write(
            &mut out,
            format!("{} {} {} {}\n", name, shape.len(), dims.join(" "), offset),
        )?;
        offset += data.len() * 8;
    }
    write(&mut out, "DATA\n".to_string())?;
    for (_, _, data) in &entries {
        for v in data {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Load a checkpoint into a model built from the same configuration.
/// Names and shapes must match exactly.
pub fn load_checkpoint(path: &Path, model: &mut Model) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let mut line = String::new();
    let mut line_no = 0usize;
    let read_line = |reader: &mut BufReader<std::fs::File>,
                     line: &mut String,
                     line_no: &mut usize|
     -> Result<String> {
        line.clear();
        *line_no += 1;
        let n = reader
            .read_line(line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(&path_str, *line_no, "unexpected end of file"));
        }
        Ok(line.trim_end().to_string())
    };

    let tag = read_line(&mut reader, &mut line, &mut line_no)?;
    if tag != CHECKPOINT_TAG {
        return Err(Error::IncompatibleCheckpoint(format!(
            "bad version tag {tag:?}, expected {CHECKPOINT_TAG:?}"
        )));
    }
    let count: usize = read_line(&mut reader, &mut line, &mut line_no)?
        .parse()
        .map_err(|_| Error::parse(&path_str, line_no, "bad entry count"))?;

    let mut manifest: BTreeMap<String, (Vec<usize>, usize)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for _ in 0..count {
        let entry = read_line(&mut reader, &mut line, &mut line_no)?;
        let fields: Vec<&str> = entry.split_whitespace().collect();
        let bad = || Error::parse(&path_str, line_no, format!("bad manifest entry {entry:?}"));
        if fields.len() < 3 {
            return Err(bad());
        }
        let name = fields[0].to_string();
        let ndim: usize = fields[1].parse().map_err(|_| bad())?;
        if fields.len() != 3 + ndim {
            return Err(bad());
        }
        let mut shape = Vec::with_capacity(ndim);
        for d in 0..ndim {
            shape.push(fields[2 + d].parse().map_err(|_| bad())?);
        }
        let offset: usize = fields[2 + ndim].parse().map_err(|_| bad())?;
        order.push(name.clone());
        manifest.insert(name, (shape, offset));
    }
    let marker = read_line(&mut reader, &mut line, &mut line_no)?;
    if marker != "DATA" {
        return Err(Error::parse(&path_str, line_no, "missing DATA marker"));
    }
    let mut raw = Vec::new();
    reader
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(path, e))?;

    // The model decides which names must exist; extra or missing names are
    // incompatibilities either way.
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    model.for_each_param(&mut |name, t| expected.push((name, t.shape().to_vec())));
    if expected.len() != order.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{} arrays in file, model has {}",
            order.len(),
            expected.len()
        )));
    }
    for (name, shape) in &expected {
        match manifest.get(name) {
            None => {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "missing array {name:?}"
                )))
            }
            Some((file_shape, _)) if file_shape != shape => {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "array {name:?} has shape {file_shape:?}, model expects {shape:?}"
                )))
            }
            Some((file_shape, offset)) => {
                let numel: usize = file_shape.iter().product();
                if offset + numel * 8 > raw.len() {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "array {name:?} extends past end of data section"
                    )));
                }
            }
        }
    }

    model.for_each_param_mut(&mut |name, t| {
        let (shape, offset) = &manifest[&name];
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let at = offset + i * 8;
            let bytes: [u8; 8] = raw[at..at + 8].try_into().expect("sized read");
            data.push(f64::from_le_bytes(bytes));
        }
        *t = Tensor::from_vec(data, shape).expect("validated shape");
    });
    Ok(())
}
