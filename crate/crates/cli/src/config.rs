//! Flat `key = value` configuration files.
//!
//! Keys mirror the training/model field names (kebab-case); `#` starts a
//! comment. Every key is optional and falls back to the built-in default,
//! unknown keys are rejected.

use std::path::Path;

use jvae_core::train::{Objective, TrainConfig};

use crate::{CliError, CliResult};

pub fn parse_config_str(text: &str, origin: &str) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{origin}:{line_no}: expected 'key = value'"))
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value)
            .map_err(|m| CliError::Usage(format!("{origin}:{line_no}: {m}")))?;
    }
    cfg.validate().map_err(CliError::from)?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> CliResult<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text, &path.display().to_string())
}

fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
        value
            .parse::<T>()
            .map_err(|_| format!("bad value {value:?} for {key}"))
    }
    match key {
        "objective" => cfg.objective = Objective::parse(value).map_err(|e| e.to_string())?,
        "feature-dim" => cfg.model.feature_dim = num(key, value)?,
        "latent-dim" => cfg.model.latent_dim = num(key, value)?,
        "encoder-layers" => cfg.model.encoder_layers = num(key, value)?,
        "encoder-hidden" => cfg.model.encoder_hidden = num(key, value)?,
        "decoder-x-layers" => cfg.model.decoder_x_layers = num(key, value)?,
        "decoder-x-hidden" => cfg.model.decoder_x_hidden = num(key, value)?,
        "decoder-y-layers" => cfg.model.decoder_y_layers = num(key, value)?,
        "decoder-y-hidden" => cfg.model.decoder_y_hidden = num(key, value)?,
        "da-layers" => cfg.model.da_layers = num(key, value)?,
        "da-hidden" => cfg.model.da_hidden = num(key, value)?,
        "am-layers" => cfg.model.am_layers = num(key, value)?,
        "am-hidden" => cfg.model.am_hidden = num(key, value)?,
        "num-classes" => cfg.model.num_classes = num(key, value)?,
        "splice-context" => cfg.model.splice_context = num(key, value)?,
        "lambda1" => cfg.weights.lambda1 = num(key, value)?,
        "lambda2" => cfg.weights.lambda2 = num(key, value)?,
        "lambda3" => cfg.weights.lambda3 = num(key, value)?,
        "lambda-da" => cfg.weights.lambda_da = num(key, value)?,
        "beta" => cfg.weights.beta = num(key, value)?,
        "learning-rate" => cfg.optim.learning_rate = num(key, value)?,
        "beta-moments" => {
            let (b1, b2) = value
                .split_once(',')
                .ok_or_else(|| format!("beta-moments needs two values, got {value:?}"))?;
            cfg.optim.beta1 = num("beta-moments", b1.trim())?;
            cfg.optim.beta2 = num("beta-moments", b2.trim())?;
        }
        "epsilon" => cfg.optim.epsilon = num(key, value)?,
        "gradient-clip-norm" => cfg.gradient_clip_norm = num(key, value)?,
        "epochs" => cfg.epochs = num(key, value)?,
        "batch-size" => cfg.batch_size = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "detach-y-path" => {
            cfg.detach_y_path = match value {
                "true" => true,
                "false" => false,
                other => return Err(format!("bad value {other:?} for detach-y-path")),
            }
        }
        other => return Err(format!("unknown key {other:?}")),
    }
    Ok(())
}

/// Parse `--weights l1,l2,l3,lda,beta`.
pub fn parse_weights(s: &str) -> CliResult<jvae_core::train::LossWeights> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(CliError::Usage(format!(
            "--weights needs 5 comma-separated values (lambda1,lambda2,lambda3,lambda-da,beta), got {}",
            parts.len()
        )));
    }
    let mut vals = [0.0f64; 5];
    for (i, p) in parts.iter().enumerate() {
        vals[i] = p
            .parse()
            .map_err(|_| CliError::Usage(format!("bad weight {p:?}")))?;
    }
    let w = jvae_core::train::LossWeights {
        lambda1: vals[0],
        lambda2: vals[1],
        lambda3: vals[2],
        lambda_da: vals[3],
        beta: vals[4],
    };
    w.validate().map_err(CliError::from)?;
    Ok(w)
}
