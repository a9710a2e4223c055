//! Interactive browser demo backed by the core training stack.
//!
//! Three operations are exposed to the page: corpus synthesis with
//! adjustable channel distortion, stepwise training with live loss traces,
//! and enhancement of held-out utterances with per-frame error curves.
//! Everything returns plain JSON strings so the page needs no framework.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use jvae_core::data::{generate_utterances, ParallelUtterance, SynthConfig};
use jvae_core::train::{evaluate, LossWeights, Objective, Trainer, TrainConfig};

#[derive(Serialize)]
struct StepRow {
    step: u64,
    epoch: u64,
    mse_x: Option<f64>,
    mse_y: Option<f64>,
    kld: Option<f64>,
    mse_da: Option<f64>,
    ce: Option<f64>,
    total: f64,
}

#[derive(Serialize)]
struct UtterancePreview {
    id: String,
    frames: usize,
    dim: usize,
    far_field: Vec<Vec<f64>>,
    close_talk: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

#[derive(Serialize)]
struct EnhancePreview {
    id: String,
    frames: usize,
    dim: usize,
    far_field: Vec<Vec<f64>>,
    close_talk: Vec<Vec<f64>>,
    enhanced: Vec<Vec<f64>>,
    labels: Vec<usize>,
    predicted: Option<Vec<usize>>,
    raw_distance: Vec<f64>,
    enhanced_distance: Vec<f64>,
    frame_error_pct: Option<f64>,
    mean_enhancement_gain: f64,
}

fn rows_of(m: &jvae_core::Tensor) -> Vec<Vec<f64>> {
    (0..m.shape()[0]).map(|t| m.row(t).to_vec()).collect()
}

fn frame_distances(a: &jvae_core::Tensor, b: &jvae_core::Tensor) -> Vec<f64> {
    (0..a.shape()[0])
        .map(|t| {
            a.row(t)
                .iter()
                .zip(b.row(t))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// One training session over a freshly generated synthetic corpus.
#[wasm_bindgen]
pub struct Demo {
    trainer: Trainer,
    eval_utts: Vec<ParallelUtterance>,
    done: bool,
}

#[wasm_bindgen]
impl Demo {
    /// Build a corpus and a trainer. `objective` is one of vae, da,
    /// jvae-approx, matched, am; `weights` is
    /// "lambda1,lambda2,lambda3,lambda-da,beta".
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u32,
        noise_std: f64,
        rir_len: u32,
        train_utts: u32,
        eval_utts: u32,
        epochs: u32,
        objective: &str,
        weights: &str,
    ) -> Result<Demo, String> {
        let synth = SynthConfig {
            noise_std,
            rir_kernel_length: rir_len as usize,
            seed: seed as u64,
            ..SynthConfig::default()
        };
        let total = (train_utts + eval_utts) as usize;
        let mut utts =
            generate_utterances(&synth, total, (16, 28)).map_err(|e| e.to_string())?;
        let eval = utts.split_off(train_utts as usize);

        let mut cfg = TrainConfig {
            objective: Objective::parse(objective).map_err(|e| e.to_string())?,
            epochs: epochs as usize,
            batch_size: 4,
            seed: seed as u64,
            ..TrainConfig::default()
        };
        cfg.weights = parse_weights(weights)?;
        let trainer = Trainer::new(cfg, utts).map_err(|e| e.to_string())?;
        Ok(Demo {
            trainer,
            eval_utts: eval,
            done: false,
        })
    }

    /// Total steps the configured run will take.
    pub fn total_steps(&self) -> u32 {
        (self.trainer.steps_per_epoch() * self.trainer.cfg.epochs as u64) as u32
    }

    pub fn current_step(&self) -> u32 {
        self.trainer.global_step() as u32
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Run up to `n` minibatches; returns the logged rows as JSON.
    pub fn train_steps(&mut self, n: u32) -> Result<String, String> {
        let mut rows = Vec::new();
        for _ in 0..n {
            match self.trainer.step().map_err(|e| e.to_string())? {
                Some(row) => rows.push(StepRow {
                    step: row.step,
                    epoch: row.epoch,
                    mse_x: row.terms.mse_x,
                    mse_y: row.terms.mse_y,
                    kld: row.terms.kld,
                    mse_da: row.terms.mse_da,
                    ce: row.terms.ce,
                    total: row.terms.total,
                }),
                None => {
                    self.done = true;
                    break;
                }
            }
        }
        serde_json::to_string(&rows).map_err(|e| e.to_string())
    }

    /// A training utterance as JSON (far-field and close-talk heatmaps).
    pub fn preview(&self, index: u32) -> Result<String, String> {
        let utts = self.trainer.utterances();
        let utt = utts
            .get(index as usize)
            .ok_or_else(|| format!("index {index} out of range ({})", utts.len()))?;
        let p = UtterancePreview {
            id: utt.id.clone(),
            frames: utt.frames(),
            dim: utt.far_field.shape()[1],
            far_field: rows_of(&utt.far_field),
            close_talk: rows_of(&utt.close_talk),
            labels: utt.labels.clone(),
        };
        serde_json::to_string(&p).map_err(|e| e.to_string())
    }

    pub fn num_eval_utterances(&self) -> u32 {
        self.eval_utts.len() as u32
    }

    /// Enhance one held-out utterance with the current parameters and
    /// report per-frame distances to the close-talk target.
    pub fn enhance_eval(&self, index: u32) -> Result<String, String> {
        let utt = self
            .eval_utts
            .get(index as usize)
            .ok_or_else(|| format!("index {index} out of range ({})", self.eval_utts.len()))?;
        let model = &self.trainer.model;
        let enhanced = model.enhance(&utt.far_field).map_err(|e| e.to_string())?;
        let predicted = model.classify(&enhanced).ok();
        let raw_distance = frame_distances(&utt.far_field, &utt.close_talk);
        let enhanced_distance = frame_distances(&enhanced, &utt.close_talk);
        let frame_error_pct = predicted.as_ref().map(|p| {
            let wrong = p
                .iter()
                .zip(&utt.labels)
                .filter(|(a, b)| a != b)
                .count();
            100.0 * wrong as f64 / utt.frames() as f64
        });
        let gain = raw_distance
            .iter()
            .zip(&enhanced_distance)
            .map(|(r, e)| r - e)
            .sum::<f64>()
            / utt.frames() as f64;
        let p = EnhancePreview {
            id: utt.id.clone(),
            frames: utt.frames(),
            dim: utt.far_field.shape()[1],
            far_field: rows_of(&utt.far_field),
            close_talk: rows_of(&utt.close_talk),
            enhanced: rows_of(&enhanced),
            labels: utt.labels.clone(),
            predicted,
            raw_distance,
            enhanced_distance,
            frame_error_pct,
            mean_enhancement_gain: gain,
        };
        serde_json::to_string(&p).map_err(|e| e.to_string())
    }

    /// Frame error and mean enhancement gain over the whole held-out split.
    pub fn evaluate_holdout(&self) -> Result<String, String> {
        let no_enhance = matches!(self.trainer.cfg.objective, Objective::Am);
        let report = evaluate(&self.trainer.model, &self.eval_utts, no_enhance)
            .map_err(|e| e.to_string())?;
        Ok(format!(
            "{{\"frame_error_pct\":{},\"mean_enhancement_gain\":{}}}",
            report.frame_error_pct, report.mean_enhancement_gain
        ))
    }
}

fn parse_weights(s: &str) -> Result<LossWeights, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(format!("weights need 5 values, got {}", parts.len()));
    }
    let mut vals = [0.0f64; 5];
    for (i, p) in parts.iter().enumerate() {
        vals[i] = p.parse().map_err(|_| format!("bad weight {p:?}"))?;
    }
    let w = LossWeights {
        lambda1: vals[0],
        lambda2: vals[1],
        lambda3: vals[2],
        lambda_da: vals[3],
        beta: vals[4],
    };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_demo(objective: &str) -> Demo {
        Demo::new(7, 0.3, 3, 8, 3, 2, objective, "1,1,1,1,1").unwrap()
    }

    #[test]
    fn trains_and_reports_rows() {
        let mut demo = small_demo("matched");
        assert_eq!(demo.total_steps(), 4);
        let rows: Vec<serde_json::Value> =
            serde_json::from_str(&demo.train_steps(3).unwrap()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0]["total"].as_f64().unwrap().is_finite());
        assert!(rows[0]["ce"].as_f64().is_some());
        assert_eq!(demo.current_step(), 3);

        // Exhausting the schedule flips the done flag and stops.
        let rows: Vec<serde_json::Value> =
            serde_json::from_str(&demo.train_steps(10).unwrap()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(demo.is_done());
    }

    #[test]
    fn preview_and_enhancement_shapes_agree() {
        let demo = small_demo("matched");
        let p: serde_json::Value = serde_json::from_str(&demo.preview(0).unwrap()).unwrap();
        let frames = p["frames"].as_u64().unwrap() as usize;
        assert_eq!(p["far_field"].as_array().unwrap().len(), frames);
        assert_eq!(p["labels"].as_array().unwrap().len(), frames);

        assert_eq!(demo.num_eval_utterances(), 3);
        let e: serde_json::Value = serde_json::from_str(&demo.enhance_eval(1).unwrap()).unwrap();
        let frames = e["frames"].as_u64().unwrap() as usize;
        assert_eq!(e["enhanced"].as_array().unwrap().len(), frames);
        assert_eq!(e["raw_distance"].as_array().unwrap().len(), frames);
        assert!(e["frame_error_pct"].as_f64().is_some());

        let report: serde_json::Value =
            serde_json::from_str(&demo.evaluate_holdout().unwrap()).unwrap();
        assert!(report["frame_error_pct"].as_f64().unwrap() >= 0.0);
    }

    #[test]
    fn vae_objective_has_no_classifier_but_still_enhances() {
        let demo = small_demo("vae");
        let e: serde_json::Value = serde_json::from_str(&demo.enhance_eval(0).unwrap()).unwrap();
        assert!(e["predicted"].is_null());
        assert!(e["frame_error_pct"].is_null());
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(Demo::new(1, 0.3, 3, 4, 2, 1, "nonsense", "1,1,1,1,1").is_err());
        assert!(Demo::new(1, 0.3, 3, 4, 2, 1, "matched", "1,1").is_err());
        assert!(Demo::new(1, -0.5, 3, 4, 2, 1, "matched", "1,1,1,1,1").is_err());
        let demo = small_demo("matched");
        assert!(demo.preview(999).is_err());
    }
}
