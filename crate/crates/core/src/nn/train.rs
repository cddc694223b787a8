//! Training examples, loss and the Adam optimizer.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Input, Model};
use super::ops::Real;
use super::NnError;
use crate::encode::{TokenSequence, ENCODING_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub encoding_version: u32,
    pub tokens: TokenSequence,
    /// Legal action indices, ascending.
    pub legal: Vec<u16>,
    /// Outcome for the player to move: 1 win, -1 loss, 0 draw.
    pub value: f32,
    /// Search visit distribution aligned with `legal`; absent for
    /// value-only examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<f32>>,
}

impl TrainingExample {
    pub fn new(tokens: TokenSequence, legal: Vec<u16>, value: f32, policy: Option<Vec<f32>>) -> TrainingExample {
        TrainingExample {
            encoding_version: ENCODING_VERSION,
            tokens,
            legal,
            value,
            policy,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Example(m));
        if self.encoding_version != ENCODING_VERSION {
            return bad(format!("encoding version {} (expected {ENCODING_VERSION})", self.encoding_version));
        }
        if self.legal.is_empty() {
            return Err(NnError::EmptyMask);
        }
        if !(-1.0..=1.0).contains(&self.value) {
            return bad(format!("target value {} outside [-1, 1]", self.value));
        }
        if let Some(pi) = &self.policy {
            if pi.len() != self.legal.len() {
                return bad("policy target does not match the legal actions".into());
            }
            let sum: f32 = pi.iter().sum();
            if pi.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-4 {
                return bad(format!("policy target sums to {sum}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Loss terms, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    pub policy: f64,
    pub weight_decay: f64,
    pub total: f64,
    pub examples: usize,
}

pub struct Adam<F: Real> {
    m: Vec<F>,
    v: Vec<F>,
    step: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(params: usize) -> Adam<F> {
        Adam {
            m: vec![F::zero(); params],
            v: vec![F::zero(); params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [F], grad: &[F], cfg: &TrainConfig) {
        self.step += 1;
        let b1 = F::from_f32(cfg.beta1);
        let b2 = F::from_f32(cfg.beta2);
        let lr = F::from_f32(cfg.learning_rate);
        let eps = F::from_f32(cfg.epsilon);
        let c1 = F::one() - b1.powi(self.step as i32);
        let c2 = F::one() - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] = params[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
}

fn inputs<'a>(batch: &'a [TrainingExample], legal: &'a [Vec<usize>]) -> Vec<Input<'a>> {
    batch
        .iter()
        .zip(legal)
        .map(|(ex, l)| Input { seq: &ex.tokens, legal: l })
        .collect()
}

fn legal_lists(batch: &[TrainingExample]) -> Result<Vec<Vec<usize>>, NnError> {
    batch
        .iter()
        .map(|ex| {
            ex.validate()?;
            Ok(ex.legal.iter().map(|&i| i as usize).collect())
        })
        .collect()
}

fn decay_term<F: Real>(model: &Model<F>, wd: f64) -> f64 {
    if wd == 0.0 {
        return 0.0;
    }
    let sq: f64 = model
        .specs()
        .iter()
        .filter(|s| s.decay)
        .flat_map(|s| &model.params[s.offset..s.offset + s.len()])
        .map(|v| {
            let x = v.to_f64().unwrap();
            x * x
        })
        .sum();
    0.5 * wd * sq
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad<F: Real>(
    model: &Model<F>,
    batch: &[TrainingExample],
    weight_decay: f64,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(LossReport, Vec<F>), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let legal = legal_lists(batch)?;
    let cache = model.forward(&inputs(batch, &legal), dropout)?;
    let acts = model.config().actions;
    let inv_b = 1.0 / batch.len() as f64;
    let mut report = LossReport { examples: batch.len(), ..Default::default() };
    let mut dvalue = vec![F::zero(); batch.len()];
    let mut dlogits = vec![F::zero(); batch.len() * acts];
    for (i, ex) in batch.iter().enumerate() {
        let v = cache.values[i].to_f64().unwrap();
        let z = ex.value as f64;
        report.value += (v - z) * (v - z) * inv_b;
        dvalue[i] = F::from(2.0 * (v - z) * (1.0 - v * v) * inv_b).unwrap();
        if let Some(pi) = &ex.policy {
            for (&j, &target) in legal[i].iter().zip(pi) {
                let p = cache.probs[i * acts + j].to_f64().unwrap();
                if target > 0.0 {
                    report.policy -= target as f64 * p.max(1e-30).ln() * inv_b;
                }
                dlogits[i * acts + j] = F::from((p - target as f64) * inv_b).unwrap();
            }
        }
    }
    report.weight_decay = decay_term(model, weight_decay);
    report.total = report.value + report.policy + report.weight_decay;
    if !report.total.is_finite() {
        return Err(NnError::NonFinite(format!(
            "loss is not finite: value {} policy {} decay {} over {} examples",
            report.value, report.policy, report.weight_decay, batch.len()
        )));
    }
    let mut grad = vec![F::zero(); model.params.len()];
    model.backward(&cache, &dvalue, &dlogits, &mut grad);
    if weight_decay != 0.0 {
        let wd = F::from(weight_decay).unwrap();
        for s in model.specs().iter().filter(|s| s.decay) {
            for k in s.offset..s.offset + s.len() {
                grad[k] = grad[k] + wd * model.params[k];
            }
        }
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        let name = model
            .specs()
            .iter()
            .find(|s| k >= s.offset && k < s.offset + s.len())
            .map_or("?", |s| s.name.as_str());
        return Err(NnError::NonFinite(format!("gradient of {name}[{k}] is not finite")));
    }
    Ok((report, grad))
}

/// Loss without gradients, in inference mode.
pub fn evaluate_loss<F: Real>(model: &Model<F>, examples: &[TrainingExample], weight_decay: f64) -> Result<LossReport, NnError> {
    if examples.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let acts = model.config().actions;
    let mut report = LossReport { examples: examples.len(), ..Default::default() };
    let inv = 1.0 / examples.len() as f64;
    for chunk in examples.chunks(512) {
        let legal = legal_lists(chunk)?;
        let cache = model.forward(&inputs(chunk, &legal), None)?;
        for (i, ex) in chunk.iter().enumerate() {
            let v = cache.values[i].to_f64().unwrap();
            report.value += (v - ex.value as f64).powi(2) * inv;
            if let Some(pi) = &ex.policy {
                for (&j, &t) in legal[i].iter().zip(pi) {
                    if t > 0.0 {
                        report.policy -= t as f64 * cache.probs[i * acts + j].to_f64().unwrap().max(1e-30).ln() * inv;
                    }
                }
            }
        }
    }
    report.weight_decay = decay_term(model, weight_decay);
    report.total = report.value + report.policy + report.weight_decay;
    Ok(report)
}

/// One optimizer update on `batch`. On a non-finite loss the model is left
/// untouched and the error carries diagnostics.
pub fn train_step<F: Real>(
    model: &mut Model<F>,
    batch: &[TrainingExample],
    opt: &mut Adam<F>,
    cfg: &TrainConfig,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<LossReport, NnError> {
    let (report, grad) = loss_and_grad(model, batch, cfg.weight_decay as f64, dropout)?;
    opt.update(&mut model.params, &grad, cfg);
    Ok(report)
}
