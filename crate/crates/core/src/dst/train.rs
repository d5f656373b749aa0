use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::data::Example;
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, ParamKind, Seq2Seq};
use crate::rng::SeededRng;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer steps.
    pub steps: usize,
    /// Examples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches whose gradients are summed before each step.
    pub grad_accum: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 8,
            grad_accum: 1,
            lr: 3e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::config(
                "batch_size and grad_accum must be at least 1",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || self.max_grad_norm < 0.0 || self.eps <= 0.0 {
            return Err(Error::config(
                "weight_decay, max_grad_norm and eps must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Which tensors the optimizer updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    /// Adapter tensors only; the backbone stays frozen.
    Adapters,
    /// Every backbone tensor (pretraining without adapters).
    Base,
}

impl TrainTarget {
    fn kind(self) -> ParamKind {
        match self {
            TrainTarget::Adapters => ParamKind::Adapter,
            TrainTarget::Base => ParamKind::Base,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub target: TrainTarget,
    pub steps: usize,
    pub examples_seen: usize,
    /// Mean loss of each optimizer step.
    pub losses: Vec<f64>,
    pub trainable_params: usize,
    pub total_params: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// AdamW with decoupled weight decay.
#[derive(Default)]
struct AdamW {
    t: i32,
    moments: HashMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    fn step(&mut self, cfg: &TrainConfig, name: &str, param: &mut Tensor, grad: &Tensor) {
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, p) in param.data_mut().iter_mut().enumerate() {
            let g = grad.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            *p -= cfg.lr * (update + cfg.weight_decay * *p);
        }
    }
}

/// Loss of one example and its gradient for every tensor of `kind`.
pub fn example_gradients(
    model: &Seq2Seq,
    ex: &Example,
    kind: ParamKind,
) -> Result<(f64, Vec<(String, Tensor)>)> {
    let mut g = Graph::new();
    let opts = ForwardOptions {
        train_base: kind == ParamKind::Base,
    };
    let loss = model.loss(&mut g, &ex.input, &ex.target, opts)?;
    let value = g.value(loss).item();
    g.backward(loss)?;
    let mut grads = Vec::new();
    for (name, k, _) in model.params() {
        if k != kind {
            continue;
        }
        if let Some(v) = g.param_var(&name) {
            if let Some(gr) = g.grad(v) {
                grads.push((name, gr.clone()));
            }
        }
    }
    Ok((value, grads))
}

/// Minimizes the mean next-token loss over `examples`. Examples are drawn
/// in shuffled epochs from a generator seeded by `cfg.seed`.
pub fn train(
    model: &mut Seq2Seq,
    examples: &[Example],
    cfg: &TrainConfig,
    target: TrainTarget,
) -> Result<TrainReport> {
    cfg.validate()?;
    let kind = target.kind();
    let trainable_params = model.param_count(Some(kind));
    let total_params = model.param_count(None);
    if trainable_params == 0 && cfg.steps > 0 {
        return Err(Error::contract(format!("no {kind:?} parameters to train")));
    }
    if examples.is_empty() && cfg.steps > 0 {
        return Err(Error::contract("no training examples"));
    }
    let mut rng = SeededRng::derived(cfg.seed, "train-order");
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut opt = AdamW::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    let per_step = cfg.batch_size * cfg.grad_accum;

    for step in 0..cfg.steps {
        let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut loss_sum = 0.0;
        for _ in 0..per_step {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let (loss, grads) = example_gradients(model, &examples[idx], kind)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss is {loss} at step {step} on example {idx}"
                )));
            }
            loss_sum += loss;
            for (name, gr) in grads {
                match acc.get_mut(&name) {
                    Some(t) => t.add_assign(&gr),
                    None => {
                        acc.insert(name, gr);
                    }
                }
            }
        }
        let scale = 1.0 / per_step as f64;
        let mut norm_sq = 0.0;
        for t in acc.values_mut() {
            for x in t.data_mut() {
                *x *= scale;
                norm_sq += *x * *x;
            }
        }
        if !norm_sq.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient at step {step}"
            )));
        }
        let clip = if cfg.max_grad_norm > 0.0 && norm_sq.sqrt() > cfg.max_grad_norm {
            cfg.max_grad_norm / norm_sq.sqrt()
        } else {
            1.0
        };
        opt.t += 1;
        for (name, k, param) in model.params_mut() {
            if k != kind {
                continue;
            }
            if let Some(gr) = acc.get_mut(&name) {
                if clip != 1.0 {
                    for x in gr.data_mut() {
                        *x *= clip;
                    }
                }
                opt.step(cfg, &name, param, gr);
            }
        }
        let mean = loss_sum * scale;
        if step % 50 == 0 || step + 1 == cfg.steps {
            log::info!("step {step:>5}  loss {mean:.4}");
        }
        losses.push(mean);
    }
    Ok(TrainReport {
        target,
        steps: cfg.steps,
        examples_seen: cfg.steps * per_step,
        losses,
        trainable_params,
        total_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{attach_adapters, DualLoraConfig};
    use crate::model::{EncoderInput, ModelConfig};

    fn tiny() -> Seq2Seq {
        Seq2Seq::new(
            ModelConfig {
                vocab_size: 270,
                d_model: 16,
                n_heads: 2,
                d_ff: 32,
                n_encoder_layers: 1,
                n_decoder_layers: 1,
                max_seq_len: 16,
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap()
    }

    fn copy_set() -> Vec<Example> {
        (0..6)
            .map(|i| {
                let seq = vec![260 + i % 5, 261 + (i * 3) % 8, 259 + (i * 7) % 11];
                Example {
                    input: EncoderInput {
                        context: vec![seq.clone()],
                        prompt: vec![],
                    },
                    target: seq,
                }
            })
            .collect()
    }

    #[test]
    fn base_training_learns_copy() {
        let mut m = tiny();
        let data = copy_set();
        let cfg = TrainConfig {
            steps: 300,
            batch_size: 6,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let report = train(&mut m, &data, &cfg, TrainTarget::Base).unwrap();
        assert!(
            report.final_loss().unwrap() < 0.05,
            "{:?}",
            report.final_loss()
        );
        for ex in &data {
            assert_eq!(m.greedy_decode(&ex.input, 5).unwrap(), ex.target);
        }
    }

    #[test]
    fn adapter_training_keeps_base_bits() {
        let mut m = tiny();
        attach_adapters(
            &mut m,
            &DualLoraConfig {
                rank: 2,
                ..DualLoraConfig::default()
            },
        )
        .unwrap();
        let before: Vec<Tensor> = m
            .params()
            .into_iter()
            .filter(|(_, k, _)| *k == ParamKind::Base)
            .map(|(_, _, t)| t.clone())
            .collect();
        let data: Vec<Example> = copy_set()
            .into_iter()
            .map(|mut e| {
                e.input.prompt = vec![265, 266];
                e
            })
            .collect();
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let r = train(&mut m, &data, &cfg, TrainTarget::Adapters).unwrap();
        assert_eq!(r.losses.len(), 5);
        let after: Vec<&Tensor> = m
            .params()
            .into_iter()
            .filter(|(_, k, _)| *k == ParamKind::Base)
            .map(|(_, _, t)| t)
            .collect();
        assert!(before.iter().zip(after).all(|(a, b)| a.bit_eq(b)));
    }

    #[test]
    fn zero_steps_changes_nothing() {
        let mut m = tiny();
        attach_adapters(
            &mut m,
            &DualLoraConfig {
                rank: 2,
                ..DualLoraConfig::default()
            },
        )
        .unwrap();
        let snapshot = m.clone();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        train(&mut m, &copy_set(), &cfg, TrainTarget::Adapters).unwrap();
        assert_eq!(m, snapshot);
    }

    #[test]
    fn nan_loss_aborts() {
        let mut m = tiny();
        m.token_embedding.data_mut()[0] = f64::NAN;
        let err = train(
            &mut m,
            &copy_set(),
            &TrainConfig::default(),
            TrainTarget::Base,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut m = tiny();
            let cfg = TrainConfig {
                steps: 10,
                batch_size: 3,
                seed: 4,
                ..TrainConfig::default()
            };
            train(&mut m, &copy_set(), &cfg, TrainTarget::Base).unwrap();
            m
        };
        assert_eq!(run(), run());
    }
}
