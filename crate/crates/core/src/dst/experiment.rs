//! Leave-one-domain-out comparison of adapter variants on a pretrained
//! backbone.
//!
//! The backbone is trained once, with every weight free, on per-slot state
//! tracking over a separately seeded corpus with the held-out domain
//! removed. It only ever sees bare slot names as prompts. Adapter variants
//! are then trained on the visible domains of the evaluation corpus with
//! full slot prompts and scored on the held-out domain.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::data::{build_shared_tokenizer, training_examples};
use super::eval::{evaluate, EvalOptions};
use super::generator::generate;
use super::split::make_split;
use super::train::{train, TrainConfig, TrainReport, TrainTarget};
use crate::adapters::{attach_adapters, DualLoraConfig, PromptMode};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Seq2Seq, Tokenizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Seed of the pretraining corpus; keep it apart from the evaluation
    /// corpus seed.
    pub corpus_seed: u64,
    pub per_domain: usize,
    pub prompt_mode: PromptMode,
    pub model_seed: u64,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            corpus_seed: 1000,
            per_domain: 400,
            prompt_mode: PromptMode::SlotEmbedding,
            model_seed: 0,
            train: TrainConfig {
                steps: 3000,
                lr: 2e-3,
                ..TrainConfig::default()
            },
        }
    }
}

impl PretrainConfig {
    pub fn corpus(&self) -> Corpus {
        generate(self.corpus_seed, self.per_domain)
    }
}

/// Trains a fresh backbone on every domain of `corpus` except `held_out`.
pub fn pretrain_base(
    model: &ModelConfig,
    tok: &Tokenizer,
    corpus: &Corpus,
    held_out: &str,
    cfg: &PretrainConfig,
) -> Result<(Seq2Seq, TrainReport)> {
    let split = make_split(corpus, held_out)?;
    let examples = training_examples(corpus, &split.train, cfg.prompt_mode, tok);
    let mut base = Seq2Seq::new(model.clone(), cfg.model_seed)?;
    let report = train(&mut base, &examples, &cfg.train, TrainTarget::Base)?;
    Ok((base, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendConfig {
    pub corpus_seed: u64,
    pub per_domain: usize,
    pub held_out: String,
    pub vocab_size: usize,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub adapters: TrainConfig,
    /// One adapter seed per repetition; also seeds the example order.
    pub seeds: Vec<u64>,
    pub max_new_tokens: usize,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            corpus_seed: 0,
            per_domain: 40,
            held_out: "taxi".into(),
            vocab_size: 512,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            adapters: TrainConfig {
                steps: 600,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            seeds: vec![0, 1, 2],
            max_new_tokens: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Score {
    pub jga: f64,
    pub aga: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendRow {
    pub seed: u64,
    pub context_only: Score,
    pub dual: Score,
    pub context_params: usize,
    pub dual_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendReport {
    pub held_out: String,
    pub test_turns: usize,
    pub pretrain_final_loss: Option<f64>,
    pub no_adapters: Score,
    pub rows: Vec<TrendRow>,
    pub seconds: f64,
}

impl TrendReport {
    pub fn mean_context_jga(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.context_only.jga))
    }

    pub fn mean_dual_jga(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.dual.jga))
    }

    /// Seeds where the dual variant beats context-only outright.
    pub fn strict_wins(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.dual.jga > r.context_only.jga)
            .count()
    }

    /// `dual >= context >= none` on seed means, with at least `min_strict`
    /// seeds where dual is strictly ahead.
    pub fn ordering_holds(&self, min_strict: usize) -> bool {
        self.mean_dual_jga() >= self.mean_context_jga()
            && self.mean_context_jga() >= self.no_adapters.jga
            && self.strict_wins() >= min_strict
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Pretrains the backbone, then trains and scores context-only and
/// context+prompt adapters once per seed with identical budgets.
pub fn run_trend(cfg: &TrendConfig) -> Result<TrendReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::config("trend check needs at least one seed"));
    }
    let start = Instant::now();
    let corpus = generate(cfg.corpus_seed, cfg.per_domain);
    let pre_corpus = cfg.pretrain.corpus();
    let tok = build_shared_tokenizer(&[&corpus, &pre_corpus], cfg.vocab_size)?;
    let split = make_split(&corpus, &cfg.held_out)?;
    if split.test.is_empty() || split.train.is_empty() {
        return Err(Error::config(format!(
            "held-out domain '{}' leaves an empty partition",
            cfg.held_out
        )));
    }

    let (base, pre) = pretrain_base(&cfg.model, &tok, &pre_corpus, &cfg.held_out, &cfg.pretrain)?;
    log::info!(
        "pretrained backbone in {:.1}s",
        start.elapsed().as_secs_f64()
    );

    let opts = EvalOptions {
        max_new_tokens: cfg.max_new_tokens,
        prompt_mode: PromptMode::SlotPrompt,
        ..EvalOptions::default()
    };
    let score = |m: &Seq2Seq| -> Result<(Score, usize)> {
        let (r, _) = evaluate(m, &tok, &corpus, &split.test, &cfg.held_out, &opts)?;
        Ok((
            Score {
                jga: r.jga,
                aga: r.aga,
            },
            r.n_turns,
        ))
    };
    let (no_adapters, test_turns) = score(&base)?;
    let examples = training_examples(&corpus, &split.train, PromptMode::SlotPrompt, &tok);

    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let train_cfg = TrainConfig {
            seed,
            ..cfg.adapters.clone()
        };
        let run = |acfg: DualLoraConfig| -> Result<(Score, usize)> {
            let mut m = base.clone();
            let reg = attach_adapters(&mut m, &acfg)?;
            train(&mut m, &examples, &train_cfg, TrainTarget::Adapters)?;
            Ok((score(&m)?.0, reg.trainable_params))
        };
        let (context_only, context_params) = run(DualLoraConfig {
            seed,
            ..DualLoraConfig::context_only()
        })?;
        let (dual, dual_params) = run(DualLoraConfig {
            seed,
            ..DualLoraConfig::default()
        })?;
        log::info!(
            "seed {seed}: context-only jga {:.3}, dual jga {:.3}",
            context_only.jga,
            dual.jga
        );
        rows.push(TrendRow {
            seed,
            context_only,
            dual,
            context_params,
            dual_params,
        });
    }
    Ok(TrendReport {
        held_out: cfg.held_out.clone(),
        test_turns,
        pretrain_final_loss: pre.final_loss(),
        no_adapters,
        rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}
