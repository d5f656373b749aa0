use std::collections::BTreeMap;

use serde::Serialize;

use super::corpus::{key_domain, Corpus, Dialogue, State};
use super::data::slot_examples;
use super::metrics::{aga_with, jga_with, MatchRule, TurnFilter};
use super::state::{normalize_value, parse_slot_value};
use crate::adapters::PromptMode;
use crate::error::{Error, Result};
use crate::model::{ParamKind, Seq2Seq, Tokenizer};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub max_new_tokens: usize,
    pub prompt_mode: PromptMode,
    pub rule: MatchRule,
    /// Restrict decoding to these slot keys (all slots of the domain when
    /// empty).
    pub slots: Vec<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 8,
            prompt_mode: PromptMode::SlotPrompt,
            rule: MatchRule::default(),
            slots: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TurnPrediction {
    pub dialogue: String,
    pub turn: usize,
    pub predicted: State,
    pub gold: State,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub trainable: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub domain: String,
    pub jga: f64,
    pub aga: f64,
    /// Fraction of turns where the slot's predicted value (or absence)
    /// matches gold.
    pub per_slot: BTreeMap<String, f64>,
    pub params: ParamCounts,
    pub n_turns: usize,
}

/// Decodes every slot of `domain` at every turn of `dialogues`.
pub fn predict_states(
    model: &Seq2Seq,
    tok: &Tokenizer,
    corpus: &Corpus,
    dialogues: &[Dialogue],
    domain: &str,
    opts: &EvalOptions,
) -> Result<Vec<TurnPrediction>> {
    let slots: Vec<_> = corpus
        .slots_of(domain)
        .into_iter()
        .filter(|s| opts.slots.is_empty() || opts.slots.contains(&s.key()))
        .collect();
    if slots.is_empty() {
        return Err(Error::config(format!(
            "no slots to evaluate for domain '{domain}'"
        )));
    }
    let mut out: Vec<TurnPrediction> = Vec::new();
    for d in dialogues {
        for (ti, t) in d.turns.iter().enumerate() {
            let gold = t
                .state
                .iter()
                .filter(|(k, _)| key_domain(k) == domain && slots.iter().any(|s| s.key() == **k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            out.push(TurnPrediction {
                dialogue: d.id.clone(),
                turn: ti,
                predicted: State::new(),
                gold,
            });
        }
    }
    let queries = slot_examples(dialogues, |_| slots.clone(), opts.prompt_mode, tok);
    let mut row = 0;
    for q in queries {
        while (out[row].dialogue.as_str(), out[row].turn) != (q.dialogue.as_str(), q.turn) {
            row += 1;
        }
        let ids = model.greedy_decode(&q.example.input, opts.max_new_tokens)?;
        let text = tok.decode(&ids);
        if let Some(v) = parse_slot_value(&text, corpus.slot(&q.key)) {
            out[row].predicted.insert(q.key, v);
        }
    }
    Ok(out)
}

/// Scores predictions for one domain.
pub fn score(
    domain: &str,
    preds: &[TurnPrediction],
    model: &Seq2Seq,
    slot_keys: &[String],
    rule: MatchRule,
) -> Result<EvalReport> {
    let p: Vec<State> = preds.iter().map(|t| t.predicted.clone()).collect();
    let g: Vec<State> = preds.iter().map(|t| t.gold.clone()).collect();
    let canon = |v: Option<&String>| {
        v.map(|s| {
            if rule.normalize {
                normalize_value(s)
            } else {
                s.clone()
            }
        })
    };
    let per_slot = slot_keys
        .iter()
        .map(|k| {
            let hits = preds
                .iter()
                .filter(|t| canon(t.predicted.get(k)) == canon(t.gold.get(k)))
                .count();
            let acc = if preds.is_empty() {
                0.0
            } else {
                hits as f64 / preds.len() as f64
            };
            (k.clone(), acc)
        })
        .collect();
    Ok(EvalReport {
        domain: domain.to_string(),
        jga: jga_with(&p, &g, TurnFilter::All, rule)?,
        aga: aga_with(&p, &g, rule)?,
        per_slot,
        params: ParamCounts {
            trainable: model.param_count(Some(ParamKind::Adapter)),
            total: model.param_count(None),
        },
        n_turns: preds.len(),
    })
}

pub fn evaluate(
    model: &Seq2Seq,
    tok: &Tokenizer,
    corpus: &Corpus,
    dialogues: &[Dialogue],
    domain: &str,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<TurnPrediction>)> {
    let preds = predict_states(model, tok, corpus, dialogues, domain, opts)?;
    let keys: Vec<String> = corpus
        .slots_of(domain)
        .iter()
        .map(|s| s.key())
        .filter(|k| opts.slots.is_empty() || opts.slots.contains(k))
        .collect();
    let report = score(domain, &preds, model, &keys, opts.rule)?;
    Ok((report, preds))
}
