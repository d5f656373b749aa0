use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use duallora::adapters::{attach_adapters, expected_adapter_params, PromptMode};
use duallora::checkpoint::{load_adapters, load_model, save_adapters, save_base, save_merged};
use duallora::dst::corpus::{Corpus, Dialogue, SlotSchema};
use duallora::dst::data::{
    build_shared_tokenizer, context_turns, prompt_tokens, training_examples,
};
use duallora::dst::eval::{evaluate, EvalOptions, EvalReport};
use duallora::dst::experiment::pretrain_base;
use duallora::dst::metrics::MatchRule;
use duallora::dst::{make_split, train, TrainReport, TrainTarget};
use duallora::model::{prompt_attention_mass, AttentionStack, EncoderInput, ParamKind};
use duallora::{DualLoraConfig, Error, Seq2Seq, Tokenizer};
use serde::Serialize;

use crate::config::{write_json, RunConfig, TrainWhat};
use crate::latency::{compare, LatencyReport};

const BOS: usize = 1;

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// Base (or merged) model and its tokenizer, plus adapters when configured.
pub struct Loaded {
    pub model: Seq2Seq,
    pub tokenizer: Tokenizer,
    pub adapters: Option<DualLoraConfig>,
}

impl Loaded {
    /// Prompt rendering the adapters were trained with.
    pub fn prompt_mode(&self, cfg: &RunConfig) -> PromptMode {
        self.adapters
            .as_ref()
            .map_or(cfg.adapters.prompt_input, |a| a.prompt_input)
    }
}

pub fn load(cfg: &RunConfig, with_adapters: bool) -> Result<Loaded> {
    let path = cfg.base_checkpoint()?;
    let (mut model, header) =
        load_model(path).with_context(|| format!("loading {}", path.display()))?;
    let tokenizer = header
        .tokenizer
        .ok_or_else(|| config_error(format!("{} carries no tokenizer", path.display())))?;
    if model.config != cfg.model {
        log::warn!(
            "checkpoint model shape differs from the configured one; using the checkpoint's"
        );
    }
    let adapters = match (&cfg.checkpoints.adapters, with_adapters) {
        (Some(p), true) => {
            Some(load_adapters(p, &mut model).with_context(|| format!("loading {}", p.display()))?)
        }
        _ => None,
    };
    Ok(Loaded {
        model,
        tokenizer,
        adapters,
    })
}

pub fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let corpus = duallora::dst::generator::generate(cfg.corpus.seed, cfg.corpus.per_domain);
    let path = out.join("corpus.json");
    corpus.save(&path)?;
    log::info!(
        "{} dialogues written to {}",
        corpus.dialogues.len(),
        path.display()
    );
    Ok(path)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    target: TrainWhat,
    checkpoint: PathBuf,
    report: &'a TrainReport,
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<TrainReport> {
    let corpus = cfg.corpus.load()?;
    let (ckpt, report) = match cfg.train_target {
        TrainWhat::Base => {
            let pre = cfg.pretrain.corpus();
            let tok = build_shared_tokenizer(&[&corpus, &pre], cfg.vocab_size)?;
            let (model, report) =
                pretrain_base(&cfg.model, &tok, &pre, &cfg.held_out, &cfg.pretrain)?;
            let path = out.join("base.ckpt");
            save_base(&path, &model, Some(&tok))?;
            (path, report)
        }
        TrainWhat::Adapters => {
            let Loaded {
                mut model,
                tokenizer,
                ..
            } = load(cfg, false)?;
            attach_adapters(&mut model, &cfg.adapters)?;
            let split = make_split(&corpus, &cfg.held_out)?;
            let examples =
                training_examples(&corpus, &split.train, cfg.adapters.prompt_input, &tokenizer);
            let report = train(&mut model, &examples, &cfg.train, TrainTarget::Adapters)?;
            let path = out.join("adapters.ckpt");
            save_adapters(&path, &model, &cfg.adapters)?;
            (path, report)
        }
    };
    write_json(
        &out.join("train.json"),
        &TrainSummary {
            target: cfg.train_target,
            checkpoint: ckpt,
            report: &report,
        },
    )?;
    Ok(report)
}

fn eval_options(cfg: &RunConfig, mode: PromptMode) -> EvalOptions {
    EvalOptions {
        max_new_tokens: cfg.eval.max_new_tokens,
        prompt_mode: mode,
        rule: MatchRule {
            normalize: cfg.eval.normalize,
        },
        slots: cfg.eval.slots.clone(),
    }
}

pub fn eval_cmd(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let loaded = load(cfg, true)?;
    let corpus = cfg.corpus.load()?;
    let split = make_split(&corpus, &cfg.held_out)?;
    let opts = eval_options(cfg, loaded.prompt_mode(cfg));
    let (report, preds) = evaluate(
        &loaded.model,
        &loaded.tokenizer,
        &corpus,
        &split.test,
        &cfg.held_out,
        &opts,
    )?;
    write_json(&out.join("metrics.json"), &report)?;
    let mut w = BufWriter::new(File::create(out.join("predictions.jsonl"))?);
    for p in &preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    log::info!(
        "{}: jga {:.4} aga {:.4} over {} turns",
        report.domain,
        report.jga,
        report.aga,
        report.n_turns
    );
    Ok(report)
}

fn find_slot<'a>(corpus: &'a Corpus, key: &str) -> Result<&'a SlotSchema> {
    corpus
        .slot(key)
        .ok_or_else(|| config_error(format!("unknown slot '{key}'")))
}

fn held_out_dialogue<'a>(
    corpus: &'a Corpus,
    cfg: &RunConfig,
    id: Option<&str>,
) -> Result<&'a Dialogue> {
    let found = match id {
        Some(id) => corpus.dialogues.iter().find(|d| d.id == id),
        None => corpus.dialogues.iter().find(|d| d.touches(&cfg.held_out)),
    };
    found.ok_or_else(|| match id {
        Some(id) => config_error(format!("no dialogue '{id}' in the corpus")),
        None => config_error(format!("no dialogue touches '{}'", cfg.held_out)),
    })
}

fn default_slot<'a>(
    corpus: &'a Corpus,
    cfg: &RunConfig,
    key: Option<&str>,
) -> Result<&'a SlotSchema> {
    match key {
        Some(k) => find_slot(corpus, k),
        None => corpus
            .slots_of(&cfg.held_out)
            .into_iter()
            .next()
            .ok_or_else(|| config_error(format!("domain '{}' has no slots", cfg.held_out))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MergeSummary {
    pub checkpoint: PathBuf,
    pub context_merged: usize,
    pub prompt_slot: Option<String>,
    pub prompt_fingerprint: Option<String>,
    pub latency: Option<LatencyReport>,
}

pub fn merge_cmd(cfg: &RunConfig, out: &Path) -> Result<MergeSummary> {
    if cfg.checkpoints.adapters.is_none() {
        return Err(config_error(
            "merge needs an adapter checkpoint (--adapters)",
        ));
    }
    let loaded = load(cfg, true)?;
    let mode = loaded.prompt_mode(cfg);
    let corpus = cfg.corpus.load()?;
    let unmerged = loaded.model.clone();
    let mut model = loaded.model;
    let has_prompt = model.projections().iter().any(|p| !p.prompts.is_empty());

    model.merge_context_adapters()?;
    let context_merged = model
        .projections()
        .iter()
        .filter(|p| p.is_context_merged())
        .count();
    let (prompt, fingerprint) = match (&cfg.merge.slot, has_prompt) {
        (Some(key), true) => {
            let prompt = prompt_tokens(find_slot(&corpus, key)?, mode, &loaded.tokenizer);
            let fp = model.merge_prompt_adapters(&prompt)?;
            (Some(prompt), Some(fp.to_hex()))
        }
        (None, true) => {
            return Err(config_error(
                "these adapters have a prompt branch; choose a slot (--slot)",
            ))
        }
        (Some(_), false) => {
            return Err(config_error(
                "--slot given but the adapters have no prompt branch",
            ))
        }
        (None, false) => (None, None),
    };
    model.strip_merged_adapters()?;
    let path = out.join("merged.ckpt");
    save_merged(&path, &model, Some(&loaded.tokenizer))?;

    let latency = if cfg.merge.measure_latency {
        let (base, _) = load_model(cfg.base_checkpoint()?)?;
        let dialogue = held_out_dialogue(&corpus, cfg, None)?;
        let slot = default_slot(&corpus, cfg, cfg.merge.slot.as_deref())?;
        let input = EncoderInput {
            context: context_turns(dialogue, dialogue.turns.len() - 1, &loaded.tokenizer),
            prompt: prompt.unwrap_or_else(|| prompt_tokens(slot, mode, &loaded.tokenizer)),
        };
        let dec = [BOS, 3, 4, 5];
        let r = compare(
            &base,
            &model,
            &unmerged,
            &input,
            &dec,
            cfg.merge.warmup,
            cfg.merge.runs,
        )?;
        log::info!(
            "median forward: base {} ns, merged {} ns ({:.3}x), unmerged {} ns ({:.3}x)",
            r.base_median_ns,
            r.merged_median_ns,
            r.merged_over_base,
            r.unmerged_median_ns,
            r.unmerged_over_base
        );
        Some(r)
    } else {
        None
    };
    let summary = MergeSummary {
        checkpoint: path,
        context_merged,
        prompt_slot: cfg.merge.slot.clone(),
        prompt_fingerprint: fingerprint,
        latency,
    };
    write_json(&out.join("merge.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct AttnSummaryRow {
    pub stack: &'static str,
    pub layer: usize,
    pub head: usize,
    pub n_queries: usize,
    pub n_keys: usize,
    pub boundary: usize,
    pub prompt_mass: f64,
    pub max_row_sum_error: f64,
    pub file: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerMass {
    pub stack: &'static str,
    pub layer: usize,
    /// Mean over heads.
    pub prompt_mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FirstVsLast {
    pub stack: &'static str,
    pub first_layer: usize,
    pub last_layer: usize,
    pub first_mass: f64,
    pub last_mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttnDump {
    pub dialogue: String,
    pub turn: usize,
    pub slot: String,
    pub context_len: usize,
    pub prompt_len: usize,
    pub heads: Vec<AttnSummaryRow>,
    pub layers: Vec<LayerMass>,
    pub first_vs_last: Vec<FirstVsLast>,
}

/// Writes one CSV of post-softmax weights per (stack, layer, head), the
/// token table and the per-layer prompt attention mass.
pub fn attn_dump_cmd(cfg: &RunConfig, out: &Path) -> Result<AttnDump> {
    let loaded = load(cfg, true)?;
    let mode = loaded.prompt_mode(cfg);
    let corpus = cfg.corpus.load()?;
    let dialogue = held_out_dialogue(&corpus, cfg, cfg.attn.dialogue.as_deref())?;
    let turn = cfg.attn.turn.unwrap_or(dialogue.turns.len() - 1);
    if turn >= dialogue.turns.len() {
        return Err(config_error(format!(
            "dialogue '{}' has no turn {turn}",
            dialogue.id
        )));
    }
    let slot = default_slot(&corpus, cfg, cfg.attn.slot.as_deref())?;
    let input = EncoderInput {
        context: context_turns(dialogue, turn, &loaded.tokenizer),
        prompt: prompt_tokens(slot, mode, &loaded.tokenizer),
    };
    let (layout, traces) = loaded.model.capture_attention(&input)?;

    let dir = out.join("attn");
    fs::create_dir_all(&dir)?;
    let mut tokens = csv::Writer::from_path(dir.join("tokens.csv"))?;
    tokens.write_record(["stack", "position", "id", "text", "segment"])?;
    for (i, &id) in layout.ids.iter().enumerate() {
        let in_prompt = if layout.prompt_first {
            i < layout.prompt_len
        } else {
            i >= layout.context_len
        };
        let text = loaded.tokenizer.decode(&[id]);
        let segment = if in_prompt { "prompt" } else { "context" };
        tokens.write_record([
            AttentionStack::Encoder.tag(),
            &i.to_string(),
            &id.to_string(),
            &text,
            segment,
        ])?;
    }
    tokens.write_record([
        AttentionStack::DecoderSelf.tag(),
        "0",
        &BOS.to_string(),
        "<bos>",
        "decoder",
    ])?;
    tokens.flush()?;

    let mut heads = Vec::new();
    for t in &traces {
        let file = format!("{}_l{}_h{}.csv", t.stack.tag(), t.layer, t.head);
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        let header: Vec<String> = std::iter::once("query".to_string())
            .chain((0..t.n_keys()).map(|k| format!("k{k}")))
            .collect();
        w.write_record(&header)?;
        for q in 0..t.n_queries() {
            let row: Vec<String> = std::iter::once(q.to_string())
                .chain(t.weights.row(q).iter().map(|x| x.to_string()))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        heads.push(AttnSummaryRow {
            stack: t.stack.tag(),
            layer: t.layer,
            head: t.head,
            n_queries: t.n_queries(),
            n_keys: t.n_keys(),
            boundary: t.boundary,
            prompt_mass: prompt_attention_mass(t, t.boundary)?,
            max_row_sum_error: t.max_row_sum_error(),
            file,
        });
    }
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for h in &heads {
        w.serialize(h)?;
    }
    w.flush()?;

    // Decoder self-attention has no prompt keys, so only the other two
    // stacks enter the per-layer comparison.
    let mut per_layer: BTreeMap<(&'static str, usize), Vec<f64>> = BTreeMap::new();
    for h in heads
        .iter()
        .filter(|h| h.stack != AttentionStack::DecoderSelf.tag())
    {
        per_layer
            .entry((h.stack, h.layer))
            .or_default()
            .push(h.prompt_mass);
    }
    let layers: Vec<LayerMass> = per_layer
        .into_iter()
        .map(|((stack, layer), v)| LayerMass {
            stack,
            layer,
            prompt_mass: v.iter().sum::<f64>() / v.len() as f64,
        })
        .collect();
    let mut w = csv::Writer::from_path(dir.join("layers.csv"))?;
    for l in &layers {
        w.serialize(l)?;
    }
    w.flush()?;
    let first_vs_last: Vec<FirstVsLast> = [
        AttentionStack::Encoder.tag(),
        AttentionStack::DecoderCross.tag(),
    ]
    .into_iter()
    .filter_map(|stack| {
        let of: Vec<&LayerMass> = layers.iter().filter(|l| l.stack == stack).collect();
        let (first, last) = (of.first()?, of.last()?);
        Some(FirstVsLast {
            stack,
            first_layer: first.layer,
            last_layer: last.layer,
            first_mass: first.prompt_mass,
            last_mass: last.prompt_mass,
        })
    })
    .collect();

    let dump = AttnDump {
        dialogue: dialogue.id.clone(),
        turn,
        slot: slot.key(),
        context_len: layout.context_len,
        prompt_len: layout.prompt_len,
        heads,
        layers,
        first_vs_last,
    };
    write_json(&dir.join("first_vs_last.json"), &dump.first_vs_last)?;
    write_json(&dir.join("dump.json"), &dump)?;
    Ok(dump)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: String,
    pub status: &'static str,
    pub jga: Option<f64>,
    pub aga: Option<f64>,
    pub trainable_params: Option<usize>,
    pub closed_form_params: Option<usize>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

fn sweep_one(
    cfg: &RunConfig,
    base: &Loaded,
    corpus: &Corpus,
    value: &str,
    dir: &Path,
) -> Result<SweepRow> {
    let acfg = cfg.sweep.axis.apply(&cfg.adapters, value)?;
    let mut run_cfg = cfg.clone();
    run_cfg.adapters = acfg.clone();
    run_cfg.output_dir = dir.to_path_buf();
    run_cfg.prepare_output()?;

    let mut model = base.model.clone();
    let closed_form = expected_adapter_params(&model, &acfg);
    let reg = attach_adapters(&mut model, &acfg)?;
    let split = make_split(corpus, &cfg.held_out)?;
    let examples = training_examples(corpus, &split.train, acfg.prompt_input, &base.tokenizer);
    let report = train(&mut model, &examples, &cfg.train, TrainTarget::Adapters)?;
    let opts = eval_options(cfg, acfg.prompt_input);
    let (metrics, _) = evaluate(
        &model,
        &base.tokenizer,
        corpus,
        &split.test,
        &cfg.held_out,
        &opts,
    )?;
    save_adapters(&dir.join("adapters.ckpt"), &model, &acfg)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(SweepRow {
        axis: cfg.sweep.axis.name(),
        value: value.to_string(),
        status: "ok",
        jga: Some(metrics.jga),
        aga: Some(metrics.aga),
        trainable_params: Some(reg.trainable_params),
        closed_form_params: Some(closed_form),
        final_loss: report.final_loss(),
        error: None,
    })
}

/// One adapter run per value of the chosen axis with everything else held
/// fixed. A failed run becomes an error row and the sweep moves on.
pub fn sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepRow>> {
    if cfg.sweep.values.is_empty() {
        return Err(config_error("sweep needs at least one value (--values)"));
    }
    let base = load(cfg, false)?;
    if base.model.param_count(Some(ParamKind::Adapter)) > 0 {
        return Err(config_error("sweep needs a plain base checkpoint"));
    }
    let corpus = cfg.corpus.load()?;
    let mut rows = Vec::new();
    for value in &cfg.sweep.values {
        let dir = out
            .join("runs")
            .join(format!("{}={value}", cfg.sweep.axis.name()));
        let row = sweep_one(cfg, &base, &corpus, value, &dir).unwrap_or_else(|e| {
            log::error!("{}={value} failed: {e:#}", cfg.sweep.axis.name());
            SweepRow {
                axis: cfg.sweep.axis.name(),
                value: value.clone(),
                status: "error",
                jga: None,
                aga: None,
                trainable_params: None,
                closed_form_params: None,
                final_loss: None,
                error: Some(format!("{e:#}")),
            }
        });
        rows.push(row);
    }
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&out.join("sweep.json"), &rows)?;
    Ok(rows)
}
