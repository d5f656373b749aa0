use super::attention::{causal_mask, Attention, TraceSink};
use super::config::ModelConfig;
use super::tokenizer::{BOS, EOS};
use super::trace::{AttentionStack, AttentionTrace};
use crate::adapters::{AdaptedProjection, Fingerprint, PromptInput};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Base,
    Adapter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    /// `[d_ff × d_model]`
    pub wi: Tensor,
    /// `[d_model × d_ff]`
    pub wo: Tensor,
}

impl FeedForward {
    fn new(d_model: usize, d_ff: usize, rng: &mut SeededRng) -> Self {
        Self {
            wi: Tensor::randn(&[d_ff, d_model], 1.0 / (d_model as f64).sqrt(), rng),
            wo: Tensor::randn(&[d_model, d_ff], 1.0 / (d_ff as f64).sqrt(), rng),
        }
    }

    fn forward(&self, g: &mut Graph, prefix: &str, x: Var, train_base: bool) -> Result<Var> {
        let wi = g.param(&format!("{prefix}.wi"), &self.wi, train_base);
        let wo = g.param(&format!("{prefix}.wo"), &self.wo, train_base);
        let h = g.matmul_nt(x, wi)?;
        let h = g.gelu(h);
        g.matmul_nt(h, wo)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attn_norm: Tensor,
    pub attn: Attention,
    pub ff_norm: Tensor,
    pub ff: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer {
    pub self_norm: Tensor,
    pub self_attn: Attention,
    pub cross_norm: Tensor,
    pub cross_attn: Attention,
    pub ff_norm: Tensor,
    pub ff: FeedForward,
}

/// Encoder-side input: dialogue turns (oldest first) and the slot prompt.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncoderInput {
    pub context: Vec<Vec<usize>>,
    pub prompt: Vec<usize>,
}

/// The encoder token sequence actually fed to the model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub ids: Vec<usize>,
    pub context_len: usize,
    pub prompt_len: usize,
    pub prompt_first: bool,
    /// Turns dropped from the front of the history to fit `max_seq_len`.
    pub dropped_turns: usize,
}

impl Layout {
    /// Key position separating the two segments.
    pub fn boundary(&self) -> usize {
        if self.prompt_first {
            self.prompt_len
        } else {
            self.context_len
        }
    }
}

impl EncoderInput {
    /// Concatenates context and prompt. When too long, whole turns are
    /// dropped oldest first, then the oldest tokens of the remaining turn.
    /// The prompt is never shortened.
    pub fn layout(&self, max_len: usize, prompt_first: bool) -> Result<Layout> {
        if self.prompt.len() > max_len {
            return Err(Error::contract(format!(
                "prompt of {} tokens exceeds max_seq_len {max_len}",
                self.prompt.len()
            )));
        }
        let budget = max_len - self.prompt.len();
        let mut start = 0;
        let mut total: usize = self.context.iter().map(Vec::len).sum();
        while total > budget && start + 1 < self.context.len() {
            total -= self.context[start].len();
            start += 1;
        }
        let mut context: Vec<usize> = self.context[start..].iter().flatten().copied().collect();
        if context.len() > budget {
            context.drain(..context.len() - budget);
        }
        let context_len = context.len();
        let ids = if prompt_first {
            let mut ids = self.prompt.clone();
            ids.extend(context);
            ids
        } else {
            context.extend_from_slice(&self.prompt);
            context
        };
        Ok(Layout {
            ids,
            context_len,
            prompt_len: self.prompt.len(),
            prompt_first,
            dropped_turns: start,
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Record gradients for base weights (pretraining only).
    pub train_base: bool,
}

pub struct Encoded {
    pub states: Var,
    pub prompt: Option<PromptInput>,
    pub layout: Layout,
}

/// Pre-norm encoder-decoder transformer with learned positions. The output
/// head is the token embedding table, scaled by `1/sqrt(d_model)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    /// `[vocab × d_model]`
    pub token_embedding: Tensor,
    /// `[max_seq_len × d_model]`
    pub encoder_positions: Tensor,
    pub decoder_positions: Tensor,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: Tensor,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: Tensor,
}

/// Starting point for the learned position tables. A fixed offset between
/// two rows is a rotation of each frequency pair, so attention can pick up
/// "previous token" patterns without learning every position separately.
fn sinusoid_table(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, d]);
    let data = t.data_mut();
    for pos in 0..len {
        for i in 0..d {
            let freq = 10_000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::derived(seed, "model");
        let d = config.d_model;
        let ones = || Tensor::ones(&[d]);
        let token_embedding = Tensor::randn(&[config.vocab_size, d], 1.0, &mut rng);
        let encoder_positions = sinusoid_table(config.max_seq_len, d);
        let decoder_positions = sinusoid_table(config.max_seq_len, d);
        let encoder = (0..config.n_encoder_layers)
            .map(|i| EncoderLayer {
                attn_norm: ones(),
                attn: Attention::new(&format!("enc.{i}.attn"), d, config.n_heads, &mut rng),
                ff_norm: ones(),
                ff: FeedForward::new(d, config.d_ff, &mut rng),
            })
            .collect();
        let decoder = (0..config.n_decoder_layers)
            .map(|i| DecoderLayer {
                self_norm: ones(),
                self_attn: Attention::new(&format!("dec.{i}.self"), d, config.n_heads, &mut rng),
                cross_norm: ones(),
                cross_attn: Attention::new(&format!("dec.{i}.cross"), d, config.n_heads, &mut rng),
                ff_norm: ones(),
                ff: FeedForward::new(d, config.d_ff, &mut rng),
            })
            .collect();
        Ok(Self {
            config,
            token_embedding,
            encoder_positions,
            decoder_positions,
            encoder,
            encoder_norm: ones(),
            decoder,
            decoder_norm: ones(),
        })
    }

    /// Every attention block with the stack it belongs to.
    pub fn attention_blocks(&self) -> Vec<(AttentionStack, usize, &Attention)> {
        let mut out: Vec<_> = self
            .encoder
            .iter()
            .enumerate()
            .map(|(i, l)| (AttentionStack::Encoder, i, &l.attn))
            .collect();
        for (i, l) in self.decoder.iter().enumerate() {
            out.push((AttentionStack::DecoderSelf, i, &l.self_attn));
            out.push((AttentionStack::DecoderCross, i, &l.cross_attn));
        }
        out
    }

    pub fn attention_blocks_mut(&mut self) -> Vec<(AttentionStack, usize, &mut Attention)> {
        let mut out: Vec<_> = self
            .encoder
            .iter_mut()
            .enumerate()
            .map(|(i, l)| (AttentionStack::Encoder, i, &mut l.attn))
            .collect();
        for (i, l) in self.decoder.iter_mut().enumerate() {
            out.push((AttentionStack::DecoderSelf, i, &mut l.self_attn));
            out.push((AttentionStack::DecoderCross, i, &mut l.cross_attn));
        }
        out
    }

    pub fn projections(&self) -> Vec<&AdaptedProjection> {
        self.attention_blocks()
            .into_iter()
            .flat_map(|(_, _, a)| [&a.q, &a.k, &a.v, &a.o])
            .collect()
    }

    pub fn projections_mut(&mut self) -> Vec<&mut AdaptedProjection> {
        self.attention_blocks_mut()
            .into_iter()
            .flat_map(|(_, _, a)| [&mut a.q, &mut a.k, &mut a.v, &mut a.o])
            .collect()
    }

    pub fn uses_prompt(&self) -> bool {
        self.projections().iter().any(|p| p.uses_prompt())
    }

    /// All tensors with their parameter names, in a fixed order.
    pub fn params(&self) -> Vec<(String, ParamKind, &Tensor)> {
        let base = |n: String, t| (n, ParamKind::Base, t);
        let mut out = vec![
            base("embed.tokens".into(), &self.token_embedding),
            base("embed.enc_pos".into(), &self.encoder_positions),
            base("embed.dec_pos".into(), &self.decoder_positions),
        ];
        fn push_attn<'a>(out: &mut Vec<(String, ParamKind, &'a Tensor)>, a: &'a Attention) {
            for p in [&a.q, &a.k, &a.v, &a.o] {
                out.push((format!("{}.weight", p.name), ParamKind::Base, &p.weight));
                out.push((format!("{}.bias", p.name), ParamKind::Base, &p.bias));
                for (n, t) in p.adapter_params() {
                    out.push((n, ParamKind::Adapter, t));
                }
            }
        }
        for (i, l) in self.encoder.iter().enumerate() {
            out.push(base(format!("enc.{i}.attn_norm"), &l.attn_norm));
            push_attn(&mut out, &l.attn);
            out.push(base(format!("enc.{i}.ff_norm"), &l.ff_norm));
            out.push(base(format!("enc.{i}.ff.wi"), &l.ff.wi));
            out.push(base(format!("enc.{i}.ff.wo"), &l.ff.wo));
        }
        out.push(base("enc.norm".into(), &self.encoder_norm));
        for (i, l) in self.decoder.iter().enumerate() {
            out.push(base(format!("dec.{i}.self_norm"), &l.self_norm));
            push_attn(&mut out, &l.self_attn);
            out.push(base(format!("dec.{i}.cross_norm"), &l.cross_norm));
            push_attn(&mut out, &l.cross_attn);
            out.push(base(format!("dec.{i}.ff_norm"), &l.ff_norm));
            out.push(base(format!("dec.{i}.ff.wi"), &l.ff.wi));
            out.push(base(format!("dec.{i}.ff.wo"), &l.ff.wo));
        }
        out.push(base("dec.norm".into(), &self.decoder_norm));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, ParamKind, &mut Tensor)> {
        fn push_attn<'a>(out: &mut Vec<(String, ParamKind, &'a mut Tensor)>, a: &'a mut Attention) {
            for p in [&mut a.q, &mut a.k, &mut a.v, &mut a.o] {
                let (base, adapter) = p.params_mut();
                out.extend(base.into_iter().map(|(n, t)| (n, ParamKind::Base, t)));
                out.extend(adapter.into_iter().map(|(n, t)| (n, ParamKind::Adapter, t)));
            }
        }
        let base = |n: String, t| (n, ParamKind::Base, t);
        let mut out = vec![
            base("embed.tokens".into(), &mut self.token_embedding),
            base("embed.enc_pos".into(), &mut self.encoder_positions),
            base("embed.dec_pos".into(), &mut self.decoder_positions),
        ];
        for (i, l) in self.encoder.iter_mut().enumerate() {
            out.push(base(format!("enc.{i}.attn_norm"), &mut l.attn_norm));
            push_attn(&mut out, &mut l.attn);
            out.push(base(format!("enc.{i}.ff_norm"), &mut l.ff_norm));
            out.push(base(format!("enc.{i}.ff.wi"), &mut l.ff.wi));
            out.push(base(format!("enc.{i}.ff.wo"), &mut l.ff.wo));
        }
        out.push(base("enc.norm".into(), &mut self.encoder_norm));
        for (i, l) in self.decoder.iter_mut().enumerate() {
            out.push(base(format!("dec.{i}.self_norm"), &mut l.self_norm));
            push_attn(&mut out, &mut l.self_attn);
            out.push(base(format!("dec.{i}.cross_norm"), &mut l.cross_norm));
            push_attn(&mut out, &mut l.cross_attn);
            out.push(base(format!("dec.{i}.ff_norm"), &mut l.ff_norm));
            out.push(base(format!("dec.{i}.ff.wi"), &mut l.ff.wi));
            out.push(base(format!("dec.{i}.ff.wo"), &mut l.ff.wo));
        }
        out.push(base("dec.norm".into(), &mut self.decoder_norm));
        out
    }

    pub fn param_count(&self, kind: Option<ParamKind>) -> usize {
        self.params()
            .iter()
            .filter(|(_, k, _)| kind.is_none_or(|want| *k == want))
            .map(|(_, _, t)| t.numel())
            .sum()
    }

    fn check_ids(&self, ids: &[usize], what: &'static str) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Index {
                op: what,
                index: bad,
                extent: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn embed(
        &self,
        g: &mut Graph,
        ids: &[usize],
        positions: &'static str,
        train_base: bool,
    ) -> Result<Var> {
        let table = g.param("embed.tokens", &self.token_embedding, train_base);
        let pos_table = match positions {
            "embed.enc_pos" => &self.encoder_positions,
            _ => &self.decoder_positions,
        };
        let pos = g.param(positions, pos_table, train_base);
        let tok = g.embedding(table, ids)?;
        let idx: Vec<usize> = (0..ids.len()).collect();
        let p = g.embedding(pos, &idx)?;
        g.add(tok, p)
    }

    fn norm(
        &self,
        g: &mut Graph,
        name: &str,
        gain: &Tensor,
        x: Var,
        train_base: bool,
    ) -> Result<Var> {
        let gv = g.param(name, gain, train_base);
        g.rms_norm(x, gv, self.config.norm_eps)
    }

    /// Mean token embedding of the prompt, recorded on `g`.
    fn prompt_input(
        &self,
        g: &mut Graph,
        prompt: &[usize],
        train_base: bool,
    ) -> Result<PromptInput> {
        if prompt.is_empty() {
            return Err(Error::contract("prompt adapters need a non-empty prompt"));
        }
        let table = g.param("embed.tokens", &self.token_embedding, train_base);
        let rows = g.embedding(table, prompt)?;
        let summary = g.mean(rows, 0)?;
        Ok(PromptInput {
            summary,
            fingerprint: Fingerprint::of(g.value(summary)),
        })
    }

    /// The `[d_model]` prompt summary vector for `prompt`.
    pub fn prompt_summary(&self, prompt: &[usize]) -> Result<Tensor> {
        self.check_ids(prompt, "prompt")?;
        let mut g = Graph::no_grad();
        let p = self.prompt_input(&mut g, prompt, false)?;
        Ok(g.value(p.summary).clone())
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        input: &EncoderInput,
        opts: ForwardOptions,
        mut traces: Option<&mut Vec<AttentionTrace>>,
    ) -> Result<Encoded> {
        let layout = input.layout(self.config.max_seq_len, self.config.prompt_first)?;
        if layout.ids.is_empty() {
            return Err(Error::contract("empty encoder input"));
        }
        self.check_ids(&layout.ids, "encoder")?;
        let prompt = if self.uses_prompt() {
            Some(self.prompt_input(g, &input.prompt, opts.train_base)?)
        } else {
            None
        };
        let tb = opts.train_base;
        let mut x = self.embed(g, &layout.ids, "embed.enc_pos", tb)?;
        for (i, l) in self.encoder.iter().enumerate() {
            let h = self.norm(g, &format!("enc.{i}.attn_norm"), &l.attn_norm, x, tb)?;
            let sink = traces.as_deref_mut().map(|out| TraceSink {
                out,
                stack: AttentionStack::Encoder,
                layer: i,
                boundary: layout.boundary(),
                prompt_first: layout.prompt_first,
            });
            let a = l.attn.forward(g, h, h, prompt.as_ref(), None, tb, sink)?;
            x = g.add(x, a)?;
            let h = self.norm(g, &format!("enc.{i}.ff_norm"), &l.ff_norm, x, tb)?;
            let f = l.ff.forward(g, &format!("enc.{i}.ff"), h, tb)?;
            x = g.add(x, f)?;
        }
        let states = self.norm(g, "enc.norm", &self.encoder_norm, x, tb)?;
        Ok(Encoded {
            states,
            prompt,
            layout,
        })
    }

    /// Logits `[len(dec_ids) × vocab]` for teacher-forced decoder input.
    pub fn decode(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        dec_ids: &[usize],
        opts: ForwardOptions,
        mut traces: Option<&mut Vec<AttentionTrace>>,
    ) -> Result<Var> {
        if dec_ids.is_empty() || dec_ids.len() > self.config.max_seq_len {
            return Err(Error::contract(format!(
                "decoder input of {} tokens (max {})",
                dec_ids.len(),
                self.config.max_seq_len
            )));
        }
        self.check_ids(dec_ids, "decoder")?;
        let tb = opts.train_base;
        let n = dec_ids.len();
        let mask = if n > 1 {
            Some(g.constant(causal_mask(n)))
        } else {
            None
        };
        let mut x = self.embed(g, dec_ids, "embed.dec_pos", tb)?;
        let prompt = enc.prompt.as_ref();
        for (i, l) in self.decoder.iter().enumerate() {
            let h = self.norm(g, &format!("dec.{i}.self_norm"), &l.self_norm, x, tb)?;
            let sink = traces.as_deref_mut().map(|out| TraceSink {
                out,
                stack: AttentionStack::DecoderSelf,
                layer: i,
                boundary: n,
                prompt_first: false,
            });
            let a = l.self_attn.forward(g, h, h, prompt, mask, tb, sink)?;
            x = g.add(x, a)?;
            let h = self.norm(g, &format!("dec.{i}.cross_norm"), &l.cross_norm, x, tb)?;
            let sink = traces.as_deref_mut().map(|out| TraceSink {
                out,
                stack: AttentionStack::DecoderCross,
                layer: i,
                boundary: enc.layout.boundary(),
                prompt_first: enc.layout.prompt_first,
            });
            let c = l
                .cross_attn
                .forward(g, h, enc.states, prompt, None, tb, sink)?;
            x = g.add(x, c)?;
            let h = self.norm(g, &format!("dec.{i}.ff_norm"), &l.ff_norm, x, tb)?;
            let f = l.ff.forward(g, &format!("dec.{i}.ff"), h, tb)?;
            x = g.add(x, f)?;
        }
        let h = self.norm(g, "dec.norm", &self.decoder_norm, x, tb)?;
        let h = g.scale(h, 1.0 / (self.config.d_model as f64).sqrt());
        let head = g.param("embed.tokens", &self.token_embedding, tb);
        g.matmul_nt(h, head)
    }

    /// Mean next-token cross-entropy of producing `target` followed by EOS.
    pub fn loss(
        &self,
        g: &mut Graph,
        input: &EncoderInput,
        target: &[usize],
        opts: ForwardOptions,
    ) -> Result<Var> {
        let enc = self.encode(g, input, opts, None)?;
        let mut dec_in = Vec::with_capacity(target.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(target);
        let labels: Vec<Option<usize>> = target.iter().copied().chain([EOS]).map(Some).collect();
        let logits = self.decode(g, &enc, &dec_in, opts, None)?;
        g.cross_entropy(logits, &labels)
    }

    /// Inference logits for a fixed decoder input.
    pub fn logits(&self, input: &EncoderInput, dec_ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::no_grad();
        let enc = self.encode(&mut g, input, ForwardOptions::default(), None)?;
        let out = self.decode(&mut g, &enc, dec_ids, ForwardOptions::default(), None)?;
        Ok(g.value(out).clone())
    }

    /// Greedy decoding from BOS until EOS or `max_new` tokens. Ties go to
    /// the lowest token id. The returned ids exclude BOS and EOS.
    pub fn greedy_decode(&self, input: &EncoderInput, max_new: usize) -> Result<Vec<usize>> {
        let mut g = Graph::no_grad();
        let opts = ForwardOptions::default();
        let enc = self.encode(&mut g, input, opts, None)?;
        let mut seq = vec![BOS];
        let limit = max_new.min(self.config.max_seq_len - 1);
        for _ in 0..limit {
            let logits = self.decode(&mut g, &enc, &seq, opts, None)?;
            let last = g.value(logits).row(seq.len() - 1);
            let mut best = 0;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            seq.push(best);
        }
        seq.remove(0);
        Ok(seq)
    }

    /// Attention weights of every head: the encoder over the input and the
    /// decoder for a single BOS step.
    pub fn capture_attention(&self, input: &EncoderInput) -> Result<(Layout, Vec<AttentionTrace>)> {
        let mut g = Graph::no_grad();
        let mut traces = Vec::new();
        let opts = ForwardOptions::default();
        let enc = self.encode(&mut g, input, opts, Some(&mut traces))?;
        self.decode(&mut g, &enc, &[BOS], opts, Some(&mut traces))?;
        Ok((enc.layout, traces))
    }

    /// Merges every unmerged context adapter into its base weight.
    pub fn merge_context_adapters(&mut self) -> Result<()> {
        for p in self.projections_mut() {
            if p.context.is_some() && !p.is_context_merged() {
                p.merge_context()?;
            }
        }
        Ok(())
    }

    /// Folds the prompt adapters for `prompt` into the projection biases.
    pub fn merge_prompt_adapters(&mut self, prompt: &[usize]) -> Result<Fingerprint> {
        let summary = self.prompt_summary(prompt)?;
        for p in self.projections_mut() {
            if !p.prompts.is_empty() {
                p.merge_prompt(&summary)?;
            }
        }
        Ok(Fingerprint::of(&summary))
    }

    /// Drops every adapter tensor once all of them are merged.
    pub fn strip_merged_adapters(&mut self) -> Result<()> {
        for p in self.projections_mut() {
            if p.has_adapters() {
                p.strip_merged_adapters()?;
            }
        }
        Ok(())
    }

    pub fn unmerge_all(&mut self) -> Result<()> {
        for p in self.projections_mut() {
            if p.merged_prompt().is_some() {
                p.unmerge_prompt()?;
            }
            if p.is_context_merged() {
                p.unmerge_context()?;
            }
        }
        Ok(())
    }
}
