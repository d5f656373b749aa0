use std::fmt;

use sha2::{Digest, Sha256};

use super::config::Combination;
use super::fusion::Fusion;
use super::lora::LoraPair;
use crate::error::{Error, Result};
use crate::tensor::{ops, Graph, Tensor, Var};

type NamedMut<'a> = Vec<(String, &'a mut Tensor)>;

/// Identity of a prompt summary vector: SHA-256 over its little-endian
/// `f64` bytes, truncated to 128 bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [u8; 16]);

impl Fingerprint {
    pub fn of(summary: &Tensor) -> Self {
        let mut h = Sha256::new();
        for x in summary.data() {
            h.update(x.to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        Fingerprint(out)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 32 {
            return Err(Error::Checkpoint(format!("bad fingerprint '{s}'")));
        }
        let mut out = [0u8; 16];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Checkpoint(format!("bad fingerprint '{s}'")))?;
        }
        Ok(Fingerprint(out))
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.to_hex())
    }
}

/// Mean of the embedding-table rows selected by `prompt`: the vector `p`
/// every prompt branch reads.
pub fn prompt_summary_input(table: &Tensor, prompt: &[usize]) -> Result<Tensor> {
    if prompt.is_empty() {
        return Err(Error::contract("prompt summary of an empty prompt"));
    }
    let rows = ops::embedding_lookup(table, prompt)?;
    ops::mean(&rows, 0)
}

/// The prompt summary as fed to a projection during a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PromptInput {
    /// `[d_model]` node on the current graph.
    pub summary: Var,
    pub fingerprint: Fingerprint,
}

/// A prompt contribution that has been folded into the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedPrompt {
    pub fingerprint: Fingerprint,
    /// The summary that was merged, kept so unmerging subtracts exactly the
    /// same product. `None` once the adapters have been stripped.
    pub summary: Option<Tensor>,
}

/// A linear map `h ↦ W·h + b` with optional context and prompt adapters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedProjection {
    pub name: String,
    /// `[d_out × d_in]`
    pub weight: Tensor,
    /// `[d_out]`, zero unless a prompt has been merged in.
    pub bias: Tensor,
    pub context: Option<LoraPair>,
    /// Independent prompt branches; their outputs are summed.
    pub prompts: Vec<LoraPair>,
    pub fusion: Fusion,
    pub combination: Combination,
    pub scaling: f64,
    merged_context: bool,
    merged_prompt: Option<MergedPrompt>,
}

impl AdaptedProjection {
    pub fn new(name: impl Into<String>, weight: Tensor) -> Self {
        let d_out = weight.rows();
        Self {
            name: name.into(),
            weight,
            bias: Tensor::zeros(&[d_out]),
            context: None,
            prompts: Vec::new(),
            fusion: Fusion::MeanAdd,
            combination: Combination::Horizontal,
            scaling: 1.0,
            merged_context: false,
            merged_prompt: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn has_adapters(&self) -> bool {
        self.context.is_some() || !self.prompts.is_empty()
    }

    pub fn is_context_merged(&self) -> bool {
        self.merged_context
    }

    pub fn merged_prompt(&self) -> Option<&MergedPrompt> {
        self.merged_prompt.as_ref()
    }

    /// True when a forward pass needs a prompt summary: either a live
    /// prompt branch or a merged prompt whose identity must be checked.
    pub fn uses_prompt(&self) -> bool {
        !self.prompts.is_empty() || self.merged_prompt.is_some()
    }

    fn prompt_active(&self) -> bool {
        !self.prompts.is_empty() && self.merged_prompt.is_none()
    }

    /// Number of adapter parameters (both branches and the fusion variant).
    pub fn adapter_param_count(&self) -> usize {
        let ctx = self.context.as_ref().map_or(0, LoraPair::param_count);
        let prm: usize = self.prompts.iter().map(LoraPair::param_count).sum();
        let fusion = if self.prompts.is_empty() {
            0
        } else {
            self.fusion.param_count()
        };
        ctx + prm + fusion
    }

    /// Adapter tensors with their qualified parameter names.
    pub fn adapter_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(c) = &self.context {
            out.push((format!("{}.lora.a", self.name), &c.a));
            out.push((format!("{}.lora.b", self.name), &c.b));
        }
        for (k, p) in self.prompts.iter().enumerate() {
            out.push((format!("{}.prompt{k}.a", self.name), &p.a));
            out.push((format!("{}.prompt{k}.b", self.name), &p.b));
        }
        if !self.prompts.is_empty() {
            for (n, t) in self.fusion.params() {
                out.push((format!("{}.fusion.{n}", self.name), t));
            }
        }
        out
    }

    pub fn adapter_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.params_mut().1
    }

    /// `(base, adapter)` tensors with their qualified names: the weight and
    /// bias first, then the adapter tensors as in [`adapter_params`](Self::adapter_params).
    pub fn params_mut(&mut self) -> (NamedMut<'_>, NamedMut<'_>) {
        let Self {
            name,
            weight,
            bias,
            context,
            prompts,
            fusion,
            ..
        } = self;
        let base = vec![
            (format!("{name}.weight"), weight),
            (format!("{name}.bias"), bias),
        ];
        let mut out = Vec::new();
        if let Some(c) = context {
            out.push((format!("{name}.lora.a"), &mut c.a));
            out.push((format!("{name}.lora.b"), &mut c.b));
        }
        let has_prompts = !prompts.is_empty();
        for (k, p) in prompts.iter_mut().enumerate() {
            out.push((format!("{name}.prompt{k}.a"), &mut p.a));
            out.push((format!("{name}.prompt{k}.b"), &mut p.b));
        }
        if has_prompts {
            for (n, t) in fusion.params_mut() {
                out.push((format!("{name}.fusion.{n}"), t));
            }
        }
        (base, out)
    }

    /// Records the projection on `g`:
    ///
    /// ```text
    /// horizontal:  fuse(W·h + b + s·B·A·h,  s·Σ_k B_k·A_k·p)
    /// vertical:    W·h + b + s·B·A·(h + s·Σ_k B_k·A_k·p)
    /// ```
    ///
    /// Terms already folded into `W`/`b` are skipped. `h` is `[n × d_in]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        h: Var,
        prompt: Option<&PromptInput>,
        train_base: bool,
    ) -> Result<Var> {
        if g.value(h).ndim() != 2 || g.value(h).cols() != self.d_in() {
            return Err(Error::dim(
                "projection",
                self.weight.shape(),
                g.value(h).shape(),
            ));
        }
        if let (Some(m), Some(p)) = (&self.merged_prompt, prompt) {
            if m.fingerprint != p.fingerprint {
                return Err(Error::merge_state(format!(
                    "{}: forward with prompt {} but {} is merged into the bias",
                    self.name,
                    p.fingerprint.to_hex(),
                    m.fingerprint.to_hex()
                )));
            }
        }
        let summary = if self.prompt_active() {
            let p = prompt.ok_or_else(|| {
                Error::contract(format!(
                    "{}: prompt adapter attached but no prompt summary given",
                    self.name
                ))
            })?;
            Some(p.summary)
        } else {
            None
        };

        let w = g.param(&format!("{}.weight", self.name), &self.weight, train_base);
        let b = g.param(&format!("{}.bias", self.name), &self.bias, false);
        let base = g.matmul_nt(h, w)?;
        let mut y = g.add(base, b)?;

        match self.combination {
            Combination::Horizontal => {
                if let (Some(pair), false) = (&self.context, self.merged_context) {
                    let delta = self.lora_branch(g, pair, "lora", h)?;
                    y = g.add(y, delta)?;
                }
                if let Some(p) = summary {
                    let term = self.prompt_term(g, p)?;
                    y = self.fusion.apply(g, &self.name, y, term, true)?;
                }
            }
            Combination::Vertical => {
                if self.merged_context || self.merged_prompt.is_some() {
                    return Err(Error::merge_state(format!(
                        "{}: vertical combination cannot run merged",
                        self.name
                    )));
                }
                let pair = self.context.as_ref().ok_or_else(|| {
                    Error::contract(format!(
                        "{}: vertical combination needs a context adapter",
                        self.name
                    ))
                })?;
                let input = match summary {
                    Some(p) => {
                        let term = self.prompt_term(g, p)?;
                        g.add(h, term)?
                    }
                    None => h,
                };
                let delta = self.lora_branch(g, pair, "lora", input)?;
                y = g.add(y, delta)?;
            }
        }
        Ok(y)
    }

    fn lora_branch(&self, g: &mut Graph, pair: &LoraPair, tag: &str, x: Var) -> Result<Var> {
        let a = g.param(&format!("{}.{tag}.a", self.name), &pair.a, true);
        let b = g.param(&format!("{}.{tag}.b", self.name), &pair.b, true);
        let low = g.matmul_nt(x, a)?;
        let out = g.matmul_nt(low, b)?;
        Ok(if self.scaling == 1.0 {
            out
        } else {
            g.scale(out, self.scaling)
        })
    }

    /// `s·Σ_k B_k·A_k·p` as a flat vector.
    fn prompt_term(&self, g: &mut Graph, summary: Var) -> Result<Var> {
        let d = g.value(summary).numel();
        let row = g.reshape(summary, &[1, d])?;
        let mut total: Option<Var> = None;
        for (k, pair) in self.prompts.iter().enumerate() {
            let t = self.lora_branch(g, pair, &format!("prompt{k}"), row)?;
            total = Some(match total {
                Some(acc) => g.add(acc, t)?,
                None => t,
            });
        }
        let total = total.expect("prompt_term called without prompt branches");
        let width = g.value(total).numel();
        g.reshape(total, &[width])
    }

    /// Plain-tensor evaluation of [`forward`](Self::forward).
    pub fn dual_forward(&self, h: &Tensor, prompt: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let squeeze = h.ndim() == 1;
        let h2 = if squeeze {
            h.reshape(&[1, h.numel()])?
        } else {
            h.clone()
        };
        let hv = g.constant(h2);
        let input = prompt.map(|p| PromptInput {
            summary: g.constant(p.clone()),
            fingerprint: Fingerprint::of(p),
        });
        let y = self.forward(&mut g, hv, input.as_ref(), false)?;
        let out = g.value(y).clone();
        if squeeze {
            out.reshape(&[self.d_out()])
        } else {
            Ok(out)
        }
    }

    /// `W ← W + s·B·A`.
    pub fn merge_context(&mut self) -> Result<()> {
        let pair = self.mergeable_context("merge")?;
        if self.merged_context {
            return Err(Error::merge_state(format!(
                "{}: context adapter already merged",
                self.name
            )));
        }
        let delta = pair.delta_weight();
        self.weight.axpy(self.scaling, &delta);
        self.merged_context = true;
        Ok(())
    }

    /// `W ← W − s·B·A`.
    pub fn unmerge_context(&mut self) -> Result<()> {
        let pair = self.mergeable_context("unmerge")?;
        if !self.merged_context {
            return Err(Error::merge_state(format!(
                "{}: context adapter is not merged",
                self.name
            )));
        }
        let delta = pair.delta_weight();
        self.weight.axpy(-self.scaling, &delta);
        self.merged_context = false;
        Ok(())
    }

    fn mergeable_context(&self, what: &str) -> Result<&LoraPair> {
        if self.combination == Combination::Vertical {
            return Err(Error::merge_state(format!(
                "{}: cannot {what} a vertical combination",
                self.name
            )));
        }
        self.context
            .as_ref()
            .ok_or_else(|| Error::contract(format!("{}: no context adapter to {what}", self.name)))
    }

    fn prompt_bias_delta(&self, summary: &Tensor) -> Result<Tensor> {
        let mut delta = Tensor::zeros(&[self.d_out()]);
        for pair in &self.prompts {
            delta.add_assign(&pair.apply_vector(summary)?);
        }
        Ok(ops::scale(&delta, self.scaling))
    }

    /// `b ← b + s·Σ_k B_k·A_k·p`, remembering `p` for the guard and for unmerge.
    pub fn merge_prompt(&mut self, summary: &Tensor) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::contract(format!(
                "{}: no prompt adapter to merge",
                self.name
            )));
        }
        if self.combination == Combination::Vertical {
            return Err(Error::merge_state(format!(
                "{}: cannot merge a vertical combination",
                self.name
            )));
        }
        if !matches!(self.fusion, Fusion::MeanAdd) {
            return Err(Error::merge_state(format!(
                "{}: {:?} fusion depends on the context and cannot fold into a bias",
                self.name,
                self.fusion.kind()
            )));
        }
        if let Some(m) = &self.merged_prompt {
            return Err(Error::merge_state(format!(
                "{}: prompt {} already merged",
                self.name,
                m.fingerprint.to_hex()
            )));
        }
        if summary.numel() != self.d_in() {
            return Err(Error::dim(
                "merge_prompt",
                self.weight.shape(),
                summary.shape(),
            ));
        }
        let delta = self.prompt_bias_delta(summary)?;
        self.bias.add_assign(&delta);
        self.merged_prompt = Some(MergedPrompt {
            fingerprint: Fingerprint::of(summary),
            summary: Some(summary.clone()),
        });
        Ok(())
    }

    pub fn unmerge_prompt(&mut self) -> Result<()> {
        let merged = self
            .merged_prompt
            .as_ref()
            .ok_or_else(|| Error::merge_state(format!("{}: no prompt is merged", self.name)))?;
        let summary = merged.summary.clone().ok_or_else(|| {
            Error::merge_state(format!(
                "{}: merged prompt has no retained summary (adapters stripped)",
                self.name
            ))
        })?;
        if self.prompts.is_empty() {
            return Err(Error::contract(format!(
                "{}: prompt adapter missing",
                self.name
            )));
        }
        let delta = self.prompt_bias_delta(&summary)?;
        self.bias.axpy(-1.0, &delta);
        self.merged_prompt = None;
        Ok(())
    }

    /// Drops the adapter tensors after merging, leaving a plain linear map.
    /// A merged prompt keeps its fingerprint so mismatched prompts are still
    /// rejected.
    pub fn strip_merged_adapters(&mut self) -> Result<()> {
        if self.context.is_some() && !self.merged_context {
            return Err(Error::merge_state(format!(
                "{}: context adapter is not merged",
                self.name
            )));
        }
        if !self.prompts.is_empty() && self.merged_prompt.is_none() {
            return Err(Error::merge_state(format!(
                "{}: prompt adapter is not merged",
                self.name
            )));
        }
        self.context = None;
        self.prompts.clear();
        self.fusion = Fusion::MeanAdd;
        self.merged_context = false;
        if let Some(m) = &mut self.merged_prompt {
            m.summary = None;
        }
        Ok(())
    }

    /// Marks a stripped projection as carrying a merged prompt (checkpoint load).
    pub fn set_merged_prompt_marker(&mut self, fingerprint: Fingerprint) {
        self.merged_prompt = Some(MergedPrompt {
            fingerprint,
            summary: None,
        });
    }
}
