use super::trace::{AttentionStack, AttentionTrace};
use crate::adapters::{AdaptedProjection, ProjectionRole, PromptInput};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Graph, Tensor, Var};

/// Query/key/value/output projections of one attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub q: AdaptedProjection,
    pub k: AdaptedProjection,
    pub v: AdaptedProjection,
    pub o: AdaptedProjection,
    pub n_heads: usize,
}

/// Where to record post-softmax weights, and how to label them.
pub struct TraceSink<'a> {
    pub out: &'a mut Vec<AttentionTrace>,
    pub stack: AttentionStack,
    pub layer: usize,
    pub boundary: usize,
    pub prompt_first: bool,
}

impl Attention {
    pub fn new(prefix: &str, d_model: usize, n_heads: usize, rng: &mut SeededRng) -> Self {
        let std = 1.0 / (d_model as f64).sqrt();
        let mut proj = |role: ProjectionRole| {
            AdaptedProjection::new(
                format!("{prefix}.{}", role.short()),
                Tensor::randn(&[d_model, d_model], std, rng),
            )
        };
        Self {
            q: proj(ProjectionRole::Query),
            k: proj(ProjectionRole::Key),
            v: proj(ProjectionRole::Value),
            o: proj(ProjectionRole::Output),
            n_heads,
        }
    }

    pub fn projection(&self, role: ProjectionRole) -> &AdaptedProjection {
        match role {
            ProjectionRole::Query => &self.q,
            ProjectionRole::Key => &self.k,
            ProjectionRole::Value => &self.v,
            ProjectionRole::Output => &self.o,
        }
    }

    pub fn projection_mut(&mut self, role: ProjectionRole) -> &mut AdaptedProjection {
        match role {
            ProjectionRole::Query => &mut self.q,
            ProjectionRole::Key => &mut self.k,
            ProjectionRole::Value => &mut self.v,
            ProjectionRole::Output => &mut self.o,
        }
    }

    /// Scaled dot-product multi-head attention of `x_q: [n_q × d]` over
    /// `x_kv: [n_k × d]`. Every projection runs through its adapters with
    /// the shared prompt summary. `mask` is added to the raw scores.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        x_q: Var,
        x_kv: Var,
        prompt: Option<&PromptInput>,
        mask: Option<Var>,
        train_base: bool,
        mut trace: Option<TraceSink<'_>>,
    ) -> Result<Var> {
        let d = self.q.d_out();
        if !d.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "width {d} not divisible by {} heads",
                self.n_heads
            )));
        }
        let dh = d / self.n_heads;
        let q = self.q.forward(g, x_q, prompt, train_base)?;
        let k = self.k.forward(g, x_kv, prompt, train_base)?;
        let v = self.v.forward(g, x_kv, prompt, train_base)?;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                (
                    g.slice_cols(q, lo, hi)?,
                    g.slice_cols(k, lo, hi)?,
                    g.slice_cols(v, lo, hi)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let mut scores = g.scale(scores, inv_sqrt);
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let weights = g.softmax(scores, 1)?;
            if let Some(sink) = trace.as_mut() {
                sink.out.push(AttentionTrace {
                    stack: sink.stack,
                    layer: sink.layer,
                    head: h,
                    weights: g.value(weights).clone(),
                    boundary: sink.boundary,
                    prompt_first: sink.prompt_first,
                });
            }
            heads.push(g.matmul(weights, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        self.o.forward(g, merged, prompt, train_base)
    }
}

/// Additive mask that blocks attention from position `i` to any `j > i`.
pub fn causal_mask(n: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            m.data_mut()[i * n + j] = -1.0e9;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::lora::init_lora;

    fn identity_attention(d: usize) -> Attention {
        let p = |n: &str| AdaptedProjection::new(n, Tensor::eye(d));
        Attention {
            q: p("q"),
            k: p("k"),
            v: p("v"),
            o: p("o"),
            n_heads: 1,
        }
    }

    #[test]
    fn single_token_returns_value() {
        let att = identity_attention(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(&[&[0.5, -1.0, 2.0]]).unwrap());
        let y = att.forward(&mut g, x, x, None, None, false, None).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn engineered_logits_give_quarter_three_quarters() {
        // q·k / sqrt(1) with q = 1 and keys (0, ln 3).
        let att = identity_attention(1);
        let mut g = Graph::new();
        let xq = g.constant(Tensor::matrix(&[&[1.0]]).unwrap());
        let xkv = g.constant(Tensor::matrix(&[&[0.0], &[3f64.ln()]]).unwrap());
        let mut traces = Vec::new();
        let sink = TraceSink {
            out: &mut traces,
            stack: AttentionStack::Encoder,
            layer: 0,
            boundary: 2,
            prompt_first: false,
        };
        att.forward(&mut g, xq, xkv, None, None, false, Some(sink))
            .unwrap();
        let w = traces[0].weights.row(0).to_vec();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn fresh_adapters_do_not_change_output() {
        let mut rng = SeededRng::new(3);
        let att = Attention::new("a", 8, 2, &mut rng);
        let mut adapted = att.clone();
        for role in ProjectionRole::ALL {
            let p = adapted.projection_mut(role);
            p.context = Some(init_lora(8, 8, 2, 0.02, role as u64).unwrap());
            p.prompts = vec![init_lora(8, 8, 2, 0.02, 10 + role as u64).unwrap()];
        }
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let s = Tensor::randn(&[8], 1.0, &mut rng);
        let run = |a: &Attention| {
            let mut g = Graph::no_grad();
            let xv = g.constant(x.clone());
            let pv = g.constant(s.clone());
            let pi = PromptInput {
                summary: pv,
                fingerprint: crate::adapters::Fingerprint::of(&s),
            };
            let y = a
                .forward(&mut g, xv, xv, Some(&pi), None, false, None)
                .unwrap();
            g.value(y).clone()
        };
        assert!(run(&att).bit_eq(&run(&adapted)));
    }

    #[test]
    fn causal_mask_rows_sum_to_one() {
        let mut rng = SeededRng::new(5);
        let att = Attention::new("a", 4, 2, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[4, 4], 1.0, &mut rng));
        let m = g.constant(causal_mask(4));
        let mut traces = Vec::new();
        let sink = TraceSink {
            out: &mut traces,
            stack: AttentionStack::DecoderSelf,
            layer: 0,
            boundary: 4,
            prompt_first: false,
        };
        att.forward(&mut g, x, x, None, Some(m), false, Some(sink))
            .unwrap();
        for t in &traces {
            assert!(t.max_row_sum_error() < 1e-12);
            assert_eq!(t.weights.get2(0, 1), 0.0);
        }
    }
}
