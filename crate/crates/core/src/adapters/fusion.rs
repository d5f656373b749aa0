//! Ways of combining the per-position context output with the prompt term.
//!
//! * mean addition: the prompt term is added to every position.
//! * cross-attention: the (projected) prompt term queries the context
//!   positions; the softmax weights, rescaled by the number of positions,
//!   distribute a projected copy of the prompt term over them.
//! * gate-attention: a sigmoid gate computed from the context row and the
//!   prompt term scales the prompt term elementwise at each position.
//!
//! The two interaction variants carry their own trainable parameters.

use super::config::FusionKind;
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub enum Fusion {
    MeanAdd,
    CrossAttention {
        /// `[d × d]`, maps the prompt term to an attention query.
        query: Tensor,
        /// `[d × d]`, maps the prompt term to the value that gets spread.
        value: Tensor,
    },
    GateAttention {
        context_gate: Tensor,
        prompt_gate: Tensor,
        bias: Tensor,
    },
}

impl Fusion {
    /// Fresh parameters for `kind` at width `d`. The cross-attention value
    /// map starts at the identity so the variant begins near mean addition.
    pub fn init(kind: FusionKind, d: usize, init_std: f64, rng: &mut SeededRng) -> Self {
        match kind {
            FusionKind::MeanAdd => Fusion::MeanAdd,
            FusionKind::CrossAttention => Fusion::CrossAttention {
                query: Tensor::randn(&[d, d], init_std, rng),
                value: Tensor::eye(d),
            },
            FusionKind::GateAttention => Fusion::GateAttention {
                context_gate: Tensor::randn(&[d, d], init_std, rng),
                prompt_gate: Tensor::randn(&[d, d], init_std, rng),
                bias: Tensor::zeros(&[d]),
            },
        }
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            Fusion::MeanAdd => FusionKind::MeanAdd,
            Fusion::CrossAttention { .. } => FusionKind::CrossAttention,
            Fusion::GateAttention { .. } => FusionKind::GateAttention,
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Fusion::MeanAdd => vec![],
            Fusion::CrossAttention { query, value } => vec![("query", query), ("value", value)],
            Fusion::GateAttention {
                context_gate,
                prompt_gate,
                bias,
            } => vec![
                ("context_gate", context_gate),
                ("prompt_gate", prompt_gate),
                ("bias", bias),
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Fusion::MeanAdd => vec![],
            Fusion::CrossAttention { query, value } => vec![("query", query), ("value", value)],
            Fusion::GateAttention {
                context_gate,
                prompt_gate,
                bias,
            } => vec![
                ("context_gate", context_gate),
                ("prompt_gate", prompt_gate),
                ("bias", bias),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Combines `context: [n × d]` with `prompt: [d]` on the graph. Fusion
    /// parameters are interned under `"{prefix}.fusion.<name>"`.
    pub fn apply(
        &self,
        g: &mut Graph,
        prefix: &str,
        context: Var,
        prompt: Var,
        trainable: bool,
    ) -> Result<Var> {
        match self {
            Fusion::MeanAdd => g.add(context, prompt),
            Fusion::CrossAttention { query, value } => {
                let n = g.value(context).rows();
                let d = g.value(context).cols();
                let uq = g.param(&format!("{prefix}.fusion.query"), query, trainable);
                let uv = g.param(&format!("{prefix}.fusion.value"), value, trainable);
                let p_row = g.reshape(prompt, &[1, d])?;
                let q = g.matmul_nt(p_row, uq)?;
                let scores = g.matmul_nt(q, context)?;
                let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
                let weights = g.softmax(scores, 1)?;
                let weights = g.reshape(weights, &[n, 1])?;
                let projected = g.matmul_nt(p_row, uv)?;
                let spread = g.matmul(weights, projected)?;
                let spread = g.scale(spread, n as f64);
                g.add(context, spread)
            }
            Fusion::GateAttention {
                context_gate,
                prompt_gate,
                bias,
            } => {
                let d = g.value(context).cols();
                let wc = g.param(
                    &format!("{prefix}.fusion.context_gate"),
                    context_gate,
                    trainable,
                );
                let wp = g.param(
                    &format!("{prefix}.fusion.prompt_gate"),
                    prompt_gate,
                    trainable,
                );
                let b = g.param(&format!("{prefix}.fusion.bias"), bias, trainable);
                let p_row = g.reshape(prompt, &[1, d])?;
                let from_ctx = g.matmul_nt(context, wc)?;
                let from_prompt = g.matmul_nt(p_row, wp)?;
                let z = g.add(from_ctx, from_prompt)?;
                let z = g.add(z, b)?;
                let gate = g.sigmoid(z);
                let gated = g.mul(gate, prompt)?;
                g.add(context, gated)
            }
        }
    }
}

/// Plain-tensor form of [`Fusion::apply`].
pub fn fuse(fusion: &Fusion, context_term: &Tensor, prompt_term: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let c = g.constant(context_term.clone());
    let p = g.constant(prompt_term.clone());
    let out = fusion.apply(&mut g, "fuse", c, p, false)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    fn rng() -> SeededRng {
        SeededRng::new(21)
    }

    #[test]
    fn mean_add_with_zero_prompt_is_identity() {
        let c = Tensor::randn(&[4, 6], 1.0, &mut rng());
        let out = fuse(&Fusion::MeanAdd, &c, &Tensor::zeros(&[6])).unwrap();
        assert!(out.bit_eq(&c));
    }

    #[test]
    fn mean_add_broadcasts() {
        let c = Tensor::zeros(&[3, 2]);
        let out = fuse(&Fusion::MeanAdd, &c, &Tensor::vector(vec![1.0, -1.0])).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), &[1.0, -1.0]);
        }
    }

    #[test]
    fn closed_gate_leaves_context_unchanged() {
        let mut r = rng();
        let d = 5;
        let fusion = Fusion::GateAttention {
            context_gate: Tensor::randn(&[d, d], 0.02, &mut r),
            prompt_gate: Tensor::randn(&[d, d], 0.02, &mut r),
            bias: Tensor::full(&[d], -1.0e4),
        };
        let c = Tensor::randn(&[3, d], 1.0, &mut r);
        let p = Tensor::randn(&[d], 1.0, &mut r);
        let out = fuse(&fusion, &c, &p).unwrap();
        assert!(out.bit_eq(&c));
    }

    #[test]
    fn cross_attention_single_position_adds_projected_prompt() {
        let mut r = rng();
        let d = 4;
        let fusion = Fusion::init(FusionKind::CrossAttention, d, 0.5, &mut r);
        let Fusion::CrossAttention { value, .. } = &fusion else {
            unreachable!()
        };
        let value = value.clone();
        let c = Tensor::randn(&[1, d], 1.0, &mut r);
        let p = Tensor::randn(&[d], 1.0, &mut r);
        let out = fuse(&fusion, &c, &p).unwrap();
        let projected = ops::matmul_nt(&p.reshape(&[1, d]).unwrap(), &value).unwrap();
        let expect = ops::add(&c, &projected).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn cross_attention_with_zero_prompt_is_identity() {
        let mut r = rng();
        let fusion = Fusion::init(FusionKind::CrossAttention, 4, 0.5, &mut r);
        let c = Tensor::randn(&[3, 4], 1.0, &mut r);
        assert!(fuse(&fusion, &c, &Tensor::zeros(&[4])).unwrap().bit_eq(&c));
    }

    #[test]
    fn interaction_variants_add_parameters() {
        let mut r = rng();
        assert_eq!(
            Fusion::init(FusionKind::MeanAdd, 8, 0.02, &mut r).param_count(),
            0
        );
        assert_eq!(
            Fusion::init(FusionKind::CrossAttention, 8, 0.02, &mut r).param_count(),
            128
        );
        assert_eq!(
            Fusion::init(FusionKind::GateAttention, 8, 0.02, &mut r).param_count(),
            136
        );
    }
}
