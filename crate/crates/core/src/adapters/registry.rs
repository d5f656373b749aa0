use serde::Serialize;

use super::config::{Combination, DualLoraConfig, PromptScope};
use super::fusion::Fusion;
use super::lora::init_lora;
use crate::error::{Error, Result};
use crate::model::{AttentionStack, ParamKind, Seq2Seq};
use crate::rng::{derive_seed, SeededRng};

/// What [`attach_adapters`] did to a model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdapterRegistry {
    pub config: DualLoraConfig,
    /// Names of the projections that received adapters.
    pub projections: Vec<String>,
    pub trainable_params: usize,
    pub total_params: usize,
}

impl AdapterRegistry {
    pub fn trainable_fraction(&self) -> f64 {
        self.trainable_params as f64 / self.total_params as f64
    }
}

/// Attaches context and prompt adapters to the targeted projections of
/// every attention block. Each projection draws its initial factors from a
/// seed derived from `cfg.seed` and its own name, so results do not depend
/// on attachment order.
pub fn attach_adapters(model: &mut Seq2Seq, cfg: &DualLoraConfig) -> Result<AdapterRegistry> {
    cfg.validate(model.config.d_model)?;
    if model
        .projections()
        .iter()
        .any(|p| p.has_adapters() || p.merged_prompt().is_some())
    {
        return Err(Error::contract("model already carries adapters"));
    }
    let mut names = Vec::new();
    for (stack, _, block) in model.attention_blocks_mut() {
        let wants_prompt = match cfg.prompt_scope {
            PromptScope::AllAttention => true,
            PromptScope::EncoderOnly => stack == AttentionStack::Encoder,
        };
        for role in crate::adapters::ProjectionRole::ALL {
            if !cfg.target_projections.includes(role) {
                continue;
            }
            let p = block.projection_mut(role);
            let (d_out, d_in) = (p.d_out(), p.d_in());
            let n_prompts = if wants_prompt { cfg.n_prompt_loras } else { 0 };
            if !cfg.context_lora && n_prompts == 0 {
                continue;
            }
            if cfg.context_lora {
                let seed = derive_seed(cfg.seed, &format!("{}.lora", p.name));
                p.context = Some(init_lora(d_out, d_in, cfg.rank, cfg.init_std, seed)?);
            }
            // Stacked prompt branches feed the context adapter's input, so
            // they map back into the input space.
            let prompt_out = match cfg.combination {
                Combination::Horizontal => d_out,
                Combination::Vertical => d_in,
            };
            p.prompts = (0..n_prompts)
                .map(|k| {
                    let seed = derive_seed(cfg.seed, &format!("{}.prompt{k}", p.name));
                    init_lora(prompt_out, d_in, cfg.rank, cfg.init_std, seed)
                })
                .collect::<Result<_>>()?;
            if n_prompts > 0 {
                let mut rng = SeededRng::derived(cfg.seed, &format!("{}.fusion", p.name));
                p.fusion = Fusion::init(cfg.fusion, d_out, cfg.init_std, &mut rng);
            }
            p.combination = cfg.combination;
            p.scaling = cfg.scaling;
            names.push(p.name.clone());
        }
    }
    Ok(AdapterRegistry {
        config: cfg.clone(),
        projections: names,
        trainable_params: model.param_count(Some(ParamKind::Adapter)),
        total_params: model.param_count(None),
    })
}

/// Adapter parameter count predicted from the configuration alone:
/// `Σ r·(d_in + d_out)` over all attached pairs plus fusion parameters.
pub fn expected_adapter_params(model: &Seq2Seq, cfg: &DualLoraConfig) -> usize {
    let d = model.config.d_model;
    let r = cfg.rank;
    let pair = r * (d + d);
    let fusion = match cfg.fusion {
        super::config::FusionKind::MeanAdd => 0,
        super::config::FusionKind::CrossAttention => 2 * d * d,
        super::config::FusionKind::GateAttention => 2 * d * d + d,
    };
    let roles = crate::adapters::ProjectionRole::ALL
        .iter()
        .filter(|&&role| cfg.target_projections.includes(role))
        .count();
    let mut total = 0;
    for (stack, _, _) in model.attention_blocks() {
        let prompts = match cfg.prompt_scope {
            PromptScope::EncoderOnly if stack != AttentionStack::Encoder => 0,
            _ => cfg.n_prompt_loras,
        };
        let per = usize::from(cfg.context_lora) * pair
            + prompts * pair
            + if prompts > 0 { fusion } else { 0 };
        total += roles * per;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{FusionKind, TargetProjections};
    use crate::model::ModelConfig;

    fn model() -> Seq2Seq {
        let cfg = ModelConfig {
            vocab_size: 300,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            n_encoder_layers: 2,
            n_decoder_layers: 1,
            max_seq_len: 32,
            ..ModelConfig::default()
        };
        Seq2Seq::new(cfg, 9).unwrap()
    }

    #[test]
    fn counts_match_closed_form() {
        for (targets, fusion, scope) in [
            (
                TargetProjections::Qv,
                FusionKind::MeanAdd,
                PromptScope::AllAttention,
            ),
            (
                TargetProjections::Qkvo,
                FusionKind::GateAttention,
                PromptScope::EncoderOnly,
            ),
            (
                TargetProjections::Qkv,
                FusionKind::CrossAttention,
                PromptScope::AllAttention,
            ),
        ] {
            let mut m = model();
            let base = m.param_count(None);
            let cfg = DualLoraConfig {
                rank: 4,
                target_projections: targets,
                fusion,
                prompt_scope: scope,
                ..DualLoraConfig::default()
            };
            let reg = attach_adapters(&mut m, &cfg).unwrap();
            assert_eq!(reg.trainable_params, expected_adapter_params(&m, &cfg));
            assert_eq!(reg.total_params, base + reg.trainable_params);
        }
    }

    #[test]
    fn qv_targets_two_projections_per_block() {
        let mut m = model();
        let reg = attach_adapters(&mut m, &DualLoraConfig::default()).unwrap();
        // 2 encoder blocks + decoder self + decoder cross.
        assert_eq!(reg.projections.len(), 4 * 2);
        assert!(reg
            .projections
            .iter()
            .all(|n| n.ends_with(".q") || n.ends_with(".v")));
        assert!(attach_adapters(&mut m, &DualLoraConfig::default()).is_err());
    }

    #[test]
    fn seeds_are_per_projection() {
        let mut a = model();
        let mut b = model();
        let cfg = DualLoraConfig::default();
        attach_adapters(&mut a, &cfg).unwrap();
        attach_adapters(&mut b, &cfg).unwrap();
        assert_eq!(a, b);
        let pa = &a.encoder[0].attn.q.context.as_ref().unwrap().a;
        let pb = &a.encoder[1].attn.q.context.as_ref().unwrap().a;
        assert!(!pa.bit_eq(pb));
    }

    #[test]
    fn attaching_fresh_adapters_keeps_outputs() {
        use crate::model::EncoderInput;
        let base = model();
        let mut m = base.clone();
        attach_adapters(&mut m, &DualLoraConfig::default()).unwrap();
        let input = EncoderInput {
            context: vec![vec![40, 41, 42]],
            prompt: vec![50, 51],
        };
        let dec = [1, 60];
        assert!(base
            .logits(&input, &dec)
            .unwrap()
            .bit_eq(&m.logits(&input, &dec).unwrap()));
    }
}
