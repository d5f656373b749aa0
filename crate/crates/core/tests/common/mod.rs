#![allow(dead_code)]

use duallora::adapters::{Combination, FusionKind, PromptScope, TargetProjections};
use duallora::model::{EncoderInput, ParamKind};
use duallora::rng::SeededRng;
use duallora::{DualLoraConfig, ModelConfig, Seq2Seq, Tensor};

/// First id that is neither a special token nor reserved for PAD/BOS/EOS.
pub const FIRST_ID: usize = 3;

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 270,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        max_seq_len: 32,
        ..ModelConfig::default()
    }
}

pub fn toy_model(seed: u64) -> Seq2Seq {
    Seq2Seq::new(toy_config(), seed).unwrap()
}

pub fn random_ids(rng: &mut SeededRng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n)
        .map(|_| FIRST_ID + rng.below(vocab - FIRST_ID))
        .collect()
}

/// One to three context turns and a non-empty prompt.
pub fn random_input(rng: &mut SeededRng, vocab: usize) -> EncoderInput {
    let turns = 1 + rng.below(3);
    let context = (0..turns).map(|_| {
        let len = 1 + rng.below(5);
        random_ids(rng, len, vocab)
    });
    let context = context.collect();
    let plen = 1 + rng.below(4);
    EncoderInput {
        context,
        prompt: random_ids(rng, plen, vocab),
    }
}

/// Overwrites every adapter tensor with Gaussian noise, standing in for a
/// trained state.
pub fn randomize_adapters(model: &mut Seq2Seq, rng: &mut SeededRng, std: f64) {
    for (_, kind, t) in model.params_mut() {
        if kind == ParamKind::Adapter {
            let fresh = Tensor::randn(t.shape(), std, rng);
            *t = fresh;
        }
    }
}

pub fn base_snapshot(model: &Seq2Seq) -> Vec<(String, Tensor)> {
    model
        .params()
        .into_iter()
        .filter(|(_, k, _)| *k == ParamKind::Base)
        .map(|(n, _, t)| (n, t.clone()))
        .collect()
}

/// Any valid adapter configuration for [`toy_config`].
pub fn random_adapter_config(rng: &mut SeededRng) -> DualLoraConfig {
    let targets = [
        TargetProjections::Qv,
        TargetProjections::Qkv,
        TargetProjections::Qkvo,
    ];
    let fusions = [
        FusionKind::MeanAdd,
        FusionKind::CrossAttention,
        FusionKind::GateAttention,
    ];
    let scopes = [PromptScope::AllAttention, PromptScope::EncoderOnly];
    let combination = if rng.below(4) == 0 {
        Combination::Vertical
    } else {
        Combination::Horizontal
    };
    let context_lora = combination == Combination::Vertical || rng.below(5) != 0;
    let fusion = if combination == Combination::Vertical {
        FusionKind::MeanAdd
    } else {
        *rng.choose(&fusions)
    };
    DualLoraConfig {
        rank: 1 + rng.below(8),
        target_projections: *rng.choose(&targets),
        fusion,
        combination,
        context_lora,
        n_prompt_loras: usize::from(!context_lora) + rng.below(3),
        seed: rng.next_u64(),
        prompt_scope: *rng.choose(&scopes),
        ..DualLoraConfig::default()
    }
}
