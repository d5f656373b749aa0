//! Fixtures shared by the forward-pass benchmarks.

use duallora::model::{EncoderInput, ParamKind};
use duallora::rng::SeededRng;
use duallora::{attach_adapters, DualLoraConfig, ModelConfig, Result, Seq2Seq, Tensor};

/// Base, merged and unmerged copies of one default-config model with
/// nonzero adapters, plus a fixed input.
pub struct Fixture {
    pub base: Seq2Seq,
    pub merged: Seq2Seq,
    pub unmerged: Seq2Seq,
    pub input: EncoderInput,
    pub dec_ids: Vec<usize>,
}

pub fn fixture() -> Result<Fixture> {
    let base = Seq2Seq::new(ModelConfig::default(), 0)?;
    let input = EncoderInput {
        context: vec![(3..40).collect(), (40..70).collect()],
        prompt: (70..80).collect(),
    };
    let mut unmerged = base.clone();
    attach_adapters(&mut unmerged, &DualLoraConfig::default())?;
    let mut rng = SeededRng::new(7);
    for (_, kind, t) in unmerged.params_mut() {
        if kind == ParamKind::Adapter {
            *t = Tensor::randn(t.shape(), 0.02, &mut rng);
        }
    }
    let mut merged = unmerged.clone();
    merged.merge_context_adapters()?;
    merged.merge_prompt_adapters(&input.prompt)?;
    merged.strip_merged_adapters()?;
    Ok(Fixture {
        base,
        merged,
        unmerged,
        input,
        dec_ids: vec![1, 3, 4, 5],
    })
}
