//! Turning dialogues into encoder/decoder token sequences.

use super::corpus::{Corpus, Dialogue, SlotSchema};
use super::prompt::slot_prompt_text;
use super::state::{slot_target, NONE};
use crate::adapters::PromptMode;
use crate::error::Result;
use crate::model::{EncoderInput, Tokenizer};

/// One teacher-forced training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: EncoderInput,
    /// Target tokens without the trailing eos.
    pub target: Vec<usize>,
}

/// A per-slot query at one dialogue turn.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotExample {
    pub dialogue: String,
    pub turn: usize,
    pub key: String,
    pub example: Example,
}

/// Words that appear in prompts and turn markers but not necessarily in
/// the corpus text.
pub const TEMPLATE_WORDS: &[&str] = &[
    "domain:",
    "slot:",
    "description:",
    "user:",
    "system:",
    "find:",
    NONE,
];

pub fn build_tokenizer(corpus: &Corpus, vocab_size: usize) -> Result<Tokenizer> {
    build_shared_tokenizer(&[corpus], vocab_size)
}

/// One vocabulary over several corpora, so a backbone pretrained on one can
/// be evaluated on another.
pub fn build_shared_tokenizer(corpora: &[&Corpus], vocab_size: usize) -> Result<Tokenizer> {
    let mut texts: Vec<String> = corpora.iter().flat_map(|c| c.texts()).collect();
    texts.push(TEMPLATE_WORDS.join(" "));
    Tokenizer::build(texts.iter().map(String::as_str), vocab_size)
}

/// Encoded history up to and including turn `upto`, one entry per turn.
pub fn context_turns(dialogue: &Dialogue, upto: usize, tok: &Tokenizer) -> Vec<Vec<usize>> {
    dialogue.turns[..=upto]
        .iter()
        .map(|t| {
            let text = if t.system.is_empty() {
                format!("user: {}", t.user)
            } else {
                format!("system: {} user: {}", t.system, t.user)
            };
            tok.encode(&text)
        })
        .collect()
}

pub fn prompt_tokens(schema: &SlotSchema, mode: PromptMode, tok: &Tokenizer) -> Vec<usize> {
    tok.encode(&slot_prompt_text(schema, mode))
}

/// Every (turn, slot) pair of `dialogues` for the slots chosen by
/// `slots_for`. Targets are the gold value or `none`.
pub fn slot_examples<'a>(
    dialogues: &[Dialogue],
    slots_for: impl Fn(&Dialogue) -> Vec<&'a SlotSchema>,
    mode: PromptMode,
    tok: &Tokenizer,
) -> Vec<SlotExample> {
    let mut out = Vec::new();
    for d in dialogues {
        let slots = slots_for(d);
        let prompts: Vec<Vec<usize>> = slots.iter().map(|s| prompt_tokens(s, mode, tok)).collect();
        for (ti, turn) in d.turns.iter().enumerate() {
            let context = context_turns(d, ti, tok);
            for (s, prompt) in slots.iter().zip(&prompts) {
                let key = s.key();
                out.push(SlotExample {
                    dialogue: d.id.clone(),
                    turn: ti,
                    key: key.clone(),
                    example: Example {
                        input: EncoderInput {
                            context: context.clone(),
                            prompt: prompt.clone(),
                        },
                        target: tok.encode(&slot_target(&turn.state, &key)),
                    },
                });
            }
        }
    }
    out
}

/// Training pairs for the slots of each dialogue's own domains.
pub fn training_examples(
    corpus: &Corpus,
    dialogues: &[Dialogue],
    mode: PromptMode,
    tok: &Tokenizer,
) -> Vec<Example> {
    slot_examples(
        dialogues,
        |d| {
            corpus
                .schema
                .iter()
                .filter(|s| d.domains.contains(&s.domain))
                .collect()
        },
        mode,
        tok,
    )
    .into_iter()
    .map(|e| e.example)
    .collect()
}
