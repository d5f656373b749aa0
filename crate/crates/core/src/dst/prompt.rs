use super::corpus::SlotSchema;
use crate::adapters::PromptMode;

/// Text fed to the encoder (and summarized for the prompt adapters) when
/// asking for one slot.
pub fn slot_prompt_text(schema: &SlotSchema, mode: PromptMode) -> String {
    match mode {
        PromptMode::SlotPrompt => format!(
            "domain: {} slot: {} description: {}",
            schema.domain, schema.slot, schema.description
        ),
        PromptMode::SlotEmbedding => schema.slot.clone(),
    }
}
