//! Slot values as generation targets and back.

use super::corpus::{SlotSchema, State};

/// Target string for an inactive slot.
pub const NONE: &str = "none";

const MAX_VALUE_LEN: usize = 64;

/// Lowercases and collapses runs of whitespace to single spaces.
pub fn normalize_value(v: &str) -> String {
    v.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn is_none_value(v: &str) -> bool {
    normalize_value(v) == NONE
}

/// What the decoder should produce for `key` given the gold state.
pub fn slot_target(state: &State, key: &str) -> String {
    state.get(key).cloned().unwrap_or_else(|| NONE.to_string())
}

/// Reads a decoded per-slot string. Never fails: empty, `none`, malformed
/// text (control or replacement characters, separators, overlong output) and
/// values outside a categorical slot's list all read as inactive.
pub fn parse_slot_value(text: &str, slot: Option<&SlotSchema>) -> Option<String> {
    let v = normalize_value(text);
    if v.is_empty() || v == NONE || v.len() > MAX_VALUE_LEN {
        return None;
    }
    if v.chars()
        .any(|c| c.is_control() || c == '\u{fffd}' || c == ';' || c == '=')
    {
        return None;
    }
    if let Some(values) = slot.and_then(|s| s.values.as_ref()) {
        return values.iter().map(|a| normalize_value(a)).find(|a| *a == v);
    }
    Some(v)
}

/// `"domain-slot=value; ..."` in key order.
pub fn linearize_state(state: &State) -> String {
    state
        .iter()
        .map(|(k, v)| format!("{k}={}", normalize_value(v)))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Inverse of [`linearize_state`]. Pieces without a `key=value` shape or
/// with a `none` value are skipped.
pub fn parse_state(text: &str) -> State {
    let mut out = State::new();
    for piece in text.split(';') {
        let Some((k, v)) = piece.split_once('=') else {
            continue;
        };
        let k = k.trim();
        if k.is_empty() || !k.contains('-') || k.chars().any(char::is_whitespace) {
            continue;
        }
        if let Some(v) = parse_slot_value(v, None) {
            out.insert(k.to_string(), v);
        }
    }
    out
}
