use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::state::{is_none_value, normalize_value};
use crate::error::{Error, Result};

/// Active slot values of one turn, keyed `"domain-slot"`.
pub type State = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub domain: String,
    pub slot: String,
    pub description: String,
    /// Closed value set for categorical slots; free-form when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
}

impl SlotSchema {
    pub fn key(&self) -> String {
        slot_key(&self.domain, &self.slot)
    }

    pub fn is_categorical(&self) -> bool {
        self.values.is_some()
    }
}

pub fn slot_key(domain: &str, slot: &str) -> String {
    format!("{domain}-{slot}")
}

/// Domain part of a `"domain-slot"` key.
pub fn key_domain(key: &str) -> &str {
    key.split_once('-').map_or(key, |(d, _)| d)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(skip)]
    pub index: usize,
    pub user: String,
    /// System utterance preceding `user` (empty on the first turn).
    pub system: String,
    /// Cumulative dialogue state after this user utterance.
    pub state: State,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub domains: Vec<String>,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// True when the dialogue lists `domain` or any gold triple uses it.
    pub fn touches(&self, domain: &str) -> bool {
        self.domains.iter().any(|d| d == domain)
            || self
                .turns
                .iter()
                .any(|t| t.state.keys().any(|k| key_domain(k) == domain))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub schema: Vec<SlotSchema>,
    pub dialogues: Vec<Dialogue>,
}

fn load_err(
    location: impl Into<String>,
    field: impl Into<String>,
    message: impl Into<String>,
) -> Error {
    Error::Load {
        location: location.into(),
        field: field.into(),
        message: message.into(),
    }
}

impl Corpus {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Load {
                location,
                field,
                message,
            } => Error::Load {
                location: format!("{}: {location}", path.display()),
                field,
                message,
            },
            other => other,
        })
    }

    /// Parses and validates a corpus. `"none"` values are dropped from the
    /// states; every other invariant violation is an error naming the
    /// dialogue and the field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut corpus: Corpus = serde_json::from_str(text)
            .map_err(|e| load_err("corpus", format!("line {}", e.line()), e.to_string()))?;
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn validate(&mut self) -> Result<()> {
        let mut keys = BTreeSet::new();
        for (i, s) in self.schema.iter().enumerate() {
            let field = format!("schema[{i}]");
            for (name, v) in [("domain", &s.domain), ("slot", &s.slot)] {
                if v.trim().is_empty() || v.contains('-') || v.chars().any(char::is_whitespace) {
                    return Err(load_err(
                        "schema",
                        format!("{field}.{name}"),
                        format!("invalid name '{v}'"),
                    ));
                }
            }
            if s.description.trim().is_empty() {
                return Err(load_err(
                    "schema",
                    format!("{field}.description"),
                    "empty description",
                ));
            }
            if !keys.insert(s.key()) {
                return Err(load_err(
                    "schema",
                    field,
                    format!("duplicate slot {}", s.key()),
                ));
            }
        }
        let domains: BTreeSet<&str> = self.schema.iter().map(|s| s.domain.as_str()).collect();
        let by_key: BTreeMap<String, &SlotSchema> =
            self.schema.iter().map(|s| (s.key(), s)).collect();

        let mut ids = BTreeSet::new();
        for d in &mut self.dialogues {
            let loc = format!("dialogue {}", d.id);
            if !ids.insert(d.id.clone()) {
                return Err(load_err(loc, "id", "duplicate dialogue id"));
            }
            for (i, dom) in d.domains.iter().enumerate() {
                if !domains.contains(dom.as_str()) {
                    return Err(load_err(
                        loc,
                        format!("domains[{i}]"),
                        format!("unknown domain '{dom}'"),
                    ));
                }
            }
            for (ti, turn) in d.turns.iter_mut().enumerate() {
                turn.index = ti;
                let mut cleaned = State::new();
                for (key, value) in &turn.state {
                    let field = format!("turns[{ti}].state.{key}");
                    let slot = by_key
                        .get(key)
                        .ok_or_else(|| load_err(&loc, &field, format!("unknown slot '{key}'")))?;
                    if value.trim().is_empty() {
                        return Err(load_err(&loc, &field, "empty value"));
                    }
                    if is_none_value(value) {
                        continue;
                    }
                    if let Some(allowed) = &slot.values {
                        let v = normalize_value(value);
                        if !allowed.iter().any(|a| normalize_value(a) == v) {
                            return Err(load_err(
                                &loc,
                                &field,
                                format!("'{value}' is not a listed value"),
                            ));
                        }
                    }
                    cleaned.insert(key.clone(), value.clone());
                }
                turn.state = cleaned;
            }
        }
        Ok(())
    }

    pub fn domains(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.schema.iter().map(|s| s.domain.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn slots_of(&self, domain: &str) -> Vec<&SlotSchema> {
        self.schema.iter().filter(|s| s.domain == domain).collect()
    }

    pub fn slot(&self, key: &str) -> Option<&SlotSchema> {
        self.schema.iter().find(|s| s.key() == key)
    }

    pub fn n_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    /// Every text the tokenizer should know about: utterances, schema
    /// descriptions and names, and gold values.
    pub fn texts(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.schema {
            out.push(format!("{} {} {}", s.domain, s.slot, s.description));
            if let Some(vs) = &s.values {
                out.extend(vs.iter().cloned());
            }
        }
        for d in &self.dialogues {
            for t in &d.turns {
                out.push(t.user.clone());
                out.push(t.system.clone());
                out.extend(t.state.values().cloned());
            }
        }
        out
    }
}
