use super::corpus::{key_domain, Corpus, Dialogue};
use crate::error::{Error, Result};

/// Leave-one-domain-out partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotSplit {
    pub held_out: String,
    /// Dialogues that never touch the held-out domain.
    pub train: Vec<Dialogue>,
    /// Dialogues that do.
    pub test: Vec<Dialogue>,
    pub warnings: Vec<String>,
}

pub fn make_split(corpus: &Corpus, held_out: &str) -> Result<ZeroShotSplit> {
    if !corpus.schema.iter().any(|s| s.domain == held_out) {
        return Err(Error::config(format!(
            "unknown domain '{held_out}' (known: {})",
            corpus.domains().join(", ")
        )));
    }
    let (test, train): (Vec<_>, Vec<_>) = corpus
        .dialogues
        .iter()
        .cloned()
        .partition(|d| d.touches(held_out));
    let mut warnings = Vec::new();
    if train.is_empty() {
        warnings.push(format!(
            "holding out '{held_out}' leaves no training dialogues"
        ));
    }
    if test.is_empty() {
        warnings.push(format!(
            "no dialogue touches '{held_out}'; the test set is empty"
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ZeroShotSplit {
        held_out: held_out.to_string(),
        train,
        test,
        warnings,
    })
}

impl ZeroShotSplit {
    /// Gold triples in the training partition that belong to the held-out
    /// domain. Always zero for a split built by [`make_split`].
    pub fn leaked_triples(&self) -> usize {
        self.train
            .iter()
            .flat_map(|d| &d.turns)
            .flat_map(|t| t.state.keys())
            .filter(|k| key_domain(k) == self.held_out)
            .count()
    }
}
