//! Joint and average goal accuracy over aligned per-turn states.
//!
//! Both metrics report 0 when no turn is counted.

use std::collections::BTreeMap;

use super::corpus::State;
use super::state::{is_none_value, normalize_value};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchRule {
    /// Compare values after lowercasing and collapsing whitespace.
    pub normalize: bool,
}

impl Default for MatchRule {
    fn default() -> Self {
        Self { normalize: true }
    }
}

impl MatchRule {
    fn canon(self, state: &State) -> BTreeMap<&str, String> {
        state
            .iter()
            .filter(|(_, v)| !is_none_value(v))
            .map(|(k, v)| {
                (
                    k.as_str(),
                    if self.normalize {
                        normalize_value(v)
                    } else {
                        v.clone()
                    },
                )
            })
            .collect()
    }
}

/// Which turns enter the average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TurnFilter {
    All,
    /// Skip turns whose gold state is empty (the rule AGA always uses).
    NonEmptyGold,
}

fn check_aligned(preds: &[State], golds: &[State]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::contract(format!(
            "{} predicted turns vs {} gold turns",
            preds.len(),
            golds.len()
        )));
    }
    Ok(())
}

/// Fraction of turns whose predicted state equals the gold state exactly.
pub fn jga(preds: &[State], golds: &[State]) -> Result<f64> {
    jga_with(preds, golds, TurnFilter::All, MatchRule::default())
}

pub fn jga_with(
    preds: &[State],
    golds: &[State],
    filter: TurnFilter,
    rule: MatchRule,
) -> Result<f64> {
    check_aligned(preds, golds)?;
    let mut counted = 0usize;
    let mut hits = 0usize;
    for (p, g) in preds.iter().zip(golds) {
        let g = rule.canon(g);
        if filter == TurnFilter::NonEmptyGold && g.is_empty() {
            continue;
        }
        counted += 1;
        if rule.canon(p) == g {
            hits += 1;
        }
    }
    Ok(if counted == 0 {
        0.0
    } else {
        hits as f64 / counted as f64
    })
}

/// Mean over turns with a non-empty gold state of the fraction of gold
/// slots predicted with the right value. Extra predicted slots do not count
/// against a turn.
pub fn aga(preds: &[State], golds: &[State]) -> Result<f64> {
    aga_with(preds, golds, MatchRule::default())
}

pub fn aga_with(preds: &[State], golds: &[State], rule: MatchRule) -> Result<f64> {
    check_aligned(preds, golds)?;
    let mut counted = 0usize;
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(golds) {
        let g = rule.canon(g);
        if g.is_empty() {
            continue;
        }
        let p = rule.canon(p);
        let correct = g.iter().filter(|(k, v)| p.get(*k) == Some(*v)).count();
        total += correct as f64 / g.len() as f64;
        counted += 1;
    }
    Ok(if counted == 0 {
        0.0
    } else {
        total / counted as f64
    })
}
