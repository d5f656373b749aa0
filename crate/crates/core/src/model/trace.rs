use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionStack {
    Encoder,
    DecoderSelf,
    DecoderCross,
}

impl AttentionStack {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Encoder => "enc",
            Self::DecoderSelf => "dec_self",
            Self::DecoderCross => "dec_cross",
        }
    }
}

/// Post-softmax attention weights of one head.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    pub stack: AttentionStack,
    pub layer: usize,
    pub head: usize,
    /// `[queries × keys]`
    pub weights: Tensor,
    /// Key position where the dialogue context ends and the prompt begins
    /// (context-first layout), or where the prompt ends and the context
    /// begins (prompt-first layout).
    pub boundary: usize,
    pub prompt_first: bool,
}

impl AttentionTrace {
    pub fn n_queries(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_keys(&self) -> usize {
        self.weights.cols()
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n_queries())
            .map(|r| (self.weights.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Mean over context-query rows of the attention mass those rows put on
/// prompt keys, given the key `boundary` between context and prompt.
///
/// For encoder self-attention the query rows are the context positions; for
/// cross-attention every decoder query row counts. With no context rows or no
/// prompt keys the mass is 0.
pub fn prompt_attention_mass(trace: &AttentionTrace, boundary: usize) -> Result<f64> {
    let n_keys = trace.n_keys();
    if boundary > n_keys {
        return Err(Error::contract(format!(
            "prompt boundary {boundary} exceeds {n_keys} keys"
        )));
    }
    let (prompt_keys, context_keys) = if trace.prompt_first {
        (0..boundary, boundary..n_keys)
    } else {
        (boundary..n_keys, 0..boundary)
    };
    let rows: Vec<usize> = match trace.stack {
        AttentionStack::Encoder => context_keys.collect(),
        _ => (0..trace.n_queries()).collect(),
    };
    if rows.is_empty() || prompt_keys.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = rows
        .iter()
        .map(|&r| {
            trace.weights.row(r)[prompt_keys.clone()]
                .iter()
                .sum::<f64>()
        })
        .sum();
    Ok((total / rows.len() as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, boundary: usize) -> AttentionTrace {
        AttentionTrace {
            stack: AttentionStack::Encoder,
            layer: 0,
            head: 0,
            weights: Tensor::full(&[n, n], 1.0 / n as f64),
            boundary,
            prompt_first: false,
        }
    }

    #[test]
    fn uniform_half_prompt() {
        let t = uniform(6, 3);
        assert!((prompt_attention_mass(&t, 3).unwrap() - 0.5).abs() < 1e-15);
        assert!(t.max_row_sum_error() < 1e-15);
    }

    #[test]
    fn no_prompt_keys() {
        let t = uniform(4, 4);
        assert_eq!(prompt_attention_mass(&t, 4).unwrap(), 0.0);
    }

    #[test]
    fn boundary_out_of_range() {
        let t = uniform(4, 4);
        assert!(matches!(
            prompt_attention_mass(&t, 5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn prompt_first_layout() {
        let mut t = uniform(4, 1);
        t.prompt_first = true;
        assert!((prompt_attention_mass(&t, 1).unwrap() - 0.25).abs() < 1e-15);
    }
}
