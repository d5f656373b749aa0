//! Forward-pass timing for the merged-versus-base comparison.

use std::time::{Duration, Instant};

use duallora::model::EncoderInput;
use duallora::{Result, Seq2Seq};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct LatencyReport {
    pub warmup: usize,
    pub runs: usize,
    pub base_median_ns: u128,
    pub merged_median_ns: u128,
    pub unmerged_median_ns: u128,
    pub merged_over_base: f64,
    pub unmerged_over_base: f64,
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort_unstable();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Median wall time of `runs` forward passes per model after `warmup`
/// untimed ones. Models are timed round-robin so slow drifts in machine load
/// hit all of them alike.
pub fn median_forward_times(
    models: &[&Seq2Seq],
    input: &EncoderInput,
    dec_ids: &[usize],
    warmup: usize,
    runs: usize,
) -> Result<Vec<Duration>> {
    for _ in 0..warmup {
        for m in models {
            std::hint::black_box(m.logits(input, dec_ids)?);
        }
    }
    let mut samples = vec![Vec::with_capacity(runs); models.len()];
    for _ in 0..runs {
        for (m, out) in models.iter().zip(&mut samples) {
            let t = Instant::now();
            std::hint::black_box(m.logits(input, dec_ids)?);
            out.push(t.elapsed());
        }
    }
    Ok(samples.into_iter().map(median).collect())
}

pub fn compare(
    base: &Seq2Seq,
    merged: &Seq2Seq,
    unmerged: &Seq2Seq,
    input: &EncoderInput,
    dec_ids: &[usize],
    warmup: usize,
    runs: usize,
) -> Result<LatencyReport> {
    let t = median_forward_times(&[base, merged, unmerged], input, dec_ids, warmup, runs)?;
    let ratio = |x: Duration| x.as_secs_f64() / t[0].as_secs_f64();
    Ok(LatencyReport {
        warmup,
        runs,
        base_median_ns: t[0].as_nanos(),
        merged_median_ns: t[1].as_nanos(),
        unmerged_median_ns: t[2].as_nanos(),
        merged_over_base: ratio(t[1]),
        unmerged_over_base: ratio(t[2]),
    })
}
