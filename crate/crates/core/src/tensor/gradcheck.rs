//! Central-difference gradient oracle.

use super::Tensor;

/// `(f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)` for every element `i`.
pub fn finite_difference_grad<F>(f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut out = Tensor::zeros_like(x);
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    out
}

/// Central difference for a single element of `x`.
pub fn finite_difference_at<F>(f: F, x: &Tensor, index: usize, eps: f64) -> f64
where
    F: Fn(&Tensor) -> f64,
{
    let mut probe = x.clone();
    probe.data_mut()[index] = x.data()[index] + eps;
    let plus = f(&probe);
    probe.data_mut()[index] = x.data()[index] - eps;
    let minus = f(&probe);
    (plus - minus) / (2.0 * eps)
}

/// Comparison rule for analytic vs. numeric gradients: relative error
/// `|a - n| / max(|a|, |n|)`, except that entries whose numeric value is
/// below `abs_floor` in magnitude are compared absolutely against `abs_floor`.
#[derive(Clone, Copy, Debug)]
pub struct GradTolerance {
    pub rel: f64,
    pub abs_floor: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        Self {
            rel: 1e-5,
            abs_floor: 1e-7,
        }
    }
}

impl GradTolerance {
    /// Error of one entry under this rule, normalized so that `<= 1.0` passes.
    pub fn score(&self, analytic: f64, numeric: f64) -> f64 {
        if numeric.abs() < self.abs_floor {
            (analytic - numeric).abs() / self.abs_floor
        } else {
            let denom = analytic.abs().max(numeric.abs());
            (analytic - numeric).abs() / denom / self.rel
        }
    }

    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        self.score(analytic, numeric) <= 1.0
    }
}
