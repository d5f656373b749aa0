use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{ops, Tensor};

/// Low-rank factor pair with `ΔW = B·A`.
///
/// `A` is `[rank × d_in]` and Gaussian-initialized, `B` is `[d_out × rank]`
/// and starts at exactly zero, so a fresh pair contributes nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraPair {
    pub a: Tensor,
    pub b: Tensor,
}

pub fn init_lora(
    d_out: usize,
    d_in: usize,
    rank: usize,
    init_std: f64,
    seed: u64,
) -> Result<LoraPair> {
    if rank == 0 || rank > d_out.min(d_in) {
        return Err(Error::config(format!(
            "rank {rank} outside 1..={} for a {d_out}x{d_in} projection",
            d_out.min(d_in)
        )));
    }
    let mut rng = SeededRng::new(seed);
    Ok(LoraPair {
        a: Tensor::randn(&[rank, d_in], init_std, &mut rng),
        b: Tensor::zeros(&[d_out, rank]),
    })
}

impl LoraPair {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    pub fn d_out(&self) -> usize {
        self.b.rows()
    }

    pub fn param_count(&self) -> usize {
        self.a.numel() + self.b.numel()
    }

    /// Dense `B·A`, `[d_out × d_in]`. Only used for merging and checks.
    pub fn delta_weight(&self) -> Tensor {
        ops::matmul(&self.b, &self.a).expect("lora factors are conformable")
    }

    /// `B·A·v` for a single vector, computed factor-wise.
    pub fn apply_vector(&self, v: &Tensor) -> Result<Tensor> {
        if v.numel() != self.d_in() {
            return Err(Error::dim("lora.apply_vector", self.a.shape(), v.shape()));
        }
        let row = v.reshape(&[1, v.numel()])?;
        let out = ops::matmul_nt(&ops::matmul_nt(&row, &self.a)?, &self.b)?;
        out.reshape(&[self.d_out()])
    }
}

/// The `B·A·h` term for every row of `h` (`[n × d_in]`, or a single
/// `[d_in]` vector). Never forms `B·A`.
pub fn context_delta(pair: &LoraPair, h: &Tensor) -> Result<Tensor> {
    if h.last_dim() != pair.d_in() {
        return Err(Error::dim("context_delta", pair.a.shape(), h.shape()));
    }
    if h.ndim() == 1 {
        return pair.apply_vector(h);
    }
    let low = ops::matmul_nt(h, &pair.a)?;
    ops::matmul_nt(&low, &pair.b)
}
