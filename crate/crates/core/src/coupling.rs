//! Query-conditioned coupling of support features.
//!
//! Every support position attends over the query feature map, the attended
//! values are projected back to `C` channels, and the result is injected
//! into the support map wherever the support looks like the query's global
//! descriptor.

use icpe_tensor::{ops, ParamRegistry, Tensor};
use rand::Rng;

use crate::error::{IcpeError, Result};
use crate::layers::{Conv, Init};

#[derive(Debug, Clone)]
pub struct CouplingParams {
    pub proj_q: Conv,
    pub proj_k: Conv,
    pub proj_v: Conv,
    pub proj_out: Conv,
}

impl CouplingParams {
    /// `proj_out` starts at zero so a fresh module passes `x_s` through
    /// unchanged.
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParamRegistry,
        prefix: &str,
        channels: usize,
        embed: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut conv = |name: &str, cin, cout, init| {
            Conv::register(reg, &format!("{prefix}.{name}"), cin, cout, 1, init, rng)
        };
        Ok(CouplingParams {
            proj_q: conv("proj_q", channels, embed, Init::FanIn)?,
            proj_k: conv("proj_k", channels, embed, Init::FanIn)?,
            proj_v: conv("proj_v", channels, embed, Init::FanIn)?,
            proj_out: conv("proj_out", embed, channels, Init::Zero)?,
        })
    }

    pub fn lookup(reg: &ParamRegistry, prefix: &str) -> Result<Self> {
        let conv = |name: &str| Conv::lookup(reg, &format!("{prefix}.{name}"));
        Ok(CouplingParams {
            proj_q: conv("proj_q")?,
            proj_k: conv("proj_k")?,
            proj_v: conv("proj_v")?,
            proj_out: conv("proj_out")?,
        })
    }

    pub fn channels(&self) -> usize {
        self.proj_q.weight.shape()[1]
    }

    pub fn embed(&self) -> usize {
        self.proj_q.weight.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct CoupledFeature {
    pub x_hat_s: Tensor,
    pub condition: Tensor,
    /// `[Ns, Nq]`, rows sum to one.
    pub attention: Tensor,
}

fn dims(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(IcpeError::invalid(format!("{what} must be [C, H, W], got {s:?}"))),
    }
}

/// Attends from support positions over query positions and returns the
/// query content re-assembled on the support grid, plus the attention.
pub fn generate_coupled_info(
    x_q: &Tensor,
    x_s: &Tensor,
    params: &CouplingParams,
) -> Result<(Tensor, Tensor)> {
    let (cq, hq, wq) = dims(x_q, "query feature")?;
    let (cs, hs, ws) = dims(x_s, "support feature")?;
    let c = params.channels();
    if cq != c || cs != c {
        return Err(IcpeError::invalid(format!(
            "coupling expects {c} channels, got query {cq} and support {cs}"
        )));
    }
    let d = params.embed();
    let (ns, nq) = (hs * ws, hq * wq);
    let q = ops::reshape(&params.proj_q.forward(x_s)?, &[d, ns])?;
    let k = ops::reshape(&params.proj_k.forward(x_q)?, &[d, nq])?;
    let v = ops::reshape(&params.proj_v.forward(x_q)?, &[d, nq])?;
    let scores = ops::matmul(&ops::transpose(&q)?, &k)?;
    let attention = ops::softmax(&scores, 1)?;
    let gathered = ops::matmul(&v, &ops::transpose(&attention)?)?;
    let x_hat_q = params.proj_out.forward(&ops::reshape(&gathered, &[d, hs, ws])?)?;
    Ok((x_hat_q, attention))
}

/// Cosine similarity between the query's global descriptor and every
/// support position, with negatives zeroed when `clamp` is set.
pub fn compute_condition(x_q: &Tensor, x_s: &Tensor, clamp: bool) -> Result<Tensor> {
    let sim = ops::cosine_map(&ops::gap(x_q)?, x_s, ops::DEFAULT_COSINE_EPS)?;
    Ok(if clamp { ops::relu(&sim) } else { sim })
}

pub fn couple(x_s: &Tensor, x_hat_q: &Tensor, condition: &Tensor) -> Result<Tensor> {
    Ok(ops::add(&ops::hadamard(condition, x_hat_q)?, x_s)?)
}

/// Full coupling. Without the condition mechanism the mask is all ones.
pub fn cic_forward(
    x_q: &Tensor,
    x_s: &Tensor,
    params: &CouplingParams,
    use_ccm: bool,
    clamp: bool,
) -> Result<CoupledFeature> {
    let (x_hat_q, attention) = generate_coupled_info(x_q, x_s, params)?;
    let (_, hs, ws) = dims(x_s, "support feature")?;
    let condition = if use_ccm {
        compute_condition(x_q, x_s, clamp)?
    } else {
        Tensor::full(&[hs, ws], 1.0)
    };
    let x_hat_s = couple(x_s, &x_hat_q, &condition)?;
    Ok(CoupledFeature {
        x_hat_s,
        condition,
        attention,
    })
}
