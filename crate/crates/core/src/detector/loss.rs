use icpe_tensor::{ops, Tensor};

use crate::detector::model::DetectionOutput;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Tensor,
    pub cls: f64,
    pub reg: f64,
    pub meta: f64,
}

/// `CE(cls) + L1(reg) + λ·CE(meta)`. `deltas`/`reg_targets` hold only the
/// positive RoIs; with none the regression term is zero.
pub fn total_loss(
    cls_logits: &Tensor,
    labels: &[usize],
    deltas: Option<&Tensor>,
    reg_targets: Option<&Tensor>,
    proto_logits: &Tensor,
    proto_labels: &[usize],
    lambda: f64,
) -> Result<LossParts> {
    let cls = ops::cross_entropy(cls_logits, labels)?;
    let meta = ops::cross_entropy(proto_logits, proto_labels)?;
    let mut terms = vec![cls.clone()];
    let reg = match (deltas, reg_targets) {
        (Some(d), Some(t)) => {
            let r = ops::l1_loss(d, t)?;
            terms.push(r.clone());
            r.item()
        }
        _ => 0.0,
    };
    terms.push(ops::scale(&meta, lambda));
    Ok(LossParts {
        total: ops::add_n(&terms)?,
        cls: cls.item(),
        reg,
        meta: meta.item(),
    })
}

/// Picks, for each positive RoI `r` with local class `j`, row `r` of the
/// class-`j` deltas. Returns `[P, 4]`, or `None` when `positives` is empty.
pub fn positive_deltas(out: &DetectionOutput, positives: &[(usize, usize)]) -> Result<Option<Tensor>> {
    if positives.is_empty() {
        return Ok(None);
    }
    let r = out.logits.shape()[0];
    let stacked = ops::concat(&out.deltas, 0)?;
    let idx: Vec<usize> = positives.iter().map(|&(roi, j)| j * r + roi).collect();
    Ok(Some(ops::select_rows(&stacked, &idx)?))
}
