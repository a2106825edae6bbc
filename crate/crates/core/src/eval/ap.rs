//! All-point interpolated average precision with greedy matching.

use crate::boxes::{iou, BBox};

pub const MATCH_IOU: f64 = 0.5;

/// A scored box in image `image`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub image: usize,
    pub bbox: BBox,
    pub score: f64,
}

/// Marks each detection as true or false positive, in visiting order:
/// descending score, ties in input order. A detection looks at its
/// highest-IoU ground truth in the same image and is a hit only if that
/// box is still unmatched and the overlap reaches [`MATCH_IOU`].
pub fn match_detections(dets: &[ScoredBox], gts: &[(usize, BBox)]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&i| {
            let d = &dets[i];
            let best = gts
                .iter()
                .enumerate()
                .filter(|(_, (img, _))| *img == d.image)
                .map(|(g, (_, b))| (g, iou(&d.bbox, b)))
                .fold(None, |acc: Option<(usize, f64)>, (g, o)| match acc {
                    Some((_, best)) if best >= o => acc,
                    _ => Some((g, o)),
                });
            match best {
                Some((g, o)) if o >= MATCH_IOU && !taken[g] => {
                    taken[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Area under the precision envelope, where `hits` is in score order.
pub fn ap_from_hits(hits: &[bool], n_gt: usize) -> f64 {
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// AP of one class; `None` when there are no ground-truth boxes.
pub fn voc_ap(dets: &[ScoredBox], gts: &[(usize, BBox)]) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    Some(ap_from_hits(&match_detections(dets, gts), gts.len()))
}
