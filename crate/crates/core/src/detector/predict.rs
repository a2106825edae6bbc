use std::collections::BTreeMap;

use icpe_tensor::{ops, Tensor};

use crate::boxes::{decode_deltas, iou, ClassId, Detection};
use crate::detector::model::Model;
use crate::detector::roi::{extract_roi_features, sliding_grid};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub score_thresh: f64,
    pub nms_iou: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            score_thresh: 0.05,
            nms_iou: 0.5,
        }
    }
}

/// Greedy suppression within each class. Candidates are visited by
/// descending score, ties going to the earlier index; a candidate is
/// dropped if it overlaps a kept box of its class at `IoU >= iou_thresh`.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        let clash = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) >= iou_thresh);
        if !clash {
            kept.push(d);
        }
    }
    kept
}

/// Detections for one query image given precomputed support features.
pub fn predict(
    model: &Model,
    image: &Tensor,
    support_feats: &BTreeMap<ClassId, Vec<Tensor>>,
    opts: PredictOptions,
) -> Result<Vec<Detection>> {
    let size = image.shape()[2];
    let feat = model.query_features(image)?;
    let protos = model.prototypes(&feat, support_feats)?;
    let grid = sliding_grid(size);
    let rois = extract_roi_features(&feat, &grid)?;
    let out = model.detection_forward(&rois, &protos.classes, &protos.roster)?;
    let probs = ops::softmax(&out.logits, 1)?;
    let probs = probs.data();
    let m1 = protos.roster.len() + 1;
    let mut candidates = Vec::new();
    for (j, &cls) in protos.roster.iter().enumerate() {
        let deltas = out.deltas[j].data();
        for (r, anchor) in grid.iter().enumerate() {
            let score = probs[r * m1 + j];
            if score < opts.score_thresh {
                continue;
            }
            let bbox = decode_deltas(anchor, &deltas[r * 4..r * 4 + 4]).clip(size as f64, size as f64);
            if bbox.is_degenerate() {
                continue;
            }
            candidates.push(Detection {
                bbox,
                class_id: cls,
                score,
            });
        }
    }
    Ok(nms(&candidates, opts.nms_iou))
}
