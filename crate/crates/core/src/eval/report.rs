use std::collections::BTreeMap;
use std::fmt::Write as _;

use icpe_tensor::Tensor;
use rayon::prelude::*;

use crate::boxes::{BBox, ClassId, Detection};
use crate::data::episode::query;
use crate::data::world::Dataset;
use crate::detector::{predict, Model, PredictOptions, SupportSet};
use crate::error::{IcpeError, Result};
use crate::eval::ap::{voc_ap, ScoredBox};

pub trait Detector: Sync {
    fn detect(&self, image: &Tensor) -> Result<Vec<Detection>>;
}

/// A trained model bound to a fixed support set.
pub struct ModelDetector {
    model: Model,
    support_feats: BTreeMap<ClassId, Vec<Tensor>>,
    opts: PredictOptions,
}

impl ModelDetector {
    pub fn new(model: &Model, supports: &SupportSet, opts: PredictOptions) -> Result<Self> {
        let model = model.frozen()?;
        let support_feats = model.support_features(supports)?;
        Ok(ModelDetector {
            model,
            support_feats,
            opts,
        })
    }
}

impl Detector for ModelDetector {
    fn detect(&self, image: &Tensor) -> Result<Vec<Detection>> {
        predict(&self.model, image, &self.support_feats, self.opts)
    }
}

pub const REPORT_HEADER: &str = "icpe-eval v1";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: BTreeMap<ClassId, f64>,
    pub base_map: Option<f64>,
    pub novel_map: Option<f64>,
    pub n_gt: usize,
    pub n_detections: usize,
    pub fingerprint: String,
    pub seed: u64,
}

fn mean_of(per_class: &BTreeMap<ClassId, f64>, classes: &[ClassId]) -> Option<f64> {
    let vals: Vec<f64> = classes.iter().filter_map(|c| per_class.get(c).copied()).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

impl EvalReport {
    /// Scores `detections[i]` against the annotations of `gts[i]`.
    pub fn from_detections(
        detections: &[Vec<Detection>],
        gts: &[Vec<(ClassId, BBox)>],
        base: &[ClassId],
        novel: &[ClassId],
        fingerprint: &str,
        seed: u64,
    ) -> Result<Self> {
        if detections.len() != gts.len() {
            return Err(IcpeError::invalid("detections and annotations differ in length"));
        }
        let mut per_class = BTreeMap::new();
        for &c in base.iter().chain(novel) {
            let cls_gts: Vec<(usize, BBox)> = gts
                .iter()
                .enumerate()
                .flat_map(|(i, g)| g.iter().filter(|(k, _)| *k == c).map(move |(_, b)| (i, *b)))
                .collect();
            let cls_dets: Vec<ScoredBox> = detections
                .iter()
                .enumerate()
                .flat_map(|(i, d)| {
                    d.iter().filter(|x| x.class_id == c).map(move |x| ScoredBox {
                        image: i,
                        bbox: x.bbox,
                        score: x.score,
                    })
                })
                .collect();
            if let Some(ap) = voc_ap(&cls_dets, &cls_gts) {
                per_class.insert(c, ap);
            }
        }
        Ok(EvalReport {
            base_map: mean_of(&per_class, base),
            novel_map: mean_of(&per_class, novel),
            per_class,
            n_gt: gts.iter().map(Vec::len).sum(),
            n_detections: detections.iter().map(Vec::len).sum(),
            fingerprint: fingerprint.to_string(),
            seed,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        writeln!(s, "{REPORT_HEADER}").unwrap();
        writeln!(s, "fingerprint {}", self.fingerprint).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "ground_truth {}", self.n_gt).unwrap();
        writeln!(s, "detections {}", self.n_detections).unwrap();
        for (c, ap) in &self.per_class {
            writeln!(s, "ap class={c} value={ap}").unwrap();
        }
        writeln!(s, "map split=base value={}", opt(self.base_map)).unwrap();
        writeln!(s, "map split=novel value={}", opt(self.novel_map)).unwrap();
        s
    }
}

/// Runs `detector` over `images` of `data` in parallel and scores them.
pub fn evaluate_map(
    detector: &dyn Detector,
    data: &Dataset,
    images: &[usize],
    base: &[ClassId],
    novel: &[ClassId],
    fingerprint: &str,
    seed: u64,
) -> Result<EvalReport> {
    let detections = images
        .par_iter()
        .map(|&i| detector.detect(&query(data, i).image))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<Vec<(ClassId, BBox)>> = images
        .iter()
        .map(|&i| data.images[i].annotations.iter().map(|a| (a.class_id, a.bbox)).collect())
        .collect();
    EvalReport::from_detections(&detections, &gts, base, novel, fingerprint, seed)
}
