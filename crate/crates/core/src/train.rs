//! Episodic training: meta-training over base-class episodes, then
//! finetuning on a fixed few-shot subset of every class.

use icpe_tensor::{Sgd, Tensor};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::boxes::{encode_deltas, iou, BBox, BoxAnnotation, ClassId};
use crate::data::episode::{AccessLog, Episode, EpisodeSampler, FewShotSubset};
use crate::data::world::Dataset;
use crate::detector::{
    extract_roi_features, flip_chw, positive_deltas, sliding_grid, total_loss, LossParts, Model,
};
use crate::error::{IcpeError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub k: usize,
    /// Classes per meta-training episode; 0 uses the whole pool.
    pub ways: usize,
    pub flip: bool,
    /// Negatives per positive RoI.
    pub neg_ratio: usize,
    /// Grid boxes with `IoU >= 0.5` added per ground-truth box.
    pub pos_per_gt: usize,
}

impl Schedule {
    pub fn meta_default() -> Self {
        Schedule {
            iterations: 2000,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            k: 1,
            ways: 0,
            flip: true,
            neg_ratio: 3,
            pos_per_gt: 2,
        }
    }

    pub fn finetune_default() -> Self {
        Schedule {
            iterations: 400,
            lr: 0.001,
            ..Self::meta_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(IcpeError::Config("k must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(IcpeError::Config(
                "need lr >= 0, 0 <= momentum < 1, weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Training RoIs for one query image.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiBatch {
    pub boxes: Vec<BBox>,
    /// Index into the roster, or `roster.len()` for background.
    pub labels: Vec<usize>,
    /// `(roi index, roster index)` of each positive.
    pub positives: Vec<(usize, usize)>,
    pub targets: Vec<[f64; 4]>,
}

const POS_IOU: f64 = 0.5;
const NEG_IOU: f64 = 0.3;

/// Positives: every ground-truth box plus up to `pos_per_gt` grid boxes
/// overlapping it at `IoU >= 0.5`. Negatives: grid boxes with `IoU < 0.3`
/// to every ground truth, `neg_ratio` per positive.
pub fn sample_rois<R: Rng + ?Sized>(
    annotations: &[BoxAnnotation],
    roster: &[ClassId],
    image_size: usize,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<RoiBatch> {
    let grid = sliding_grid(image_size);
    let background = roster.len();
    let mut batch = RoiBatch {
        boxes: Vec::new(),
        labels: Vec::new(),
        positives: Vec::new(),
        targets: Vec::new(),
    };
    let push_positive = |b: BBox, gt: &BoxAnnotation, j: usize, batch: &mut RoiBatch| {
        batch.positives.push((batch.boxes.len(), j));
        batch.targets.push(encode_deltas(&b, &gt.bbox));
        batch.boxes.push(b);
        batch.labels.push(j);
    };
    for gt in annotations {
        let j = roster
            .iter()
            .position(|&c| c == gt.class_id)
            .ok_or(IcpeError::MissingPrototype(gt.class_id))?;
        push_positive(gt.bbox, gt, j, &mut batch);
        let near: Vec<&BBox> = grid.iter().filter(|g| iou(g, &gt.bbox) >= POS_IOU).collect();
        for b in near.choose_multiple(rng, schedule.pos_per_gt) {
            push_positive(**b, gt, j, &mut batch);
        }
    }
    let far: Vec<&BBox> = grid
        .iter()
        .filter(|g| annotations.iter().all(|a| iou(g, &a.bbox) < NEG_IOU))
        .collect();
    let n_neg = schedule.neg_ratio * batch.positives.len().max(1);
    for b in far.choose_multiple(rng, n_neg) {
        batch.boxes.push(**b);
        batch.labels.push(background);
    }
    Ok(batch)
}

fn flip_annotations(anns: &[BoxAnnotation], width: f64) -> Vec<BoxAnnotation> {
    anns.iter()
        .map(|a| BoxAnnotation {
            bbox: a.bbox.flip_horizontal(width),
            class_id: a.class_id,
        })
        .collect()
}

/// Forward pass and loss of one episode (summed over its queries).
pub fn episode_loss<R: Rng + ?Sized>(
    model: &Model,
    episode: &Episode,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<LossParts> {
    let mut supports = episode.supports.clone();
    if schedule.flip {
        for list in supports.values_mut() {
            for s in list.iter_mut() {
                if rng.random_bool(0.5) {
                    *s = s.flipped();
                }
            }
        }
    }
    let support_feats = model.support_features(&supports)?;
    let mut parts: Vec<LossParts> = Vec::with_capacity(episode.queries.len());
    for q in &episode.queries {
        let size = q.image.shape()[2];
        let (image, anns) = if schedule.flip && rng.random_bool(0.5) {
            (flip_chw(&q.image), flip_annotations(&q.annotations, size as f64))
        } else {
            (q.image.clone(), q.annotations.clone())
        };
        let feat = model.query_features(&image)?;
        let protos = model.prototypes(&feat, &support_feats)?;
        let batch = sample_rois(&anns, &protos.roster, size, schedule, rng)?;
        let rois = extract_roi_features(&feat, &batch.boxes)?;
        let out = model.detection_forward(&rois, &protos.classes, &protos.roster)?;
        let deltas = positive_deltas(&out, &batch.positives)?;
        let targets = (!batch.targets.is_empty())
            .then(|| Tensor::new(batch.targets.concat(), &[batch.targets.len(), 4]))
            .transpose()?;
        let meta = model.meta_logits(&protos.classes, &protos.roster)?;
        parts.push(total_loss(
            &out.logits,
            &batch.labels,
            deltas.as_ref(),
            targets.as_ref(),
            &meta,
            &protos.roster,
            model.config.lambda,
        )?);
    }
    if parts.len() == 1 {
        return Ok(parts.pop().expect("one element"));
    }
    let totals: Vec<Tensor> = parts.iter().map(|p| p.total.clone()).collect();
    Ok(LossParts {
        total: icpe_tensor::ops::add_n(&totals)?,
        cls: parts.iter().map(|p| p.cls).sum(),
        reg: parts.iter().map(|p| p.reg).sum(),
        meta: parts.iter().map(|p| p.meta).sum(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

impl TrainTrace {
    /// Mean of the first and last `window` losses. Panics on an empty trace.
    pub fn head_tail(&self, window: usize) -> (f64, f64) {
        let n = self.losses.len();
        let w = window.clamp(1, n);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&self.losses[..w]), mean(&self.losses[n - w..]))
    }
}

/// Seed of iteration `iter` in a phase seeded with `seed`.
pub fn step_seed(seed: u64, iter: usize) -> u64 {
    seed ^ (iter as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_steps<F>(model: &Model, schedule: &Schedule, seed: u64, mut next_episode: F) -> Result<TrainTrace>
where
    F: FnMut(&mut Xoshiro256PlusPlus) -> Result<Episode>,
{
    schedule.validate()?;
    let mut opt = Sgd::new(schedule.lr, schedule.momentum, schedule.weight_decay);
    let mut trace = TrainTrace::default();
    for iter in 0..schedule.iterations {
        let episode_seed = step_seed(seed, iter);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(episode_seed);
        let episode = next_episode(&mut rng)?;
        let loss = episode_loss(model, &episode, schedule, &mut rng)?;
        let value = loss.total.item();
        if !value.is_finite() {
            return Err(IcpeError::NonFiniteLoss {
                iteration: iter,
                episode_seed,
            });
        }
        loss.total.backward()?;
        opt.step(&model.params)?;
        trace.losses.push(value);
        if log::log_enabled!(log::Level::Debug) && (iter + 1) % 50 == 0 {
            log::debug!(
                "step iter={} loss={value:.5} cls={:.5} reg={:.5} meta={:.5}",
                iter + 1,
                loss.cls,
                loss.reg,
                loss.meta
            );
        }
    }
    Ok(trace)
}

/// Trains on episodes drawn from base-class images only. The returned log
/// lists every image and support the sampler handed out.
pub fn meta_train(
    model: &Model,
    data: &Dataset,
    base_classes: &[ClassId],
    schedule: &Schedule,
    seed: u64,
) -> Result<(TrainTrace, AccessLog)> {
    let mut sampler = EpisodeSampler::new(data, base_classes)?;
    let trace = run_steps(model, schedule, seed, |rng| {
        if schedule.ways == 0 {
            sampler.sample(schedule.k, 1, rng)
        } else {
            sampler.sample_ways(schedule.k, schedule.ways, rng)
        }
    })?;
    Ok((trace, sampler.log))
}

/// Trains on the balanced few-shot subset over the full roster.
pub fn meta_finetune(
    model: &Model,
    data: &Dataset,
    subset: &FewShotSubset,
    schedule: &Schedule,
    seed: u64,
) -> Result<TrainTrace> {
    run_steps(model, schedule, seed, |rng| Ok(subset.episode(data, rng)))
}
