//! A complete run description and the phase functions that consume it.
//!
//! Every random choice is seeded from `(seed, label)` so phases can be
//! rerun independently and still agree with a full run.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::boxes::ClassId;
use crate::config::ModelConfig;
use crate::data::episode::{query, sample_supports, support_instance, AccessLog, Episode, FewShotSubset};
use crate::data::world::{generate_dataset, Dataset, DatasetSize, ShapeWorldSpec};
use crate::detector::{Model, PredictOptions, SupportSet};
use crate::error::{IcpeError, Result};
use crate::eval::report::{evaluate_map, EvalReport, ModelDetector};
use crate::train::{meta_finetune, meta_train, Schedule, TrainTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub seed: u64,
    pub world: ShapeWorldSpec,
    pub train_size: DatasetSize,
    pub test_size: DatasetSize,
    pub model: ModelConfig,
    pub meta: Schedule,
    pub finetune: Schedule,
    pub predict: PredictOptions,
    /// Shot counts swept by the ablation runner.
    pub shots: Vec<usize>,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            seed: 0,
            world: ShapeWorldSpec::default(),
            train_size: DatasetSize {
                images: 600,
                supports_per_class: 30,
            },
            test_size: DatasetSize {
                images: 160,
                supports_per_class: 20,
            },
            model: ModelConfig::default(),
            meta: Schedule::meta_default(),
            finetune: Schedule::finetune_default(),
            predict: PredictOptions::default(),
            shots: vec![1, 3],
        }
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for the random stream named `label`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    fnv1a(format!("{seed}/{label}/{index}").as_bytes())
}

pub fn derive_rng(seed: u64, label: &str, index: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, label, index))
}

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.meta.validate()?;
        self.finetune.validate()?;
        if self.model.num_classes != self.world.num_classes() {
            return Err(IcpeError::Config(format!(
                "model has {} classes but the world has {}",
                self.model.num_classes,
                self.world.num_classes()
            )));
        }
        // Class ids double as meta-head rows.
        if let Some(&c) = self.world.all_classes().iter().find(|&&c| c >= self.model.num_classes) {
            return Err(IcpeError::Config(format!(
                "class id {c} has no meta-head row (num_classes = {})",
                self.model.num_classes
            )));
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(IcpeError::Config("shots must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Canonical text of every field; identical descriptions give
    /// identical outputs.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let w = &self.world;
        let m = &self.model;
        let f = &m.flags;
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "world.seed={}", w.seed).unwrap();
        writeln!(s, "world.image_size={}", w.image_size).unwrap();
        writeln!(s, "world.base_classes={:?}", w.base_classes).unwrap();
        writeln!(s, "world.novel_classes={:?}", w.novel_classes).unwrap();
        writeln!(s, "world.min_size={}", w.min_size).unwrap();
        writeln!(s, "world.max_size={}", w.max_size).unwrap();
        writeln!(s, "world.support_min_size={}", w.support_min_size).unwrap();
        writeln!(s, "world.support_max_size={}", w.support_max_size).unwrap();
        writeln!(s, "world.max_objects={}", w.max_objects).unwrap();
        writeln!(s, "world.clutter={}", w.clutter).unwrap();
        writeln!(s, "world.noise={}", w.noise).unwrap();
        for (name, d) in [("train", &self.train_size), ("test", &self.test_size)] {
            writeln!(s, "data.{name}_images={}", d.images).unwrap();
            writeln!(s, "data.{name}_supports_per_class={}", d.supports_per_class).unwrap();
        }
        writeln!(s, "model.widths={:?}", m.widths).unwrap();
        writeln!(s, "model.embed={}", m.embed).unwrap();
        writeln!(s, "model.alpha={}", m.alpha).unwrap();
        writeln!(s, "model.lambda={}", m.lambda).unwrap();
        writeln!(s, "model.clamp_condition={}", m.clamp_condition).unwrap();
        writeln!(s, "model.normalize_inter={}", m.normalize_inter).unwrap();
        writeln!(s, "model.num_classes={}", m.num_classes).unwrap();
        writeln!(s, "flags.use_cic={}", f.use_cic).unwrap();
        writeln!(s, "flags.use_ccm={}", f.use_ccm).unwrap();
        writeln!(s, "flags.use_intra={}", f.use_intra).unwrap();
        writeln!(s, "flags.use_inter={}", f.use_inter).unwrap();
        writeln!(s, "flags.img_proto={}", f.img_proto.as_str()).unwrap();
        for (name, sc) in [("meta", &self.meta), ("finetune", &self.finetune)] {
            writeln!(s, "{name}.iterations={}", sc.iterations).unwrap();
            writeln!(s, "{name}.lr={}", sc.lr).unwrap();
            writeln!(s, "{name}.momentum={}", sc.momentum).unwrap();
            writeln!(s, "{name}.weight_decay={}", sc.weight_decay).unwrap();
            writeln!(s, "{name}.k={}", sc.k).unwrap();
            writeln!(s, "{name}.ways={}", sc.ways).unwrap();
            writeln!(s, "{name}.flip={}", sc.flip).unwrap();
            writeln!(s, "{name}.neg_ratio={}", sc.neg_ratio).unwrap();
            writeln!(s, "{name}.pos_per_gt={}", sc.pos_per_gt).unwrap();
        }
        writeln!(s, "predict.score_thresh={}", self.predict.score_thresh).unwrap();
        writeln!(s, "predict.nms_iou={}", self.predict.nms_iou).unwrap();
        writeln!(s, "shots={:?}", self.shots).unwrap();
        s
    }

    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a(self.describe().as_bytes()))
    }

    pub fn train_data(&self) -> Result<Dataset> {
        generate_dataset(&self.world, TRAIN_STREAM, self.train_size)
    }

    pub fn test_data(&self) -> Result<Dataset> {
        generate_dataset(&self.world, TEST_STREAM, self.test_size)
    }

    pub fn init_model(&self) -> Result<Model> {
        Model::new(self.model.clone(), &mut derive_rng(self.seed, "init", 0))
    }

    pub fn meta_train(&self, train: &Dataset) -> Result<(Model, TrainTrace, AccessLog)> {
        self.validate()?;
        let model = self.init_model()?;
        let seed = derive_seed(self.seed, "meta", 0);
        let (trace, log) = meta_train(&model, train, &self.world.base_classes, &self.meta, seed)?;
        Ok((model, trace, log))
    }

    /// Finetunes a copy of `model` with `k` shots per class.
    pub fn finetune(&self, model: &Model, train: &Dataset, k: usize) -> Result<(Model, TrainTrace)> {
        let classes = self.world.all_classes();
        let subset = FewShotSubset::draw(train, &classes, k, &mut derive_rng(self.seed, "subset", k as u64))?;
        let tuned = model.deep_copy()?;
        let schedule = Schedule {
            k,
            ..self.finetune.clone()
        };
        let trace = meta_finetune(&tuned, train, &subset, &schedule, derive_seed(self.seed, "finetune", k as u64))?;
        Ok((tuned, trace))
    }

    /// The `k`-shot support set every evaluation with this seed uses.
    pub fn eval_supports(&self, test: &Dataset, k: usize) -> Result<SupportSet> {
        Ok(self.eval_episode(test, k, 0)?.supports)
    }

    /// The evaluation supports paired with test image `index` as the query.
    pub fn eval_episode(&self, test: &Dataset, k: usize, index: usize) -> Result<Episode> {
        if index >= test.images.len() {
            return Err(IcpeError::Config(format!(
                "query index {index} out of range for {} test images",
                test.images.len()
            )));
        }
        let classes: Vec<ClassId> = self.world.all_classes();
        let idx = sample_supports(test, &classes, k, &mut derive_rng(self.seed, "eval", k as u64))?;
        let supports: SupportSet = idx
            .iter()
            .map(|(&c, list)| (c, list.iter().map(|&i| support_instance(&test.supports[i])).collect()))
            .collect();
        Ok(Episode {
            k,
            supports,
            support_indices: idx,
            queries: vec![query(test, index)],
        })
    }

    pub fn evaluate(&self, model: &Model, test: &Dataset, k: usize) -> Result<EvalReport> {
        let supports = self.eval_supports(test, k)?;
        let detector = ModelDetector::new(model, &supports, self.predict)?;
        let images: Vec<usize> = (0..test.images.len()).collect();
        evaluate_map(
            &detector,
            test,
            &images,
            &self.world.base_classes,
            &self.world.novel_classes,
            &self.fingerprint(),
            self.seed,
        )
    }
}
