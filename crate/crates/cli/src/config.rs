//! The run configuration: a TOML file with one table per section, every
//! key optional, plus `--section.key=value` overrides from the command
//! line.

use std::path::Path;

use icpe::config::{ArmFlags, ImageProto, ModelConfig};
use icpe::data::world::{DatasetSize, ShapeWorldSpec};
use icpe::detector::PredictOptions;
use icpe::experiment::Experiment;
use icpe::train::Schedule;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Shot count used by `finetune`, `eval` and `dump-viz`.
    pub k: usize,
    pub world: WorldSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub flags: FlagsSection,
    pub meta: MetaSection,
    pub finetune: FinetuneSection,
    pub predict: PredictSection,
    pub eval: StageSection,
    pub ablate: AblateSection,
    pub gradcheck: GradcheckSection,
    pub viz: VizSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub seed: u64,
    pub image_size: usize,
    pub base_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    pub min_size: usize,
    pub max_size: usize,
    pub support_min_size: usize,
    pub support_max_size: usize,
    pub max_objects: usize,
    pub clutter: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_images: usize,
    pub train_supports_per_class: usize,
    pub test_images: usize,
    pub test_supports_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub widths: [usize; 3],
    pub embed: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub clamp_condition: bool,
    pub normalize_inter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlagsSection {
    pub use_cic: bool,
    pub use_ccm: bool,
    pub use_intra: bool,
    pub use_inter: bool,
    /// `gap` or `gap+gmp`.
    pub img_proto: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub k: usize,
    pub ways: usize,
    pub flip: bool,
    pub neg_ratio: usize,
    pub pos_per_gt: usize,
}

/// Like [`MetaSection`] without `k`; finetuning uses the top-level `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub flip: bool,
    pub neg_ratio: usize,
    pub pos_per_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub score_thresh: f64,
    pub nms_iou: f64,
}

/// Which weights a stage reads: `init`, `meta` or `finetune`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSection {
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Arm names; see [`icpe::eval::ablation`] for the known sets.
    pub arms: Vec<String>,
    pub seeds: Vec<u64>,
    pub shots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    /// Any of `ops`, `modules`, `end2end`.
    pub scopes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizSection {
    pub model: String,
    /// Test image used as the query.
    pub query: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_experiment(&Experiment::default())
    }
}

// Each section's default is its slice of the library default.
macro_rules! section_defaults {
    ($($t:ty => $field:ident),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                RunConfig::default().$field
            }
        }
    )*};
}

section_defaults!(
    WorldSection => world,
    DataSection => data,
    ModelSection => model,
    FlagsSection => flags,
    MetaSection => meta,
    FinetuneSection => finetune,
    PredictSection => predict,
    AblateSection => ablate,
    GradcheckSection => gradcheck,
    VizSection => viz
);

impl Default for StageSection {
    fn default() -> Self {
        StageSection {
            model: "finetune".into(),
        }
    }
}

impl RunConfig {
    pub fn from_experiment(e: &Experiment) -> Self {
        let w = &e.world;
        let m = &e.model;
        let f = &m.flags;
        RunConfig {
            seed: e.seed,
            k: 1,
            world: WorldSection {
                seed: w.seed,
                image_size: w.image_size,
                base_classes: w.base_classes.clone(),
                novel_classes: w.novel_classes.clone(),
                min_size: w.min_size,
                max_size: w.max_size,
                support_min_size: w.support_min_size,
                support_max_size: w.support_max_size,
                max_objects: w.max_objects,
                clutter: w.clutter,
                noise: w.noise,
            },
            data: DataSection {
                train_images: e.train_size.images,
                train_supports_per_class: e.train_size.supports_per_class,
                test_images: e.test_size.images,
                test_supports_per_class: e.test_size.supports_per_class,
            },
            model: ModelSection {
                widths: m.widths,
                embed: m.embed,
                alpha: m.alpha,
                lambda: m.lambda,
                clamp_condition: m.clamp_condition,
                normalize_inter: m.normalize_inter,
            },
            flags: FlagsSection {
                use_cic: f.use_cic,
                use_ccm: f.use_ccm,
                use_intra: f.use_intra,
                use_inter: f.use_inter,
                img_proto: f.img_proto.as_str().into(),
            },
            meta: MetaSection {
                iterations: e.meta.iterations,
                lr: e.meta.lr,
                momentum: e.meta.momentum,
                weight_decay: e.meta.weight_decay,
                k: e.meta.k,
                ways: e.meta.ways,
                flip: e.meta.flip,
                neg_ratio: e.meta.neg_ratio,
                pos_per_gt: e.meta.pos_per_gt,
            },
            finetune: FinetuneSection {
                iterations: e.finetune.iterations,
                lr: e.finetune.lr,
                momentum: e.finetune.momentum,
                weight_decay: e.finetune.weight_decay,
                flip: e.finetune.flip,
                neg_ratio: e.finetune.neg_ratio,
                pos_per_gt: e.finetune.pos_per_gt,
            },
            predict: PredictSection {
                score_thresh: e.predict.score_thresh,
                nms_iou: e.predict.nms_iou,
            },
            eval: StageSection::default(),
            ablate: AblateSection {
                arms: ["baseline", "cic", "pda", "full"].map(String::from).to_vec(),
                seeds: (0..5).collect(),
                shots: e.shots.clone(),
            },
            gradcheck: GradcheckSection {
                scopes: ["ops", "modules", "end2end"].map(String::from).to_vec(),
            },
            viz: VizSection {
                model: "finetune".into(),
                query: 0,
            },
        }
    }

    /// The library-level description of this run. Fails on values the
    /// library would reject.
    pub fn to_experiment(&self) -> icpe::Result<Experiment> {
        let w = &self.world;
        let world = ShapeWorldSpec {
            seed: w.seed,
            image_size: w.image_size,
            base_classes: w.base_classes.clone(),
            novel_classes: w.novel_classes.clone(),
            min_size: w.min_size,
            max_size: w.max_size,
            support_min_size: w.support_min_size,
            support_max_size: w.support_max_size,
            max_objects: w.max_objects,
            clutter: w.clutter,
            noise: w.noise,
        };
        let f = &self.flags;
        let flags = ArmFlags {
            use_cic: f.use_cic,
            use_ccm: f.use_ccm,
            use_intra: f.use_intra,
            use_inter: f.use_inter,
            img_proto: ImageProto::parse(&f.img_proto)?,
        };
        let m = &self.model;
        let model = ModelConfig {
            widths: m.widths,
            embed: m.embed,
            alpha: m.alpha,
            lambda: m.lambda,
            clamp_condition: m.clamp_condition,
            normalize_inter: m.normalize_inter,
            flags,
            num_classes: world.num_classes(),
        };
        let me = &self.meta;
        let meta = Schedule {
            iterations: me.iterations,
            lr: me.lr,
            momentum: me.momentum,
            weight_decay: me.weight_decay,
            k: me.k,
            ways: me.ways,
            flip: me.flip,
            neg_ratio: me.neg_ratio,
            pos_per_gt: me.pos_per_gt,
        };
        let ft = &self.finetune;
        let finetune = Schedule {
            iterations: ft.iterations,
            lr: ft.lr,
            momentum: ft.momentum,
            weight_decay: ft.weight_decay,
            k: self.k,
            ways: 0,
            flip: ft.flip,
            neg_ratio: ft.neg_ratio,
            pos_per_gt: ft.pos_per_gt,
        };
        let exp = Experiment {
            seed: self.seed,
            world,
            train_size: DatasetSize {
                images: self.data.train_images,
                supports_per_class: self.data.train_supports_per_class,
            },
            test_size: DatasetSize {
                images: self.data.test_images,
                supports_per_class: self.data.test_supports_per_class,
            },
            model,
            meta,
            finetune,
            predict: PredictOptions {
                score_thresh: self.predict.score_thresh,
                nms_iou: self.predict.nms_iou,
            },
            shots: self.ablate.shots.clone(),
        };
        exp.validate()?;
        if self.k == 0 {
            return Err(icpe::IcpeError::Config("k must be positive".into()));
        }
        Ok(exp)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("every field is representable")
    }
}

/// Parses a config document, applies `overrides` (`section.key` or a
/// top-level `key`, each with a TOML value) and fills in defaults.
pub fn resolve(document: &str, overrides: &[(String, String)]) -> Result<RunConfig, String> {
    let mut table: toml::Table = toml::from_str(document).map_err(|e| format!("config: {e}"))?;
    for (key, raw) in overrides {
        let value = parse_value(raw);
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| format!("bad override key `{key}`"))?;
        let mut slot = &mut table;
        for part in parts {
            let entry = slot
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            slot = entry
                .as_table_mut()
                .ok_or_else(|| format!("override `{key}`: `{part}` is not a section"))?;
        }
        slot.insert(leaf.to_string(), value);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| format!("config: {}", e.message()))
}

/// A bare word that is not valid TOML is taken as a string, so
/// `--flags.img_proto=gap+gmp` works without quoting.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, String> {
    let document = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => String::new(),
    };
    resolve(&document, overrides)
}
