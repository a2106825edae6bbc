use std::collections::BTreeMap;

use icpe_tensor::{ops, ParamRegistry, Tensor};
use rand::Rng;

use crate::aggregation::{
    aggregate_prototypes, AggregationOptions, ClassPrototype, ImagePrototype, InterDamParams,
};
use crate::boxes::ClassId;
use crate::config::ModelConfig;
use crate::coupling::{cic_forward, CoupledFeature, CouplingParams};
use crate::detector::backbone::Backbone;
use crate::error::{IcpeError, Result};
use crate::layers::{Init, Linear};

/// One support exemplar: an image with the object's binary mask.
#[derive(Debug, Clone)]
pub struct SupportInstance {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    /// `[1, H, W]`, 0 or 1.
    pub mask: Tensor,
    pub class_id: ClassId,
}

impl SupportInstance {
    pub fn flipped(&self) -> SupportInstance {
        SupportInstance {
            image: flip_chw(&self.image),
            mask: flip_chw(&self.mask),
            class_id: self.class_id,
        }
    }
}

/// Mirrors a constant `[C, H, W]` tensor left to right.
pub fn flip_chw(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for row in 0..c * h {
        for j in 0..w {
            out[row * w + j] = d[row * w + (w - 1 - j)];
        }
    }
    Tensor::new(out, &[c, h, w]).expect("same shape")
}

pub type SupportSet = BTreeMap<ClassId, Vec<SupportInstance>>;

#[derive(Debug, Clone)]
pub struct Heads {
    pub cls: Linear,
    pub bg: Linear,
    pub reg: Linear,
    pub meta: Linear,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamRegistry,
    pub backbone: Backbone,
    pub coupling: CouplingParams,
    pub inter: InterDamParams,
    pub heads: Heads,
}

/// Everything computed from one query image and the support set.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    /// Class ids in ascending order; logits follow this order.
    pub roster: Vec<ClassId>,
    pub coupled: BTreeMap<ClassId, Vec<CoupledFeature>>,
    pub images: BTreeMap<ClassId, Vec<ImagePrototype>>,
    pub classes: BTreeMap<ClassId, ClassPrototype>,
}

#[derive(Debug, Clone)]
pub struct DetectionOutput {
    /// `[R, M + 1]`, background last.
    pub logits: Tensor,
    /// Per roster class, `[R, 4]`.
    pub deltas: Vec<Tensor>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels();
        let mut reg = ParamRegistry::new();
        Backbone::register(&mut reg, "backbone", config.widths, rng)?;
        CouplingParams::register(&mut reg, "coupling", c, config.embed, rng)?;
        InterDamParams::register(&mut reg, "inter", c, rng)?;
        Linear::register(&mut reg, "head.cls", c, 1, Init::FanIn, rng)?;
        Linear::register(&mut reg, "head.bg", c, 1, Init::FanIn, rng)?;
        Linear::register(&mut reg, "head.reg", c, 4, Init::FanIn, rng)?;
        Linear::register(&mut reg, "head.meta", c, config.num_classes, Init::FanIn, rng)?;
        Self::from_registry(config, reg)
    }

    pub fn from_registry(config: ModelConfig, params: ParamRegistry) -> Result<Self> {
        config.validate()?;
        let heads = Heads {
            cls: Linear::lookup(&params, "head.cls")?,
            bg: Linear::lookup(&params, "head.bg")?,
            reg: Linear::lookup(&params, "head.reg")?,
            meta: Linear::lookup(&params, "head.meta")?,
        };
        Ok(Model {
            backbone: Backbone::lookup(&params, "backbone")?,
            coupling: CouplingParams::lookup(&params, "coupling")?,
            inter: InterDamParams::lookup(&params, "inter")?,
            heads,
            config,
            params,
        })
    }

    /// Independent trainable copy.
    pub fn deep_copy(&self) -> Result<Self> {
        Self::from_registry(self.config.clone(), self.params.deep_copy())
    }

    /// Copy whose parameters are constants, for inference.
    pub fn frozen(&self) -> Result<Self> {
        Self::from_registry(self.config.clone(), self.params.frozen_copy())
    }

    pub fn query_features(&self, image: &Tensor) -> Result<Tensor> {
        self.backbone.forward(image, None)
    }

    pub fn support_features(&self, supports: &SupportSet) -> Result<BTreeMap<ClassId, Vec<Tensor>>> {
        supports
            .iter()
            .map(|(&cls, list)| {
                let feats = list
                    .iter()
                    .map(|s| self.backbone.forward(&s.image, Some(&s.mask)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((cls, feats))
            })
            .collect()
    }

    /// Couples every support feature with the query and aggregates the
    /// results into one prototype per class.
    pub fn prototypes(
        &self,
        feat_q: &Tensor,
        support_feats: &BTreeMap<ClassId, Vec<Tensor>>,
    ) -> Result<PrototypeSet> {
        let flags = self.config.flags;
        let mut coupled = BTreeMap::new();
        for (&cls, feats) in support_feats {
            let list = feats
                .iter()
                .map(|x_s| {
                    if flags.use_cic {
                        cic_forward(
                            feat_q,
                            x_s,
                            &self.coupling,
                            flags.use_ccm,
                            self.config.clamp_condition,
                        )
                    } else {
                        Ok(identity_coupling(x_s))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            coupled.insert(cls, list);
        }
        let opts = AggregationOptions {
            use_intra: flags.use_intra,
            use_inter: flags.use_inter,
            img_proto: flags.img_proto,
            alpha: self.config.alpha,
            normalize_inter: self.config.normalize_inter,
        };
        let agg = aggregate_prototypes(&coupled, &self.inter, opts)?;
        let mut images = BTreeMap::new();
        let mut classes = BTreeMap::new();
        for (cls, (class, imgs)) in agg {
            classes.insert(cls, class);
            images.insert(cls, imgs);
        }
        Ok(PrototypeSet {
            roster: classes.keys().copied().collect(),
            coupled,
            images,
            classes,
        })
    }

    /// Class-modulated heads over `rois: [R, C]`. Logits follow `roster`.
    pub fn detection_forward(
        &self,
        rois: &Tensor,
        prototypes: &BTreeMap<ClassId, ClassPrototype>,
        roster: &[ClassId],
    ) -> Result<DetectionOutput> {
        let mut columns = Vec::with_capacity(roster.len() + 1);
        let mut deltas = Vec::with_capacity(roster.len());
        for cls in roster {
            let proto = prototypes.get(cls).ok_or(IcpeError::MissingPrototype(*cls))?;
            let modulated = channel_attention(rois, &proto.v)?;
            columns.push(self.heads.cls.forward(&modulated)?);
            deltas.push(self.heads.reg.forward(&modulated)?);
        }
        columns.push(self.heads.bg.forward(rois)?);
        Ok(DetectionOutput {
            logits: ops::concat(&columns, 1)?,
            deltas,
        })
    }

    /// `[M, num_classes]` logits of the prototype classifier, rows in
    /// `roster` order.
    pub fn meta_logits(
        &self,
        prototypes: &BTreeMap<ClassId, ClassPrototype>,
        roster: &[ClassId],
    ) -> Result<Tensor> {
        let c = self.config.channels();
        let rows = roster
            .iter()
            .map(|cls| {
                let p = prototypes.get(cls).ok_or(IcpeError::MissingPrototype(*cls))?;
                Ok(ops::reshape(&p.v, &[1, c])?)
            })
            .collect::<Result<Vec<_>>>()?;
        self.heads.meta.forward(&ops::concat(&rows, 0)?)
    }
}

fn identity_coupling(x_s: &Tensor) -> CoupledFeature {
    let (h, w) = (x_s.shape()[1], x_s.shape()[2]);
    CoupledFeature {
        x_hat_s: x_s.clone(),
        condition: Tensor::zeros(&[h, w]),
        attention: Tensor::zeros(&[h * w, 1]),
    }
}

/// `roi ∘ sigmoid(proto)` for a single vector or each row of `[R, C]`.
pub fn channel_attention(roi: &Tensor, proto: &Tensor) -> Result<Tensor> {
    let gate = ops::sigmoid(proto);
    if roi.rank() == 1 {
        Ok(ops::hadamard(roi, &gate)?)
    } else {
        Ok(ops::mul_rows(roi, &gate)?)
    }
}
