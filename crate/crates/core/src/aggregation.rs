//! Turning coupled support features into class prototypes.
//!
//! Within one support image, positions that agree with the image's mean
//! descriptor are re-weighted into an extra term on top of GAP. Across the
//! k images of a class, each image prototype gets a sigmoid contribution
//! from a shared FC and the weighted prototypes are summed.

use std::collections::BTreeMap;

use icpe_tensor::{ops, ParamRegistry, Tensor};
use rand::Rng;

use crate::boxes::ClassId;
use crate::config::ImageProto;
use crate::coupling::CoupledFeature;
use crate::error::{IcpeError, Result};
use crate::layers::{Init, Linear};

#[derive(Debug, Clone)]
pub struct ImagePrototype {
    pub v: Tensor,
    /// `[H, W]` cosine weights; `None` for the plain pooling paths.
    pub weights: Option<Tensor>,
    pub class_id: ClassId,
}

#[derive(Debug, Clone)]
pub struct ClassPrototype {
    pub v: Tensor,
    pub class_id: ClassId,
    /// One weight per support image; empty for the plain mean.
    pub contributions: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct InterDamParams {
    pub fc: Linear,
}

impl InterDamParams {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParamRegistry,
        prefix: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(InterDamParams {
            fc: Linear::register(reg, &format!("{prefix}.fc"), channels, 1, Init::FanIn, rng)?,
        })
    }

    pub fn lookup(reg: &ParamRegistry, prefix: &str) -> Result<Self> {
        Ok(InterDamParams {
            fc: Linear::lookup(reg, &format!("{prefix}.fc"))?,
        })
    }
}

pub fn intra_dam(x_hat_s: &Tensor, alpha: f64, class_id: ClassId) -> Result<ImagePrototype> {
    if !(alpha >= 0.0) {
        return Err(IcpeError::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let g = ops::gap(x_hat_s)?;
    let w = ops::cosine_map(&g, x_hat_s, ops::DEFAULT_COSINE_EPS)?;
    let extra = ops::gap(&ops::hadamard(&w, x_hat_s)?)?;
    let v = ops::add(&g, &ops::scale(&extra, alpha))?;
    Ok(ImagePrototype {
        v,
        weights: Some(w),
        class_id,
    })
}

/// Plain pooled prototype used when Intra-DAM is switched off.
pub fn pooled_prototype(x: &Tensor, kind: ImageProto, class_id: ClassId) -> Result<ImagePrototype> {
    let v = match kind {
        ImageProto::Gap => ops::gap(x)?,
        ImageProto::GapGmp => ops::add(&ops::gap(x)?, &ops::gmp(x)?)?,
    };
    Ok(ImagePrototype {
        v,
        weights: None,
        class_id,
    })
}

fn common_class(protos: &[ImagePrototype]) -> Result<ClassId> {
    let first = protos
        .first()
        .ok_or_else(|| IcpeError::invalid("cannot aggregate an empty prototype list"))?;
    if let Some(p) = protos.iter().find(|p| p.class_id != first.class_id) {
        return Err(IcpeError::invalid(format!(
            "mixed class ids {} and {} in one aggregation",
            first.class_id, p.class_id
        )));
    }
    Ok(first.class_id)
}

/// Summation order: prototypes sorted lexicographically by value, so the
/// floating-point sum depends only on the set of supports and not on the
/// order they were sampled in.
fn canonical_order(protos: &[ImagePrototype]) -> Vec<usize> {
    let values: Vec<Vec<f64>> = protos.iter().map(|p| p.v.to_vec()).collect();
    let mut order: Vec<usize> = (0..protos.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .iter()
            .zip(&values[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// `v_cls = Σ p_i v_i` with `p_i = sigmoid(fc(v_i))`. With `normalize` the
/// weights are divided by their sum first.
pub fn inter_dam(
    protos: &[ImagePrototype],
    params: &InterDamParams,
    normalize: bool,
) -> Result<ClassPrototype> {
    let class_id = common_class(protos)?;
    let probs = protos
        .iter()
        .map(|p| Ok(ops::sigmoid(&params.fc.forward(&p.v)?)))
        .collect::<Result<Vec<_>>>()?;
    let order = canonical_order(protos);
    let terms = order
        .iter()
        .map(|&i| Ok(ops::scale_by(&protos[i].v, &probs[i])?))
        .collect::<Result<Vec<_>>>()?;
    let mut v = ops::add_n(&terms)?;
    if normalize {
        let ordered: Vec<Tensor> = order.iter().map(|&i| probs[i].clone()).collect();
        v = ops::scale_by(&v, &ops::recip(&ops::add_n(&ordered)?))?;
    }
    Ok(ClassPrototype {
        v,
        class_id,
        contributions: probs.iter().map(Tensor::item).collect(),
    })
}

/// Unweighted mean of image prototypes.
pub fn mean_prototype(protos: &[ImagePrototype]) -> Result<ClassPrototype> {
    let class_id = common_class(protos)?;
    let vs: Vec<Tensor> = canonical_order(protos).iter().map(|&i| protos[i].v.clone()).collect();
    let v = ops::scale(&ops::add_n(&vs)?, 1.0 / protos.len() as f64);
    Ok(ClassPrototype {
        v,
        class_id,
        contributions: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct AggregationOptions {
    pub use_intra: bool,
    pub use_inter: bool,
    pub img_proto: ImageProto,
    pub alpha: f64,
    pub normalize_inter: bool,
}

/// Per class: image prototypes (Intra-DAM or pooling), then class
/// prototypes (Inter-DAM or mean). Returns the image prototypes too so
/// their weights can be inspected.
pub fn aggregate_prototypes(
    coupled: &BTreeMap<ClassId, Vec<CoupledFeature>>,
    params: &InterDamParams,
    opts: AggregationOptions,
) -> Result<BTreeMap<ClassId, (ClassPrototype, Vec<ImagePrototype>)>> {
    let mut out = BTreeMap::new();
    for (&class_id, feats) in coupled {
        if feats.is_empty() {
            return Err(IcpeError::MissingPrototype(class_id));
        }
        let images = feats
            .iter()
            .map(|f| {
                if opts.use_intra {
                    intra_dam(&f.x_hat_s, opts.alpha, class_id)
                } else {
                    pooled_prototype(&f.x_hat_s, opts.img_proto, class_id)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let class = if opts.use_inter {
            inter_dam(&images, params, opts.normalize_inter)?
        } else {
            mean_prototype(&images)?
        };
        out.insert(class_id, (class, images));
    }
    Ok(out)
}
