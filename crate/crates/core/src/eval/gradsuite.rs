//! Finite-difference checks over every primitive, every module forward and
//! the end-to-end episode loss, all on micro shapes.

use std::cell::RefCell;
use std::collections::BTreeMap;

use icpe_tensor::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use icpe_tensor::ops::{self, Window};
use icpe_tensor::{ParamRegistry, Tensor};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::aggregation::{aggregate_prototypes, inter_dam, intra_dam, AggregationOptions, InterDamParams};
use crate::boxes::{BBox, BoxAnnotation};
use crate::config::{ArmFlags, ImageProto, ModelConfig};
use crate::coupling::{cic_forward, compute_condition, couple, generate_coupled_info, CouplingParams};
use crate::data::episode::{Episode, Query};
use crate::detector::{channel_attention, total_loss, Model, SupportInstance};
use crate::error::Result;
use crate::train::{episode_loss, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Modules,
    EndToEnd,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Ops, Scope::Modules, Scope::EndToEnd];

    pub fn parse(s: &str) -> Option<Scope> {
        match s {
            "ops" => Some(Scope::Ops),
            "modules" => Some(Scope::Modules),
            "end2end" => Some(Scope::EndToEnd),
            _ => None,
        }
    }
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn leaf(shape: &[usize], r: &mut Xoshiro256PlusPlus) -> Tensor {
    let n = shape.iter().product();
    Tensor::param((0..n).map(|_| r.random_range(-1.0..1.0)).collect(), shape).expect("valid shape")
}

/// Weighted sum with fixed weights, so every output coordinate matters.
fn probe(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut r = rng(seed);
    let w = Tensor::new((0..y.numel()).map(|_| r.random_range(-1.0..1.0)).collect(), y.shape())?;
    Ok(ops::sum(&ops::hadamard(y, &w)?))
}

/// Sets every registry tensor to fresh uniform values.
fn randomize(reg: &ParamRegistry, bound: f64, seed: u64) {
    let mut r = rng(seed);
    for (_, t) in reg.iter() {
        t.data_mut().iter_mut().for_each(|v| *v = r.random_range(-bound..bound));
    }
}

struct Suite {
    cfg: GradCheckConfig,
    reports: Vec<GradCheckReport>,
}

impl Suite {
    fn check<F: Fn() -> Result<Tensor>>(&mut self, name: &str, inputs: &[Tensor], f: F) -> Result<()> {
        let err = RefCell::new(None);
        let report = check_gradients(
            name,
            inputs,
            || {
                f().map_err(|e| {
                    *err.borrow_mut() = Some(e.to_string());
                    icpe_tensor::TensorError::Invalid {
                        op: "gradsuite",
                        msg: "forward failed".into(),
                    }
                })
            },
            self.cfg,
        );
        match report {
            Ok(r) => {
                self.reports.push(r);
                Ok(())
            }
            Err(e) => Err(crate::error::IcpeError::invalid(format!(
                "{name}: {}",
                err.into_inner().unwrap_or_else(|| e.to_string())
            ))),
        }
    }
}

fn ops_scope(s: &mut Suite) -> Result<()> {
    let mut r = rng(11);
    let a = leaf(&[3, 4], &mut r);
    let b = leaf(&[4, 2], &mut r);
    s.check("matmul", &[a.clone(), b.clone()], || probe(&ops::matmul(&a, &b)?, 1))?;
    s.check("transpose", &[a.clone()], || probe(&ops::transpose(&a)?, 2))?;
    let x3 = leaf(&[2, 3, 2], &mut r);
    for axis in 0..3 {
        s.check(&format!("softmax[axis={axis}]"), &[x3.clone()], || probe(&ops::softmax(&x3, axis)?, 3))?;
    }
    for k in [1, 3] {
        let x = leaf(&[2, 3, 4], &mut r);
        let w = leaf(&[3, 2, k, k], &mut r);
        let bias = leaf(&[3], &mut r);
        s.check(&format!("conv2d[k={k}]"), &[x.clone(), w.clone(), bias.clone()], || {
            probe(&ops::conv2d(&x, &w, &bias)?, 4)
        })?;
    }
    let x = leaf(&[2, 4, 4], &mut r);
    s.check("avg_pool2", &[x.clone()], || probe(&ops::avg_pool2(&x)?, 5))?;
    s.check("gap", &[x.clone()], || probe(&ops::gap(&x)?, 6))?;
    s.check("gmp", &[x.clone()], || probe(&ops::gmp(&x)?, 7))?;
    let wins = [Window { y0: 0, y1: 2, x0: 1, x1: 4 }, Window { y0: 3, y1: 4, x0: 0, x1: 2 }];
    s.check("roi_pool", &[x.clone()], || probe(&ops::roi_pool(&x, &wins)?, 8))?;
    let v = leaf(&[2], &mut r);
    s.check("cosine_map", &[v.clone(), x.clone()], || {
        probe(&ops::cosine_map(&v, &x, ops::DEFAULT_COSINE_EPS)?, 9)
    })?;
    let y = leaf(&[2, 4, 4], &mut r);
    let m = leaf(&[4, 4], &mut r);
    let sc = leaf(&[1], &mut r);
    s.check("add", &[x.clone(), y.clone()], || probe(&ops::add(&x, &y)?, 10))?;
    s.check("add[mask]", &[x.clone(), m.clone()], || probe(&ops::add(&x, &m)?, 11))?;
    s.check("hadamard", &[x.clone(), y.clone()], || probe(&ops::hadamard(&x, &y)?, 12))?;
    s.check("hadamard[mask]", &[m.clone(), x.clone()], || probe(&ops::hadamard(&m, &x)?, 13))?;
    s.check("scale", &[x.clone()], || probe(&ops::scale(&x, 0.7), 14))?;
    s.check("scale_by", &[x.clone(), sc.clone()], || probe(&ops::scale_by(&x, &sc)?, 15))?;
    s.check("sigmoid", &[x.clone()], || probe(&ops::sigmoid(&x), 16))?;
    s.check("relu", &[x.clone()], || probe(&ops::relu(&x), 17))?;
    let pos = Tensor::param(vec![0.5, 1.5, 2.5], &[3])?;
    s.check("recip", &[pos.clone()], || probe(&ops::recip(&pos), 18))?;
    s.check("sum", &[x.clone()], || Ok(ops::sum(&x)))?;
    s.check("mean", &[x.clone()], || Ok(ops::mean(&x)))?;
    let row_scale = leaf(&[4], &mut r);
    s.check("mul_rows", &[a.clone(), row_scale.clone()], || probe(&ops::mul_rows(&a, &row_scale)?, 19))?;
    let c = leaf(&[3, 1], &mut r);
    s.check("concat", &[a.clone(), c.clone()], || probe(&ops::concat(&[a.clone(), c.clone()], 1)?, 20))?;
    s.check("reshape", &[a.clone()], || probe(&ops::reshape(&a, &[2, 6])?, 21))?;
    s.check("select_rows", &[a.clone()], || probe(&ops::select_rows(&a, &[2, 0, 2])?, 22))?;
    let lw = leaf(&[2, 4], &mut r);
    let lb = leaf(&[2], &mut r);
    let xv = leaf(&[4], &mut r);
    s.check("linear", &[xv.clone(), lw.clone(), lb.clone()], || probe(&ops::linear(&xv, &lw, &lb)?, 23))?;
    s.check("linear[batch]", &[a.clone(), lw.clone(), lb.clone()], || probe(&ops::linear(&a, &lw, &lb)?, 24))?;
    s.check("cross_entropy", &[a.clone()], || Ok(ops::cross_entropy(&a, &[0, 3, 1])?))?;
    let target = Tensor::new(a.data().iter().map(|v| v + 0.25).collect(), a.shape())?;
    s.check("l1_loss", &[a.clone()], || Ok(ops::l1_loss(&a, &target)?))?;
    Ok(())
}

fn coupling_params(c: usize, d: usize, seed: u64) -> Result<(ParamRegistry, CouplingParams)> {
    let mut reg = ParamRegistry::new();
    let p = CouplingParams::register(&mut reg, "coupling", c, d, &mut rng(seed))?;
    randomize(&reg, 0.8, seed + 1);
    Ok((reg, p))
}

fn all_params(reg: &ParamRegistry) -> Vec<Tensor> {
    reg.iter().map(|(_, t)| t.clone()).collect()
}

fn modules_scope(s: &mut Suite) -> Result<()> {
    let mut r = rng(21);
    let (reg, cp) = coupling_params(3, 2, 22)?;
    let x_q = leaf(&[3, 2, 3], &mut r);
    let x_s = leaf(&[3, 3, 2], &mut r);
    let mut inputs = all_params(&reg);
    inputs.extend([x_q.clone(), x_s.clone()]);
    s.check("generate_coupled_info", &inputs, || {
        let (x_hat_q, attn) = generate_coupled_info(&x_q, &x_s, &cp)?;
        Ok(ops::add(&probe(&x_hat_q, 1)?, &probe(&attn, 2)?)?)
    })?;
    for clamp in [true, false] {
        s.check(&format!("compute_condition[clamp={clamp}]"), &[x_q.clone(), x_s.clone()], || {
            probe(&compute_condition(&x_q, &x_s, clamp)?, 3)
        })?;
    }
    let x_hat = leaf(&[3, 3, 2], &mut r);
    let cond = leaf(&[3, 2], &mut r);
    s.check("couple", &[x_s.clone(), x_hat.clone(), cond.clone()], || {
        probe(&couple(&x_s, &x_hat, &cond)?, 4)
    })?;
    for use_ccm in [true, false] {
        s.check(&format!("cic_forward[ccm={use_ccm}]"), &inputs, || {
            probe(&cic_forward(&x_q, &x_s, &cp, use_ccm, true)?.x_hat_s, 5)
        })?;
    }

    s.check("intra_dam", &[x_s.clone()], || probe(&intra_dam(&x_s, 1.0, 0)?.v, 6))?;
    let mut ireg = ParamRegistry::new();
    let inter = InterDamParams::register(&mut ireg, "inter", 3, &mut rng(23))?;
    randomize(&ireg, 0.8, 24);
    let xs2 = leaf(&[3, 3, 2], &mut r);
    let mut agg_inputs = all_params(&ireg);
    agg_inputs.extend([x_s.clone(), xs2.clone()]);
    for normalize in [false, true] {
        s.check(&format!("inter_dam[normalize={normalize}]"), &agg_inputs, || {
            let protos = [intra_dam(&x_s, 1.0, 0)?, intra_dam(&xs2, 1.0, 0)?];
            probe(&inter_dam(&protos, &inter, normalize)?.v, 7)
        })?;
    }
    let mut full_inputs = agg_inputs.clone();
    full_inputs.extend(all_params(&reg));
    full_inputs.push(x_q.clone());
    s.check("aggregate_prototypes", &full_inputs, || {
        let mut coupled = BTreeMap::new();
        coupled.insert(
            0,
            vec![cic_forward(&x_q, &x_s, &cp, true, true)?, cic_forward(&x_q, &xs2, &cp, true, true)?],
        );
        let opts = AggregationOptions {
            use_intra: true,
            use_inter: true,
            img_proto: ImageProto::Gap,
            alpha: 1.0,
            normalize_inter: false,
        };
        let out = aggregate_prototypes(&coupled, &inter, opts)?;
        probe(&out[&0].0.v, 8)
    })?;

    let model = micro_model(31)?;
    let image = leaf(&[3, 8, 8], &mut r);
    let mask = Tensor::new((0..64).map(|i| f64::from(u8::from(i % 3 == 0))).collect(), &[1, 8, 8])?;
    let mut bb_inputs: Vec<Tensor> = model
        .params
        .iter()
        .filter(|(n, _)| n.starts_with("backbone"))
        .map(|(_, t)| t.clone())
        .collect();
    bb_inputs.push(image.clone());
    s.check("backbone", &bb_inputs, || probe(&model.backbone.forward(&image, Some(&mask))?, 9))?;

    let roi = leaf(&[3, 2], &mut r);
    let proto = leaf(&[2], &mut r);
    s.check("channel_attention", &[roi.clone(), proto.clone()], || {
        probe(&channel_attention(&roi, &proto)?, 10)
    })?;

    let head_inputs: Vec<Tensor> = model
        .params
        .iter()
        .filter(|(n, _)| n.starts_with("head"))
        .map(|(_, t)| t.clone())
        .collect();
    let rois = leaf(&[3, 2], &mut r);
    let p0 = leaf(&[2], &mut r);
    let p1 = leaf(&[2], &mut r);
    let mut det_inputs = head_inputs.clone();
    det_inputs.extend([rois.clone(), p0.clone(), p1.clone()]);
    s.check("detection_forward+total_loss", &det_inputs, || {
        let mut protos = BTreeMap::new();
        for (c, v) in [(0, &p0), (1, &p1)] {
            protos.insert(
                c,
                crate::aggregation::ClassPrototype {
                    v: v.clone(),
                    class_id: c,
                    contributions: Vec::new(),
                },
            );
        }
        let out = model.detection_forward(&rois, &protos, &[0, 1])?;
        let deltas = crate::detector::positive_deltas(&out, &[(0, 1), (2, 0)])?;
        let targets = Tensor::new(vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.2, 0.0, 0.1], &[2, 4])?;
        let meta = model.meta_logits(&protos, &[0, 1])?;
        Ok(total_loss(&out.logits, &[1, 2, 0], deltas.as_ref(), Some(&targets), &meta, &[0, 1], 1.0)?.total)
    })?;
    Ok(())
}

/// A two-class model with every parameter randomized (the zero-initialized
/// output projection would otherwise hide the coupling gradients).
pub fn micro_model(seed: u64) -> Result<Model> {
    let config = ModelConfig {
        widths: [2, 2, 2],
        embed: 2,
        flags: ArmFlags::FULL,
        num_classes: 2,
        ..ModelConfig::default()
    };
    let model = Model::new(config, &mut rng(seed))?;
    randomize(&model.params, 0.6, seed + 1);
    Ok(model)
}

/// A 1-class, 1-shot episode on 16x16 images with one annotated object.
pub fn micro_episode(seed: u64) -> Result<Episode> {
    let mut r = rng(seed);
    let image = Tensor::new((0..3 * 256).map(|_| r.random_range(0.0..1.0)).collect(), &[3, 16, 16])?;
    let support = Tensor::new((0..3 * 256).map(|_| r.random_range(0.0..1.0)).collect(), &[3, 16, 16])?;
    let mask = Tensor::new(
        (0..256).map(|i| f64::from(u8::from((4..12).contains(&(i % 16)) && (4..12).contains(&(i / 16))))).collect(),
        &[1, 16, 16],
    )?;
    let mut supports = BTreeMap::new();
    supports.insert(0, vec![SupportInstance { image: support, mask, class_id: 0 }]);
    let mut support_indices = BTreeMap::new();
    support_indices.insert(0, vec![0]);
    Ok(Episode {
        k: 1,
        supports,
        support_indices,
        queries: vec![Query {
            image_index: 0,
            image,
            annotations: vec![BoxAnnotation {
                bbox: BBox::new(2.0, 3.0, 11.0, 13.0),
                class_id: 0,
            }],
        }],
    })
}

fn end_to_end_scope(s: &mut Suite) -> Result<()> {
    let model = micro_model(41)?;
    let episode = micro_episode(42)?;
    let schedule = Schedule {
        flip: false,
        neg_ratio: 1,
        pos_per_gt: 0,
        ..Schedule::meta_default()
    };
    let inputs = all_params(&model.params);
    s.check("episode_loss[full]", &inputs, || {
        Ok(episode_loss(&model, &episode, &schedule, &mut rng(43))?.total)
    })?;
    Ok(())
}

/// Runs the requested scopes with the default tolerances.
pub fn grad_check_suite(scopes: &[Scope]) -> Result<Vec<GradCheckReport>> {
    let mut suite = Suite {
        cfg: GradCheckConfig::default(),
        reports: Vec::new(),
    };
    for scope in scopes {
        match scope {
            Scope::Ops => ops_scope(&mut suite)?,
            Scope::Modules => modules_scope(&mut suite)?,
            Scope::EndToEnd => end_to_end_scope(&mut suite)?,
        }
    }
    Ok(suite.reports)
}
