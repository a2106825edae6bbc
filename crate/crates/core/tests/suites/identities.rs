//! Degenerate settings that must reduce to something simpler, exactly.
//! Each check panics on mismatch.

use crate::oracle;

use std::collections::BTreeMap;

use icpe::aggregation::{
    aggregate_prototypes, inter_dam, intra_dam, AggregationOptions, ImagePrototype, InterDamParams,
};
use icpe::config::ImageProto;
use icpe::coupling::{cic_forward, couple, generate_coupled_info, CouplingParams};
use icpe_tensor::{ops, ParamRegistry, Tensor};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(oracle::random_vec(n, -2.0, 2.0, &mut rng), shape).unwrap()
}

pub fn coupling(c: usize, d: usize, seed: u64) -> CouplingParams {
    let mut reg = ParamRegistry::new();
    let p = CouplingParams::register(&mut reg, "c", c, d, &mut Xoshiro256PlusPlus::seed_from_u64(seed)).unwrap();
    // Non-zero output projection so the injected term is not trivially zero.
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed + 1);
    p.proj_out.weight.data_mut().iter_mut().for_each(|v| *v = rand::Rng::random_range(&mut rng, -1.0..1.0));
    p
}

pub fn inter_params(c: usize, seed: u64) -> InterDamParams {
    let mut reg = ParamRegistry::new();
    InterDamParams::register(&mut reg, "inter", c, &mut Xoshiro256PlusPlus::seed_from_u64(seed)).unwrap()
}

pub fn zero_condition_passes_support_through_bitwise() {
    let x_s = rand_tensor(&[3, 4, 4], 1);
    let x_hat_q = rand_tensor(&[3, 4, 4], 2);
    assert_eq!(bits(&couple(&x_s, &x_hat_q, &Tensor::zeros(&[4, 4])).unwrap()), bits(&x_s));

    // A query whose mean descriptor is orthogonal to every support position
    // yields an all-zero condition through the real path.
    let x_q = Tensor::new(vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0], &[2, 2, 2]).unwrap();
    let x_s = Tensor::new(vec![1.5, -0.5, 2.0, 0.25, 0.0, 0.0, 0.0, 0.0], &[2, 2, 2]).unwrap();
    let out = cic_forward(&x_q, &x_s, &coupling(2, 3, 3), true, true).unwrap();
    assert!(out.condition.data().iter().all(|&c| c == 0.0));
    assert_eq!(bits(&out.x_hat_s), bits(&x_s));
}

pub fn zero_alpha_is_plain_gap_bitwise() {
    for seed in 0..5 {
        let x = rand_tensor(&[4, 3, 3], seed);
        let p = intra_dam(&x, 0.0, 0).unwrap();
        assert_eq!(bits(&p.v), bits(&ops::gap(&x).unwrap()));
    }
}

pub fn protos(vs: &[Vec<f64>]) -> Vec<ImagePrototype> {
    vs.iter()
        .map(|v| ImagePrototype {
            v: Tensor::new(v.clone(), &[v.len()]).unwrap(),
            weights: None,
            class_id: 1,
        })
        .collect()
}

pub fn zero_fc_with_two_shots_halves_the_sum_bitwise() {
    let params = inter_params(3, 0);
    params.fc.weight.data_mut().fill(0.0);
    params.fc.bias.data_mut().fill(0.0);
    let a = vec![0.3, -1.7, 2.25];
    let b = vec![1.1, 0.4, -0.6];
    let out = inter_dam(&protos(&[a.clone(), b.clone()]), &params, false).unwrap();
    assert_eq!(out.contributions, vec![0.5, 0.5]);
    let want: Vec<u64> = a.iter().zip(&b).map(|(x, y)| (0.5 * (x + y)).to_bits()).collect();
    assert_eq!(bits(&out.v), want);
}

pub fn ccm_off_equals_all_ones_mask_bitwise() {
    let params = coupling(3, 2, 5);
    let x_q = rand_tensor(&[3, 4, 4], 6);
    let x_s = rand_tensor(&[3, 3, 2], 7);
    let off = cic_forward(&x_q, &x_s, &params, false, true).unwrap();
    let (x_hat_q, _) = generate_coupled_info(&x_q, &x_s, &params).unwrap();
    let manual = couple(&x_s, &x_hat_q, &Tensor::full(&[3, 2], 1.0)).unwrap();
    assert_eq!(bits(&off.x_hat_s), bits(&manual));
    assert!(off.condition.data().iter().all(|&c| c == 1.0));
}

fn coupled_class(
    params: &CouplingParams,
    x_q: &Tensor,
    supports: &[Tensor],
) -> BTreeMap<usize, Vec<icpe::coupling::CoupledFeature>> {
    let feats = supports.iter().map(|s| cic_forward(x_q, s, params, true, true).unwrap()).collect();
    BTreeMap::from([(2, feats)])
}

pub fn support_order_does_not_change_class_prototype_bitwise() {
    let params = coupling(3, 2, 8);
    let inter = inter_params(3, 9);
    let x_q = rand_tensor(&[3, 4, 4], 10);
    let supports: Vec<Tensor> = (0..5).map(|i| rand_tensor(&[3, 4, 4], 20 + i)).collect();
    let perms: [[usize; 5]; 4] = [[0, 1, 2, 3, 4], [4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 4, 0, 3, 2]];
    for normalize in [false, true] {
        for use_intra in [true, false] {
            for use_inter in [true, false] {
                let opts = AggregationOptions {
                    use_intra,
                    use_inter,
                    img_proto: ImageProto::Gap,
                    alpha: 1.0,
                    normalize_inter: normalize,
                };
                let results: Vec<Vec<u64>> = perms
                    .iter()
                    .map(|perm| {
                        let ordered: Vec<Tensor> = perm.iter().map(|&i| supports[i].clone()).collect();
                        let out = aggregate_prototypes(&coupled_class(&params, &x_q, &ordered), &inter, opts).unwrap();
                        bits(&out[&2].0.v)
                    })
                    .collect();
                assert!(results.windows(2).all(|w| w[0] == w[1]), "intra={use_intra} inter={use_inter}");
            }
        }
    }
}
