//! Coupling and aggregation steps against the loop oracles, on inputs no
//! larger than 4x4 spatially. Each check panics on mismatch.

use crate::oracle;

use icpe::aggregation::{inter_dam, intra_dam, ImagePrototype, InterDamParams};
use icpe::coupling::{cic_forward, compute_condition, couple, generate_coupled_info, CouplingParams};
use icpe_tensor::{ParamRegistry, Tensor};
use oracle::CouplingWeights;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

const TOL: f64 = 1e-10;

fn assert_close(name: &str, got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "{name}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "{name}[{i}]: got {g}, want {w}");
    }
}

struct Case {
    c: usize,
    d: usize,
    q_hw: (usize, usize),
    s_hw: (usize, usize),
    x_q: Vec<f64>,
    x_s: Vec<f64>,
    weights: CouplingWeights,
    params: CouplingParams,
}

fn set(t: &Tensor, v: &[f64]) {
    t.data_mut().copy_from_slice(v);
}

fn random_case(seed: u64, c: usize, d: usize, q_hw: (usize, usize), s_hw: (usize, usize)) -> Case {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut r = |n| oracle::random_vec(n, -1.0, 1.0, &mut rng);
    let weights = CouplingWeights {
        wq: r(d * c),
        bq: r(d),
        wk: r(d * c),
        bk: r(d),
        wv: r(d * c),
        bv: r(d),
        wo: r(c * d),
        bo: r(c),
    };
    let x_q = r(c * q_hw.0 * q_hw.1);
    let x_s = r(c * s_hw.0 * s_hw.1);
    let mut reg = ParamRegistry::new();
    let params = CouplingParams::register(&mut reg, "c", c, d, &mut Xoshiro256PlusPlus::seed_from_u64(0)).unwrap();
    set(&params.proj_q.weight, &weights.wq);
    set(&params.proj_q.bias, &weights.bq);
    set(&params.proj_k.weight, &weights.wk);
    set(&params.proj_k.bias, &weights.bk);
    set(&params.proj_v.weight, &weights.wv);
    set(&params.proj_v.bias, &weights.bv);
    set(&params.proj_out.weight, &weights.wo);
    set(&params.proj_out.bias, &weights.bo);
    Case {
        c,
        d,
        q_hw,
        s_hw,
        x_q,
        x_s,
        weights,
        params,
    }
}

impl Case {
    fn tensors(&self) -> (Tensor, Tensor) {
        (
            Tensor::new(self.x_q.clone(), &[self.c, self.q_hw.0, self.q_hw.1]).unwrap(),
            Tensor::new(self.x_s.clone(), &[self.c, self.s_hw.0, self.s_hw.1]).unwrap(),
        )
    }

    fn oracle(&self, use_condition: bool, clamp: bool) -> oracle::CouplingOracle {
        oracle::coupling(
            &self.x_q,
            &self.x_s,
            self.c,
            self.d,
            self.q_hw.0 * self.q_hw.1,
            self.s_hw.0 * self.s_hw.1,
            &self.weights,
            use_condition,
            clamp,
        )
    }
}

fn cases() -> Vec<Case> {
    vec![
        random_case(1, 3, 2, (2, 2), (1, 1)),
        random_case(2, 4, 3, (4, 4), (3, 2)),
        random_case(3, 2, 5, (3, 4), (4, 4)),
        random_case(4, 5, 1, (1, 3), (2, 2)),
    ]
}

/// Single support pixel against a 2x2 query with identity projections;
/// constants computed by hand at 40 digits.
pub fn hand_traced_attention_and_assembly() {
    let eye = vec![1.0, 0.0, 0.0, 1.0];
    let zero = vec![0.0, 0.0];
    let mut case = random_case(0, 2, 2, (2, 2), (1, 1));
    case.x_q = vec![0.0, 1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 1.0];
    case.x_s = vec![1.0, 0.0];
    for conv in [&case.params.proj_q, &case.params.proj_k, &case.params.proj_v, &case.params.proj_out] {
        set(&conv.weight, &eye);
        set(&conv.bias, &zero);
    }
    let (x_q, x_s) = case.tensors();
    let out = cic_forward(&x_q, &x_s, &case.params, true, true).unwrap();
    let want_att = [
        0.032_058_603_280_084_988_450_811_470_131_345_88,
        0.087_144_318_742_032_567_489_459_388_566_257_32,
        0.236_882_818_089_910_132_298_029_288_046_817_84,
        0.643_914_259_887_972_311_761_699_853_255_578_95,
    ];
    assert_close("attention", &out.attention.to_vec(), &want_att, TOL);
    let cond = 0.832_050_294_337_843_683_027_512_600_185_499_06;
    assert_close("condition", &out.condition.to_vec(), &[cond], TOL);
    let x_hat_q0 = 2.492_652_734_585_769_767_370_617_524_426_629_86;
    assert_close("x_hat_s", &out.x_hat_s.to_vec(), &[cond * x_hat_q0 + 1.0, cond], TOL);
    assert_close("x_hat_s literal", &out.x_hat_s.to_vec(), &[3.074_012_441_494_120_683_518, cond], TOL);
}

pub fn attention_matches_oracle() {
    for case in cases() {
        let (x_q, x_s) = case.tensors();
        let (_, att) = generate_coupled_info(&x_q, &x_s, &case.params).unwrap();
        let want: Vec<f64> = case.oracle(true, true).attention.concat();
        assert_close("attention", &att.to_vec(), &want, TOL);
        let ns = case.s_hw.0 * case.s_hw.1;
        assert_eq!(att.shape(), [ns, case.q_hw.0 * case.q_hw.1]);
    }
}

pub fn reassembled_query_matches_oracle() {
    for case in cases() {
        let (x_q, x_s) = case.tensors();
        let (x_hat_q, _) = generate_coupled_info(&x_q, &x_s, &case.params).unwrap();
        assert_eq!(x_hat_q.shape(), x_s.shape());
        assert_close("x_hat_q", &x_hat_q.to_vec(), &case.oracle(true, true).x_hat_q, TOL);
    }
}

pub fn condition_matches_oracle() {
    for case in cases() {
        let (x_q, x_s) = case.tensors();
        for clamp in [true, false] {
            let cond = compute_condition(&x_q, &x_s, clamp).unwrap();
            assert_close("condition", &cond.to_vec(), &case.oracle(true, clamp).condition, TOL);
        }
    }
}

pub fn injection_matches_oracle() {
    for case in cases() {
        let (x_q, x_s) = case.tensors();
        let o = case.oracle(true, true);
        let hs_ws = [case.s_hw.0, case.s_hw.1];
        let x_hat_q = Tensor::new(o.x_hat_q.clone(), x_s.shape()).unwrap();
        let cond = Tensor::new(o.condition.clone(), &hs_ws).unwrap();
        assert_close("couple", &couple(&x_s, &x_hat_q, &cond).unwrap().to_vec(), &o.x_hat_s, TOL);
        let full = cic_forward(&x_q, &x_s, &case.params, true, true).unwrap();
        assert_close("cic_forward", &full.x_hat_s.to_vec(), &o.x_hat_s, TOL);
        let no_ccm = cic_forward(&x_q, &x_s, &case.params, false, true).unwrap();
        assert_close("cic_forward[no ccm]", &no_ccm.x_hat_s.to_vec(), &case.oracle(false, true).x_hat_s, TOL);
    }
}

pub fn intra_weights_and_prototype_match_oracle() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
    for (c, h, w) in [(1, 1, 2), (3, 2, 2), (4, 4, 4), (2, 3, 1)] {
        let x = oracle::random_vec(c * h * w, -2.0, 2.0, &mut rng);
        for alpha in [0.0, 0.5, 1.0, 2.5] {
            let p = intra_dam(&Tensor::new(x.clone(), &[c, h, w]).unwrap(), alpha, 0).unwrap();
            let (v, weights) = oracle::intra(&x, c, h * w, alpha);
            assert_close("weights", &p.weights.unwrap().to_vec(), &weights, TOL);
            assert_close("v", &p.v.to_vec(), &v, TOL);
        }
    }
    // The worked example: [2, 4] with alpha 1 gives 6.
    let p = intra_dam(&Tensor::new(vec![2.0, 4.0], &[1, 1, 2]).unwrap(), 1.0, 0).unwrap();
    assert!((p.v.item() - 6.0).abs() < TOL);
}

fn inter_case(seed: u64, c: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>, f64, InterDamParams) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let protos: Vec<Vec<f64>> = (0..k).map(|_| oracle::random_vec(c, -1.5, 1.5, &mut rng)).collect();
    let fc_w = oracle::random_vec(c, -1.0, 1.0, &mut rng);
    let fc_b = 0.3;
    let mut reg = ParamRegistry::new();
    let params = InterDamParams::register(&mut reg, "inter", c, &mut rng).unwrap();
    set(&params.fc.weight, &fc_w);
    set(&params.fc.bias, &[fc_b]);
    (protos, fc_w, fc_b, params)
}

fn image_protos(protos: &[Vec<f64>]) -> Vec<ImagePrototype> {
    protos
        .iter()
        .map(|v| ImagePrototype {
            v: Tensor::new(v.clone(), &[v.len()]).unwrap(),
            weights: None,
            class_id: 3,
        })
        .collect()
}

pub fn contributions_match_oracle() {
    for (seed, c, k) in [(1, 3, 1), (2, 4, 2), (3, 2, 5)] {
        let (protos, fc_w, fc_b, params) = inter_case(seed, c, k);
        let out = inter_dam(&image_protos(&protos), &params, false).unwrap();
        assert_close("p", &out.contributions, &oracle::contributions(&protos, &fc_w, fc_b), TOL);
    }
}

pub fn class_prototype_matches_oracle() {
    for (seed, c, k) in [(4, 3, 1), (5, 4, 3), (6, 2, 5)] {
        let (protos, fc_w, fc_b, params) = inter_case(seed, c, k);
        let out = inter_dam(&image_protos(&protos), &params, false).unwrap();
        let p = oracle::contributions(&protos, &fc_w, fc_b);
        assert_close("v_cls", &out.v.to_vec(), &oracle::weighted_sum(&protos, &p), TOL);
        assert_eq!(out.class_id, 3);
    }
}
