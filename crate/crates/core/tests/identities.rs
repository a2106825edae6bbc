//! Degenerate settings that must reduce to something simpler, exactly.

mod oracle;
#[path = "suites/identities.rs"]
mod identities;

use icpe::aggregation::{inter_dam, intra_dam, mean_prototype};
use icpe::coupling::cic_forward;
use icpe_tensor::{ops, Tensor};
use identities::{bits, coupling, inter_params, protos, rand_tensor};
use proptest::prelude::*;

macro_rules! checks {
    ($($name:ident),* $(,)?) => {$(
        #[test]
        fn $name() {
            identities::$name();
        }
    )*};
}

checks!(
    zero_condition_passes_support_through_bitwise,
    zero_alpha_is_plain_gap_bitwise,
    zero_fc_with_two_shots_halves_the_sum_bitwise,
    ccm_off_equals_all_ones_mask_bitwise,
    support_order_does_not_change_class_prototype_bitwise,
);

proptest! {
    #[test]
    fn permuted_prototypes_sum_identically(
        vals in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 1..7),
        seed in any::<u64>(),
    ) {
        let inter = inter_params(4, seed);
        let mut rev = vals.clone();
        rev.reverse();
        let a = inter_dam(&protos(&vals), &inter, false).unwrap();
        let b = inter_dam(&protos(&rev), &inter, false).unwrap();
        prop_assert_eq!(bits(&a.v), bits(&b.v));
        let ma = mean_prototype(&protos(&vals)).unwrap();
        let mb = mean_prototype(&protos(&rev)).unwrap();
        prop_assert_eq!(bits(&ma.v), bits(&mb.v));
    }

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>(), hq in 1usize..5, wq in 1usize..5, hs in 1usize..4) {
        let params = coupling(3, 2, seed);
        let x_q = rand_tensor(&[3, hq, wq], seed ^ 1);
        let x_s = rand_tensor(&[3, hs, 2], seed ^ 2);
        let out = cic_forward(&x_q, &x_s, &params, true, true).unwrap();
        prop_assert_eq!(out.x_hat_s.shape(), x_s.shape());
        let att = out.attention.to_vec();
        for row in att.chunks(hq * wq) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(out.condition.data().iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    /// Shuffling query positions permutes attention columns and leaves the
    /// re-assembled query content unchanged.
    #[test]
    fn query_position_permutation_invariance(seed in any::<u64>()) {
        let params = coupling(3, 2, seed);
        let x_q = rand_tensor(&[3, 2, 3], seed ^ 5);
        let x_s = rand_tensor(&[3, 2, 2], seed ^ 6);
        let perm = [4usize, 0, 5, 2, 1, 3];
        let d = x_q.to_vec();
        let shuffled: Vec<f64> = (0..3).flat_map(|c| perm.iter().map(move |&p| (c, p))).map(|(c, p)| d[c * 6 + p]).collect();
        let x_q2 = Tensor::new(shuffled, &[3, 2, 3]).unwrap();
        let a = cic_forward(&x_q, &x_s, &params, true, true).unwrap();
        let b = cic_forward(&x_q2, &x_s, &params, true, true).unwrap();
        for (u, v) in a.x_hat_s.data().iter().zip(b.x_hat_s.data().iter()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn intra_weights_bounded_and_outputs_finite(seed in any::<u64>(), scale_exp in -6i32..6) {
        let s = 10f64.powi(scale_exp);
        let x = rand_tensor(&[3, 3, 3], seed);
        let x = ops::scale(&x, s);
        let p = intra_dam(&x, 1.0, 0).unwrap();
        prop_assert!(p.weights.unwrap().data().iter().all(|w| (-1.0 - 1e-12..=1.0 + 1e-12).contains(w)));
        prop_assert!(p.v.data().iter().all(|v| v.is_finite()));
    }
}
