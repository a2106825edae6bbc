mod oracle;

use icpe::boxes::{BBox, Detection};
use icpe::eval::ap::{voc_ap, ScoredBox};
use icpe::eval::report::EvalReport;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn random_box<R: Rng>(rng: &mut R) -> BBox {
    let x = rng.random_range(0.0..20.0);
    let y = rng.random_range(0.0..20.0);
    BBox::new(x, y, x + rng.random_range(2.0..10.0), y + rng.random_range(2.0..10.0))
}

/// One small random instance: a few images, GTs, and detections that are
/// jittered copies of GTs (some hits, some duplicates) or random boxes.
/// Scores come from a coarse grid so ties occur.
pub fn random_instance(seed: u64) -> (Vec<(usize, BBox, f64)>, Vec<(usize, BBox)>) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let n_img = rng.random_range(1..4);
    let gts: Vec<(usize, BBox)> = (0..rng.random_range(0..7))
        .map(|_| (rng.random_range(0..n_img), random_box(&mut rng)))
        .collect();
    let mut dets = Vec::new();
    for _ in 0..rng.random_range(0..10) {
        let score = f64::from(rng.random_range(0..6u8)) / 5.0;
        if !gts.is_empty() && rng.random_bool(0.6) {
            let (img, g) = gts[rng.random_range(0..gts.len())];
            let j = rng.random_range(-2.0..2.0);
            dets.push((img, BBox::new(g.x1 + j, g.y1, g.x2 + j, g.y2), score));
        } else {
            dets.push((rng.random_range(0..n_img), random_box(&mut rng), score));
        }
    }
    (dets, gts)
}

pub fn scored(dets: &[(usize, BBox, f64)]) -> Vec<ScoredBox> {
    dets.iter().map(|&(image, bbox, score)| ScoredBox { image, bbox, score }).collect()
}

#[test]
fn matches_naive_oracle_exactly() {
    let mut with_gts = 0;
    for seed in 0..200 {
        let (dets, gts) = random_instance(seed);
        let got = voc_ap(&scored(&dets), &gts);
        let want = oracle::naive_ap(&dets, &gts);
        assert_eq!(got.map(f64::to_bits), want.map(f64::to_bits), "seed {seed}: {got:?} vs {want:?}");
        with_gts += usize::from(want.is_some());
    }
    assert!(with_gts > 150);
}

#[test]
fn hand_traced_curve() {
    let g1 = BBox::new(0.0, 0.0, 10.0, 10.0);
    let g2 = BBox::new(20.0, 20.0, 30.0, 30.0);
    let miss = BBox::new(40.0, 40.0, 50.0, 50.0);
    let dets = [(0, g1, 0.9), (0, miss, 0.8), (0, g2, 0.7)];
    let ap = voc_ap(&scored(&dets), &[(0, g1), (0, g2)]).unwrap();
    assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() <= 1e-12, "{ap}");
}

/// Disjoint GTs on a lattice; detections are exact copies (hits) or far
/// away boxes (misses). Removing any hit must not raise AP.
#[test]
fn deleting_a_true_positive_never_raises_ap() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    for _ in 0..100 {
        let gts: Vec<(usize, BBox)> = (0..rng.random_range(1..6))
            .map(|i| (0, BBox::new(20.0 * i as f64, 0.0, 20.0 * i as f64 + 10.0, 10.0)))
            .collect();
        let mut dets = Vec::new();
        for i in 0..gts.len() {
            if rng.random_bool(0.7) {
                dets.push((0, gts[i].1, rng.random_range(0.0..1.0)));
            }
        }
        for _ in 0..rng.random_range(0..4) {
            let y = 100.0 + rng.random_range(0.0..50.0);
            dets.push((0, BBox::new(0.0, y, 10.0, y + 10.0), rng.random_range(0.0..1.0)));
        }
        let full = voc_ap(&scored(&dets), &gts).unwrap();
        for i in 0..dets.len() {
            if dets[i].1.y1 >= 100.0 {
                continue;
            }
            let mut fewer = dets.clone();
            fewer.remove(i);
            let ap = voc_ap(&scored(&fewer), &gts).unwrap();
            assert!(ap <= full, "{ap} > {full}");
        }
    }
    let g1 = BBox::new(0.0, 0.0, 10.0, 10.0);
    let g2 = BBox::new(20.0, 20.0, 30.0, 30.0);
    let miss = BBox::new(40.0, 40.0, 50.0, 50.0);
    let ap = voc_ap(&scored(&[(0, miss, 0.8), (0, g2, 0.7)]), &[(0, g1), (0, g2)]).unwrap();
    assert!((ap - 0.25).abs() < 1e-15);
}

#[test]
fn perfect_and_empty_detectors() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    let gts: Vec<Vec<(usize, BBox)>> = (0..5)
        .map(|_| (0..3).map(|_| (rng.random_range(0..4usize), random_box(&mut rng))).collect())
        .collect();
    let perfect: Vec<Vec<Detection>> = gts
        .iter()
        .map(|g| g.iter().map(|&(class_id, bbox)| Detection { bbox, class_id, score: 1.0 }).collect())
        .collect();
    let r = EvalReport::from_detections(&perfect, &gts, &[0, 1], &[2, 3], "fp", 0).unwrap();
    // Overlapping same-class GTs in one image can steal each other's match;
    // every class with ground truth must still score 1 when boxes are exact.
    for (c, ap) in &r.per_class {
        assert_eq!(*ap, 1.0, "class {c}");
    }
    let empty = vec![Vec::new(); gts.len()];
    let r = EvalReport::from_detections(&empty, &gts, &[0, 1], &[2, 3], "fp", 0).unwrap();
    assert!(r.per_class.values().all(|&ap| ap == 0.0));
    assert_eq!(r.base_map, Some(0.0));
}
