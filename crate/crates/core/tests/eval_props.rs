use proptest::prelude::*;

use texturedge::evalmetrics::{self, ConfusionCounts};
use texturedge::segment::BinaryMask;
use texturedge::texture::TextureMap;

fn mask_pair(max_side: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        let bits = || proptest::collection::vec(any::<bool>(), w * h);
        (bits(), bits()).prop_map(move |(a, b)| (BinaryMask::new(w, h, a).unwrap(), BinaryMask::new(w, h, b).unwrap()))
    })
}

/// Integer scores with plenty of ties, plus a truth mask holding both classes.
fn scored(max_side: usize) -> impl Strategy<Value = (Vec<u8>, BinaryMask)> {
    (1..=max_side, 2..=max_side).prop_flat_map(|(w, h)| {
        (proptest::collection::vec(0u8..12, w * h), proptest::collection::vec(any::<bool>(), w * h))
            .prop_filter("both classes present", |(_, t)| t.contains(&true) && t.contains(&false))
            .prop_map(move |(s, t)| (s, BinaryMask::new(w, h, t).unwrap()))
    })
}

fn concordance(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (sp, _) in scores.iter().zip(truth).filter(|p| *p.1) {
        for (sn, _) in scores.iter().zip(truth).filter(|p| !*p.1) {
            pairs += 1.0;
            wins += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

fn score_map(truth: &BinaryMask, scores: impl Iterator<Item = f64>) -> TextureMap {
    TextureMap::new(truth.width(), truth.height(), scores.collect()).unwrap()
}

proptest! {
    #[test]
    fn swapping_masks_swaps_errors((a, b) in mask_pair(16)) {
        let ab = evalmetrics::confusion(&a, &b).unwrap();
        let ba = evalmetrics::confusion(&b, &a).unwrap();
        prop_assert_eq!((ab.tp, ab.tn, ab.fp, ab.fn_), (ba.tp, ba.tn, ba.fn_, ba.fp));
        prop_assert_eq!(evalmetrics::metrics(&ab).dice, evalmetrics::metrics(&ba).dice);
    }

    #[test]
    fn f_measure_agrees_with_harmonic_mean(tp in 0u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000, tn in 0u64..10_000) {
        let r = evalmetrics::metrics(&ConfusionCounts { tp, fp, fn_, tn });
        prop_assert_eq!(r.dice, r.f_measure);
        if r.precision + r.recall > 0.0 {
            let harmonic = 2.0 * r.precision * r.recall / (r.precision + r.recall);
            prop_assert!((r.f_measure - harmonic).abs() <= 1e-12);
        }
        for v in [r.dice, r.precision, r.recall, r.specificity, r.f_measure] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn az_matches_concordance((raw, truth) in scored(12)) {
        let scores: Vec<f64> = raw.iter().map(|&s| f64::from(s)).collect();
        let roc = evalmetrics::roc_az(&score_map(&truth, scores.iter().copied()), &truth, None).unwrap();
        prop_assert!((roc.az - concordance(&scores, truth.bits())).abs() <= 1e-9);
        prop_assert_eq!(roc.points.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.points.last().copied(), Some((1.0, 1.0)));
    }

    #[test]
    fn az_ignores_increasing_transforms((raw, truth) in scored(12)) {
        let plain = score_map(&truth, raw.iter().map(|&s| f64::from(s)));
        let warped = score_map(&truth, raw.iter().map(|&s| (f64::from(s) * 0.7).exp() - 40.0));
        let a = evalmetrics::roc_az(&plain, &truth, None).unwrap().az;
        let b = evalmetrics::roc_az(&warped, &truth, None).unwrap().az;
        prop_assert_eq!(a, b);
    }
}
