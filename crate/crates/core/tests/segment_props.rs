use proptest::prelude::*;

use texturedge::segment::{self, BinaryMask};
use texturedge::texture::TextureMap;

fn mask(max_side: usize, density: f64) -> impl Strategy<Value = BinaryMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(w, h)| {
        proptest::collection::vec(prop::bool::weighted(density), w * h)
            .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
    })
}

fn map(max_side: usize) -> impl Strategy<Value = TextureMap> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0.0..100.0f64, w * h).prop_map(move |v| TextureMap::new(w, h, v).unwrap())
    })
}

proptest! {
    #[test]
    fn binarize_is_monotone(m in map(20), a in 0.0..100.0f64, b in 0.0..100.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(segment::binarize(&m, hi).is_subset_of(&segment::binarize(&m, lo)));
    }

    #[test]
    fn otsu_threshold_splits_inside_range(m in map(20)) {
        let (min, max) = m.min_max();
        prop_assume!(max > min);
        let t = segment::otsu_threshold(&m).unwrap();
        prop_assert!(t > min && t <= max);
        let fg = segment::binarize(&m, t);
        prop_assert!(!fg.is_empty());
        prop_assert!(fg.count() < m.values().len());
    }

    #[test]
    fn refine_keeps_one_component_near_input(
        input in mask(24, 0.3),
        fx in 0.0..1.0f64,
        fy in 0.0..1.0f64,
        radius in 0usize..4,
        fill in any::<bool>(),
    ) {
        let center = (fx * input.width() as f64, fy * input.height() as f64);
        let out = segment::refine_mask(&input, center, radius, fill);
        let (_, components) = segment::label_components(&out);
        prop_assert!(components <= 1);
        prop_assert_eq!(out.is_empty(), input.is_empty());
        if !fill {
            prop_assert!(out.is_subset_of(&segment::dilate(&input, radius)));
        }
    }

    #[test]
    fn filling_is_idempotent_and_extensive(input in mask(20, 0.5)) {
        let filled = segment::fill_holes(&input);
        prop_assert!(input.is_subset_of(&filled));
        prop_assert_eq!(segment::fill_holes(&filled), filled);
    }

    #[test]
    fn closing_is_extensive(input in mask(20, 0.4), radius in 0usize..4) {
        prop_assert!(input.is_subset_of(&segment::close(&input, radius)));
    }

    #[test]
    fn contour_vertices_lie_on_boundary(input in mask(20, 0.5)) {
        let contours = segment::trace_contour(&input);
        let (_, components) = segment::label_components(&input);
        prop_assert_eq!(contours.len(), components as usize);
        for c in &contours {
            prop_assert!(!c.points.is_empty());
            for &(x, y) in &c.points {
                if x < input.width() && y < input.height() && input.get(x, y) {
                    prop_assert!(input.is_boundary(x, y));
                }
            }
        }
    }
}
