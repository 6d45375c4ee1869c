use proptest::prelude::*;

use texturedge::enhance::{self, ClaheParams, SradParams};
use texturedge::imgio::GrayImage;

fn gray(max_side: usize) -> impl Strategy<Value = GrayImage> {
    (2..=max_side, 2..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h).prop_map(move |px| GrayImage::new(w, h, px).unwrap())
    })
}

fn srad_params() -> impl Strategy<Value = SradParams> {
    (0u32..30, 0.01..0.25f64, 0.0..0.2f64).prop_map(|(iterations, time_step, q0_decay_rho)| SradParams {
        iterations,
        time_step,
        q0_decay_rho,
        homogeneous_region: None,
    })
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_iterations_is_identity(img in gray(24)) {
        let params = SradParams { iterations: 0, ..SradParams::default() };
        prop_assert_eq!(enhance::srad(&img, &params).unwrap(), img);
    }

    #[test]
    fn constant_image_is_fixed_point(w in 1usize..30, h in 1usize..30, v in any::<u8>(), params in srad_params()) {
        let img = GrayImage::filled(w, h, v).unwrap();
        prop_assert_eq!(enhance::srad(&img, &params).unwrap(), img.clone());
        let clahe = ClaheParams { tiles_x: w.min(8), tiles_y: h.min(8), ..ClaheParams::default() };
        let once = enhance::clahe(&img, &clahe).unwrap();
        prop_assert_eq!(enhance::clahe(&once, &clahe).unwrap(), once);
    }

    #[test]
    fn thread_count_does_not_change_output(img in gray(40), params in srad_params()) {
        let clahe = ClaheParams { tiles_x: img.width().min(3), tiles_y: 2, ..ClaheParams::default() };
        let one = in_pool(1, || enhance::enhance(&img, &params, &clahe).unwrap());
        let four = in_pool(4, || enhance::enhance(&img, &params, &clahe).unwrap());
        prop_assert_eq!(one, four);
    }
}
