//! Property tests for the structural invariants that hold on arbitrary
//! inputs: round trips, projection geometry, and in-ball sampling.

use fwnucl::attack::clamp_box;
use fwnucl::ball::{norm_value, project, sample_in_ball, DistortionBall};
use fwnucl::linalg::project_l1_ball;
use fwnucl::tensor::{ImageTensor, PixelGroup};
use proptest::prelude::*;

fn tensor_strategy(max_side: usize) -> impl Strategy<Value = ImageTensor> {
    (1usize..=3, 1usize..=max_side, 1usize..=max_side).prop_flat_map(|(c, h, w)| {
        proptest::collection::vec(-2.0f64..2.0, c * h * w)
            .prop_map(move |data| ImageTensor::new(c, h, w, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matricize_round_trips(x in tensor_strategy(6)) {
        let stacked = ImageTensor::from_stacked(x.channels(), &x.matricize_stacked()).unwrap();
        prop_assert_eq!(&stacked, &x);
        let per = ImageTensor::from_channel_mats(&x.matricize_per_channel()).unwrap();
        prop_assert_eq!(&per, &x);
    }

    #[test]
    fn extract_scatter_round_trips(x in tensor_strategy(6)) {
        let g = PixelGroup::full_frame(x.channels(), x.height(), x.width());
        let m = x.extract_group(&g).unwrap();
        let mut y = ImageTensor::zeros(x.channels(), x.height(), x.width());
        y.scatter_group(&g, &m).unwrap();
        prop_assert_eq!(&y, &x);
    }

    #[test]
    fn csv_round_trips(x in tensor_strategy(5)) {
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        let back = ImageTensor::read_csv(&mut &buf[..]).unwrap();
        prop_assert_eq!(&back, &x);
    }

    #[test]
    fn l1_projection_is_feasible_idempotent_nonexpansive(
        a in proptest::collection::vec(-3.0f64..3.0, 1..12),
        b in proptest::collection::vec(-3.0f64..3.0, 1..12),
        r in 0.1f64..5.0,
    ) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let pa = project_l1_ball(a, r);
        let pb = project_l1_ball(b, r);
        prop_assert!(pa.iter().map(|x| x.abs()).sum::<f64>() <= r + 1e-9);
        let ppa = project_l1_ball(&pa, r);
        for (x, y) in pa.iter().zip(&ppa) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let din: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let dout: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        prop_assert!(dout <= din + 1e-9);
    }

    #[test]
    fn linf_and_nuclear_projections_land_in_ball(x in tensor_strategy(5), r in 0.1f64..2.0) {
        for ball in [DistortionBall::linf(r).unwrap(), DistortionBall::nuclear(r).unwrap()] {
            let p = project(&ball, &x).unwrap();
            prop_assert!(norm_value(&ball, &p).unwrap() <= r * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn samples_stay_in_ball(seed in 0u64..500, r in 0.1f64..2.0) {
        for ball in [
            DistortionBall::l1(r).unwrap(),
            DistortionBall::nuclear(r).unwrap(),
            DistortionBall::schatten(2.0, r, fwnucl::tensor::Matricization::Stacked).unwrap(),
        ] {
            let s = sample_in_ball(&ball, (1, 6, 6), seed);
            prop_assert!(norm_value(&ball, &s).unwrap() <= r + 1e-10);
        }
    }

    #[test]
    fn clamp_box_bounds_and_is_idempotent(x in tensor_strategy(5)) {
        let c = clamp_box(&x);
        for &v in c.data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(&clamp_box(&c), &c);
    }
}
