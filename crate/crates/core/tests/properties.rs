use depthfuse_core::geometry::RigidPose;
use depthfuse_core::image::{resize_bilinear, DepthMap};
use depthfuse_core::synth::{generate_sample, SceneSpec, Weather, RADAR_NOISE_TRUNCATION};
use depthfuse_core::{Shape, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Shape, data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (x, k, b) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(b.clone()));
    let y = tape.conv2d(x, k, b, stride, pad).unwrap();
    tape.value(y).clone()
}

fn upsample(x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.upsample2x(v).unwrap();
    tape.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear_in_its_input(
        seed in any::<u64>(),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs = Shape::nchw(2, 3, 7, 6);
        let ks = Shape::nchw(4, 3, 3, 3);
        let mut random = |s: Shape| tensor(s, (0..s.numel()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (x1, x2, k) = (random(xs), random(xs), random(ks));
        let zero = Tensor::zeros(Shape::new(&[4]).unwrap());
        let mix = tensor(xs, x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect());
        let lhs = conv(&mix, &k, &zero, stride, pad);
        let (y1, y2) = (conv(&x1, &k, &zero, stride, pad), conv(&x2, &k, &zero, stride, pad));
        for ((l, p), q) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_matches_depth_resize(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.5..80.0)).collect();
        let map = DepthMap::from_vec(w, h, data.clone()).unwrap();
        let up = upsample(&tensor(Shape::nchw(1, 1, h, w), data));
        let want = resize_bilinear(&map, 2 * w, 2 * h);
        for (a, b) in up.data().iter().zip(&want.data) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_scene_is_the_ground_plane(seed in any::<u64>(), w in 8usize..40, h in 8usize..30) {
        let spec = SceneSpec { primitives: 0, ..SceneSpec::for_size(w, h) };
        let s = generate_sample(&spec, seed).unwrap();
        let k = spec.intrinsics;
        for v in 0..h {
            for u in 0..w {
                let dy = (v as f64 - k.cy) / k.fy;
                let want = if dy > 0.0 { (spec.camera_height / dy).clamp(spec.d_min, spec.d_max) } else { spec.d_max };
                prop_assert!((s.gt.get(u, v) - want).abs() <= 1e-12 * want);
            }
        }
    }

    #[test]
    fn weather_changes_only_the_image(seed in any::<u64>()) {
        let base = SceneSpec::for_size(32, 16);
        let day = generate_sample(&base, seed).unwrap();
        for weather in [Weather::Night, Weather::Fog, Weather::Rain, Weather::Cloudy] {
            let other = generate_sample(&base.clone().with_weather(weather), seed).unwrap();
            prop_assert_eq!(&other.gt, &day.gt);
            prop_assert_eq!(&other.sparse, &day.sparse);
            prop_assert_ne!(&other.rgb, &day.rgb);
        }
    }
}

#[test]
fn radar_noise_stays_within_its_truncation() {
    let mut spec = SceneSpec::for_size(64, 32);
    spec.radar_returns = 200.0;
    let mut returns = 0;
    for seed in 0..20 {
        let s = generate_sample(&spec, seed).unwrap();
        for (u, v, d) in s.sparse.measurements() {
            let g = s.gt.get(u, v);
            assert!((d - g).abs() <= RADAR_NOISE_TRUNCATION * spec.radar_noise_sigma + 1e-9, "{d} vs {g}");
            returns += 1;
        }
    }
    assert!(returns > 1000);
}

#[test]
fn identity_pose_is_identity() {
    let p = [1.5, -2.0, 7.25];
    assert_eq!(RigidPose::identity().apply(p), p);
}
