use proptest::prelude::*;
use twostream_core::flow::*;
use twostream_core::video::{Frame, Resolution, VideoClip};

fn texture(x: f64, y: f64) -> f32 {
    (0.5 + 0.2 * (0.31 * x + 0.17 * y).sin()
        + 0.15 * (0.23 * y - 0.41 * x + 1.0).sin()
        + 0.1 * (0.53 * x + 0.47 * y + 2.0).cos()) as f32
}

/// Textured frame whose content is displaced by `(dx, dy)`.
fn shifted(dx: f64, dy: f64) -> Frame {
    let mut px = Vec::with_capacity(112 * 112 * 3);
    for y in 0..112 {
        for x in 0..112 {
            let v = texture(x as f64 - dx, y as f64 - dy);
            px.extend([v, 0.9 * v, 1.1 * v - 0.05]);
        }
    }
    Frame::new(112, 112, px).unwrap()
}

fn interior_epe(f: &FlowField, u: f64, v: f64) -> Vec<f64> {
    let mut e = Vec::new();
    for y in 8..f.height - 8 {
        for x in 8..f.width - 8 {
            let i = y * f.width + x;
            e.push(((f.u[i] - u).powi(2) + (f.v[i] - v).powi(2)).sqrt());
        }
    }
    e
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn one_pixel_translation_recovered() {
    let p = FlowParams::default();
    for (dx, dy) in [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)] {
        let f = estimate_flow(&shifted(0.0, 0.0), &shifted(dx, dy), &p).unwrap();
        let m = median(interior_epe(&f, dx, dy));
        assert!(m < 0.3, "shift ({}, {}): median EPE {}", dx, dy, m);
    }
}

#[test]
fn identical_frames_give_zero_flow() {
    let a = shifted(0.3, -0.7);
    let f = estimate_flow(&a, &a, &FlowParams::default()).unwrap();
    let worst = f.u.iter().chain(&f.v).fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(worst < 1e-3, "{}", worst);
}

#[test]
fn textureless_frames_give_zero_flow() {
    let a = Frame::filled(112, 112, 0.4);
    let b = Frame::filled(112, 112, 0.4);
    let f = estimate_flow(&a, &b, &FlowParams::default()).unwrap();
    let worst = f.u.iter().chain(&f.v).fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(worst < 1e-2, "{}", worst);
}

#[test]
fn estimate_is_deterministic() {
    let p = FlowParams::default();
    let a = estimate_flow(&shifted(0.0, 0.0), &shifted(0.5, 0.5), &p).unwrap();
    let b = estimate_flow(&shifted(0.0, 0.0), &shifted(0.5, 0.5), &p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn static_clip_gives_zero_flow_images() {
    let clip = VideoClip::new(vec![shifted(0.0, 0.0); 32], 3, Resolution::Low, "s").unwrap();
    let out = flow_clip(&clip, &FlowParams::default()).unwrap();
    assert_eq!(out.len(), 32);
    assert_eq!(out.label, 3);
    for f in out.frames() {
        assert!(f.pixels().chunks(3).all(|p| p == [0.0, 0.0, 1.0]));
    }
}

#[test]
fn flow_clip_repeats_last_image() {
    let frames = (0..17).map(|i| shifted(0.5 * i as f64, 0.0)).collect();
    let clip = VideoClip::new(frames, 0, Resolution::High, "t").unwrap();
    let out = flow_clip(&clip, &FlowParams::default()).unwrap();
    assert_eq!(out.len(), 17);
    assert_eq!(out.frames()[15], out.frames()[16]);
}

#[test]
fn rightward_translation_has_hue_near_zero() {
    let frames = (0..4).map(|i| shifted(i as f64, 0.0)).collect();
    let clip = VideoClip::new(frames, 0, Resolution::High, "r").unwrap();
    let out = flow_clip(&clip, &FlowParams::default()).unwrap();
    for f in out.frames() {
        for y in 8..104 {
            for x in 8..104 {
                let h = f.get(y, x, 0) as f64;
                // hue wraps at 1
                let d = h.min(1.0 - h);
                assert!(d < 0.02, "hue {} at ({}, {})", h, y, x);
                assert!(f.get(y, x, 1) > 0.0);
            }
        }
    }
}

fn field(seed: u64) -> FlowField {
    let mut rng = twostream_core::rng::seeded(seed, 0);
    use rand::Rng;
    let n = 6 * 7;
    FlowField {
        height: 6,
        width: 7,
        u: (0..n).map(|_| rng.random_range(-10.0..10.0)).collect(),
        v: (0..n).map(|_| rng.random_range(-10.0..10.0)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_shifts_hue(seed in any::<u64>(), theta in -6.0f64..6.0) {
        let f = field(seed);
        let (s, c) = theta.sin_cos();
        let rot = FlowField {
            u: f.u.iter().zip(&f.v).map(|(u, v)| c * u - s * v).collect(),
            v: f.u.iter().zip(&f.v).map(|(u, v)| s * u + c * v).collect(),
            ..f.clone()
        };
        for (i, (&u, &v)) in f.u.iter().zip(&f.v).enumerate() {
            let want = (flow_hue(u, v) + theta / std::f64::consts::TAU).rem_euclid(1.0);
            let got = flow_hue(rot.u[i], rot.v[i]);
            let d = (got - want).abs();
            prop_assert!(d.min(1.0 - d) < 1e-6);
        }
        let a = flow_to_hsl_image(&f, 8.0).unwrap();
        let b = flow_to_hsl_image(&rot, 8.0).unwrap();
        for (pa, pb) in a.pixels().chunks(3).zip(b.pixels().chunks(3)) {
            prop_assert!((pa[1] - pb[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn scaling_keeps_hue(seed in any::<u64>(), c in 0.01f64..100.0) {
        let f = field(seed);
        for (&u, &v) in f.u.iter().zip(&f.v) {
            let d = (flow_hue(u, v) - flow_hue(c * u, c * v)).abs();
            prop_assert!(d.min(1.0 - d) < 1e-9);
        }
    }

    #[test]
    fn hsl_channels_in_unit_range(seed in any::<u64>(), s_max in 0.1f64..20.0) {
        let img = flow_to_hsl_image(&field(seed), s_max).unwrap();
        prop_assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(img.pixels().chunks(3).all(|p| p[0] < 1.0 && p[2] == 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn self_flow_is_zero(phase in 0.0f64..10.0) {
        let a = shifted(phase, -phase);
        let f = estimate_flow(&a, &a, &FlowParams::default()).unwrap();
        prop_assert!(f.u.iter().chain(&f.v).all(|x| x.abs() < 1e-3));
    }
}
