mod common;

use common::{analytic_kernel, scalar_pearson};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonomyo::frame::{
    compute_signal, gaussian_kernel, gaussian_smooth, pearson2d, signal_from_correlations, Frame, FrameError, Image,
    ReferencePair, SignalProcessor,
};
use sonomyo::phantom::{Phantom, PhantomParams};

fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    Frame::new(w, h, (0..w * h).map(|_| rng.random()).collect(), 0.0).unwrap()
}

#[test]
fn pearson_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (w, h) = (rng.random_range(3..24), rng.random_range(3..24));
        let a = random_frame(&mut rng, w, h).to_image();
        let b = random_frame(&mut rng, w, h).to_image();
        let got = pearson2d(&a, &b).unwrap();
        assert!((got - scalar_pearson(a.data(), b.data())).abs() < 1e-10);
    }
}

#[test]
fn pearson_two_by_two() {
    let a = Image::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Image::new(2, 2, vec![1.0, 2.0, 3.0, 5.0]).unwrap();
    let expected = scalar_pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]);
    assert!((pearson2d(&a, &b).unwrap() - expected).abs() < 1e-15);
    assert!((expected - 0.9827076298239908).abs() < 1e-12);
}

#[test]
fn pearson_identities_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_frame(&mut rng, 9, 7);
    let inv = Frame::new(9, 7, f.pixels().iter().map(|p| 255 - p).collect(), 0.0).unwrap();
    assert_eq!(pearson2d(&f.to_image(), &f.to_image()).unwrap(), 1.0);
    assert!((pearson2d(&f.to_image(), &inv.to_image()).unwrap() + 1.0).abs() < 1e-12);

    let flat = Image::new(3, 3, vec![5.0; 9]).unwrap();
    assert_eq!(pearson2d(&flat, &flat), Err(FrameError::DegenerateCorrelation));
    let other = Image::new(4, 3, vec![0.0; 12]).unwrap();
    assert!(matches!(pearson2d(&flat, &other), Err(FrameError::DimensionMismatch { .. })));
}

#[test]
fn impulse_reproduces_kernel() {
    let (w, h) = (7, 6);
    let mut px = vec![0u8; w * h];
    px[3 * w + 3] = 255;
    let out = gaussian_smooth(&Frame::new(w, h, px, 0.0).unwrap()).unwrap().image;

    let kernel = analytic_kernel();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as i32 - 3, y as i32 - 3);
            let expected =
                if dx.abs() <= 1 && dy.abs() <= 1 { 255.0 * kernel[(dy + 1) as usize][(dx + 1) as usize] } else { 0.0 };
            assert!((out.get(x, y) - expected).abs() < 1e-10, "({x},{y})");
        }
    }
    let k = gaussian_kernel();
    assert!((k.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!((k[1][1] - 0.6193).abs() < 1e-4);
    assert!((k[0][1] - 0.0838).abs() < 1e-4);
    assert!((k[0][0] - 0.0113).abs() < 1e-4);
}

#[test]
fn smoothing_rejects_tiny_frames_and_keeps_constants() {
    assert!(matches!(Frame::new(2, 5, vec![0; 10], 0.0), Err(FrameError::TooSmall { .. })));
    let out = gaussian_smooth(&Frame::new(5, 4, vec![128; 20], 0.0).unwrap()).unwrap();
    assert!(out.image.data().iter().all(|&v| v == 128.0));
}

#[test]
fn signal_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rest = random_frame(&mut rng, 12, 10);
    let motion = random_frame(&mut rng, 12, 10);
    let refs = ReferencePair::new(rest.clone(), motion.clone()).unwrap();
    let at_motion = compute_signal(&gaussian_smooth(&motion).unwrap(), &refs).unwrap();
    let at_rest = compute_signal(&gaussian_smooth(&rest).unwrap(), &refs).unwrap();
    assert_eq!(at_motion.s_raw, 0.0);
    assert_eq!(at_rest.s_raw, 1.0);
    assert!((signal_from_correlations(0.9, 0.9).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(signal_from_correlations(1.0, 1.0), Err(FrameError::DegenerateSignal));
}

#[test]
fn processor_is_deterministic() {
    let phantom = Phantom::new(PhantomParams::scaled(0.15)).unwrap();
    let refs = ReferencePair::new(phantom.render(0.0, 0.0).unwrap(), phantom.render(1.0, 0.05).unwrap()).unwrap();
    let run = || {
        let proc_ = SignalProcessor::new(&refs);
        (0..20)
            .map(|k| proc_.process(&phantom.render(k as f64 / 19.0, 1.0 + k as f64).unwrap()).unwrap())
            .collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.s_raw.to_bits() == y.s_raw.to_bits()));
}

fn frame_strategy() -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
    (3usize..12, 3usize..12).prop_flat_map(|(w, h)| {
        (Just(w), Just(h), prop::collection::vec(any::<u8>(), w * h), prop::collection::vec(any::<u8>(), w * h))
    })
}

proptest! {
    #[test]
    fn signal_stays_in_unit_interval((w, h, a, b) in frame_strategy(), c in prop::collection::vec(any::<u8>(), 144)) {
        let rest = Frame::new(w, h, a, 0.0).unwrap();
        let motion = Frame::new(w, h, b, 0.0).unwrap();
        if let Ok(refs) = ReferencePair::new(rest, motion) {
            let frame = Frame::new(w, h, c[..w * h].to_vec(), 1.0).unwrap();
            if let Ok(s) = SignalProcessor::new(&refs).process(&frame) {
                prop_assert!((0.0..=1.0).contains(&s.s_raw));
            }
        }
    }

    #[test]
    fn pearson_affine_invariant((w, h, a, b) in frame_strategy(), alpha in 0.01f64..50.0, beta in -100.0f64..100.0) {
        let ia = Frame::new(w, h, a, 0.0).unwrap().to_image();
        let ib = Frame::new(w, h, b, 0.0).unwrap().to_image();
        let scaled = Image::new(w, h, ia.data().iter().map(|v| alpha * v + beta).collect()).unwrap();
        match (pearson2d(&ia, &ib), pearson2d(&scaled, &ib)) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-9),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn pearson_symmetric((w, h, a, b) in frame_strategy()) {
        let ia = Frame::new(w, h, a, 0.0).unwrap().to_image();
        let ib = Frame::new(w, h, b, 0.0).unwrap().to_image();
        prop_assert_eq!(pearson2d(&ia, &ib).ok(), pearson2d(&ib, &ia).ok());
    }

    #[test]
    fn smoothing_preserves_mean((w, h, a, _b) in frame_strategy()) {
        let f = Frame::new(w, h, a, 0.0).unwrap();
        let out = gaussian_smooth(&f).unwrap();
        prop_assert_eq!(out.image.dims(), (w, h));
        // Replicate padding moves mass only within a one-pixel border.
        let border = (2 * (w + h)) as f64 * 255.0 / (w * h) as f64;
        prop_assert!((out.image.mean() - f.to_image().mean()).abs() <= border);
    }
}
