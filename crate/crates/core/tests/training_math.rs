use proptest::prelude::*;
use rand::Rng;
use twostream_core::gru::HeadParams;
use twostream_core::metrics::ConfusionMatrix;
use twostream_core::optim::*;
use twostream_core::params::{GradStore, ParamSet};
use twostream_core::rng::seeded;

proptest! {
    #[test]
    fn zero_gradient_without_decay_is_noop(seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = seeded(seed, 0);
        let mut p = HeadParams::init(5, 3, &mut rng);
        let before = p.clone();
        let mut state = RmspropState::new(&p);
        for v in &mut state.mean_square {
            v.data_mut().iter_mut().for_each(|x| *x = rng.random_range(0.0..1.0));
        }
        let cfg = RmspropConfig { weight_decay: 0.0, ..RmspropConfig::default() };
        let g = GradStore::zeros_for(&p);
        for _ in 0..steps {
            rmsprop_step(&mut p, &g, &mut state, &cfg).unwrap();
        }
        prop_assert_eq!(p, before);
        prop_assert!(state.mean_square.iter().all(|v| v.data().iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn confusion_rows_count_classes(seed in any::<u64>(), k in 2usize..7, n in 1usize..200) {
        let mut rng = seeded(seed, 1);
        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..k), rng.random_range(0..k))).collect();
        let m = ConfusionMatrix::from_pairs(k, &pairs).unwrap();
        let mut counts = vec![0u64; k];
        let mut correct = 0;
        for &(t, p) in &pairs {
            counts[t] += 1;
            if t == p {
                correct += 1;
            }
        }
        prop_assert_eq!(m.row_sums(), counts);
        prop_assert_eq!(m.accuracy(), m.trace() as f64 / m.total() as f64);
        prop_assert_eq!(m.accuracy(), correct as f64 / n as f64);
    }
}

#[test]
fn single_step_by_hand() {
    let mut p = HeadParams::init(1, 1, &mut seeded(0, 0));
    p.weight.data_mut()[0] = 0.0;
    p.bias.data_mut()[0] = 0.0;
    let mut g = GradStore::zeros_for(&p);
    g.0.tensors_mut().into_iter().for_each(|t| t.fill(1.0));
    let mut st = RmspropState::new(&p);
    let cfg = RmspropConfig { weight_decay: 0.0, ..RmspropConfig::default() };
    rmsprop_step(&mut p, &g, &mut st, &cfg).unwrap();
    let want = -1e-3 / (0.01f64.sqrt() + 1e-8);
    assert!((p.weight.data()[0] - want).abs() < 1e-15);
    assert!((want + 9.99999e-3).abs() < 1e-8);
}
