use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sragan_core::losses::smse_loss;
use sragan_core::saliency::{iou_hard, iou_hard_items, threshold_hard};
use sragan_core::{
    fid, fit_gaussian, from_unit_range, lr_at, saliency_miou, to_unit_range, ReplayPool, SaliencyDetector, Tape,
    Tensor, TrainConfig, UnpairedSampler,
};

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

fn mask_bits(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n)
}

fn as_map(bits: &[bool], shape: &[usize]) -> Tensor {
    Tensor::new(shape, bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap()
}

/// Random `n × d` feature rows.
fn features(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_range_round_trip(t in tensor(&[2, 3, 4, 4], -1.0, 1.0)) {
        let u = to_unit_range(&t);
        prop_assert!(u.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(from_unit_range(&u).max_abs_diff(&t) < 1e-7);
    }

    #[test]
    fn hard_iou_is_symmetric_and_bounded(a in mask_bits(64), b in mask_bits(64)) {
        let (ma, mb) = (threshold_hard(&as_map(&a, &[1, 1, 8, 8])), threshold_hard(&as_map(&b, &[1, 1, 8, 8])));
        let ab = iou_hard(&ma, &mb).unwrap();
        prop_assert_eq!(ab, iou_hard(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou_hard(&ma, &ma).unwrap(), 1.0);
    }

    #[test]
    fn threshold_output_is_binary(s in tensor(&[1, 1, 8, 8], 0.0, 1.0)) {
        let m = threshold_hard(&s);
        prop_assert!(m.as_tensor().data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn synthetic_saliency_in_unit_interval(img in tensor(&[2, 3, 8, 8], 0.0, 1.0)) {
        let s = SaliencyDetector::Synthetic.detect(&img).unwrap();
        prop_assert_eq!(s.shape(), &[2, 1, 8, 8]);
        prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(s, SaliencyDetector::Synthetic.detect(&img).unwrap());
    }

    #[test]
    fn smse_nonnegative_zero_iff_identical(a in tensor(&[1, 1, 4, 4], 0.0, 1.0), b in tensor(&[1, 1, 4, 4], 0.0, 1.0)) {
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let differ = smse_loss(&mut tape, &[(va, vb)]).unwrap();
        let same = smse_loss(&mut tape, &[(va, va)]).unwrap();
        prop_assert!(tape.value(differ).item() >= 0.0);
        prop_assert_eq!(tape.value(same).item(), 0.0);
        if a != b {
            prop_assert!(tape.value(differ).item() > 0.0);
        }
    }

    #[test]
    fn fid_row_order_invariant(rows in features(12, 3), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = fit_gaussian(&rows).unwrap();
        let b = fit_gaussian(&shuffled).unwrap();
        for (x, y) in a.mu.iter().zip(&b.mu).chain(a.sigma.iter().zip(&b.sigma)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(fid(&a, &b).unwrap() < 1e-8);
    }

    #[test]
    fn fid_symmetric_and_nonnegative(r in features(12, 3), g in features(12, 3)) {
        let (a, b) = (fit_gaussian(&r).unwrap(), fit_gaussian(&g).unwrap());
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0), "{} vs {}", ab, ba);
        prop_assert_eq!(fid(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn miou_in_unit_interval(a in tensor(&[1, 3, 8, 8], -1.0, 1.0), b in tensor(&[1, 3, 8, 8], -1.0, 1.0)) {
        let m = saliency_miou(&[a.clone()], &[b], &SaliencyDetector::Synthetic).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert_eq!(saliency_miou(&[a.clone()], &[a], &SaliencyDetector::Synthetic).unwrap(), 1.0);
    }

    #[test]
    fn lr_nonincreasing(epochs in 2usize..300, frac in 0.0f64..1.0) {
        let decay = ((epochs - 1) as f64 * frac) as usize;
        let c = TrainConfig { epochs, decay_start_epoch: decay, ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..epochs).map(|e| lr_at(&c, e).unwrap()).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(lrs[..=decay].iter().all(|&v| v == c.lr));
        prop_assert!(lrs.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn sampler_replays_from_seed(lx in 1usize..10, ly in 1usize..10, batch in 1usize..3, seed in any::<u64>()) {
        let mut a = UnpairedSampler::new(lx, ly, batch, seed).unwrap();
        let mut b = UnpairedSampler::new(lx, ly, batch, seed).unwrap();
        let (ea, eb) = (a.next_epoch(), b.next_epoch());
        prop_assert_eq!(&ea, &eb);
        prop_assert_eq!(ea.len(), a.iterations_per_epoch());
        for (xs, ys) in &ea {
            prop_assert_eq!(xs.len(), batch);
            prop_assert!(xs.iter().all(|&i| i < lx) && ys.iter().all(|&i| i < ly));
        }
    }

    #[test]
    fn replay_pool_contract(cap in 1usize..6, n in 1usize..20, seed in any::<u64>()) {
        let mut pool = ReplayPool::new(cap);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen: Vec<Tensor> = Vec::new();
        for i in 0..n {
            let img = Tensor::full(&[1, 1, 1, 1], i as f64);
            let out = pool.query(&img, &mut rng).unwrap();
            if i < cap {
                prop_assert_eq!(&out, &img);
            } else {
                prop_assert!(out == img || seen.contains(&out));
                if out != img {
                    seen.retain(|t| t != &out);
                }
            }
            if i < cap || out != img {
                seen.push(img);
            }
            prop_assert!(pool.len() <= cap);
        }
    }
}

/// Brute-force per-cell enumeration used as an IOU oracle.
fn iou_oracle(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0;
    let mut union = 0;
    for i in 0..a.len() {
        if a[i] && b[i] {
            inter += 1;
        }
        if a[i] || b[i] {
            union += 1;
        }
    }
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

proptest! {
    #[test]
    fn hard_iou_matches_enumeration(a in mask_bits(2 * 36), b in mask_bits(2 * 36)) {
        let items = iou_hard_items(
            &threshold_hard(&as_map(&a, &[2, 1, 6, 6])),
            &threshold_hard(&as_map(&b, &[2, 1, 6, 6])),
        ).unwrap();
        prop_assert_eq!(items[0], iou_oracle(&a[..36], &b[..36]));
        prop_assert_eq!(items[1], iou_oracle(&a[36..], &b[36..]));
    }
}
