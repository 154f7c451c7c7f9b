use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{Graph, TensorData};
use crate::tracker::{init_tracker_params, randn_tensor, BBox, TrackerConfig};

fn feat(seed: u64) -> Rc<TensorData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Rc::new(randn_tensor(vec![4, 8, 8], 1.0, &mut rng))
}

fn bx() -> BBox {
    BBox::new(16.0, 16.0, 8.0, 8.0).unwrap()
}

// --- buffer ---

#[test]
fn fifo_eviction_order() {
    let mut buf = SampleBuffer::new(3);
    for i in 0..4u64 {
        assert!(buf.insert(feat(i), bx(), 1.0, 0.0));
    }
    assert_eq!(buf.len(), 3);
    let kept: Vec<f64> = buf
        .entries()
        .iter()
        .map(|e| e.feature.values[0])
        .collect();
    let want: Vec<f64> = (1..4u64).map(|i| feat(i).values[0]).collect();
    assert_eq!(kept, want);
}

#[test]
fn low_confidence_rejected() {
    let mut buf = SampleBuffer::new(3);
    assert!(!buf.insert(feat(0), bx(), 0.1, 0.5));
    assert!(buf.is_empty());
    assert!(!buf.insert(feat(0), bx(), f64::NAN, 0.0));
    assert!(buf.is_empty());
}

#[test]
fn capacity_fifty_holds_fifty() {
    let mut buf = SampleBuffer::new(50);
    let shared = feat(7);
    for _ in 0..50 {
        buf.insert(Rc::clone(&shared), bx(), 1.0, 0.0);
    }
    assert_eq!(buf.len(), 50);
    let marker = feat(8);
    buf.insert(Rc::clone(&marker), bx(), 1.0, 0.0);
    assert_eq!(buf.len(), 50);
    assert!(Rc::ptr_eq(&buf.entries()[49].feature, &marker));
}

#[test]
fn buffer_shares_features_without_copying() {
    let mut buf = SampleBuffer::new(5);
    let f = feat(9);
    buf.insert(Rc::clone(&f), bx(), 1.0, 0.0);
    assert!(Rc::ptr_eq(&buf.entries()[0].feature, &f));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn fifo_matches_reference_model(
        capacity in 1usize..60,
        script in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..120),
    ) {
        let mut buf = SampleBuffer::new(capacity);
        let mut model: Vec<f64> = Vec::new();
        let f = feat(1);
        for (conf, thr) in script {
            let accepted = buf.insert(Rc::clone(&f), bx(), conf, thr);
            prop_assert_eq!(accepted, conf >= thr);
            if conf >= thr {
                model.push(conf);
                if model.len() > capacity {
                    model.remove(0);
                }
            }
            prop_assert_eq!(buf.len(), model.len());
            let got: Vec<f64> = buf.entries().iter().map(|e| e.confidence).collect();
            prop_assert_eq!(&got, &model);
        }
    }
}

// --- context aggregation ---

fn cfg_and_params(seed: u64) -> (TrackerConfig, crate::tensor::ParamSet) {
    let cfg = TrackerConfig::default();
    let mut params = init_tracker_params(&cfg, seed);
    params.merge(init_updater_params(&cfg, seed));
    (cfg, params)
}

fn cls_features(cfg: &TrackerConfig, n: usize, seed: u64) -> Vec<TensorData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| randn_tensor(vec![cfg.c_cls, 8, 8], 0.5, &mut rng))
        .collect()
}

#[test]
fn localization_context_is_nonnegative() {
    let (cfg, params) = cfg_and_params(3);
    let g = Graph::new();
    let bound = g.bind_frozen(&params);
    let samples: Vec<_> = cls_features(&cfg, 3, 4)
        .iter()
        .map(|f| (g.constant(f), bx()))
        .collect();
    let (per_sample, pooled, _) =
        localization_context(&bound, &samples, &cfg, BnMode::Eval).unwrap();
    for xl in &per_sample {
        assert!(xl.values().iter().all(|&v| v >= 0.0));
    }
    assert_eq!(pooled.shape(), vec![cfg.c_cls]);
}

#[test]
fn single_sample_pooled_is_its_own_pool() {
    let (cfg, params) = cfg_and_params(5);
    let g = Graph::new();
    let bound = g.bind_frozen(&params);
    let f = cls_features(&cfg, 1, 6).remove(0);
    let (per_sample, pooled, _) =
        localization_context(&bound, &[(g.constant(&f), bx())], &cfg, BnMode::Eval).unwrap();
    let fb = bx().to_feature(cfg.stride_a() as f64);
    let direct = per_sample[0]
        .prpool(
            &g.scalar(fb.x0()),
            &g.scalar(fb.y0()),
            &g.scalar(fb.x1()),
            &g.scalar(fb.y1()),
            (1, 1),
        )
        .unwrap();
    for (a, b) in pooled.values().iter().zip(&direct.values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn duplicated_buffer_leaves_pooled_unchanged_in_eval_mode() {
    let (cfg, params) = cfg_and_params(7);
    let g = Graph::new();
    let bound = g.bind_frozen(&params);
    let feats = cls_features(&cfg, 3, 8);
    let samples: Vec<_> = feats.iter().map(|f| (g.constant(f), bx())).collect();
    let mut doubled = samples.clone();
    doubled.extend(samples.iter().cloned());
    let (ps1, pooled1, _) = localization_context(&bound, &samples, &cfg, BnMode::Eval).unwrap();
    let (ps2, pooled2, _) = localization_context(&bound, &doubled, &cfg, BnMode::Eval).unwrap();
    for (a, b) in pooled1.values().iter().zip(&pooled2.values()) {
        assert!((a - b).abs() < 1e-10);
    }
    let boxes1 = vec![bx(); 3];
    let boxes2 = vec![bx(); 6];
    let r1 = regression_context(&bound, &ps1, &boxes1, &cfg).unwrap();
    let r2 = regression_context(&bound, &ps2, &boxes2, &cfg).unwrap();
    for (a, b) in r1.values().iter().zip(&r2.values()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn regression_context_linear_and_zero() {
    let (cfg, params) = cfg_and_params(9);
    let g = Graph::new();
    let bound = g.bind_frozen(&params);
    let zero = g.constant(&TensorData::zeros(vec![cfg.c_cls, 8, 8]));
    let r0 = regression_context(&bound, &[zero], &[bx()], &cfg).unwrap();
    assert!(r0.values().iter().all(|&v| v == 0.0));

    let f = cls_features(&cfg, 1, 10).remove(0);
    let x = g.constant(&f);
    let x2 = x.mul_scalar(2.0);
    let r1 = regression_context(&bound, &[x], &[bx()], &cfg).unwrap();
    let r2 = regression_context(&bound, &[x2], &[bx()], &cfg).unwrap();
    for (a, b) in r1.values().iter().zip(&r2.values()) {
        assert!((2.0 * a - b).abs() < 1e-10);
    }
}

#[test]
fn regression_context_length_mismatch_rejected() {
    let (cfg, params) = cfg_and_params(11);
    let g = Graph::new();
    let bound = g.bind_frozen(&params);
    let f = g.constant(&TensorData::zeros(vec![cfg.c_cls, 8, 8]));
    assert!(regression_context(&bound, &[f], &[bx(), bx()], &cfg).is_err());
}

// --- affinity heads ---

#[test]
fn zero_heads_give_half_affinity() {
    let cfg = TrackerConfig::default();
    let mut params = init_updater_params(&cfg, 13);
    for path in theta_paths() {
        let t = params.get_mut(&path).unwrap();
        t.values.iter_mut().for_each(|v| *v = 0.0);
    }
    let g = Graph::new();
    let bound = g.bind_frozen(&params);
    let pl = g.constant(&TensorData::zeros(vec![cfg.c_cls]));
    let pr = g.constant(&TensorData::zeros(vec![cfg.c_mod]));
    let a = make_affinity(&bound, &pl, &pr).unwrap();
    for t in [&a.a_loc, &a.a_reg0, &a.a_reg1] {
        assert!(t.values().iter().all(|&v| v == 0.5));
    }
}

#[test]
fn affinity_always_in_open_unit_interval() {
    let cfg = TrackerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..50 {
        let mut params = init_updater_params(&cfg, trial);
        // Adversarial random weights, kept below the point where an f64
        // sigmoid saturates to exactly 0 or 1 (|pre-activation| ~ 36).
        for path in theta_paths() {
            let t = params.get_mut(&path).unwrap();
            for v in t.values.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let g = Graph::new();
        let bound = g.bind_frozen(&params);
        let pl = g.constant(&randn_tensor(vec![cfg.c_cls], 1.0, &mut rng));
        let pr = g.constant(&randn_tensor(vec![cfg.c_mod], 1.0, &mut rng));
        let a = make_affinity(&bound, &pl, &pr).unwrap();
        for t in [&a.a_loc, &a.a_reg0, &a.a_reg1] {
            assert!(t.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

// --- adaptation ---

#[test]
fn identity_affinity_equals_unadapted_bitwise() {
    let cfg = TrackerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let g = Graph::new();
    let x = g.constant(&randn_tensor(vec![cfg.c_cls, 8, 8], 1.0, &mut rng));
    let filt = g.constant(&randn_tensor(vec![cfg.c_cls, 3, 3], 0.3, &mut rng));
    let ones = g.constant(&TensorData::new(vec![cfg.c_cls], vec![1.0; cfg.c_cls]).unwrap());
    let adapted = adapt_localization(&x, &ones, &filt).unwrap();
    let plain = x.cross_correlate(&filt).unwrap();
    assert_eq!(adapted.values(), plain.values());
}

#[test]
fn zero_affinity_zeroes_score() {
    let cfg = TrackerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let g = Graph::new();
    let x = g.constant(&randn_tensor(vec![cfg.c_cls, 8, 8], 1.0, &mut rng));
    let filt = g.constant(&randn_tensor(vec![cfg.c_cls, 3, 3], 0.3, &mut rng));
    let zeros = g.constant(&TensorData::zeros(vec![cfg.c_cls]));
    let adapted = adapt_localization(&x, &zeros, &filt).unwrap();
    assert!(adapted.values().iter().all(|&v| v == 0.0));
}

#[test]
fn adapt_localization_is_compositional_bitwise() {
    let cfg = TrackerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let g = Graph::new();
    let x = g.constant(&randn_tensor(vec![cfg.c_cls, 8, 8], 1.0, &mut rng));
    let filt = g.constant(&randn_tensor(vec![cfg.c_cls, 3, 3], 0.3, &mut rng));
    let a = g.constant(&randn_tensor(vec![cfg.c_cls], 1.0, &mut rng));
    let fused = adapt_localization(&x, &a, &filt).unwrap();
    let separate = x.channel_scale(&a).unwrap().cross_correlate(&filt).unwrap();
    assert_eq!(fused.values(), separate.values());
}

#[test]
fn adapt_modulation_cases() {
    let cfg = TrackerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let g = Graph::new();
    let m0 = randn_tensor(vec![cfg.c_mod], 1.0, &mut rng);
    let m1 = randn_tensor(vec![cfg.c_mod], 1.0, &mut rng);
    let t0 = g.constant(&m0);
    let t1 = g.constant(&m1);
    let mk = |v: f64| AffinityVectors {
        a_loc: g.constant(&TensorData::new(vec![cfg.c_cls], vec![v; cfg.c_cls]).unwrap()),
        a_reg0: g.constant(&TensorData::new(vec![cfg.c_mod], vec![v; cfg.c_mod]).unwrap()),
        a_reg1: g.constant(&TensorData::new(vec![cfg.c_mod], vec![v; cfg.c_mod]).unwrap()),
    };
    let (u0, u1) = adapt_modulation(&t0, &t1, &mk(1.0)).unwrap();
    assert_eq!(u0.values(), m0.values);
    assert_eq!(u1.values(), m1.values);
    let (h0, _) = adapt_modulation(&t0, &t1, &mk(0.5)).unwrap();
    for (a, b) in h0.values().iter().zip(&m0.values) {
        assert!((a - b / 2.0).abs() < 1e-15);
    }
    let z = g.constant(&TensorData::zeros(vec![cfg.c_mod]));
    let (z0, _) = adapt_modulation(&z, &t1, &mk(0.7)).unwrap();
    assert!(z0.values().iter().all(|&v| v == 0.0));
}

// --- running stats ---

#[test]
fn running_stats_blend_with_momentum() {
    let cfg = TrackerConfig::default();
    let mut params = init_updater_params(&cfg, 37);
    let mu = TensorData::new(vec![cfg.c_cls], vec![2.0; cfg.c_cls]).unwrap();
    let var = TensorData::new(vec![cfg.c_cls], vec![3.0; cfg.c_cls]).unwrap();
    update_running_stats(&mut params, &[(mu, var)]);
    let m = params.get("agg.bn_mean").unwrap();
    let v = params.get("agg.bn_var").unwrap();
    assert!((m.values[0] - BN_MOMENTUM * 2.0).abs() < 1e-15);
    assert!((v.values[0] - ((1.0 - BN_MOMENTUM) + BN_MOMENTUM * 3.0)).abs() < 1e-15);
}
