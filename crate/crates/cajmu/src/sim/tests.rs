use std::fs;

use super::*;
use crate::error::Error;

#[test]
fn same_seed_is_bitwise_identical() {
    let cfg = SequenceConfig {
        seed: 7,
        ..SequenceConfig::default()
    };
    let a = generate(&cfg).unwrap();
    let b = generate(&cfg).unwrap();
    assert_eq!(a.gt.len(), cfg.length);
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        assert_eq!(fa.values, fb.values);
    }
    for (ga, gb) in a.gt.iter().zip(&b.gt) {
        assert_eq!((ga.cx, ga.cy, ga.w, ga.h), (gb.cx, gb.cy, gb.w, gb.h));
    }
}

#[test]
fn different_seeds_differ() {
    let a = generate(&SequenceConfig {
        seed: 1,
        ..SequenceConfig::default()
    })
    .unwrap();
    let b = generate(&SequenceConfig {
        seed: 2,
        ..SequenceConfig::default()
    })
    .unwrap();
    assert_ne!(a.frames[0].values, b.frames[0].values);
}

#[test]
fn static_config_produces_constant_frames() {
    let cfg = SequenceConfig {
        velocity: 0.0,
        jitter_std: 0.0,
        drift_rate: 0.0,
        noise_std: 0.0,
        distractor_count: 0,
        seed: 3,
        ..SequenceConfig::default()
    };
    let rec = generate(&cfg).unwrap();
    for frame in &rec.frames[1..] {
        assert_eq!(frame.values, rec.frames[0].values);
    }
    for b in &rec.gt[1..] {
        assert_eq!((b.cx, b.cy), (rec.gt[0].cx, rec.gt[0].cy));
    }
}

#[test]
fn ground_truth_stays_inside_frame() {
    for seed in 0..20 {
        let cfg = SequenceConfig {
            seed,
            velocity: 2.5,
            jitter_std: 1.0,
            ..SequenceConfig::default()
        };
        let rec = generate(&cfg).unwrap();
        let (h, w) = cfg.frame_size;
        for b in &rec.gt {
            assert!(b.x0() >= -1e-9 && b.x1() <= w as f64 + 1e-9, "{b:?}");
            assert!(b.y0() >= -1e-9 && b.y1() <= h as f64 + 1e-9, "{b:?}");
        }
    }
}

#[test]
fn frames_are_finite_and_nonempty() {
    let rec = generate(&SequenceConfig::default()).unwrap();
    for frame in &rec.frames {
        assert!(frame.is_finite());
        assert!(frame.values.iter().any(|&v| v.abs() > 1e-6));
    }
}

#[test]
fn rejects_degenerate_configs() {
    let too_big = SequenceConfig {
        target_size_range: (8.0, 64.0),
        ..SequenceConfig::default()
    };
    assert!(generate(&too_big).is_err());
    let empty = SequenceConfig {
        length: 0,
        ..SequenceConfig::default()
    };
    assert!(generate(&empty).is_err());
}

#[test]
fn round_trip_preserves_frames_at_f32_and_boxes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.cseq");
    let rec = generate(&SequenceConfig {
        seed: 11,
        length: 6,
        ..SequenceConfig::default()
    })
    .unwrap();
    save_sequence(&rec, &path).unwrap();
    let loaded = load_sequence(&path).unwrap();
    assert_eq!(loaded.config, rec.config);
    assert_eq!(loaded.gt.len(), rec.gt.len());
    for (a, b) in loaded.gt.iter().zip(&rec.gt) {
        // Boxes are stored as f64 and must survive untouched.
        assert_eq!((a.cx, a.cy, a.w, a.h), (b.cx, b.cy, b.w, b.h));
    }
    for (fa, fb) in loaded.frames.iter().zip(&rec.frames) {
        assert_eq!(fa.shape, fb.shape);
        for (&x, &y) in fa.values.iter().zip(&fb.values) {
            assert_eq!(x, y as f32 as f64);
        }
    }
    // A second save of the loaded record must be byte-identical.
    let path2 = dir.path().join("seq2.cseq");
    save_sequence(&loaded, &path2).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
}

#[test]
fn rejects_corrupted_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.cseq");
    let rec = generate(&SequenceConfig {
        length: 3,
        ..SequenceConfig::default()
    })
    .unwrap();
    save_sequence(&rec, &path).unwrap();
    let bytes = fs::read(&path).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let p = dir.path().join("bad_magic.cseq");
    fs::write(&p, &bad_magic).unwrap();
    assert!(matches!(load_sequence(&p), Err(Error::Format(_))));

    let p = dir.path().join("truncated.cseq");
    fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_sequence(&p), Err(Error::Format(_))));

    let mut trailing = bytes.clone();
    trailing.push(0);
    let p = dir.path().join("trailing.cseq");
    fs::write(&p, &trailing).unwrap();
    assert!(matches!(load_sequence(&p), Err(Error::Format(_))));
}
