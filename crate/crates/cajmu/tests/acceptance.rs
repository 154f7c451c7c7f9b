//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line. Run with `--nocapture` to see the lines for passing
//! criteria:
//!
//! ```text
//! cargo test --test acceptance -- --nocapture --test-threads=1
//! ```

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cajmu::eval::{ablate, run_vot_reset, success_auc, FrameStatus, Tracker};
use cajmu::gradcheck::{run_meta_suite, run_op_suite};
use cajmu::meta::{
    inner_loop, init_alpha_params, online_init, stage1_train, stage2_meta_train,
    weighted_test_loss, AlphaMap, MetaConfig, MetaState,
};
use cajmu::online::Variant;
use cajmu::sim::{generate, SequenceConfig, SequenceRecord};
use cajmu::tensor::{BoundParams, Graph, ParamSet, Tensor, TensorData};
use cajmu::tracker::{hinge_residual, init_tracker_params, BBox, TrackerConfig};
use cajmu::updater::{init_updater_params, SampleBuffer};
use cajmu::Result;

fn verdict(n: usize, name: &str, passed: bool, detail: &str) {
    println!(
        "[acceptance] criterion {n} ({name}): {} — {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {n} ({name}) failed: {detail}");
}

/// One-sided paired sign test: probability of at least `wins` successes in
/// `wins + losses` fair coin flips (ties dropped beforehand).
fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let ln_fact = |m: usize| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    let mut p = 0.0;
    for k in wins..=n {
        let ln_c = ln_fact(n) - ln_fact(k) - ln_fact(n - k);
        p += (ln_c - n as f64 * 2f64.ln()).exp();
    }
    p
}

// --- criterion 1: op-level gradient oracle ---

#[test]
fn criterion_1_op_gradient_suite() {
    let start = Instant::now();
    let results = run_op_suite(100, 0xacce97).unwrap();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .unwrap();
    let all_pass = results.iter().all(|r| r.passed && r.trials == 100);
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        1,
        "op gradient oracle",
        all_pass && elapsed < 120.0,
        &format!(
            "{} ops x 100 trials, worst {} rel err {:.2e}, {elapsed:.1}s",
            results.len(),
            worst.name,
            worst.max_rel_err
        ),
    );
}

// --- criterion 2: meta-gradient oracle ---

fn scalar_closed_form_err() -> f64 {
    // Inner M(theta) = theta^2/2, one step with rate alpha; outer theta1^2/2.
    let theta0 = 1.7;
    let alpha = 0.25;
    let mut params = ParamSet::new();
    params.insert("theta", TensorData::scalar(theta0));
    params.insert("alpha.0.theta", TensorData::scalar(alpha));
    let g = Graph::new();
    let bound = g.bind(&params);
    let half_square = |b: &BoundParams| -> Result<Tensor> {
        let t = b.get("theta")?;
        Ok(t.mul(&t)?.mul_scalar(0.5))
    };
    let alphas: Vec<AlphaMap> = vec![[(
        "theta".to_string(),
        bound.get("alpha.0.theta").unwrap(),
    )]
    .into_iter()
    .collect()];
    let traj = inner_loop(&bound, &["theta".to_string()], &alphas, half_square).unwrap();
    let outer = weighted_test_loss(&bound, &traj, &[0.0, 1.0], half_square).unwrap();
    let rec = g.backward(&outer, &bound).unwrap();
    let d_theta = rec.get("theta").unwrap().values[0];
    let d_alpha = rec.get("alpha.0.theta").unwrap().values[0];
    let e1 = (d_theta - (1.0 - alpha).powi(2) * theta0).abs();
    let e2 = (d_alpha + (1.0 - alpha) * theta0 * theta0).abs();
    e1.max(e2)
}

#[test]
fn criterion_2_meta_gradient_oracle() {
    let start = Instant::now();
    let results = run_meta_suite(5, 0xacce97).unwrap();
    let fd_ok = results.iter().all(|r| r.passed);
    let worst = results
        .iter()
        .map(|r| r.max_rel_err)
        .fold(0.0f64, f64::max);
    let scalar_err = scalar_closed_form_err();
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        2,
        "meta-gradient oracle",
        fd_ok && scalar_err < 1e-10 && elapsed < 180.0,
        &format!(
            "K in {{1,2,3}} worst FD rel err {worst:.2e}, scalar closed form err {scalar_err:.2e}, {elapsed:.1}s"
        ),
    );
}

// --- criterion 3: equation unit suite ---

#[test]
fn criterion_3_equation_units() {
    // Hinge branch table on 1x1 score maps.
    let eval = |s: f64, z: f64| -> f64 {
        let g = Graph::new();
        let score = g.constant(&TensorData::new(vec![1, 1], vec![s]).unwrap());
        let label = TensorData::new(vec![1, 1], vec![z]).unwrap();
        hinge_residual(&score, &label, 0.05).unwrap().data().values[0]
    };
    let branch_ok = (eval(0.7, 0.9) - (-0.2)).abs() < 1e-15
        && eval(-0.3, 0.0).abs() < 1e-15
        && (eval(0.4, 0.02) - 0.4).abs() < 1e-15;

    // Identity affinity leaves both branches untouched.
    let tcfg = TrackerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rand = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
        let n: usize = shape.iter().product();
        TensorData::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let feat = rand(vec![tcfg.c_cls, 8, 8], &mut rng);
    let filt = rand(vec![tcfg.c_cls, 3, 3], &mut rng);
    let ones = TensorData::new(vec![tcfg.c_cls], vec![1.0; tcfg.c_cls]).unwrap();
    let g = Graph::new();
    let adapted = cajmu::updater::adapt_localization(
        &g.constant(&feat),
        &g.constant(&ones),
        &g.constant(&filt),
    )
    .unwrap()
    .data();
    let plain = g
        .constant(&feat)
        .cross_correlate(&g.constant(&filt))
        .unwrap()
        .data();
    let identity_ok = adapted
        .values
        .iter()
        .zip(&plain.values)
        .all(|(a, b)| (a - b).abs() < 1e-10);

    // Weighted multi-step loss with constant per-step loss 2.0.
    let params = ParamSet::new();
    let g2 = Graph::new();
    let bound = g2.bind(&params);
    let traj = vec![std::collections::BTreeMap::new(); 6];
    let v = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0];
    let total = weighted_test_loss(&bound, &traj, &v, |_| Ok(g2.scalar(2.0)))
        .unwrap()
        .item()
        .unwrap();
    let weighted_ok = (total - 6.2).abs() < 1e-12;

    verdict(
        3,
        "equation unit suite",
        branch_ok && identity_ok && weighted_ok,
        &format!("hinge branches {branch_ok}, identity affinity {identity_ok}, weighted sum = {total}"),
    );
}

// --- criterion 4: buffer FIFO protocol ---

#[test]
fn criterion_4_buffer_fifo_protocol() {
    let mut violations = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..1000 {
        let mut buffer = SampleBuffer::new(50);
        let mut model: Vec<(usize, f64)> = Vec::new();
        let ops = rng.gen_range(1..120);
        for op in 0..ops {
            let conf: f64 = rng.gen_range(-0.2..1.2);
            let threshold = rng.gen_range(0.0..1.0);
            let feature = std::rc::Rc::new(TensorData::scalar(op as f64));
            let bbox = BBox::new(8.0, 8.0, 4.0, 4.0).unwrap();
            let accepted = buffer.insert(feature, bbox, conf, threshold);
            let expect = conf.is_finite() && conf >= threshold;
            if accepted != expect {
                violations += 1;
            }
            if expect {
                if model.len() == 50 {
                    model.remove(0);
                }
                model.push((op, conf));
            }
            if buffer.len() != model.len() {
                violations += 1;
            }
            for (entry, (id, c)) in buffer.entries().iter().zip(&model) {
                if entry.feature.values[0] != *id as f64 || entry.confidence != *c {
                    violations += 1;
                }
            }
        }
    }
    verdict(
        4,
        "buffer FIFO protocol",
        violations == 0,
        &format!("1000 scripts against the reference model, {violations} violations"),
    );
}

// --- criterion 5: protocol arithmetic ---

struct Scripted {
    script: Vec<BBox>,
    cursor: usize,
}
impl Tracker for Scripted {
    fn init(&mut self, _f: &TensorData, _b: &BBox) -> Result<()> {
        Ok(())
    }
    fn step(&mut self, _f: &TensorData) -> Result<BBox> {
        let b = self.script[self.cursor];
        self.cursor += 1;
        Ok(b)
    }
}

#[test]
fn criterion_5_protocol_arithmetic() {
    // IoU 1/7 case.
    let a = BBox::new(1.0, 1.0, 2.0, 2.0).unwrap();
    let shifted = BBox::new(2.0, 2.0, 2.0, 2.0).unwrap();
    let iou_ok = (a.iou(&shifted) - 1.0 / 7.0).abs() < 1e-15;

    // AUC enumerations.
    let auc_ok = (success_auc(&vec![0.5; 10]).unwrap() - 10.0 / 21.0).abs() < 1e-15
        && (success_auc(&vec![1.0; 10]).unwrap() - 20.0 / 21.0).abs() < 1e-15;

    // VOT reset script: failure at frame 7, reinit at frame 12.
    let seq = generate(&SequenceConfig {
        length: 20,
        seed: 5,
        ..SequenceConfig::default()
    })
    .unwrap();
    let mut script: Vec<BBox> = (1..7).map(|i| seq.gt[i]).collect();
    script.push(BBox::new(1.0, 1.0, 1.0, 1.0).unwrap());
    script.extend((13..20).map(|i| seq.gt[i]));
    let mut tracker = Scripted { script, cursor: 0 };
    let (traj, metrics) = run_vot_reset(&mut tracker, &seq).unwrap();
    let vot_ok = traj.reset_events == vec![12]
        && metrics.robustness == 1
        && traj.status[7] == FrameStatus::Failure
        && (8..=12).all(|i| traj.status[i] == FrameStatus::Skipped)
        && metrics.tracked_frames + metrics.skipped_frames + metrics.robustness == 20;

    verdict(
        5,
        "protocol arithmetic",
        iou_ok && auc_ok && vot_ok,
        &format!("iou 1/7 {iou_ok}, auc grid {auc_ok}, reset script {vot_ok}"),
    );
}

// --- shared trained fixture for criteria 6 and 7 ---

struct Fixture {
    tcfg: TrackerConfig,
    mcfg: MetaConfig,
    state: MetaState,
    eval_corpus: Vec<SequenceRecord>,
}

fn train_meta_cfg() -> MetaConfig {
    MetaConfig {
        epochs_stage1: 4,
        epochs_stage2: 12,
        lr_theta: 5e-4,
        lr_alpha: 3e-3,
        ..MetaConfig::default()
    }
}

fn fixture_sequence_cfg(length: usize, seed: u64) -> SequenceConfig {
    // Drifting appearance, similar distractors, and scale variation: the
    // regime where joint adaptation is supposed to pay off.
    SequenceConfig {
        length,
        drift_rate: 0.4,
        distractor_count: 4,
        distractor_similarity: 0.8,
        scale_walk: 0.06,
        seed,
        ..SequenceConfig::default()
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let tcfg = TrackerConfig::default();
        let mcfg = train_meta_cfg();
        let train_corpus: Vec<SequenceRecord> = (0..12)
            .map(|i| generate(&fixture_sequence_cfg(10, 1000 + i)).unwrap())
            .collect();
        let mut params = init_tracker_params(&tcfg, 7);
        params.merge(init_updater_params(&tcfg, 7));
        stage1_train(&mut params, &train_corpus, &tcfg, &mcfg, 7).unwrap();
        let (state, _) = stage2_meta_train(params, &train_corpus, &tcfg, &mcfg, 7).unwrap();
        let eval_corpus = (0..36)
            .map(|i| generate(&fixture_sequence_cfg(24, 2000 + i)).unwrap())
            .collect();
        Fixture {
            tcfg,
            mcfg,
            state,
            eval_corpus,
        }
    })
}

// --- criterion 6: ablation direction ---

#[test]
fn criterion_6_ablation_direction() {
    let start = Instant::now();
    let fx = fixture();
    let variants = Variant::all();
    let rows = ablate(
        &fx.state.params,
        &variants,
        &fx.eval_corpus,
        &fx.tcfg,
        &fx.mcfg,
        31,
    )
    .unwrap();
    let by_name = |name: &str| rows.iter().find(|r| r.variant == name).unwrap();
    let mut details = Vec::new();
    let mut all_ok = true;
    let mut pairwise = |better: &str, worse: &str| {
        let b = by_name(better);
        let w = by_name(worse);
        let mut wins = 0;
        let mut losses = 0;
        for (x, y) in b.per_sequence_iou.iter().zip(&w.per_sequence_iou) {
            if x > y {
                wins += 1;
            } else if x < y {
                losses += 1;
            }
        }
        let p = sign_test_p(wins, losses);
        let mean_ok = b.mean_iou >= w.mean_iou;
        let ok = mean_ok && p < 0.05;
        details.push(format!(
            "{better}>{worse}: means {:.3}/{:.3}, wins {wins}-{losses}, p={p:.4} {}",
            b.mean_iou,
            w.mean_iou,
            if ok { "ok" } else { "NOT OK" }
        ));
        all_ok &= ok;
    };
    pairwise("full", "cls-only");
    pairwise("full", "reg-only");
    for v in ["cls-only", "reg-only", "joint", "full"] {
        pairwise(v, "identity");
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        6,
        "ablation direction",
        all_ok && elapsed < 1200.0,
        &format!("{} ({elapsed:.0}s)", details.join("; ")),
    );
}

// --- criterion 7: meta-initialization benefit ---

#[test]
fn criterion_7_meta_init_benefit() {
    let start = Instant::now();
    let fx = fixture();
    // Randomly initialized theta baseline: fresh affinity heads and default
    // inner rates on top of the same aggregation/backbone weights.
    let mut random_theta = fx.state.params.clone();
    let fresh = {
        let mut p = init_tracker_params(&fx.tcfg, 999);
        p.merge(init_updater_params(&fx.tcfg, 999));
        p
    };
    for path in cajmu::updater::theta_paths() {
        *random_theta.get_mut(&path).unwrap() = fresh.get(&path).unwrap().clone();
    }
    for (path, t) in init_alpha_params(&fx.mcfg).iter() {
        *random_theta.get_mut(path).unwrap() = t.clone();
    }

    let mut wins = 0;
    let mut losses = 0;
    let mut mean_meta = 0.0;
    let mut mean_rand = 0.0;
    for (i, seq) in fx.eval_corpus.iter().enumerate() {
        let seed = 500 + i as u64;
        let (_, meta_losses) = online_init(
            &fx.state.params,
            &seq.frames[0],
            &seq.gt[0],
            &fx.tcfg,
            &fx.mcfg,
            seed,
        )
        .unwrap();
        let (_, rand_losses) = online_init(
            &random_theta,
            &seq.frames[0],
            &seq.gt[0],
            &fx.tcfg,
            &fx.mcfg,
            seed,
        )
        .unwrap();
        // Relative support-loss reduction over the K inner steps.
        let red = |l: &[f64]| (l[0] - l[l.len() - 1]) / l[0].max(1e-12);
        let m = red(&meta_losses);
        let r = red(&rand_losses);
        mean_meta += m;
        mean_rand += r;
        if m > r {
            wins += 1;
        } else if m < r {
            losses += 1;
        }
    }
    let n = fx.eval_corpus.len() as f64;
    let p = sign_test_p(wins, losses);
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        7,
        "meta-initialization benefit",
        p < 0.05 && elapsed < 600.0,
        &format!(
            "mean reduction meta {:.4} vs random {:.4}, wins {wins}-{losses}, p={p:.4}, {elapsed:.0}s",
            mean_meta / n,
            mean_rand / n
        ),
    );
}

// --- criterion 8: end-to-end determinism ---

#[test]
fn criterion_8_pipeline_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "seed": 13,
            "data": {"length": 6},
            "meta": {"k": 2, "v": [0.2, 0.6, 1.0], "epochs_stage1": 1, "epochs_stage2": 1,
                     "batch_episodes": 2, "episode_len": 4, "episode_filter_steps": 8,
                     "proposals_per_sample": 4}
        }"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_cajmu");
    let run_pipeline = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let root = dir.path().join(tag);
        std::fs::create_dir_all(&root).unwrap();
        let data = root.join("data");
        let sh = |args: &[&str]| {
            let out = std::process::Command::new(bin).args(args).output().unwrap();
            assert!(
                out.status.success(),
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        };
        let cfg = cfg_path.to_str().unwrap();
        sh(&["gen", "--config", cfg, "--count", "2", "--out", data.to_str().unwrap()]);
        let s1 = root.join("stage1.json");
        sh(&["train", "--config", cfg, "--stage", "1", "--data", data.to_str().unwrap(), "--out", s1.to_str().unwrap()]);
        let s2 = root.join("stage2.json");
        sh(&["train", "--config", cfg, "--stage", "2", "--data", data.to_str().unwrap(), "--checkpoint", s1.to_str().unwrap(), "--out", s2.to_str().unwrap()]);
        let traj = root.join("traj.json");
        sh(&["track", "--config", cfg, "--checkpoint", s2.to_str().unwrap(), "--seq", data.join("seq_0000.cseq").to_str().unwrap(), "--out", traj.to_str().unwrap()]);
        let report = root.join("ope.json");
        sh(&["eval", "--config", cfg, "--protocol", "ope", "--checkpoint", s2.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", report.to_str().unwrap()]);
        let mut artifacts = Vec::new();
        for rel in [
            "data/seq_0000.cseq",
            "data/seq_0001.cseq",
            "data/index.json",
            "stage1.json",
            "stage1.log.jsonl",
            "stage2.json",
            "stage2.log.jsonl",
            "traj.json",
            "ope.json",
            "ope.curve.csv",
        ] {
            artifacts.push((rel.to_string(), std::fs::read(root.join(rel)).unwrap()));
        }
        artifacts
    };
    let a = run_pipeline("a");
    let b = run_pipeline("b");
    let mut mismatched = Vec::new();
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        if x != y {
            mismatched.push(name.clone());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        8,
        "end-to-end determinism",
        mismatched.is_empty() && elapsed < 1800.0,
        &format!(
            "{} artifacts byte-compared, mismatches: {:?}, {elapsed:.0}s",
            a.len(),
            mismatched
        ),
    );
}
