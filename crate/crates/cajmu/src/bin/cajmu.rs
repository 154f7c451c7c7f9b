use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use cajmu::config::{Checkpoint, RunConfig};
use cajmu::error::{Error, Result};
use cajmu::eval::{
    ablate, ope_metrics, per_frame_iou, run_ope, run_vot_reset, success_auc, LiveTracker,
    MetricReport, TrajectoryResult,
};
use cajmu::gradcheck::{require_all_passed, run_meta_suite, run_op_suite, CheckResult};
use cajmu::meta::{stage1_train, stage2_meta_train, LogLine};
use cajmu::online::{TrackerSession, Variant};
use cajmu::sim::{generate, load_sequence, save_sequence, SequenceConfig, SequenceRecord};
use cajmu::tensor::ParamSet;
use cajmu::tracker::{init_tracker_params, BBox};
use cajmu::updater::init_updater_params;

#[derive(Parser)]
#[command(name = "cajmu", version, about = "Context-aware joint meta-updating tracker")]
struct Cli {
    /// JSON run configuration; documented defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for corpus-level work (default: available cores).
    /// Reduction order is deterministic regardless of the thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a corpus of synthetic sequences plus an index file.
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training stage and write a checkpoint plus a JSONL log.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Directory of CSEQ files (from `gen`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 checkpoint; required for --stage 2.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Track one sequence and write the trajectory document.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Score trajectories under a protocol and write metric reports.
    Eval {
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of CSEQ files or a single .cseq file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        variant: String,
        /// Score a saved trajectory document (OPE only) instead of running
        /// the tracker live.
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Evaluate updater variants over a corpus; writes CSV and JSON tables.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Output path prefix; `.csv` and `.json` are appended.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "identity,cls-only,reg-only,joint,full")]
        variants: String,
    },
    /// Finite-difference verification of op or meta gradients.
    Gradcheck {
        #[arg(long, default_value = "op")]
        scope: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Test fixture: force the named check to report failure.
        #[arg(long, hide = true)]
        inject_failure: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::resolved_default()?,
    };
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    match cli.cmd {
        Cmd::Gen { count, out } => cmd_gen(&cfg, count, &out, threads),
        Cmd::Train {
            stage,
            data,
            out,
            checkpoint,
        } => cmd_train(&cfg, stage, &data, &out, checkpoint.as_deref()),
        Cmd::Track {
            checkpoint,
            seq,
            out,
            variant,
        } => cmd_track(&cfg, &checkpoint, &seq, &out, &variant),
        Cmd::Eval {
            protocol,
            checkpoint,
            data,
            out,
            variant,
            traj,
        } => cmd_eval(&cfg, &protocol, &checkpoint, &data, &out, &variant, traj.as_deref(), threads),
        Cmd::Ablate {
            checkpoint,
            corpus,
            out,
            variants,
        } => cmd_ablate(&cfg, &checkpoint, &corpus, &out, &variants),
        Cmd::Gradcheck {
            scope,
            trials,
            inject_failure,
        } => cmd_gradcheck(&cfg, &scope, trials, inject_failure.as_deref()),
    }
}

/// Run `f(0..n)` on up to `threads` workers, collecting results in index
/// order so the reduction is deterministic.
fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = f(i);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

// --- gen ---

fn cmd_gen(cfg: &RunConfig, count: usize, out: &Path, threads: usize) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let entries = parallel_map(count, threads, |i| {
        let seq_cfg = SequenceConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.data.clone()
        };
        let record = generate(&seq_cfg)?;
        let file = format!("seq_{i:04}.cseq");
        save_sequence(&record, &out.join(&file))?;
        Ok(json!({
            "file": file,
            "seed": seq_cfg.seed,
            "length": seq_cfg.length,
        }))
    })?;
    let index = json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "entries": entries,
    });
    write_json(&out.join("index.json"), &index)?;
    println!("wrote {count} sequences to {}", out.display());
    Ok(())
}

// --- corpus loading ---

fn load_corpus(data: &Path) -> Result<Vec<(String, SequenceRecord)>> {
    if data.is_file() {
        let id = data.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        return Ok(vec![(id, load_sequence(data)?)]);
    }
    if !data.is_dir() {
        return Err(Error::MissingPrerequisite(format!(
            "data path {} does not exist",
            data.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cseq"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::MissingPrerequisite(format!(
            "no .cseq files in {}",
            data.display()
        )));
    }
    files
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, load_sequence(p)?))
        })
        .collect()
}

// --- train ---

fn write_log(path: &Path, log: &[LogLine]) -> Result<()> {
    let mut text = String::new();
    for line in log {
        text.push_str(&serde_json::to_string(line)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_train(
    cfg: &RunConfig,
    stage: u8,
    data: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<()> {
    let corpus: Vec<SequenceRecord> = load_corpus(data)?.into_iter().map(|(_, r)| r).collect();
    let log_path = out.with_extension("log.jsonl");
    match stage {
        1 => {
            let mut params = init_tracker_params(&cfg.tracker, cfg.seed);
            params.merge(init_updater_params(&cfg.tracker, cfg.seed));
            let log = stage1_train(&mut params, &corpus, &cfg.tracker, &cfg.meta, cfg.seed)?;
            Checkpoint {
                stage: 1,
                seed: cfg.seed,
                config_hash: cfg.hash(),
                params,
                v: None,
            }
            .save(out)?;
            write_log(&log_path, &log)?;
        }
        2 => {
            let prev_path = checkpoint.ok_or_else(|| {
                Error::MissingPrerequisite("--stage 2 requires --checkpoint <stage-1 checkpoint>".to_string())
            })?;
            let prev = Checkpoint::load(prev_path)?;
            if prev.stage != 1 {
                return Err(Error::Incompatible(format!(
                    "stage 2 needs a stage-1 checkpoint, got stage {}",
                    prev.stage
                )));
            }
            let (state, log) =
                stage2_meta_train(prev.params, &corpus, &cfg.tracker, &cfg.meta, cfg.seed)?;
            Checkpoint {
                stage: 2,
                seed: cfg.seed,
                config_hash: cfg.hash(),
                params: state.params,
                v: Some(state.v),
            }
            .save(out)?;
            write_log(&log_path, &log)?;
        }
        _ => unreachable!("clap bounds the stage"),
    }
    println!("stage {stage} checkpoint written to {}", out.display());
    Ok(())
}

// --- track ---

fn check_compat(cfg: &RunConfig, params: &ParamSet) -> Result<()> {
    let conv2 = params.get("backbone.conv2")?;
    if conv2.shape[0] != cfg.tracker.c_cls {
        return Err(Error::Incompatible(format!(
            "checkpoint has {} classification channels, config expects {}",
            conv2.shape[0], cfg.tracker.c_cls
        )));
    }
    Ok(())
}

fn resolve_variant(params: &ParamSet, name: &str) -> Result<Variant> {
    let variant = Variant::parse(name)?;
    if variant == Variant::Full && !params.contains("alpha.0.aware.loc_w") {
        return Err(Error::MissingPrerequisite(
            "variant 'full' needs a stage-2 (meta-trained) checkpoint".to_string(),
        ));
    }
    Ok(variant)
}

#[derive(Serialize)]
struct TrackDoc {
    sequence_id: String,
    config_hash: String,
    seed: u64,
    variant: String,
    boxes: Vec<[f64; 4]>,
    confidences: Vec<f64>,
    events: Vec<serde_json::Value>,
}

fn box_array(b: &BBox) -> [f64; 4] {
    [b.cx, b.cy, b.w, b.h]
}

fn cmd_track(cfg: &RunConfig, checkpoint: &Path, seq: &Path, out: &Path, variant: &str) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    check_compat(cfg, &ckpt.params)?;
    let variant = resolve_variant(&ckpt.params, variant)?;
    let record = load_sequence(seq)?;
    let mut session = TrackerSession::init(
        &ckpt.params,
        &record.frames[0],
        &record.gt[0],
        variant,
        &cfg.tracker,
        &cfg.meta,
        cfg.seed,
    )?;
    let mut doc = TrackDoc {
        sequence_id: seq.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        variant: variant.name().to_string(),
        boxes: vec![box_array(&record.gt[0])],
        confidences: vec![1.0],
        events: Vec::new(),
    };
    for (i, frame) in record.frames[1..].iter().enumerate() {
        let r = session.track(frame)?;
        doc.boxes.push(box_array(&r.bbox));
        doc.confidences.push(r.confidence);
        if r.buffer_updated || r.fallback {
            doc.events.push(json!({
                "frame": i + 1,
                "buffer_updated": r.buffer_updated,
                "fallback": r.fallback,
            }));
        }
    }
    write_json(out, &doc)?;
    println!("trajectory written to {}", out.display());
    Ok(())
}

// --- eval ---

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &RunConfig,
    protocol: &str,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    variant: &str,
    traj: Option<&Path>,
    threads: usize,
) -> Result<()> {
    if protocol != "ope" && protocol != "vot" {
        return Err(Error::invalid(format!(
            "unknown protocol '{protocol}' (expected 'ope' or 'vot')"
        )));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    check_compat(cfg, &ckpt.params)?;
    let variant = resolve_variant(&ckpt.params, variant)?;
    let corpus = load_corpus(data)?;

    let reports: Vec<MetricReport> = if let Some(traj_path) = traj {
        if protocol != "ope" {
            return Err(Error::invalid(
                "--traj scoring only supports the ope protocol; vot needs a live tracker".to_string(),
            ));
        }
        if corpus.len() != 1 {
            return Err(Error::invalid(
                "--traj scoring expects --data to name a single sequence file".to_string(),
            ));
        }
        let text = std::fs::read_to_string(traj_path)?;
        let doc: serde_json::Value = serde_json::from_str(&text)?;
        let boxes = doc["boxes"]
            .as_array()
            .ok_or_else(|| Error::Format("trajectory document lacks 'boxes'".to_string()))?;
        let predicted: Vec<BBox> = boxes
            .iter()
            .map(|b| {
                let v: Vec<f64> = serde_json::from_value(b.clone())?;
                BBox::new(v[0], v[1], v[2], v[3])
            })
            .collect::<Result<_>>()?;
        let (id, record) = &corpus[0];
        if predicted.len() != record.gt.len() {
            return Err(Error::Incompatible(format!(
                "trajectory has {} boxes, sequence has {} frames",
                predicted.len(),
                record.gt.len()
            )));
        }
        let tr = TrajectoryResult {
            predicted,
            gt: record.gt.clone(),
            reset_events: Vec::new(),
            status: vec![cajmu::eval::FrameStatus::Tracked; record.gt.len()],
        };
        vec![report_for(cfg, id, protocol, &tr, json!(ope_metrics(&tr)?))]
    } else {
        parallel_map(corpus.len(), threads, |i| {
            let (id, record) = &corpus[i];
            let mut tracker = LiveTracker::new(
                &ckpt.params,
                &cfg.tracker,
                &cfg.meta,
                variant,
                cfg.seed.wrapping_add(i as u64),
            );
            let (tr, metrics) = match protocol {
                "ope" => {
                    let tr = run_ope(&mut tracker, record)?;
                    let m = json!(ope_metrics(&tr)?);
                    (tr, m)
                }
                _ => {
                    let (tr, m) = run_vot_reset(&mut tracker, record)?;
                    (tr, json!(m))
                }
            };
            Ok(report_for(cfg, id, protocol, &tr, metrics))
        })?
    };

    write_json(out, &reports)?;
    write_success_curve(&out.with_extension("curve.csv"), &reports)?;
    println!("{} report(s) written to {}", reports.len(), out.display());
    Ok(())
}

fn report_for(
    cfg: &RunConfig,
    id: &str,
    protocol: &str,
    tr: &TrajectoryResult,
    metrics: serde_json::Value,
) -> MetricReport {
    MetricReport {
        sequence_id: id.to_string(),
        protocol: protocol.to_string(),
        per_frame_iou: per_frame_iou(tr),
        metrics,
        reset_events: tr.reset_events.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

/// Plot-ready success curve over the pooled per-frame overlaps.
fn write_success_curve(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let overlaps: Vec<f64> = reports.iter().flat_map(|r| r.per_frame_iou.iter().copied()).collect();
    let mut text = String::from("threshold,success_fraction\n");
    for i in 0..cajmu::eval::SUCCESS_THRESHOLDS {
        let t = i as f64 * 0.05;
        let frac = overlaps.iter().filter(|&&o| o > t).count() as f64 / overlaps.len() as f64;
        text.push_str(&format!("{t:.2},{frac}\n"));
    }
    // Consistency: the mean of the curve equals the reported AUC.
    debug_assert!((success_auc(&overlaps).unwrap_or(0.0)).is_finite());
    std::fs::write(path, text)?;
    Ok(())
}

// --- ablate ---

fn cmd_ablate(cfg: &RunConfig, checkpoint: &Path, corpus_dir: &Path, out: &Path, variants: &str) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    check_compat(cfg, &ckpt.params)?;
    let variants: Vec<Variant> = variants
        .split(',')
        .map(|s| resolve_variant(&ckpt.params, s.trim()))
        .collect::<Result<_>>()?;
    let corpus: Vec<SequenceRecord> = load_corpus(corpus_dir)?.into_iter().map(|(_, r)| r).collect();
    let rows = ablate(&ckpt.params, &variants, &corpus, &cfg.tracker, &cfg.meta, cfg.seed)?;

    let mut csv = String::from("variant,mean_iou,success_auc,precision_at_20,normalized_precision\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant, r.mean_iou, r.success_auc, r.precision_at_20, r.normalized_precision
        ));
    }
    std::fs::write(out.with_extension("csv"), csv)?;
    let doc = json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "rows": rows,
    });
    write_json(&out.with_extension("json"), &doc)?;
    println!("ablation table ({} rows) written to {}.{{csv,json}}", rows.len(), out.display());
    Ok(())
}

// --- gradcheck ---

fn cmd_gradcheck(cfg: &RunConfig, scope: &str, trials: usize, inject_failure: Option<&str>) -> Result<()> {
    let mut results: Vec<CheckResult> = match scope {
        "op" => run_op_suite(trials, cfg.seed)?,
        "meta" => run_meta_suite(trials, cfg.seed)?,
        other => return Err(Error::invalid(format!("unknown scope '{other}' (expected 'op' or 'meta')"))),
    };
    if let Some(name) = inject_failure {
        let hit = results.iter_mut().find(|r| r.name == name);
        match hit {
            Some(r) => r.passed = false,
            None => return Err(Error::invalid(format!("no check named '{name}' in scope '{scope}'"))),
        }
    }
    for r in &results {
        println!(
            "{}: trials={} max_rel_err={:.3e} {}",
            r.name,
            r.trials,
            r.max_rel_err,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    require_all_passed(&results)
}
