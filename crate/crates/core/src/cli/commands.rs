use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{Recorder, RUN_MANIFEST_FILE};
use super::{AttachArgs, EvalArgs, FilterArgs, GenDataArgs, KalmanEvalArgs, ReportArgs, TrainArgs};
use crate::config::KvConfig;
use crate::fsutil::write_atomic;
use crate::kalman::{contiguous_windows, evaluate_estimator, segment_trajectory, EstimatorReport, KfParams};
use crate::models::Model;
use crate::nn::{read_checkpoint, save_checkpoint};
use crate::pipeline::{
    apply_aspects, evaluate, predict_aspects, read_aspects_csv, read_results_csv, render_report, split_samples,
    write_aspects_csv, write_results_csv, AspectEstimatorConfig, AspectStatus, EpochLog, MetricsReport, ResultRow,
    Split, TrainConfig, ASPECT_PRED_FILE,
};
use crate::simulator::{
    gen_dataset, load_dataset, read_trajectory_csv, write_dataset, Dataset, DatasetConfig, TrajectoryConfig,
    TrajectorySample,
};
use crate::{Error, Result};

pub(crate) const CHECKPOINT_FILE: &str = "model.ckpt";
pub(crate) const RESULTS_FILE: &str = "results.csv";

pub(crate) fn read_kv(path: &Path) -> Result<KvConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KvConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn read_train_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig> {
    let kv = read_kv(path)?;
    let mut cfg = TrainConfig::from_kv(&kv).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    write_atomic(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_file(path, text.as_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut w = csv::Writer::from_writer(&mut buf);
    f(&mut w).map_err(|e| Error::Data(e.to_string()))?;
    w.flush().map_err(|e| Error::Data(e.to_string()))?;
    drop(w);
    Ok(buf)
}

fn results_bytes(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_results_csv(&mut buf, rows)?;
    Ok(buf)
}

/// Appends to an existing results CSV (or creates it), rewriting atomically.
pub(crate) fn append_results(path: &Path, rows: &[ResultRow]) -> Result<PathBuf> {
    let mut all = if path.exists() {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_results_csv(f)?
    } else {
        Vec::new()
    };
    all.extend_from_slice(rows);
    write_file(path, &results_bytes(&all)?)
}

fn kf_params(f: &FilterArgs, default_sigma: f64) -> KfParams {
    KfParams {
        q: f.q,
        p0: f.p0,
        ..KfParams::for_meas_sigma(f.meas_sigma.unwrap_or(default_sigma))
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let kv = read_kv(&a.config)?;
    let mut cfg = DatasetConfig::from_kv(&kv).map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let rec = Recorder::start("gen-data", Some(&a.config), Some(cfg.seed), &[])?;
    let ds = gen_dataset(&cfg)?;
    write_dataset(&ds, &a.out)?;
    rec.finish(std::slice::from_ref(&a.out), &a.out.join(RUN_MANIFEST_FILE))?;
    println!(
        "wrote {} records, {} classes, {} ships to {}",
        ds.records.len(),
        ds.n_classes(),
        ds.trajectories.len(),
        a.out.display()
    );
    Ok(())
}

fn trajectory_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no trajectory CSVs in {}", path.display())));
    }
    Ok(files)
}

pub fn kalman_eval(a: &KalmanEvalArgs) -> Result<()> {
    if a.k_min < 2 || a.k_max < a.k_min {
        return Err(Error::Usage(format!(
            "need 2 <= --k-min <= --k-max, got {}..={}",
            a.k_min, a.k_max
        )));
    }
    let rec = Recorder::start("kalman-eval", None, None, &[&a.trajectories])?;
    let files = trajectory_files(&a.trajectories)?;
    let mut tracks: Vec<(String, Vec<TrajectorySample>)> = Vec::new();
    for p in &files {
        let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
        let track = read_trajectory_csv(f).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
        let name = p
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        tracks.push((name, track));
    }
    let mut windows = Vec::new();
    let mut sources = Vec::new();
    for (name, track) in &tracks {
        if track.is_empty() {
            continue;
        }
        let segs = segment_trajectory(track, a.filter.max_gap)?;
        let w = contiguous_windows(&segs, a.k_max, a.stride.unwrap_or(a.k_max));
        sources.extend(std::iter::repeat_n(name.as_str(), w.len()));
        windows.extend(w);
    }
    let params = kf_params(&a.filter, TrajectoryConfig::default().meas_sigma);
    let report = evaluate_estimator(
        &windows,
        crate::geometry::PlanarPoint::new(a.radar_x, a.radar_y),
        &params,
        a.k_min,
        a.k_max,
        a.filter.heading,
    )?;
    let mut outputs = vec![write_json(&a.out.join("report.json"), &report)?];
    if !a.no_segment_csv {
        outputs.push(write_file(
            &a.out.join("segments.csv"),
            &segment_csv(&report, &sources)?,
        )?);
    }
    rec.finish(&outputs, &a.out.join(RUN_MANIFEST_FILE))?;
    println!(
        "{} segments: median {:.3} deg, mean {:.3} deg, worst-decile mean {:.3} deg",
        report.segments_evaluated,
        report.segment.median_deg,
        report.segment.mean_deg,
        report.segment.worst_decile_mean_deg
    );
    Ok(())
}

fn segment_csv(report: &EstimatorReport, sources: &[&str]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        let mut header = vec![
            "segment".to_string(),
            "source".into(),
            "t_start".into(),
            "score_deg".into(),
        ];
        header.extend((report.k_min..=report.k_max).map(|k| format!("err_k{k}_deg")));
        w.write_record(&header)?;
        for s in &report.scores {
            let mut row = vec![
                s.segment.to_string(),
                sources[s.segment].to_string(),
                s.t_start.to_string(),
                s.score_deg.to_string(),
            ];
            row.extend(s.errors_deg.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        Ok(())
    })
}

pub fn attach_aspects(a: &AttachArgs) -> Result<()> {
    let rec = Recorder::start("attach-aspects", None, None, &[&a.data])?;
    let ds = load_dataset(&a.data)?;
    let cfg = AspectEstimatorConfig {
        params: kf_params(&a.filter, ds.manifest.config.trajectory.meas_sigma),
        max_gap: a.filter.max_gap,
        mode: a.filter.heading,
        context: a.context,
    };
    let preds = predict_aspects(&ds, &cfg)?;
    let mut buf = Vec::new();
    write_aspects_csv(&mut buf, &preds)?;
    let out = write_file(&a.out.join(ASPECT_PRED_FILE), &buf)?;
    rec.finish(std::slice::from_ref(&out), &a.out.join(RUN_MANIFEST_FILE))?;
    let count = |s: AspectStatus| preds.iter().filter(|p| p.status == s).count();
    println!(
        "{} records: {} ok, {} warmup, {} missing -> {}",
        preds.len(),
        count(AspectStatus::Ok),
        count(AspectStatus::Warmup),
        count(AspectStatus::Missing),
        out.display()
    );
    Ok(())
}

fn load_with_aspects(data: &Path, aspects: Option<&Path>) -> Result<Dataset> {
    let mut ds = load_dataset(data)?;
    if let Some(p) = aspects {
        let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
        apply_aspects(&mut ds, &read_aspects_csv(f)?)?;
    }
    Ok(ds)
}

fn per_class_csv(m: &MetricsReport) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["class", "support", "precision", "recall", "f1"])?;
        for k in 0..m.f1.len() {
            let support: u64 = m.confusion[k].iter().sum();
            w.write_record([
                k.to_string(),
                support.to_string(),
                m.precision[k].to_string(),
                m.recall[k].to_string(),
                m.f1[k].to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Per-class CSV, metrics JSON and a one-row results CSV in `out`, plus an
/// optional append to a shared results file.
fn write_eval_outputs(
    out: &Path,
    cfg_hash: &str,
    cfg: &TrainConfig,
    split: Split,
    m: &MetricsReport,
    extra: serde_json::Value,
    shared: Option<&Path>,
) -> Result<(ResultRow, Vec<PathBuf>)> {
    let per_class = write_file(&out.join(format!("per_class_f1_{split}.csv")), &per_class_csv(m)?)?;
    let metrics = write_json(
        &out.join(format!("metrics_{split}.json")),
        &serde_json::json!({
            "config_hash": cfg_hash,
            "config": cfg,
            "split": split,
            "metrics": m,
            "details": extra,
        }),
    )?;
    let row = ResultRow {
        config_hash: cfg_hash.to_string(),
        seed: cfg.seed,
        conditioning: cfg.conditioning,
        backbone: cfg.backbone,
        task: cfg.task,
        angle_source: cfg.angle_source,
        split: split.to_string(),
        accuracy: m.accuracy,
        macro_f1: m.macro_f1,
        per_class_f1_path: per_class.display().to_string(),
    };
    let results = write_file(&out.join(RESULTS_FILE), &results_bytes(std::slice::from_ref(&row))?)?;
    let mut outputs = vec![per_class, metrics, results];
    if let Some(p) = shared {
        outputs.push(append_results(p, std::slice::from_ref(&row))?);
    }
    Ok((row, outputs))
}

fn history_csv(history: &[EpochLog]) -> Result<Vec<u8>> {
    csv_bytes(|w| history.iter().try_for_each(|h| w.serialize(h)))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = read_train_config(&a.config, a.seed)?;
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.aspects.as_deref());
    let rec = Recorder::start("train", Some(&a.config), Some(cfg.seed), &inputs)?;
    let ds = load_with_aspects(&a.data, a.aspects.as_deref())?;
    let outcome = crate::pipeline::train(&cfg, &ds)?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    let mut header = serde_json::to_value(outcome.model.spec()).expect("spec serializes");
    header["train"] = serde_json::to_value(&cfg).expect("config serializes");
    save_checkpoint(&ckpt, &header, &outcome.model.store)?;
    let history = write_file(&a.out.join("history.csv"), &history_csv(&outcome.history)?)?;
    let details = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "counts": outcome.counts,
        "val": outcome.val,
        "n_params": outcome.model.n_params(),
    });
    let hash = cfg.hash();
    let (row, mut outputs) = write_eval_outputs(
        &a.out,
        &hash,
        &cfg,
        Split::Test,
        &outcome.test,
        details,
        a.results.as_deref(),
    )?;
    outputs.splice(0..0, [ckpt, history]);
    rec.finish(&outputs, &a.out.join(RUN_MANIFEST_FILE))?;
    println!(
        "{hash} seed {}: best epoch {}, val macro-F1 {:.4}, test accuracy {:.4}, test macro-F1 {:.4}",
        cfg.seed, outcome.best_epoch, outcome.val.macro_f1, row.accuracy, row.macro_f1
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.checkpoint, &a.data];
    inputs.extend(a.aspects.as_deref());
    let (header, _) = read_checkpoint(&a.checkpoint)?;
    let trained: TrainConfig = header
        .model
        .get("train")
        .cloned()
        .ok_or_else(|| {
            Error::Data(format!(
                "{}: no training config in checkpoint header",
                a.checkpoint.display()
            ))
        })
        .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Data(format!("bad training config: {e}"))))?;
    let mut cfg = trained.clone();
    if let Some(src) = a.angle_source {
        cfg.angle_source = src;
    }
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let rec = Recorder::start("eval", None, Some(cfg.seed), &inputs)?;
    let mut model = Model::load(&a.checkpoint)?;
    let ds = load_with_aspects(&a.data, a.aspects.as_deref())?;
    let samples = split_samples(&cfg, &ds, a.split)?;
    let m = evaluate(&mut model, &ds, &samples, cfg.angle_source)?;
    let details = serde_json::json!({ "samples": samples.len() });
    let (row, outputs) = write_eval_outputs(
        &a.out,
        &trained.hash(),
        &cfg,
        a.split,
        &m,
        details,
        a.results.as_deref(),
    )?;
    rec.finish(&outputs, &a.out.join(RUN_MANIFEST_FILE))?;
    println!(
        "{} {}: accuracy {:.4}, macro-F1 {:.4} on {} samples",
        row.config_hash,
        a.split,
        m.accuracy,
        m.macro_f1,
        samples.len()
    );
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let rec = Recorder::start("report", None, None, &[&a.results_csv])?;
    let f = fs::File::open(&a.results_csv).map_err(|e| Error::io(&a.results_csv, e))?;
    let rows = read_results_csv(f)?;
    let md = render_report(&rows)?;
    let out = write_file(&a.out_md, md.as_bytes())?;
    rec.finish(&[out], &a.out_md.with_extension(RUN_MANIFEST_FILE))?;
    Ok(())
}
