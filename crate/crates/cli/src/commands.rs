use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use surgvqla_core::dataset::{
    dataset_stats, load_records, split_dataset_by, write_training_lines, DatasetRecord,
    LineError, SplitUnit, TrainingStage,
};
use surgvqla_core::env::run_rft;
use surgvqla_core::forge::{
    forge_annotations, Annotation, AuditLog, EndpointConfig, ForgeError, UreqTransport,
};
use surgvqla_core::metrics::{eval_report, MetricsError};
use surgvqla_core::reward::{composite_reward, GroundTruth, RewardBreakdown};
use surgvqla_core::trace::parse_trace;

use crate::config::RunConfig;
use crate::error::CliError;

/// Window used for the end-of-training summary.
const SUMMARY_WINDOW: usize = 200;

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|_| out.write_all(b"\n"))
        .and_then(|_| out.flush())
        .map_err(CliError::io(path))
}

fn meta(command: &str, cfg: &RunConfig, prefixes: &[&str], extra: Value) -> Value {
    let mut v = json!({ "command": command, "config": cfg.echo(prefixes) });
    if let Value::Object(extra) = extra {
        v.as_object_mut().expect("object").extend(extra);
    }
    v
}

fn line_errors(errors: &[LineError]) -> Value {
    errors
        .iter()
        .map(|e| {
            json!({
                "line": e.line,
                "record_id": e.error.record_id,
                "error": e.error.kind.name(),
                "field": e.error.kind.field(),
                "message": e.error.kind.to_string(),
            })
        })
        .collect()
}

fn load_valid(cfg: &RunConfig, input: &Path) -> Result<Vec<DatasetRecord>, CliError> {
    let loaded = load_records(input, cfg.frame()?).map_err(CliError::io(input))?;
    if !loaded.errors.is_empty() {
        return Err(CliError::validation(
            format!("{} invalid record(s) in {}", loaded.errors.len(), input.display()),
            line_errors(&loaded.errors),
        ));
    }
    Ok(loaded.records)
}

/// Parses each non-blank line of a JSONL file as `T`.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut items = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => items.push(v),
            Err(e) => bad.push(json!({ "line": i + 1, "message": e.to_string() })),
        }
    }
    if !bad.is_empty() {
        return Err(CliError::validation(
            format!("{} unreadable line(s) in {}", bad.len(), path.display()),
            Value::Array(bad),
        ));
    }
    Ok(items)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut out = create(path)?;
    rows.iter()
        .try_for_each(|r| {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")
        })
        .and_then(|_| out.flush())
        .map_err(CliError::io(path))
}

pub fn validate(cfg: &RunConfig, input: &Path) -> Result<(), CliError> {
    let records = load_valid(cfg, input)?;
    println!("{}", json!({ "valid": records.len() }));
    Ok(())
}

pub fn stats(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let stats = dataset_stats(&load_valid(cfg, input)?);
    let mut v = serde_json::to_value(&stats).expect("stats serialize");
    v["total"] = json!(stats.total());
    if let Some(out) = out {
        write_json(out, &meta("stats", cfg, &["frame."], v.clone()))?;
    }
    println!("{v}");
    Ok(())
}

pub fn split(cfg: &RunConfig, input: &Path, out_sft: &Path, out_rft: &Path) -> Result<(), CliError> {
    let records = load_valid(cfg, input)?;
    let fraction: f64 = cfg.get("split.sft_fraction")?;
    let unit: SplitUnit = cfg.get("split.unit")?;
    let seed: u64 = cfg.get("seed")?;
    let split = split_dataset_by(&records, fraction, seed, unit)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let prefixes = ["seed", "split.", "frame."];
    for (path, part, stage) in [
        (out_sft, &split.sft, TrainingStage::Sft),
        (out_rft, &split.rft, TrainingStage::Rft),
    ] {
        let n = write_training_lines(part, stage, create(path)?).map_err(CliError::io(path))?;
        write_json(&sidecar(path), &meta("split", cfg, &prefixes, json!({ "records": n })))?;
    }
    println!("{}", json!({ "sft": split.sft.len(), "rft": split.rft.len() }));
    Ok(())
}

pub fn forge(cfg: &RunConfig, annotations: &Path, out: &Path, audit: &Path) -> Result<(), CliError> {
    let base_url: String = cfg.get("forge.endpoint")?;
    let model: String = cfg.get("forge.model")?;
    if base_url.is_empty() || model.is_empty() {
        return Err(CliError::Usage("forge needs --endpoint and --model".into()));
    }
    let mut endpoint = EndpointConfig::new(base_url, model).with_env_key();
    endpoint.temperature = cfg.get("forge.temperature")?;
    endpoint.timeout = Duration::from_millis(cfg.get("forge.timeout_ms")?);
    endpoint.max_attempts = cfg.get("forge.max_attempts")?;
    endpoint.backoff_base = Duration::from_millis(cfg.get("forge.backoff_ms")?);
    let max_inflight: usize = cfg.get("forge.max_inflight")?;

    let anns: Vec<Annotation> = read_jsonl(annotations)?;
    let log = AuditLog::new(create(audit)?);
    let outcome = forge_annotations(&anns, &endpoint, &UreqTransport::new(&endpoint), &log, max_inflight);
    log.into_inner().flush().map_err(CliError::io(audit))?;
    write_jsonl(out, &outcome.records)?;
    let summary = json!({
        "annotations": anns.len(),
        "records": outcome.records.len(),
        "failed": outcome.failures.len(),
    });
    write_json(&sidecar(out), &meta("forge", cfg, &["forge."], summary.clone()))?;

    if outcome.failures.is_empty() {
        println!("{summary}");
        return Ok(());
    }
    let details: Value = outcome
        .failures
        .iter()
        .map(|(i, e)| json!({ "index": i, "image_id": anns[*i].image_id, "message": e.to_string() }))
        .collect();
    let message = format!("{} of {} annotation(s) failed", outcome.failures.len(), anns.len());
    let endpoint_side = outcome
        .failures
        .iter()
        .any(|(_, e)| e.is_retryable() || matches!(e, ForgeError::Audit(_)));
    Err(if endpoint_side {
        CliError::Endpoint { message, details }
    } else {
        CliError::validation(message, details)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TracePrediction {
    id: String,
    trace_text: String,
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    id: &'a str,
    #[serde(flatten)]
    reward: RewardBreakdown,
}

pub fn score(cfg: &RunConfig, pred: &Path, gt: &Path, out: &Path) -> Result<(), CliError> {
    let reward = cfg.reward()?;
    reward.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dims = cfg.frame()?;
    let preds: Vec<TracePrediction> = read_jsonl(pred)?;
    let truths: BTreeMap<String, DatasetRecord> = load_valid(cfg, gt)?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();

    let mut seen = BTreeMap::new();
    for p in &preds {
        if seen.insert(p.id.as_str(), ()).is_some() {
            return Err(CliError::validation(format!("duplicate prediction id `{}`", p.id), json!([p.id])));
        }
    }
    let unknown: Vec<_> = preds.iter().filter(|p| !truths.contains_key(&p.id)).map(|p| &p.id).collect();
    let missing: Vec<_> = truths.keys().filter(|id| !seen.contains_key(id.as_str())).collect();
    if !unknown.is_empty() || !missing.is_empty() {
        return Err(CliError::validation(
            "prediction ids do not match ground truth",
            json!({ "missing": missing, "unknown": unknown }),
        ));
    }

    let rows: Vec<ScoreRow> = preds
        .iter()
        .map(|p| ScoreRow {
            id: &p.id,
            reward: composite_reward(
                &parse_trace(&p.trace_text),
                &GroundTruth::from(&truths[&p.id]),
                &reward,
                dims,
            ),
        })
        .collect();
    write_jsonl(out, &rows)?;
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&RewardBreakdown) -> f64| rows.iter().map(|r| f(&r.reward)).sum::<f64>() / n;
    let summary = json!({
        "n": rows.len(),
        "mean_r_vg": mean(|r| r.r_vg),
        "mean_r_la": mean(|r| r.r_la),
        "mean_r_mc": mean(|r| r.r_mc),
        "mean_composite": mean(|r| r.composite),
    });
    write_json(&sidecar(out), &meta("score", cfg, &["reward.", "frame."], summary.clone()))?;
    println!("{summary}");
    Ok(())
}

pub fn train_toy(cfg: &RunConfig, out_report: &Path, out_params: &Path) -> Result<(), CliError> {
    let (env, grpo, reward) = (cfg.env()?, cfg.grpo()?, cfg.reward()?);
    env.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    grpo.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    reward.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let report = run_rft(&env, &grpo, &reward)
        .map_err(|e| CliError::validation(format!("training failed: {e}"), json!(null)))?;

    let mut out = create(out_report)?;
    report
        .write_jsonl(&mut out)
        .and_then(|_| out.flush())
        .map_err(CliError::io(out_report))?;
    let prefixes = ["seed", "grpo.", "reward.", "env.", "frame."];
    let summary = json!({
        "iterations": report.iterations.len(),
        "max_composite": report.max_composite,
        "iteration0_mean_reward": report.iterations.first().map(|r| r.mean_reward),
        "summary_window": SUMMARY_WINDOW,
        "final_mean_reward": report.final_mean_reward(SUMMARY_WINDOW),
        "final_mismatch_rate": report.final_mismatch_rate(SUMMARY_WINDOW),
        "param_drift": report.param_drift(),
    });
    write_json(&sidecar(out_report), &meta("train-toy", cfg, &prefixes, json!({ "summary": summary })))?;
    write_json(
        out_params,
        &meta("train-toy", cfg, &prefixes, json!({ "params": report.final_params })),
    )?;
    println!("{summary}");
    Ok(())
}

pub fn eval(cfg: &RunConfig, pred: &Path, gt: &Path, out: &Path) -> Result<(), CliError> {
    for p in [pred, gt] {
        File::open(p).map_err(CliError::io(p))?;
    }
    let report = eval_report(pred, gt, cfg.frame()?).map_err(|e| match e {
        MetricsError::Io(source) => CliError::Io { path: pred.to_path_buf(), source },
        MetricsError::InvalidGroundTruth(errors) => CliError::validation(
            format!("{} invalid ground-truth record(s)", errors.len()),
            line_errors(&errors),
        ),
        MetricsError::IdMismatch { missing, unknown } => CliError::validation(
            e_msg(&missing, &unknown),
            json!({ "missing": missing, "unknown": unknown }),
        ),
        other => CliError::validation(other.to_string(), json!(null)),
    })?;
    let body = serde_json::to_value(&report).expect("report serialize");
    write_json(out, &meta("eval", cfg, &["frame."], body))?;
    println!(
        "{}",
        json!({ "acc": report.acc, "f_score": report.f_score, "miou": report.miou, "n": report.n })
    );
    Ok(())
}

fn e_msg(missing: &[String], unknown: &[String]) -> String {
    format!(
        "prediction ids do not match ground truth: {} without prediction, {} unknown",
        missing.len(),
        unknown.len()
    )
}
