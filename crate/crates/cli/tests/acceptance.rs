//! Acceptance criteria A1 to A8. Runs without the libtest harness so every
//! criterion prints exactly one PASS or FAIL line.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use surgvqla_core::dataset::{
    dataset_stats, load_records, split_dataset, QuestionType, RecordKind,
};
use surgvqla_core::env::vocab::ANSWER_CLASSES;
use surgvqla_core::env::{
    emit_trace, render_question, sample_scene, AnchorGrid, EnvConfig, RolloutAction,
};
use surgvqla_core::forge::stub::{StubReply, StubServer};
use surgvqla_core::forge::AuditEntry;
use surgvqla_core::grpo::{
    group_advantages, grpo_gradient_with, grpo_objective_with, kl_estimate, GrpoConfig,
    ObjectiveMode, RolloutGroup,
};
use surgvqla_core::metrics::{eval_report, evaluate, Prediction};
use surgvqla_core::reward::{iou, mc_reward, quadrant_of, vg_reward};
use surgvqla_core::rng::{self, SplitMix64};
use surgvqla_core::trace::{normalize_answer, parse_trace};
use surgvqla_core::{BoundingBox, ImageDims, Quadrant};

// Pinned tolerances and budgets.
const IOU_TOL: f64 = 1e-6;
const A1_BUDGET: Duration = Duration::from_secs(5);
const ADV_TOL: f64 = 1e-9;
const KL_MC_REL_TOL: f64 = 0.02;
const KL_MC_SAMPLES: usize = 100_000;
const GRAD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const A2_BUDGET: Duration = Duration::from_secs(30);
const A3_FRACTION_OF_MAX: f64 = 0.75;
const A3_MIN_GAIN: f64 = 0.5;
const A3_BUDGET: Duration = Duration::from_secs(120);
const FINAL_WINDOW: usize = 200;
const A4_MAX_RATIO: f64 = 0.5;
const METRIC_TOL: f64 = 1e-6;
const ROUND_TRIPS: usize = 10_000;
const UNBOUNDED: Duration = Duration::from_secs(600);

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_surgvqla"))
        .args(args)
        .env_remove("SURGVQLA_API_KEY")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn random_box(r: &mut SplitMix64, w: u32, h: u32) -> BoundingBox {
    let x1 = rng::below(r, w as usize - 1) as u32;
    let y1 = rng::below(r, h as usize - 1) as u32;
    let x2 = x1 + 1 + rng::below(r, (w - x1 - 1) as usize) as u32;
    let y2 = y1 + 1 + rng::below(r, (h - y1 - 1) as usize) as u32;
    BoundingBox::new(x1, y1, x2, y2).expect("valid box")
}

/// Counts covered pixels directly.
fn raster_iou(a: &BoundingBox, b: &BoundingBox, w: u32, h: u32) -> f64 {
    let inside = |bx: &BoundingBox, x: u32, y: u32| x >= bx.x1 && x < bx.x2 && y >= bx.y1 && y < bx.y2;
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..h {
        for x in 0..w {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    inter as f64 / union as f64
}

fn a1_reward_math() -> Result<String, String> {
    let mut r = rng::seeded(101);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let (a, b) = (random_box(&mut r, 64, 64), random_box(&mut r, 64, 64));
        let got = iou(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - raster_iou(&a, &b, 64, 64)).abs());
    }
    ensure!(worst <= IOU_TOL, "iou deviates from raster count by {worst}");

    let truth = BoundingBox::new(0, 0, 100, 1).unwrap();
    for (x2, expected) in [(49, 0.0), (50, 0.5), (51, 0.51), (100, 1.0)] {
        let pred = BoundingBox::new(0, 0, x2, 1).unwrap();
        let got = vg_reward(&truth, Some(&pred), 0.5).map_err(|e| e.to_string())?;
        ensure!((got - expected).abs() < 1e-12, "vg at iou {}: {got}", x2 as f64 / 100.0);
    }
    ensure!(vg_reward(&truth, None, 0.5) == Ok(0.0), "missing box must score 0");

    let dims = ImageDims::ENDOVIS;
    let (w, h) = (f64::from(dims.width), f64::from(dims.height));
    let mut counts = BTreeMap::new();
    let mut xs: Vec<f64> = (0..100).map(|i| i as f64 * w / 99.0).collect();
    let mut ys: Vec<f64> = (0..100).map(|i| i as f64 * h / 99.0).collect();
    xs.push(w / 2.0);
    ys.push(h / 2.0);
    for &x in &xs {
        for &y in &ys {
            let expected = match (x >= w / 2.0, y >= h / 2.0) {
                (false, false) => Quadrant::LeftTop,
                (true, false) => Quadrant::RightTop,
                (false, true) => Quadrant::LeftBottom,
                (true, true) => Quadrant::RightBottom,
            };
            let got = quadrant_of((x, y), dims).map_err(|e| e.to_string())?;
            ensure!(got == expected, "({x},{y}) -> {got:?}, want {expected:?}");
            *counts.entry(got).or_insert(0usize) += 1;
        }
    }
    ensure!(counts.len() == 4, "sweep covers {} quadrants", counts.len());
    ensure!(counts.values().sum::<usize>() == xs.len() * ys.len(), "a point landed twice");

    for _ in 0..1_000 {
        let b = random_box(&mut r, dims.width, dims.height);
        let own = quadrant_of(b.center(), dims).map_err(|e| e.to_string())?;
        for q in Quadrant::ALL {
            let want = if q == own { 1.0 } else { 0.0 };
            ensure!(mc_reward(Some(&b), Some(q), dims) == want, "mc for {b} claiming {q:?}");
        }
    }
    Ok(format!("max |iou - raster| = {worst:.1e}; {} sweep points; 1000 coherent boxes", xs.len() * ys.len()))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn normal(r: &mut SplitMix64) -> f64 {
    let (u1, u2) = (rng::uniform(r).max(1e-300), rng::uniform(r));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Objective recomputed from its definition, independent of the library.
fn objective_oracle(g: &RolloutGroup, adv: &[f64], cfg: &GrpoConfig) -> f64 {
    let n = g.rewards.len() as f64;
    (0..g.rewards.len())
        .map(|i| {
            let ratio = (g.logp_theta[i] - g.logp_old[i]).exp();
            let sur = match cfg.objective_mode {
                ObjectiveMode::AsWritten => ratio * adv[i],
                ObjectiveMode::Clipped => (ratio * adv[i])
                    .min(ratio.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * adv[i]),
            };
            let rho = (g.logp_ref[i] - g.logp_theta[i]).exp();
            sur - cfg.beta * (rho - rho.ln() - 1.0)
        })
        .sum::<f64>()
        / n
}

fn a2_grpo_math() -> Result<String, String> {
    let mut r = rng::seeded(202);
    for k in 0..1_000 {
        let g = 2 + rng::below(&mut r, 15);
        let rewards: Vec<f64> = if k % 10 == 0 {
            vec![1.5; g]
        } else {
            (0..g).map(|_| 3.0 * rng::uniform(&mut r)).collect()
        };
        let adv = group_advantages(&rewards).map_err(|e| e.to_string())?;
        let mean = adv.values.iter().sum::<f64>() / g as f64;
        let var = adv.values.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / g as f64;
        if k % 10 == 0 {
            ensure!(adv.values.iter().all(|&a| a == 0.0), "degenerate group not zeroed");
            continue;
        }
        ensure!(mean.abs() < ADV_TOL && (var.sqrt() - 1.0).abs() < ADV_TOL, "mean {mean}, std {}", var.sqrt());
        let (scale, shift) = (0.1 + 10.0 * rng::uniform(&mut r), 20.0 * rng::uniform(&mut r) - 10.0);
        let moved: Vec<f64> = rewards.iter().map(|x| scale * x + shift).collect();
        let adv2 = group_advantages(&moved).map_err(|e| e.to_string())?;
        for (a, b) in adv.values.iter().zip(&adv2.values) {
            ensure!((a - b).abs() < 1e-7, "affine invariance broken: {a} vs {b}");
        }
    }

    let mut min_kl = f64::INFINITY;
    for _ in 0..1_000_000 {
        let (lt, lr) = (-30.0 * rng::uniform(&mut r), -30.0 * rng::uniform(&mut r));
        let k = kl_estimate(lt, lr).map_err(|e| e.to_string())?;
        min_kl = min_kl.min(k);
    }
    ensure!(min_kl >= 0.0, "negative KL estimate {min_kl}");

    let mut worst_mc = 0.0f64;
    for _ in 0..5 {
        let p = softmax(&(0..6).map(|_| normal(&mut r)).collect::<Vec<_>>());
        let q = softmax(&(0..6).map(|_| normal(&mut r)).collect::<Vec<_>>());
        let exact: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        let est = (0..KL_MC_SAMPLES)
            .map(|_| {
                let i = rng::categorical(&mut r, &p);
                kl_estimate(p[i].ln(), q[i].ln()).unwrap()
            })
            .sum::<f64>()
            / KL_MC_SAMPLES as f64;
        worst_mc = worst_mc.max((est - exact).abs() / exact);
    }
    ensure!(worst_mc <= KL_MC_REL_TOL, "Monte-Carlo KL off by {:.2}%", 100.0 * worst_mc);

    let mut worst_grad = 0.0f64;
    let mut worst_obj = 0.0f64;
    for mode in [ObjectiveMode::AsWritten, ObjectiveMode::Clipped] {
        let mut done = 0;
        while done < 100 {
            let (k, g) = (3 + rng::below(&mut r, 5), 2 + rng::below(&mut r, 7));
            let cfg = GrpoConfig {
                beta: 0.5 * rng::uniform(&mut r),
                epsilon: 0.1 + 0.3 * rng::uniform(&mut r),
                objective_mode: mode,
                ..GrpoConfig::default()
            };
            let theta: Vec<f64> = (0..k).map(|_| normal(&mut r)).collect();
            let old: Vec<f64> = theta.iter().map(|t| t + 0.3 * normal(&mut r)).collect();
            let reference: Vec<f64> = (0..k).map(|_| normal(&mut r)).collect();
            let actions: Vec<usize> = (0..g).map(|_| rng::below(&mut r, k)).collect();
            let rewards: Vec<f64> = (0..g).map(|_| rng::uniform(&mut r)).collect();
            let adv = group_advantages(&rewards).map_err(|e| e.to_string())?.values;
            let (p_old, p_ref) = (softmax(&old), softmax(&reference));
            let group_at = |th: &[f64]| {
                let p = softmax(th);
                RolloutGroup {
                    logp_theta: actions.iter().map(|&a| p[a].ln()).collect(),
                    logp_old: actions.iter().map(|&a| p_old[a].ln()).collect(),
                    logp_ref: actions.iter().map(|&a| p_ref[a].ln()).collect(),
                    rewards: rewards.clone(),
                }
            };
            let group = group_at(&theta);
            let near_kink = group.logp_theta.iter().zip(&group.logp_old).any(|(t, o)| {
                let ratio = (t - o).exp();
                mode == ObjectiveMode::Clipped
                    && ((ratio - 1.0 + cfg.epsilon).abs() < 1e-3 || (ratio - 1.0 - cfg.epsilon).abs() < 1e-3)
            });
            if near_kink {
                continue;
            }
            let p = softmax(&theta);
            let scores: Vec<Vec<f64>> = actions
                .iter()
                .map(|&a| (0..k).map(|j| f64::from(u8::from(j == a)) - p[j]).collect())
                .collect();
            let analytic = grpo_gradient_with(&group, &adv, &scores, &cfg).map_err(|e| e.to_string())?;
            let f = |th: &[f64]| grpo_objective_with(&group_at(th), &adv, &cfg).unwrap();
            let fd: Vec<f64> = (0..k)
                .map(|j| {
                    let (mut hi, mut lo) = (theta.clone(), theta.clone());
                    hi[j] += FD_STEP;
                    lo[j] -= FD_STEP;
                    (f(&hi) - f(&lo)) / (2.0 * FD_STEP)
                })
                .collect();
            let diff = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            worst_grad = worst_grad.max(diff / norm);
            let obj = grpo_objective_with(&group, &adv, &cfg).map_err(|e| e.to_string())?;
            worst_obj = worst_obj.max((obj - objective_oracle(&group, &adv, &cfg)).abs());
            done += 1;
        }
    }
    ensure!(worst_grad < GRAD_REL_TOL, "gradient relative error {worst_grad:.2e}");
    ensure!(worst_obj < 1e-12, "objective deviates from definition by {worst_obj:.2e}");
    Ok(format!(
        "min kl {min_kl:.1e}; MC KL error {:.2}%; grad rel err {worst_grad:.1e} over 200 instances",
        100.0 * worst_mc
    ))
}

fn read_report(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .expect("report written")
        .lines()
        .map(|l| serde_json::from_str(l).expect("report line"))
        .collect()
}

fn tail_mean(rows: &[Value], field: &str) -> f64 {
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().map(|r| r[field].as_f64().unwrap()).sum::<f64>() / tail.len() as f64
}

fn train(dir: &Path, tag: &str, extra: &[&str]) -> Result<(PathBuf, Duration), String> {
    let report = dir.join(format!("{tag}.jsonl"));
    let params = dir.join(format!("{tag}.params.json"));
    let config = repo_root().join("configs/train-toy.ini");
    let mut args = vec!["--config", s(&config), "train-toy", "--out-report", s(&report), "--out-params", s(&params)];
    args.extend(extra);
    let start = Instant::now();
    let out = cli(&args);
    let took = start.elapsed();
    ensure!(out.status.success(), "train-toy failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok((report, took))
}

fn a3_toy_convergence() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pinned = ["--seed", "42", "--iterations", "2000", "--group-size", "4", "--temperature", "0.7",
        "--w-vg", "1", "--w-la", "1", "--w-mc", "1", "--tau", "0.5"];
    let (a, took) = train(dir.path(), "a", &pinned)?;
    let (b, _) = train(dir.path(), "b", &pinned)?;
    let bytes = |p: &Path| std::fs::read(p).unwrap();
    ensure!(bytes(&a) == bytes(&b), "re-run is not byte-identical");
    ensure!(took < A3_BUDGET, "single run took {took:?}");
    let rows = read_report(&a);
    ensure!(rows.len() == 2000, "{} report rows", rows.len());
    let max = 3.0;
    let (final_mean, start) = (tail_mean(&rows, "mean_reward"), rows[0]["mean_reward"].as_f64().unwrap());
    ensure!(final_mean >= A3_FRACTION_OF_MAX * max, "final mean {final_mean:.3} < {:.3}", A3_FRACTION_OF_MAX * max);
    ensure!(final_mean - start >= A3_MIN_GAIN, "gain {:.3} over iteration 0", final_mean - start);
    Ok(format!(
        "final-{FINAL_WINDOW} mean {final_mean:.3} >= {:.2}; iteration 0 {start:.3}; run {:.1}s; byte-identical",
        A3_FRACTION_OF_MAX * max,
        took.as_secs_f64()
    ))
}

fn a4_mc_ablation() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: Vec<(u64, &str)> = [42u64, 43].into_iter().flat_map(|s| [(s, "1"), (s, "0")]).collect();
    let results: Vec<Result<(PathBuf, Duration), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(seed, w)| {
                let dir = dir.path();
                scope.spawn(move || {
                    let seed = seed.to_string();
                    train(dir, &format!("s{seed}-mc{w}"), &["--seed", &seed, "--w-mc", w])
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread")).collect()
    });
    let mut rates = BTreeMap::new();
    for ((seed, w), res) in runs.iter().zip(results) {
        rates.insert((*seed, *w), tail_mean(&read_report(&res?.0), "mismatch_rate"));
    }
    let mut parts = Vec::new();
    for seed in [42u64, 43] {
        let (on, off) = (rates[&(seed, "1")], rates[&(seed, "0")]);
        ensure!(on <= A4_MAX_RATIO * off, "seed {seed}: mismatch {on:.3} with MC vs {off:.3} without");
        parts.push(format!("seed {seed}: {on:.3} vs {off:.3}"));
    }
    Ok(format!("final-{FINAL_WINDOW} mismatch with/without MC: {}", parts.join("; ")))
}

fn a5_dataset_tooling() -> Result<String, String> {
    let frame = ImageDims::ENDOVIS;
    let golden = load_records(fixture("golden.jsonl"), frame).map_err(|e| e.to_string())?;
    ensure!(golden.errors.is_empty() && golden.records.len() == 50, "golden: {} ok, {} rejected", golden.records.len(), golden.errors.len());

    let bad = load_records(fixture("violations.jsonl"), frame).map_err(|e| e.to_string())?;
    let expected: BTreeMap<String, String> = std::fs::read_to_string(fixture("violations.expected"))
        .unwrap()
        .lines()
        .map(|l| {
            let (id, kind) = l.split_once(' ').unwrap();
            (id.to_string(), kind.to_string())
        })
        .collect();
    ensure!(bad.records.is_empty() && bad.errors.len() == 6, "{} of 6 violations rejected", bad.errors.len());
    for e in &bad.errors {
        let want = expected.get(&e.error.record_id).ok_or(format!("unexpected id {}", e.error.record_id))?;
        ensure!(e.error.kind.name() == want, "{}: got {}, want {want}", e.error.record_id, e.error.kind.name());
    }

    let first = split_dataset(&golden.records, 0.8, 9).map_err(|e| e.to_string())?;
    for _ in 0..4 {
        ensure!(split_dataset(&golden.records, 0.8, 9).map_err(|e| e.to_string())? == first, "split differs between runs");
    }

    let st = dataset_stats(&golden.records);
    ensure!((st.n_cot, st.n_visual_qa, st.n_grounding_qa) == (20, 18, 12), "kind counts {st:?}");
    let hand = [
        (QuestionType::Organ, 5),
        (QuestionType::InstrumentLocation, 8),
        (QuestionType::InstrumentState, 7),
        (QuestionType::VisualSub, 18),
        (QuestionType::GroundingSub, 12),
    ];
    for (qt, n) in hand {
        ensure!(st.per_question_type[&qt] == n, "{qt}: {} vs hand count {n}", st.per_question_type[&qt]);
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (sft, rft) = (dir.path().join("sft.jsonl"), dir.path().join("rft.jsonl"));
    let out = cli(&["--seed", "9", "split", "--input", s(&fixture("golden.jsonl")), "--out-sft", s(&sft), "--out-rft", s(&rft)]);
    ensure!(out.status.success(), "split failed");
    let rft_rows = read_report(&rft);
    ensure!(rft_rows.len() == 4, "{} RFT rows, want 20 - 16", rft_rows.len());
    ensure!(rft_rows.iter().all(|r| r["kind"] == "CoT"), "non-CoT record in RFT export");
    Ok("50 accepted; 6 violations named; 5 identical splits; counts 20/18/12; RFT export 4 CoT rows".into())
}

fn a6_metrics() -> Result<String, String> {
    let report = eval_report(fixture("metrics_pred.jsonl"), fixture("metrics_gt.jsonl"), ImageDims::ENDOVIS)
        .map_err(|e| e.to_string())?;
    let miou = report.miou.ok_or("no boxes scored")?;
    ensure!((report.acc - 0.7).abs() < METRIC_TOL, "acc {}", report.acc);
    ensure!((report.f_score - 0.733333).abs() < METRIC_TOL, "macro F {}", report.f_score);
    ensure!((miou - 0.666667).abs() < METRIC_TOL, "mIoU {miou}");

    let truths = load_records(fixture("metrics_gt.jsonl"), ImageDims::ENDOVIS).map_err(|e| e.to_string())?.records;
    let perfect: Vec<Prediction> = truths
        .iter()
        .map(|t| Prediction { id: t.id.clone(), answer: t.answer.clone(), bbox: t.bbox })
        .collect();
    let own = evaluate(&perfect, &truths).map_err(|e| e.to_string())?;
    ensure!((own.acc, own.f_score, own.miou) == (1.0, 1.0, Some(1.0)), "self-evaluation {own:?}");
    Ok(format!("acc {:.6}, macro F {:.6}, mIoU {miou:.6}; self-evaluation (1, 1, 1)", report.acc, report.f_score))
}

fn a7_round_trip() -> Result<String, String> {
    let cfg = EnvConfig::default();
    let grid = AnchorGrid::new(&cfg).map_err(|e| e.to_string())?;
    let mut r = rng::seeded(707);
    for i in 0..ROUND_TRIPS {
        let mut scene_rng = rng::stream(707, &[i as u64]);
        let scene = sample_scene(&cfg, &grid, &mut scene_rng);
        let question = render_question(&scene, &mut scene_rng);
        let action = RolloutAction {
            answer: rng::below(&mut r, ANSWER_CLASSES),
            stated: Quadrant::ALL[rng::below(&mut r, 4)],
            anchor: rng::below(&mut r, grid.len()),
        };
        let parsed = parse_trace(&emit_trace(&action, &scene, &question, &grid));
        ensure!(parsed.answer.as_deref() == Some(normalize_answer(action.answer_text()).as_str()), "answer lost in action {i}");
        ensure!(parsed.bbox == Some(action.bbox(&grid)), "box lost in action {i}");
        ensure!(parsed.q_inferred == Some(action.stated), "stated quadrant lost in action {i}");
    }
    Ok(format!("{ROUND_TRIPS} actions recovered exactly"))
}

fn a8_forge_pipeline() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ann = dir.path().join("annotations.jsonl");
    let kinds = ["Organ", "InstrumentLocation", "InstrumentState", "InstrumentLocation", "InstrumentState"];
    let lines: Vec<String> = kinds
        .iter()
        .enumerate()
        .map(|(i, qt)| {
            json!({
                "image_id": format!("seq_3/frame{i:03}"),
                "question": "Where is the monopolar-curved-scissors located?",
                "question_type": qt,
                "answer": if *qt == "Organ" { "kidney" } else { "right-bottom" },
                "bbox": [700, 600, 900, 800],
                "instruments": [
                    {"label": "monopolar-curved-scissors", "bbox": [700, 600, 900, 800]},
                    {"label": "bipolar-forceps", "bbox": [100, 100, 300, 300]}
                ]
            })
            .to_string()
        })
        .collect();
    std::fs::write(&ann, lines.join("\n") + "\n").unwrap();

    let run_once = |tag: &str| -> Result<(Vec<u8>, Vec<AuditEntry>, usize), String> {
        // Every other distinct request is rate limited once, then served.
        let seen = Mutex::new(BTreeSet::new());
        let server = StubServer::start(move |req| {
            let mut seen = seen.lock().unwrap();
            if seen.insert(req.body.clone()) && seen.len() % 2 == 1 {
                return StubReply::raw(429, "{\"error\":\"rate limited\"}");
            }
            drop(seen);
            let prompt = req.user_prompt().unwrap_or_default();
            let head: Vec<&str> = prompt.split_whitespace().skip(2).take(6).collect();
            StubReply::completion(&format!("Observed for: {}", head.join(" ")))
        })
        .map_err(|e| e.to_string())?;
        let (out, audit) = (dir.path().join(format!("{tag}.jsonl")), dir.path().join(format!("{tag}.audit.jsonl")));
        let res = cli(&[
            "forge", "--annotations", s(&ann), "--endpoint", &server.base_url(), "--model", "stub",
            "--out", s(&out), "--audit", s(&audit), "--max-inflight", "3", "--backoff-ms", "1",
        ]);
        ensure!(res.status.success(), "forge failed: {}", String::from_utf8_lossy(&res.stderr));
        let entries = std::fs::read_to_string(&audit)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
            .collect::<Result<Vec<AuditEntry>, _>>()?;
        Ok((std::fs::read(&out).unwrap(), entries, server.requests().len()))
    };
    let (first, audit, requests) = run_once("a")?;
    let (second, _, _) = run_once("b")?;
    ensure!(first == second, "forged records differ between runs");

    let loaded = load_records(dir.path().join("a.jsonl"), ImageDims::ENDOVIS).map_err(|e| e.to_string())?;
    ensure!(loaded.errors.is_empty(), "{} forged records fail validation", loaded.errors.len());
    let cot = loaded.records.iter().filter(|r| r.kind == RecordKind::CoT).count();
    ensure!(cot == 5, "{cot} reasoning chains for 5 annotations");

    ensure!(audit.len() == requests, "audit has {} entries for {requests} requests", audit.len());
    let limited = audit.iter().filter(|e| e.status == Some(429)).count();
    ensure!(limited > 0, "no 429 was injected");
    let mut slots: BTreeMap<(String, String), Vec<&AuditEntry>> = BTreeMap::new();
    for e in &audit {
        slots.entry((e.image_id.clone(), e.slot.clone())).or_default().push(e);
    }
    for ((image, slot), tries) in &slots {
        let last = tries.last().unwrap();
        ensure!(last.status == Some(200) && last.error.is_none(), "{image} {slot} never succeeded");
        let attempts: Vec<u32> = tries.iter().map(|e| e.attempt).collect();
        ensure!(attempts == (1..=tries.len() as u32).collect::<Vec<_>>(), "{image} {slot} attempts {attempts:?}");
    }
    Ok(format!(
        "{} records valid; {} slots audited over {requests} requests; {limited} injected 429s retried; re-run identical",
        loaded.records.len(),
        slots.len()
    ))
}

fn main() {
    let checks: [(&str, &str, Check, Duration); 8] = [
        ("A1", "reward math", a1_reward_math, A1_BUDGET),
        ("A2", "GRPO math", a2_grpo_math, A2_BUDGET),
        ("A3", "toy RFT convergence", a3_toy_convergence, UNBOUNDED),
        ("A4", "MC ablation", a4_mc_ablation, UNBOUNDED),
        ("A5", "dataset tooling", a5_dataset_tooling, UNBOUNDED),
        ("A6", "metrics harness", a6_metrics, UNBOUNDED),
        ("A7", "trace round-trip", a7_round_trip, UNBOUNDED),
        ("A8", "forge pipeline", a8_forge_pipeline, UNBOUNDED),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check, budget) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(_) if took > budget => Err(format!("took {:.1}s, budget {:.0}s", took.as_secs_f64(), budget.as_secs_f64())),
            other => other,
        };
        let (verdict, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        failed += usize::from(result.is_err());
        println!("{id} {verdict} {name} ({:.2}s): {detail}", took.as_secs_f64());
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
