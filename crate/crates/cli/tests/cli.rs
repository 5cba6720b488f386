use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seegnet::cohort::ElectrodeMeta;
use seegnet::model::{Model, ModelConfig, TargetScaler};
use seegnet::sigproc::{ProcessedCohort, ProcessedSubject, TRIAL_SAMPLES};
use seegnet::train::AdamW;
use serde_json::Value;

fn seegnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seegnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = seegnet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn last_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .find(|l| l.starts_with("{\"error\""))
        .expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

/// Small processed cohort with a response-locked bump, written to `path`.
fn write_toy(path: &Path, n_trials: usize) -> ProcessedCohort {
    let mut state = 12345u64;
    let mut noise = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.4
    };
    let rts_ms: Vec<f64> = (0..n_trials)
        .map(|t| 320.0 + 37.0 * ((t * 7) % n_trials) as f64)
        .collect();
    let mut trials = Vec::new();
    for rt in &rts_ms {
        for e in 0..2 {
            let center = rt * 0.32 + 10.0 * e as f64;
            trials.extend((0..TRIAL_SAMPLES).map(|i| {
                let d = (i as f64 - center) / 15.0;
                (2.0 * (-0.5 * d * d).exp() + noise()) as f32
            }));
        }
    }
    let cohort = ProcessedCohort {
        subjects: vec![ProcessedSubject {
            subject_id: "P1".into(),
            electrodes: vec![
                ElectrodeMeta::new("A1", [10.0, -20.0, 5.0]),
                ElectrodeMeta::new("A2", [14.0, -22.0, 9.0]),
            ],
            trials,
            rts_ms,
        }],
        seed: Some(1),
        provenance: "toy".into(),
    };
    cohort.write(path).unwrap();
    cohort
}

#[test]
fn synth_writes_bundle_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--subjects",
            "4",
            "--trials",
            "25",
            "--electrodes",
            "3-4",
            "--seed",
            "7",
            "--out",
            "d",
        ],
    );
    let raw = seegnet::cohort::load_bundle(&dir.path().join("d")).unwrap();
    assert_eq!(raw.subjects.len(), 4);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert!(artifacts.contains_key("manifest.json"));
    assert!(artifacts.values().all(|h| h.as_str().unwrap().len() == 64));
}

#[test]
fn seeded_pipeline_reproduces_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("c.json"),
        r#"{"train": {"epochs": 2, "multi_batch": 64}, "model": {"e_max": 6}}"#,
    )
    .unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let p = |name: &str| format!("{run}/{name}");
        ok(
            d,
            &[
                "synth",
                "--subjects",
                "3",
                "--trials",
                "30",
                "--electrodes",
                "3-4",
                "--seed",
                "3",
                "--out",
                &p("raw"),
            ],
        );
        ok(
            d,
            &[
                "preprocess",
                "--in",
                &p("raw"),
                "--out",
                &p("proc"),
                "--n-iter",
                "100",
                "--seed",
                "3",
            ],
        );
        ok(
            d,
            &[
                "train",
                "--config",
                "c.json",
                "--data",
                &p("proc"),
                "--out",
                &p("model"),
                "--seed",
                "3",
            ],
        );
        assert!(d.join(p("model/history.csv")).exists());
        assert!(d.join(p("model/checkpoint/meta.json")).exists());
        ok(
            d,
            &[
                "eval",
                "--checkpoint",
                &p("model/checkpoint"),
                "--data",
                &p("proc"),
                "--out",
                &p("eval"),
                "--seed",
                "3",
            ],
        );
        reports.push(fs::read(d.join(p("eval/eval.json"))).unwrap());
        let csv = fs::read_to_string(d.join(p("eval/eval_subjects.csv"))).unwrap();
        assert!(csv.starts_with("subject,r2,rmse_ms,n_trials\n"));
    }
    assert_eq!(reports[0], reports[1]);
    let report: Value = serde_json::from_slice(&reports[0]).unwrap();
    assert!(report["pooled_r2"].as_f64().unwrap() <= 1.0);
    assert!(report["pooled_rmse_ms"].as_f64().unwrap() >= 0.0);
}

#[test]
fn usage_and_config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = seegnet(dir.path(), &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(last_error(&out)["error"]["kind"], "usage");
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));

    let out = seegnet(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("bad.json"), "{\"train\": {\"epochz\": 1}}").unwrap();
    let out = seegnet(dir.path(), &["synth", "--config", "bad.json", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(last_error(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("parsing config"));

    let out = seegnet(dir.path(), &["train", "--data", "missing", "--out", "m"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(last_error(&out)["error"]["kind"], "missing_file");
}

/// Memorize a few trials with full-batch Adam and eval-mode normalization so
/// training and inference compute the same function.
fn overfit(cohort: &ProcessedCohort, trials: &[usize]) -> Model {
    let cfg = ModelConfig {
        e_max: 4,
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::new(cfg, vec!["P1".into()], 0).unwrap();
    let subj = &cohort.subjects[0];
    let targets_ms: Vec<f64> = trials.iter().map(|&t| subj.rts_ms[t]).collect();
    model.scaler = TargetScaler::fit(&targets_ms).unwrap();
    let picks: Vec<(usize, usize)> = trials.iter().map(|&t| (0, t)).collect();
    let inputs = seegnet::model::cohort_inputs(&model, cohort, &picks).unwrap();
    let y: Vec<f32> = targets_ms.iter().map(|t| model.scaler.to_std(*t) as f32).collect();
    let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
    let sq = |p: f32, t: f32| ((p - t) * (p - t) / 2.0, p - t);
    for _ in 0..600 {
        let g = model.gradients(&inputs, &y, sq, false).unwrap();
        opt.step(&mut model.params, &g.grads, 2e-3, |_| true);
    }
    model
}

#[test]
fn infer_reproduces_memorized_trials_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cohort = write_toy(&d.join("proc"), 12);
    let model = overfit(&cohort, &[0, 1, 2, 3, 4, 5]);
    model.save(&d.join("ckpt"), 0).unwrap();

    let out = ok(
        d,
        &[
            "infer",
            "--checkpoint",
            "ckpt",
            "--data",
            "proc",
            "--subject",
            "P1",
            "--trials",
            "3,1,5",
        ],
    );
    let lines: Vec<Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(
        lines.iter().map(|l| l["trial"].as_u64().unwrap()).collect::<Vec<_>>(),
        vec![3, 1, 5]
    );
    for l in &lines {
        let err = (l["prediction_ms"].as_f64().unwrap() - l["target_ms"].as_f64().unwrap()).abs();
        assert!(err < 5.0, "memorized trial off by {err} ms");
        assert!(l["latency_ms"].as_f64().unwrap() > 0.0);
    }

    let all = ok(
        d,
        &[
            "infer",
            "--checkpoint",
            "ckpt",
            "--data",
            "proc",
            "--subject",
            "P1",
            "--trials",
            "0,1,2,3,4,5,6,7,8,9",
        ],
    );
    let trials: Vec<u64> = String::from_utf8_lossy(&all.stdout)
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["trial"].as_u64().unwrap())
        .collect();
    assert_eq!(trials, (0..10).collect::<Vec<_>>());

    let missing = seegnet(
        d,
        &["infer", "--checkpoint", "ckpt", "--data", "proc", "--subject", "P2"],
    );
    assert_eq!(missing.status.code(), Some(1));
    assert!(last_error(&missing)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("seegnet transfer"));
}

#[test]
fn infer_rejects_wrong_sampling_rate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_toy(&d.join("proc"), 8);
    Model::<f32>::new(
        ModelConfig {
            e_max: 4,
            ..ModelConfig::default()
        },
        vec!["P1".into()],
        0,
    )
    .unwrap()
    .save(&d.join("ckpt"), 0)
    .unwrap();
    let manifest = d.join("proc/manifest.json");
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m["subjects"][0]["sessions"][0]["sampling_rate"] = 500.0.into();
    fs::write(&manifest, m.to_string()).unwrap();
    let out = seegnet(
        d,
        &["infer", "--checkpoint", "ckpt", "--data", "proc", "--subject", "P1"],
    );
    assert_eq!(out.status.code(), Some(1));
    let chain = last_error(&out)["error"]["chain"].to_string();
    assert!(chain.contains("sampling rate"), "{chain}");
}

#[test]
fn latency_reports_order_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &[
            "latency",
            "--electrodes",
            "3",
            "--n-warm",
            "2",
            "--n-meas",
            "15",
            "--out",
            "lat",
        ],
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let l = &v["latency"];
    assert!(l["p95_ms"].as_f64().unwrap() >= l["median_ms"].as_f64().unwrap());
    assert_eq!(l["n_meas"], 15);
    assert!(dir.path().join("lat/run_manifest.json").exists());
}
