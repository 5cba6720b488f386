use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use seegnet::cohort::{
    generate_synthetic, load_bundle, split_trials, write_bundle, SplitAssignment, SplitLabel, SplitRatios,
};
use seegnet::eval::{
    ablation_csv, ablation_suite, baseline, evaluate, measure_latency, BaselineKind, EvalReport, Variant,
};
use seegnet::model::{cohort_inputs, ElectrodeInput, Model, TrialInput};
use seegnet::sigproc::{preprocess, ProcessedCohort, TRIAL_SAMPLES};
use seegnet::train::{finetune, loo_workflow, multi_split_average, train, transfer, Mode, TrainHistory};

use crate::config::RunConfig;
use crate::logging::event;
use crate::manifest::{write_atomic, write_json, RunClock, RunManifest};
use crate::{Command, Common, ModelFlags};

fn load_config(common: &Common) -> Result<(RunConfig, u64)> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.train.seed);
    cfg.set_seed(seed);
    Ok((cfg, seed))
}

fn with_model_flags(common: &Common, flags: &ModelFlags) -> Result<(RunConfig, u64)> {
    let (mut cfg, seed) = load_config(common)?;
    cfg.apply_model_flags(&flags.ablate, flags.variant_2d, flags.pe.as_deref())?;
    Ok((cfg, seed))
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn load_processed(path: &Path) -> Result<ProcessedCohort> {
    ProcessedCohort::load(path).with_context(|| format!("loading processed bundle {}", path.display()))
}

/// Splits are always drawn over the whole bundle so a subject's trial labels
/// do not depend on which other subjects a command uses.
fn split_for(cohort: &ProcessedCohort, seed: u64) -> Result<SplitAssignment> {
    Ok(split_trials(cohort, SplitRatios::default(), seed)?)
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    let (model, meta) = Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    event(
        "checkpoint_loaded",
        json!({ "path": path, "epoch": meta.epoch, "subjects": meta.subjects }),
    );
    Ok(model)
}

fn save_run(out: &Path, model: &Model, history: &TrainHistory, split: &SplitAssignment) -> Result<Vec<PathBuf>> {
    let ckpt = out.join("checkpoint");
    model.save(&ckpt, history.best_epoch)?;
    write_atomic(&out.join("history.csv"), history.to_csv().as_bytes())?;
    write_json(&out.join("split.json"), split)?;
    Ok(vec![ckpt, out.join("history.csv"), out.join("split.json")])
}

fn snapshot(cfg: &RunConfig) -> Result<Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn head_missing(model: &Model, subject: &str) -> Result<()> {
    if model.head_index(subject).is_err() {
        bail!(
            "checkpoint has no head for subject {subject}; run `seegnet transfer --subject {subject}` to add one (heads: {})",
            model.subjects.join(", ")
        );
    }
    Ok(())
}

fn parse_electrodes(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .with_context(|| format!("bad electrode count {v:?}"))
    };
    match s.split_once('-') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    let clock = RunClock::start();
    match command {
        Command::Synth {
            common,
            subjects,
            trials,
            electrodes,
            burst_snr,
            responsive_fraction,
            out,
        } => {
            let (mut cfg, seed) = load_config(&common)?;
            let s = &mut cfg.synth;
            if let Some(v) = subjects {
                s.n_subjects = v;
            }
            if let Some(v) = trials {
                s.trials_per_subject = v;
            }
            if let Some(v) = electrodes {
                s.electrodes_per_subject = parse_electrodes(&v)?;
            }
            if let Some(v) = burst_snr {
                s.burst_snr = v;
            }
            if let Some(v) = responsive_fraction {
                s.responsive_fraction = v;
            }
            let cohort = generate_synthetic(&cfg.synth)?;
            write_bundle(&cohort, &out)?;
            event(
                "synth_done",
                json!({ "subjects": cohort.subjects.len(), "sessions": cohort.n_sessions(), "out": out }),
            );
            RunManifest::finish(
                "synth",
                json!({ "synth": cfg.synth }),
                Some(seed),
                vec![],
                &out,
                vec![out.clone()],
                clock,
            )?;
        }

        Command::Preprocess {
            common,
            input,
            out,
            alpha,
            n_iter,
            bipolar,
        } => {
            let (mut cfg, seed) = load_config(&common)?;
            if let Some(a) = alpha {
                cfg.preprocess.alpha = a;
            }
            if let Some(n) = n_iter {
                cfg.preprocess.n_iter = n;
            }
            cfg.preprocess.bipolar |= bipolar;
            let raw = load_bundle(&input).with_context(|| format!("loading bundle {}", input.display()))?;
            let (processed, report) = preprocess(&raw, &cfg.preprocess)?;
            processed.write(&out)?;
            let report_path = out.join("selection_report.json");
            write_json(&report_path, &report)?;
            event(
                "preprocess_done",
                json!({
                    "tested": report.n_tested,
                    "selected": report.n_selected,
                    "subjects_retained": processed.subjects.len(),
                }),
            );
            RunManifest::finish(
                "preprocess",
                json!({ "preprocess": cfg.preprocess }),
                Some(seed),
                vec![input],
                &out,
                vec![out.clone(), report_path],
                clock,
            )?;
        }

        Command::Train {
            common,
            model,
            mode,
            subject,
            data,
            out,
            splits,
        } => {
            let (cfg, seed) = with_model_flags(&common, &model)?;
            let mode: Mode = mode.parse()?;
            let full = load_processed(&data)?;
            let picked: Vec<usize> = match (mode, &subject) {
                (Mode::SingleSubject, Some(id)) => vec![full
                    .subject_index(id)
                    .ok_or_else(|| seegnet::Error::UnknownSubject(id.clone()))?],
                (Mode::SingleSubject, None) if full.subjects.len() == 1 => vec![0],
                (Mode::SingleSubject, None) => {
                    bail!("--subject is required for single-subject training on several subjects")
                }
                (Mode::MultiSubject, Some(_)) => bail!("--subject only applies to --mode single"),
                (Mode::MultiSubject, None) => (0..full.subjects.len()).collect(),
            };
            let ids: Vec<&str> = picked.iter().map(|&i| full.subjects[i].subject_id.as_str()).collect();
            let cohort = full.select(&ids)?;
            create_dir(&out)?;
            let train_once = |split_seed: u64, dir: &Path| -> Result<EvalReport> {
                let split = split_for(&full, split_seed)?.subset(&picked)?;
                let (m, history) = train(&cfg.model, &cohort, &split, &cfg.train, mode)?;
                create_dir(dir)?;
                save_run(dir, &m, &history, &split)?;
                let report = evaluate(&m, &cohort, &split, SplitLabel::Test)?;
                event(
                    "train_done",
                    json!({
                        "split_seed": split_seed,
                        "best_epoch": history.best_epoch,
                        "best_val_loss": history.best_val_loss,
                        "test_pooled_r2": report.pooled_r2,
                    }),
                );
                Ok(report)
            };
            match splits {
                None => {
                    train_once(seed, &out)?;
                }
                Some(n) => {
                    let summary = multi_split_average(n, |split_seed| {
                        let r = train_once(split_seed, &out.join(format!("split_{split_seed}")))
                            .map_err(|e| seegnet::Error::Invalid(format!("{e:#}")))?;
                        Ok(vec![
                            ("test_pooled_r2".into(), r.pooled_r2),
                            ("test_mean_r2".into(), r.mean_r2.mean),
                            ("test_pooled_rmse_ms".into(), r.pooled_rmse_ms),
                        ])
                    })?;
                    let summary: serde_json::Map<String, Value> =
                        summary.into_iter().map(|(k, v)| (k, json!(v))).collect();
                    write_json(&out.join("summary.json"), &summary)?;
                }
            }
            RunManifest::finish(
                "train",
                json!({ "mode": mode, "splits": splits, "config": snapshot(&cfg)? }),
                Some(seed),
                vec![data],
                &out,
                vec![out.clone()],
                clock,
            )?;
        }

        Command::Finetune {
            common,
            checkpoint,
            data,
            subject,
            out,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let pre = load_checkpoint(&checkpoint)?;
            head_missing(&pre, &subject)?;
            let cohort = load_processed(&data)?;
            let split = split_for(&cohort, seed)?;
            let (m, history) = finetune(&pre, &cohort, &split, &subject, &cfg.train)?;
            create_dir(&out)?;
            save_run(&out, &m, &history, &split)?;
            event(
                "finetune_done",
                json!({ "subject": subject, "best_epoch": history.best_epoch }),
            );
            RunManifest::finish(
                "finetune",
                json!({ "subject": subject, "config": snapshot(&cfg)? }),
                Some(seed),
                vec![checkpoint, data],
                &out,
                vec![out.clone()],
                clock,
            )?;
        }

        Command::Transfer {
            common,
            checkpoint,
            data,
            subject,
            out,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let pre = load_checkpoint(&checkpoint)?;
            let cohort = load_processed(&data)?;
            let split = split_for(&cohort, seed)?;
            let outcome = transfer(&pre, &cohort, &split, &subject, &cfg.transfer_cfg())?;
            create_dir(&out)?;
            save_run(&out, &outcome.model, &outcome.history, &split)?;
            write_json(&out.join("freeze.json"), &outcome.freeze)?;
            event(
                "transfer_done",
                json!({ "subject": subject, "best_epoch": outcome.history.best_epoch, "freeze": outcome.freeze }),
            );
            RunManifest::finish(
                "transfer",
                json!({ "subject": subject, "config": snapshot(&cfg)? }),
                Some(seed),
                vec![checkpoint, data],
                &out,
                vec![out.clone()],
                clock,
            )?;
        }

        Command::Loo {
            common,
            model,
            data,
            out,
            subjects,
        } => {
            let (cfg, seed) = with_model_flags(&common, &model)?;
            let cohort = load_processed(&data)?;
            let split = split_for(&cohort, seed)?;
            let held = (!subjects.is_empty()).then_some(subjects.as_slice());
            let reports = loo_workflow(&cfg.model, &cohort, &split, &cfg.train, &cfg.transfer_cfg(), held)?;
            create_dir(&out)?;
            write_json(&out.join("loo.json"), &reports)?;
            let mut csv = String::from("subject,r2,rmse_ms,n_trials,pretrain_best_epoch,transfer_best_epoch\n");
            for r in &reports {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.subject_id,
                    r.test.r2,
                    r.test.rmse_ms,
                    r.test.n_trials,
                    r.pretrain_best_epoch,
                    r.transfer_best_epoch
                ));
            }
            write_atomic(&out.join("loo.csv"), csv.as_bytes())?;
            event("loo_done", json!({ "subjects": reports.len() }));
            RunManifest::finish(
                "loo",
                json!({ "config": snapshot(&cfg)? }),
                Some(seed),
                vec![data],
                &out,
                vec![out.join("loo.json"), out.join("loo.csv")],
                clock,
            )?;
        }

        Command::Eval {
            common,
            checkpoint,
            data,
            out,
            label,
            baseline: kind,
            latency,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let label: SplitLabel =
                serde_json::from_value(json!(label)).map_err(|_| anyhow!("--label must be train, val or test"))?;
            let cohort = load_processed(&data)?;
            let split = split_for(&cohort, seed)?;
            create_dir(&out)?;
            let mut inputs = vec![data];
            if let Some(kind) = kind {
                let kind: BaselineKind = kind.parse()?;
                if label != SplitLabel::Test {
                    bail!("baselines are scored on the test split only");
                }
                let mut reports = Vec::new();
                let mut csv = String::from("subject,r2,rmse_ms,n_trials,alpha,n_components\n");
                for s in &cohort.subjects {
                    let b = baseline(kind, &cohort, &split, &s.subject_id, &cfg.train, &cfg.model)?;
                    let sc = &b.report.subjects[0];
                    let opt = |v: Option<String>| v.unwrap_or_default();
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        sc.subject_id,
                        sc.r2,
                        sc.rmse_ms,
                        sc.n_trials,
                        opt(b.alpha.map(|a| a.to_string())),
                        opt(b.n_components.map(|n| n.to_string()))
                    ));
                    event(
                        "baseline_subject",
                        json!({ "kind": kind, "subject": sc.subject_id, "r2": sc.r2 }),
                    );
                    reports.push(b.report);
                }
                write_json(&out.join("eval.json"), &reports)?;
                write_atomic(&out.join("eval_subjects.csv"), csv.as_bytes())?;
            } else {
                let path = checkpoint.expect("clap requires --checkpoint without --baseline");
                let model = load_checkpoint(&path)?;
                let mut report = evaluate(&model, &cohort, &split, label)?;
                if latency {
                    let first = cohort_inputs(&model, &cohort, &[(0, 0)])?;
                    report.latency = Some(measure_latency(&model, &first[0], 10, 100)?);
                }
                event(
                    "eval_done",
                    json!({ "pooled_r2": report.pooled_r2, "mean_r2": report.mean_r2.mean, "rmse_ms": report.pooled_rmse_ms }),
                );
                write_json(&out.join("eval.json"), &report)?;
                write_atomic(&out.join("eval_subjects.csv"), report.subjects_csv().as_bytes())?;
                inputs.push(path);
            }
            RunManifest::finish(
                "eval",
                json!({ "label": label, "config": snapshot(&cfg)? }),
                Some(seed),
                inputs,
                &out,
                vec![out.join("eval.json"), out.join("eval_subjects.csv")],
                clock,
            )?;
        }

        Command::Ablate {
            common,
            model,
            data,
            out,
            variants,
        } => {
            let (cfg, seed) = with_model_flags(&common, &model)?;
            let variants: Vec<Variant> = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<seegnet::Result<_>>()?
            };
            let cohort = load_processed(&data)?;
            let split = split_for(&cohort, seed)?;
            let rows = ablation_suite(&cfg.model, &cohort, &split, &cfg.train, &variants)?;
            create_dir(&out)?;
            write_atomic(&out.join("ablation.csv"), ablation_csv(&rows).as_bytes())?;
            write_json(&out.join("ablation.json"), &rows)?;
            event("ablate_done", json!({ "variants": rows.len() }));
            RunManifest::finish(
                "ablate",
                json!({ "config": snapshot(&cfg)? }),
                Some(seed),
                vec![data],
                &out,
                vec![out.join("ablation.csv"), out.join("ablation.json")],
                clock,
            )?;
        }

        Command::Infer {
            checkpoint,
            data,
            subject,
            trials,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            head_missing(&model, &subject)?;
            let cohort = load_processed(&data)?;
            let s = cohort
                .subject_index(&subject)
                .ok_or_else(|| seegnet::Error::UnknownSubject(subject.clone()))?;
            let subj = &cohort.subjects[s];
            if subj.n_electrodes() > model.config.e_max {
                bail!(
                    "subject {subject} has {} electrodes but the checkpoint holds {}",
                    subj.n_electrodes(),
                    model.config.e_max
                );
            }
            let picks: Vec<usize> = if trials.is_empty() {
                (0..subj.n_trials()).collect()
            } else {
                trials
            };
            if let Some(bad) = picks.iter().find(|&&t| t >= subj.n_trials()) {
                bail!(
                    "trial {bad} out of range: subject {subject} has {} trials",
                    subj.n_trials()
                );
            }
            let head = model.head_index(&subject)?;
            for t in picks {
                let block = subj.trial(t);
                let trial = TrialInput {
                    head,
                    electrodes: subj
                        .electrodes
                        .iter()
                        .enumerate()
                        .map(|(e, m)| ElectrodeInput {
                            slot: e,
                            signal: &block[e * TRIAL_SAMPLES..(e + 1) * TRIAL_SAMPLES],
                            mni: m.mni,
                        })
                        .collect(),
                };
                let start = Instant::now();
                let pred = model.predict(std::slice::from_ref(&trial))?[0];
                let ms = start.elapsed().as_secs_f64() * 1e3;
                println!(
                    "{}",
                    json!({ "subject": subject, "trial": t, "prediction_ms": pred, "target_ms": subj.rts_ms[t], "latency_ms": ms })
                );
            }
        }

        Command::Latency {
            common,
            model,
            checkpoint,
            electrodes,
            n_warm,
            n_meas,
            out,
        } => {
            let (cfg, seed) = with_model_flags(&common, &model)?;
            let net = match &checkpoint {
                Some(p) => load_checkpoint(p)?,
                None => Model::new(cfg.model.clone(), vec!["subject".into()], seed)?,
            };
            let n = electrodes.unwrap_or(net.config.e_max);
            if n == 0 || n > net.config.e_max {
                bail!("--electrodes must lie in 1..={}", net.config.e_max);
            }
            let signals: Vec<Vec<f32>> = (0..n)
                .map(|e| {
                    (0..net.config.t_trial)
                        .map(|i| ((i * (e + 1)) as f32 * 0.01).sin())
                        .collect()
                })
                .collect();
            let trial = TrialInput {
                head: 0,
                electrodes: signals
                    .iter()
                    .enumerate()
                    .map(|(e, s)| ElectrodeInput {
                        slot: e,
                        signal: s,
                        mni: [e as f64, -(e as f64), 0.5 * e as f64],
                    })
                    .collect(),
            };
            let stats = measure_latency(&net, &trial, n_warm, n_meas)?;
            let line = json!({ "electrodes": n, "e_max": net.config.e_max, "latency": stats });
            println!("{line}");
            if let Some(out) = out {
                create_dir(&out)?;
                write_json(&out.join("latency.json"), &line)?;
                RunManifest::finish(
                    "latency",
                    json!({ "model": net.config }),
                    Some(seed),
                    checkpoint.into_iter().collect(),
                    &out,
                    vec![out.join("latency.json")],
                    clock,
                )?;
            }
        }
    }
    Ok(())
}
