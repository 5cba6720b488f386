//! On-disk cohort bundle.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<subject>/<session>/signals.bin   "SEEGBNDL" | u32 rows | u32 cols | f32 LE row-major
//! <dir>/<subject>/<session>/events.csv    stim_onset,color_change,rt_ms
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cohort, ElectrodeMeta, Session, SignalMatrix, Subject, TrialEvent};
use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: &[u8; 8] = b"SEEGBNDL";
const HEADER_LEN: usize = 16;
const EVENTS_HEADER: &str = "stim_onset,color_change,rt_ms";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    provenance: String,
    subjects: Vec<ManifestSubject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSubject {
    subject_id: String,
    electrodes: Vec<ElectrodeMeta>,
    sessions: Vec<ManifestSession>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSession {
    session_id: String,
    sampling_rate: f64,
    n_samples: usize,
    signals: String,
    events: String,
}

pub fn write_bundle(cohort: &Cohort, path: &Path) -> Result<()> {
    cohort.validate()?;
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;

    let mut manifest = Manifest {
        format: String::from_utf8_lossy(BUNDLE_MAGIC).into_owned(),
        version: FORMAT_VERSION,
        seed: cohort.seed,
        provenance: cohort.provenance.clone(),
        subjects: Vec::with_capacity(cohort.subjects.len()),
    };

    for subject in &cohort.subjects {
        let mut sessions = Vec::with_capacity(subject.sessions.len());
        for session in &subject.sessions {
            let rel = format!("{}/{}", subject.subject_id, session.session_id);
            let dir = path.join(&rel);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_signals(&dir.join("signals.bin"), &session.signals)?;
            write_events(&dir.join("events.csv"), &session.events)?;
            sessions.push(ManifestSession {
                session_id: session.session_id.clone(),
                sampling_rate: session.sampling_rate,
                n_samples: session.n_samples(),
                signals: format!("{rel}/signals.bin"),
                events: format!("{rel}/events.csv"),
            });
        }
        manifest.subjects.push(ManifestSubject {
            subject_id: subject.subject_id.clone(),
            electrodes: subject.electrodes.clone(),
            sessions,
        });
    }

    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let manifest_path = path.join("manifest.json");
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_bundle(path: &Path) -> Result<Cohort> {
    let manifest_path = path.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::MissingFile {
            path: manifest_path,
            context: "bundle manifest".into(),
        });
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: manifest_path.display().to_string(),
        detail: e.to_string(),
    })?;
    if manifest.format.as_bytes() != BUNDLE_MAGIC {
        return Err(Error::Parse {
            context: manifest_path.display().to_string(),
            detail: format!("unexpected format tag '{}'", manifest.format),
        });
    }

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for ms in manifest.subjects {
        let mut sessions = Vec::with_capacity(ms.sessions.len());
        for sess in ms.sessions {
            let ctx = format!("subject {} session {}", ms.subject_id, sess.session_id);
            let signals = read_signals(&path.join(&sess.signals), &ctx)?;
            if signals.cols() != sess.n_samples {
                return Err(Error::ShapeMismatch {
                    context: ctx,
                    detail: format!("manifest says {} samples, file has {}", sess.n_samples, signals.cols()),
                });
            }
            let events = read_events(&path.join(&sess.events), &ctx)?;
            sessions.push(Session {
                session_id: sess.session_id,
                subject_id: ms.subject_id.clone(),
                sampling_rate: sess.sampling_rate,
                signals,
                events,
            });
        }
        subjects.push(Subject {
            subject_id: ms.subject_id,
            electrodes: ms.electrodes,
            sessions,
        });
    }

    let cohort = Cohort {
        subjects,
        seed: manifest.seed,
        provenance: manifest.provenance,
    };
    cohort.validate()?;
    Ok(cohort)
}

fn write_signals(path: &Path, m: &SignalMatrix) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let rows = u32::try_from(m.rows()).map_err(|_| Error::invalid("too many electrodes"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::invalid("session too long"))?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    bytes.extend_from_slice(BUNDLE_MAGIC);
    bytes.extend_from_slice(&rows.to_le_bytes());
    bytes.extend_from_slice(&cols.to_le_bytes());
    for v in m.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_signals(path: &Path, ctx: &str) -> Result<SignalMatrix> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
            context: format!("{ctx} signals"),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != BUNDLE_MAGIC {
        return Err(Error::Parse {
            context: format!("{ctx}: {}", path.display()),
            detail: "missing SEEGBNDL header".into(),
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::ShapeMismatch {
            context: ctx.to_string(),
            detail: format!("header {rows}x{cols} but {} payload bytes", payload.len()),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SignalMatrix::from_vec(rows, cols, data)
}

fn write_events(path: &Path, events: &[TrialEvent]) -> Result<()> {
    let mut out = String::with_capacity(32 * (events.len() + 1));
    out.push_str(EVENTS_HEADER);
    out.push('\n');
    for ev in events {
        out.push_str(&format!("{},{},{}\n", ev.stim_onset, ev.color_change, ev.rt_ms));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_events(path: &Path, ctx: &str) -> Result<Vec<TrialEvent>> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
            context: format!("{ctx} events"),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(EVENTS_HEADER) {
        return Err(Error::Parse {
            context: format!("{ctx}: {}", path.display()),
            detail: format!("expected header '{EVENTS_HEADER}'"),
        });
    }
    let bad = |line_no: usize, what: &str| Error::Parse {
        context: format!("{ctx}: {} line {}", path.display(), line_no + 2),
        detail: what.to_string(),
    };
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad(i, "expected 3 fields"));
        }
        events.push(TrialEvent {
            stim_onset: fields[0].parse().map_err(|_| bad(i, "stim_onset"))?,
            color_change: fields[1].parse().map_err(|_| bad(i, "color_change"))?,
            rt_ms: fields[2].parse().map_err(|_| bad(i, "rt_ms"))?,
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_subject_cohort() -> Cohort {
        let mk_session = |subject: &str, id: &str, rows: usize| Session {
            session_id: id.into(),
            subject_id: subject.into(),
            sampling_rate: 1024.0,
            signals: SignalMatrix::from_vec(rows, 50, (0..rows * 50).map(|i| (i as f32 * 0.37).sin()).collect())
                .unwrap(),
            events: vec![
                TrialEvent {
                    stim_onset: 1,
                    color_change: 5,
                    rt_ms: 312.5,
                },
                TrialEvent {
                    stim_onset: 20,
                    color_change: 30,
                    rt_ms: 0.1 + 0.2,
                },
            ],
        };
        Cohort {
            subjects: vec![
                Subject {
                    subject_id: "S0".into(),
                    electrodes: vec![ElectrodeMeta::new("a", [1.5, -2.25, 3.0])],
                    sessions: vec![mk_session("S0", "ses-0", 1), mk_session("S0", "ses-1", 1)],
                },
                Subject {
                    subject_id: "S1".into(),
                    electrodes: vec![
                        ElectrodeMeta::new("a", [10.0, 0.0, -40.0]),
                        ElectrodeMeta::new("b", [-60.1, 33.3, 12.0]),
                    ],
                    sessions: vec![mk_session("S1", "ses-0", 2)],
                },
            ],
            seed: Some(3),
            provenance: "unit".into(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = two_subject_cohort();
        write_bundle(&c, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back.subjects.len(), 2);
        assert_eq!(back.n_sessions(), 3);
        assert_eq!(back, c);
    }

    #[test]
    fn empty_cohort_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&Cohort::default(), dir.path()).unwrap();
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
        assert!(load_bundle(dir.path()).unwrap().subjects.is_empty());
    }

    #[test]
    fn missing_signals_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&two_subject_cohort(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("S1/ses-0/signals.bin")).unwrap();
        match load_bundle(dir.path()) {
            Err(Error::MissingFile { context, .. }) => assert!(context.contains("S1")),
            other => panic!("expected missing file, got {other:?}"),
        }
    }

    #[test]
    fn row_count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = two_subject_cohort();
        write_bundle(&c, dir.path()).unwrap();
        // Rewrite S1's signals with a single row while the manifest lists two electrodes.
        c.subjects[1].sessions[0].signals = SignalMatrix::zeros(1, 50);
        write_signals(
            &dir.path().join("S1/ses-0/signals.bin"),
            &c.subjects[1].sessions[0].signals,
        )
        .unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::ShapeMismatch { .. })));
    }
}
