use std::collections::HashMap;

use crate::cohort::{ElectrodeMeta, Session, SignalMatrix, Subject};
use crate::error::{Error, Result};

/// Adjacent-contact pairs inferred from ids of the form `<shank><index>`
/// (e.g. `A1`, `A2`, `LH10`): consecutive indices on the same shank.
pub fn shank_pairs(electrodes: &[ElectrodeMeta]) -> Vec<(String, String)> {
    let parse = |id: &str| -> Option<(String, u32)> {
        let split = id.find(|c: char| c.is_ascii_digit())?;
        let (shank, idx) = id.split_at(split);
        Some((shank.to_string(), idx.parse().ok()?))
    };
    let mut contacts: Vec<(String, u32, &str)> = electrodes
        .iter()
        .filter_map(|e| parse(&e.id).map(|(s, i)| (s, i, e.id.as_str())))
        .collect();
    contacts.sort();
    contacts
        .windows(2)
        .filter(|w| w[0].0 == w[1].0 && w[1].1 == w[0].1 + 1)
        .map(|w| (w[0].2.to_string(), w[1].2.to_string()))
        .collect()
}

/// Re-reference a subject to virtual electrodes `a - b` for each pair, placed
/// at the midpoint of the two contacts.
pub fn bipolar_montage(subject: &Subject, pairs: &[(String, String)]) -> Result<Subject> {
    let index: HashMap<&str, usize> = subject
        .electrodes
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let lookup = |id: &str| {
        index.get(id).copied().ok_or_else(|| {
            Error::invalid(format!(
                "subject {}: montage references unknown contact {id}",
                subject.subject_id
            ))
        })
    };
    let idx: Vec<(usize, usize)> = pairs
        .iter()
        .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
        .collect::<Result<_>>()?;

    let electrodes = pairs
        .iter()
        .zip(&idx)
        .map(|((a, b), &(ia, ib))| {
            let (pa, pb) = (subject.electrodes[ia].mni, subject.electrodes[ib].mni);
            ElectrodeMeta::new(format!("{a}-{b}"), [0, 1, 2].map(|k| 0.5 * (pa[k] + pb[k])))
        })
        .collect();
    let sessions = subject
        .sessions
        .iter()
        .map(|s| {
            let rows = idx
                .iter()
                .map(|&(ia, ib)| {
                    s.signals
                        .row(ia)
                        .iter()
                        .zip(s.signals.row(ib))
                        .map(|(x, y)| x - y)
                        .collect()
                })
                .collect();
            let signals = if idx.is_empty() {
                SignalMatrix::zeros(0, s.n_samples())
            } else {
                SignalMatrix::from_rows(rows)?
            };
            Ok(Session { signals, ..s.clone() })
        })
        .collect::<Result<_>>()?;
    Ok(Subject {
        subject_id: subject.subject_id.clone(),
        electrodes,
        sessions,
    })
}
