use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::VerdictRecord;
use crate::error::{DasError, Result};

/// Append-only JSONL verdict log.
pub struct VerdictLog {
    file: Mutex<File>,
}

impl VerdictLog {
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| DasError::io(path, e))?;
        Ok(VerdictLog {
            file: Mutex::new(file),
        })
    }

    pub fn write(&self, record: &VerdictRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file
            .lock()
            .expect("verdict log poisoned")
            .write_all(&line)
            .map_err(|e| DasError::io("<verdict log>", e))
    }
}

/// Reads a verdict log, tolerating a torn last line.
pub fn read_verdict_log(path: &Path) -> Result<Vec<VerdictRecord>> {
    let file = File::open(path).map_err(|e| DasError::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| DasError::io(path, e))?;
    let last = lines.len();
    let mut records = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(_) if i + 1 == last => break,
            Err(e) => {
                return Err(DasError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub trial: u32,
    pub round: u32,
    pub phi: f64,
    pub groups: usize,
    pub singletons: usize,
    pub members: usize,
    pub survivors: usize,
    pub awarded: f64,
}

pub fn round_summaries(verdicts: &[VerdictRecord]) -> Vec<RoundSummary> {
    let mut rounds: BTreeMap<(u32, u32), RoundSummary> = BTreeMap::new();
    for v in verdicts {
        let s = rounds
            .entry((v.trial, v.round))
            .or_insert_with(|| RoundSummary {
                trial: v.trial,
                round: v.round,
                phi: v.phi,
                groups: 0,
                singletons: 0,
                members: 0,
                survivors: 0,
                awarded: 0.0,
            });
        if v.singleton {
            s.singletons += 1;
        } else {
            s.groups += 1;
        }
        s.members += v.group.len();
        s.survivors += v.winners.len();
        s.awarded += v.awards.iter().map(|a| a.points).sum::<f64>();
    }
    rounds.into_values().collect()
}

/// Checks every round against `3·phi` per judged group plus `2·phi` per
/// singleton, and every individual award against `{phi, 2·phi}`.
pub fn check_score_conservation(verdicts: &[VerdictRecord]) -> std::result::Result<(), String> {
    for v in verdicts {
        for a in &v.awards {
            if a.points != v.phi && a.points != 2.0 * v.phi {
                return Err(format!(
                    "trial {} round {}: award {} to {} is not phi={} or 2phi",
                    v.trial, v.round, a.points, a.doc_id, v.phi
                ));
            }
        }
        if verdicts
            .iter()
            .any(|o| o.trial == v.trial && o.round == v.round && o.phi != v.phi)
        {
            return Err(format!(
                "trial {} round {}: mixed weights",
                v.trial, v.round
            ));
        }
    }
    for s in round_summaries(verdicts) {
        let expected = 3.0 * s.phi * s.groups as f64 + 2.0 * s.phi * s.singletons as f64;
        if s.awarded != expected {
            return Err(format!(
                "trial {} round {}: awarded {} but expected {}",
                s.trial, s.round, s.awarded, expected
            ));
        }
    }
    Ok(())
}
