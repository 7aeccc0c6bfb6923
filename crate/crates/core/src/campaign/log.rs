//! Campaign log: JSON Lines, a header line then one line per trial in
//! gapless `seq` order. Each line is written with a single `write` so an
//! interrupted campaign leaves at most one torn line at the tail.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CampaignError, CampaignPlan, TrialRecord};
use crate::backend::BackendKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub plan_hash: String,
    pub seed: u64,
    pub workload_versions: BTreeMap<String, String>,
    pub backend: BackendKind,
    pub started_at_unix_ms: u64,
    pub golden_hash: String,
    pub dataset_checksum: String,
    pub trials: u64,
    pub plan: CampaignPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum Line {
    Header(LogHeader),
    Trial(TrialRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignLog {
    pub header: LogHeader,
    pub records: Vec<TrialRecord>,
    /// Byte length of the complete lines; anything after is a torn tail.
    pub good_len: u64,
    pub torn_tail: bool,
}

impl CampaignLog {
    pub fn is_complete(&self) -> bool {
        self.records.len() as u64 == self.header.trials
    }
}

pub fn header_line(header: &LogHeader) -> String {
    let mut s = serde_json::to_string(&Line::Header(header.clone())).expect("header serializes");
    s.push('\n');
    s
}

pub fn record_line(record: &TrialRecord) -> String {
    let mut s = serde_json::to_string(&Line::Trial(record.clone())).expect("record serializes");
    s.push('\n');
    s
}

/// Parses a log. Records must carry `seq` 0, 1, 2, ... in order; a torn
/// final line is tolerated and reported.
pub fn parse_log(text: &str) -> Result<CampaignLog, CampaignError> {
    let integrity = |m: String| CampaignError::Integrity(m);
    let mut header = None;
    let mut records = Vec::new();
    let mut good_len = 0u64;
    let mut torn_tail = false;
    let mut rest = text;
    let mut lineno = 0;
    while !rest.is_empty() {
        lineno += 1;
        let (line, complete) = match rest.find('\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let parsed = serde_json::from_str::<Line>(line);
        match (parsed, complete) {
            (Ok(l), true) => {
                match (l, &header) {
                    (Line::Header(h), None) => header = Some(h),
                    (Line::Header(_), Some(_)) => return Err(integrity(format!("line {lineno}: second header"))),
                    (Line::Trial(_), None) => return Err(integrity("first line is not a header".into())),
                    (Line::Trial(r), Some(_)) => {
                        if r.seq != records.len() as u64 {
                            return Err(integrity(format!(
                                "line {lineno}: seq {} where {} was expected",
                                r.seq,
                                records.len()
                            )));
                        }
                        records.push(r);
                    }
                }
                good_len += line.len() as u64 + 1;
                rest = &rest[line.len() + 1..];
            }
            (_, false) => {
                torn_tail = true;
                break;
            }
            (Err(e), true) => {
                if rest.len() == line.len() + 1 {
                    torn_tail = true;
                    break;
                }
                return Err(integrity(format!("line {lineno}: {e}")));
            }
        }
    }
    let header = header.ok_or_else(|| integrity("log has no header".into()))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(integrity(format!("unsupported schema version {}", header.schema_version)));
    }
    Ok(CampaignLog {
        header,
        records,
        good_len,
        torn_tail,
    })
}

pub fn read_log(path: &Path) -> Result<CampaignLog, CampaignError> {
    let text = std::fs::read_to_string(path)?;
    parse_log(&text)
}

/// Single serializer for trial records, reordering completions by `seq`.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
    next_seq: u64,
    pending: BTreeMap<u64, TrialRecord>,
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, CampaignError> {
        let mut file = File::create(path)?;
        file.write_all(header_line(header).as_bytes())?;
        file.sync_data()?;
        Ok(LogWriter {
            file,
            next_seq: 0,
            pending: BTreeMap::new(),
        })
    }

    /// Reopens an interrupted log, dropping a torn tail. The plan hash must match.
    pub fn resume(path: &Path, plan_hash: &str) -> Result<(Self, CampaignLog), CampaignError> {
        let log = read_log(path)?;
        if log.header.plan_hash != plan_hash {
            return Err(CampaignError::Integrity(format!(
                "log was written for plan {} but this plan hashes to {plan_hash}",
                log.header.plan_hash
            )));
        }
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(log.good_len)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        file.flush()?;
        Ok((
            LogWriter {
                file,
                next_seq: log.records.len() as u64,
                pending: BTreeMap::new(),
            },
            log,
        ))
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Buffers `record`; writes every record that is now contiguous and
    /// returns those records.
    pub fn push(&mut self, record: TrialRecord) -> Result<Vec<TrialRecord>, CampaignError> {
        if record.seq < self.next_seq || self.pending.contains_key(&record.seq) {
            return Err(CampaignError::Integrity(format!("duplicate record for seq {}", record.seq)));
        }
        self.pending.insert(record.seq, record);
        let mut written = Vec::new();
        while let Some(r) = self.pending.remove(&self.next_seq) {
            self.file.write_all(record_line(&r).as_bytes())?;
            self.next_seq += 1;
            written.push(r);
        }
        Ok(written)
    }

    pub fn pending_seqs(&self) -> BTreeSet<u64> {
        self.pending.keys().copied().collect()
    }

    pub fn finish(mut self) -> Result<(), CampaignError> {
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{Comparator, TrialConfig, TrialOutcome, TrialStatus};
    use crate::workloads::{WorkloadId, WorkloadSpec};

    const PLAN: &str = "[workload]\nid = \"mini-graph\"\n[backend]\nkind = \"arena\"\n[sampling]\ntargets = 2\nseed = 1\n";

    fn header() -> LogHeader {
        LogHeader {
            schema_version: SCHEMA_VERSION,
            plan_hash: "abc".into(),
            seed: 1,
            workload_versions: BTreeMap::from([("mini-graph".into(), "mini-graph/1".into())]),
            backend: BackendKind::Arena,
            started_at_unix_ms: 0,
            golden_hash: "00".into(),
            dataset_checksum: "11".into(),
            trials: 3,
            plan: CampaignPlan::from_toml(PLAN).unwrap(),
        }
    }

    fn record(seq: u64) -> TrialRecord {
        TrialRecord {
            seq,
            config: TrialConfig {
                workload: WorkloadSpec::new(WorkloadId::MiniGraph, 1, 1),
                backend: BackendKind::Arena,
                specs: vec![],
                queries: 30,
                timeout_ms: 10,
                comparator: Comparator::PerQueryExact,
                seed: seq,
            },
            region: None,
            status: TrialStatus::Valid {
                outcome: TrialOutcome::Masked { total: 30 },
            },
            receipts: vec![],
        }
    }

    #[test]
    fn reorder_buffer_writes_in_seq_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = LogWriter::create(&path, &header()).unwrap();
        assert!(w.push(record(2)).unwrap().is_empty());
        assert_eq!(w.push(record(0)).unwrap(), vec![record(0)]);
        assert_eq!(w.pending_seqs(), BTreeSet::from([2]));
        assert_eq!(w.push(record(1)).unwrap().len(), 2);
        assert!(w.push(record(1)).is_err());
        w.finish().unwrap();
        let log = read_log(&path).unwrap();
        assert_eq!(log.records.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(log.is_complete());
    }

    #[test]
    fn resume_truncates_torn_tail_and_checks_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = LogWriter::create(&path, &header()).unwrap();
        w.push(record(0)).unwrap();
        w.finish().unwrap();
        let full = record_line(&record(1));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&full.as_bytes()[..full.len() / 2]).unwrap();
        drop(f);
        assert!(read_log(&path).unwrap().torn_tail);

        assert!(matches!(LogWriter::resume(&path, "other"), Err(CampaignError::Integrity(_))));
        let (mut w, log) = LogWriter::resume(&path, "abc").unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(w.next_seq(), 1);
        w.push(record(1)).unwrap();
        w.push(record(2)).unwrap();
        w.finish().unwrap();
        let log = read_log(&path).unwrap();
        assert!(!log.torn_tail);
        assert_eq!(log.records.len(), 3);
    }

    #[test]
    fn gaps_are_integrity_errors() {
        let text = header_line(&header()) + &record_line(&record(1));
        assert!(matches!(parse_log(&text), Err(CampaignError::Integrity(_))));
        assert!(matches!(parse_log(&record_line(&record(0))), Err(CampaignError::Integrity(_))));
    }
}
