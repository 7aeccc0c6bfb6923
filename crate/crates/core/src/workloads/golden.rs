//! Golden runs: the error-free response stream a trial is judged against.
//!
//! File format: a frame holding the JSON metadata, one frame per response,
//! then a 32-byte SHA-256 footer over everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::frame::{encode, split_frames};
use super::memory::ImageMemory;
use super::{generate_dataset, Workload, WorkloadError, WorkloadSpec};

pub const GOLDEN_FORMAT: &str = "hrmlab-golden/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct GoldenMeta {
    format: String,
    workload_version: String,
    spec: WorkloadSpec,
    queries: usize,
    dataset_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Golden {
    pub spec: WorkloadSpec,
    pub queries: usize,
    pub dataset_checksum: String,
    pub responses: Vec<Vec<u8>>,
    pub hash: [u8; 32],
}

fn body(spec: &WorkloadSpec, queries: usize, checksum: &str, responses: &[Vec<u8>]) -> Vec<u8> {
    let meta = GoldenMeta {
        format: GOLDEN_FORMAT.into(),
        workload_version: spec.id().version().into(),
        spec: *spec,
        queries,
        dataset_checksum: checksum.into(),
    };
    let mut out = encode(&serde_json::to_vec(&meta).expect("metadata serializes"));
    for r in responses {
        out.extend(encode(r));
    }
    out
}

fn run_once(spec: &WorkloadSpec, queries: usize) -> Result<(String, Vec<Vec<u8>>), WorkloadError> {
    let dataset = generate_dataset(spec)?;
    let workload = Workload::new(spec, &dataset.layout);
    let checksum = dataset.checksum();
    let mut mem = ImageMemory { bytes: dataset.image };
    let responses = spec
        .queries(queries)
        .iter()
        .map(|q| {
            workload
                .handle(&mut mem, q)
                .map_err(|f| WorkloadError::Defect(format!("fault {f:?} on an uninjected run")))
        })
        .collect::<Result<_, _>>()?;
    Ok((checksum, responses))
}

/// Runs the workload twice without injection; differing runs are a defect.
pub fn golden_run(spec: &WorkloadSpec, queries: usize) -> Result<Golden, WorkloadError> {
    if queries == 0 {
        return Err(WorkloadError::Config("query count must be at least 1".into()));
    }
    let (checksum, responses) = run_once(spec, queries)?;
    let (checksum2, responses2) = run_once(spec, queries)?;
    let hash: [u8; 32] = Sha256::digest(body(spec, queries, &checksum, &responses)).into();
    let hash2: [u8; 32] = Sha256::digest(body(spec, queries, &checksum2, &responses2)).into();
    if hash != hash2 {
        return Err(WorkloadError::Defect(format!(
            "two golden runs of {} differ ({} vs {})",
            spec.id(),
            hex::encode(hash),
            hex::encode(hash2)
        )));
    }
    Ok(Golden {
        spec: *spec,
        queries,
        dataset_checksum: checksum,
        responses,
        hash,
    })
}

impl Golden {
    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = body(&self.spec, self.queries, &self.dataset_checksum, &self.responses);
        out.extend_from_slice(&self.hash);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WorkloadError> {
        let bad = |m: &str| WorkloadError::Golden(m.to_string());
        if bytes.len() < 32 {
            return Err(bad("shorter than the hash footer"));
        }
        let (content, footer) = bytes.split_at(bytes.len() - 32);
        let hash: [u8; 32] = Sha256::digest(content).into();
        if hash[..] != footer[..] {
            return Err(bad("content hash mismatch"));
        }
        let mut frames = split_frames(content).map_err(|e| bad(&e.to_string()))?.into_iter();
        let meta: GoldenMeta = frames
            .next()
            .ok_or_else(|| bad("missing metadata frame"))
            .and_then(|m| serde_json::from_slice(&m).map_err(|e| bad(&e.to_string())))?;
        if meta.format != GOLDEN_FORMAT {
            return Err(bad(&format!("unsupported format `{}`", meta.format)));
        }
        let responses: Vec<Vec<u8>> = frames.collect();
        if responses.len() != meta.queries {
            return Err(bad("response count differs from the recorded query count"));
        }
        Ok(Golden {
            spec: meta.spec,
            queries: meta.queries,
            dataset_checksum: meta.dataset_checksum,
            responses,
            hash,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), WorkloadError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self, WorkloadError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
