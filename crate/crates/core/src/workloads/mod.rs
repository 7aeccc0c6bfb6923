//! Bundled workloads: small, deterministic services whose injectable state
//! lives in named arena segments.

pub mod frame;
pub mod golden;
pub mod graph;
pub mod kv;
pub mod memory;
#[cfg(target_os = "linux")]
pub mod native;
pub mod search;
pub mod serve;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use golden::{golden_run, Golden};
pub use memory::{Access, Fault, ImageMemory, Layout, Memory, Segment};

use graph::{GraphParams, MiniGraph};
use kv::{KvParams, MiniKv};
use search::{MiniSearch, SearchParams};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("workload config: {0}")]
    Config(String),
    #[error("workload arguments: {0}")]
    Args(String),
    #[error("workload defect: {0}")]
    Defect(String),
    #[error("golden file: {0}")]
    Golden(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadId {
    MiniKv,
    MiniSearch,
    MiniGraph,
}

impl WorkloadId {
    pub const ALL: [WorkloadId; 3] = [WorkloadId::MiniKv, WorkloadId::MiniSearch, WorkloadId::MiniGraph];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadId::MiniKv => "mini-kv",
            WorkloadId::MiniSearch => "mini-search",
            WorkloadId::MiniGraph => "mini-graph",
        }
    }

    /// Bumped whenever dataset generation, query streams or responses change.
    pub fn version(self) -> &'static str {
        match self {
            WorkloadId::MiniKv => "mini-kv/1",
            WorkloadId::MiniSearch => "mini-search/1",
            WorkloadId::MiniGraph => "mini-graph/1",
        }
    }
}

impl fmt::Display for WorkloadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadId {
    type Err = WorkloadError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadId::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| WorkloadError::Config(format!("unknown workload `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum WorkloadParams {
    MiniKv(KvParams),
    MiniSearch(SearchParams),
    MiniGraph(GraphParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub dataset_seed: u64,
    pub query_seed: u64,
    pub params: WorkloadParams,
}

impl WorkloadSpec {
    pub fn new(id: WorkloadId, dataset_seed: u64, query_seed: u64) -> Self {
        let params = match id {
            WorkloadId::MiniKv => WorkloadParams::MiniKv(KvParams::default()),
            WorkloadId::MiniSearch => WorkloadParams::MiniSearch(SearchParams::default()),
            WorkloadId::MiniGraph => WorkloadParams::MiniGraph(GraphParams::default()),
        };
        WorkloadSpec {
            dataset_seed,
            query_seed,
            params,
        }
    }

    pub fn id(&self) -> WorkloadId {
        match self.params {
            WorkloadParams::MiniKv(_) => WorkloadId::MiniKv,
            WorkloadParams::MiniSearch(_) => WorkloadId::MiniSearch,
            WorkloadParams::MiniGraph(_) => WorkloadId::MiniGraph,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        match &self.params {
            WorkloadParams::MiniKv(p) => p.validate(),
            WorkloadParams::MiniSearch(p) => p.validate(),
            WorkloadParams::MiniGraph(p) => p.validate(),
        }
    }

    /// 1,000 queries for mini-kv and mini-search, one BFS per node for mini-graph.
    pub fn default_queries(&self) -> usize {
        match &self.params {
            WorkloadParams::MiniGraph(p) => p.nodes as usize,
            _ => 1000,
        }
    }

    pub fn layout(&self) -> Layout {
        match &self.params {
            WorkloadParams::MiniKv(p) => kv::layout(p),
            WorkloadParams::MiniSearch(p) => search::layout(p),
            WorkloadParams::MiniGraph(p) => graph::layout(p),
        }
    }

    pub fn queries(&self, count: usize) -> Vec<Vec<u8>> {
        match &self.params {
            WorkloadParams::MiniKv(p) => kv::queries(p, self.query_seed, count),
            WorkloadParams::MiniSearch(p) => search::queries(p, self.query_seed, count),
            WorkloadParams::MiniGraph(p) => graph::queries(p, self.query_seed, count),
        }
    }

    /// Command-line form understood by [`WorkloadSpec::from_args`].
    pub fn to_args(&self) -> Vec<String> {
        let mut a = vec![
            self.id().as_str().to_string(),
            "--dataset-seed".into(),
            self.dataset_seed.to_string(),
            "--query-seed".into(),
            self.query_seed.to_string(),
        ];
        let mut kv = |k: &str, v: u32| a.extend([format!("--{k}"), v.to_string()]);
        match &self.params {
            WorkloadParams::MiniKv(p) => {
                kv("keys", p.keys);
                kv("buckets", p.buckets);
                kv("value-len", p.value_len);
            }
            WorkloadParams::MiniSearch(p) => {
                kv("docs", p.docs);
                kv("vocab", p.vocab);
                kv("terms-per-doc", p.terms_per_doc);
                kv("k", p.k);
            }
            WorkloadParams::MiniGraph(p) => {
                kv("nodes", p.nodes);
                kv("avg-degree", p.avg_degree);
            }
        }
        a
    }

    pub fn from_args<S: AsRef<str>>(args: &[S]) -> Result<Self, WorkloadError> {
        let (id, rest) = args
            .split_first()
            .ok_or_else(|| WorkloadError::Args("missing workload id".into()))?;
        let mut spec = WorkloadSpec::new(id.as_ref().parse()?, 0, 0);
        if rest.len() % 2 != 0 {
            return Err(WorkloadError::Args("flags must come in `--name value` pairs".into()));
        }
        for pair in rest.chunks(2) {
            let (flag, value) = (pair[0].as_ref(), pair[1].as_ref());
            let bad = || WorkloadError::Args(format!("bad value `{value}` for {flag}"));
            let int = || value.parse::<u32>().map_err(|_| bad());
            match (flag, &mut spec.params) {
                ("--dataset-seed", _) => spec.dataset_seed = value.parse().map_err(|_| bad())?,
                ("--query-seed", _) => spec.query_seed = value.parse().map_err(|_| bad())?,
                ("--keys", WorkloadParams::MiniKv(p)) => p.keys = int()?,
                ("--buckets", WorkloadParams::MiniKv(p)) => p.buckets = int()?,
                ("--value-len", WorkloadParams::MiniKv(p)) => p.value_len = int()?,
                ("--docs", WorkloadParams::MiniSearch(p)) => p.docs = int()?,
                ("--vocab", WorkloadParams::MiniSearch(p)) => p.vocab = int()?,
                ("--terms-per-doc", WorkloadParams::MiniSearch(p)) => p.terms_per_doc = int()?,
                ("--k", WorkloadParams::MiniSearch(p)) => p.k = int()?,
                ("--nodes", WorkloadParams::MiniGraph(p)) => p.nodes = int()?,
                ("--avg-degree", WorkloadParams::MiniGraph(p)) => p.avg_degree = int()?,
                _ => return Err(WorkloadError::Args(format!("unknown flag {flag} for {id}", id = id.as_ref()))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub spec: WorkloadSpec,
    pub layout: Layout,
    pub image: Vec<u8>,
}

impl Dataset {
    /// SHA-256 of the initial arena image, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(&self.image))
    }
}

pub fn generate_dataset(spec: &WorkloadSpec) -> Result<Dataset, WorkloadError> {
    spec.validate()?;
    let (layout, image) = match &spec.params {
        WorkloadParams::MiniKv(p) => kv::generate(p, spec.dataset_seed),
        WorkloadParams::MiniSearch(p) => search::generate(p, spec.dataset_seed),
        WorkloadParams::MiniGraph(p) => graph::generate(p, spec.dataset_seed),
    };
    debug_assert_eq!(layout.total_len(), image.len() as u64);
    Ok(Dataset {
        spec: *spec,
        layout,
        image,
    })
}

/// A request handler bound to a dataset layout.
#[derive(Debug, Clone)]
pub enum Workload {
    Kv(MiniKv),
    Search(MiniSearch),
    Graph(MiniGraph),
}

impl Workload {
    pub fn new(spec: &WorkloadSpec, layout: &Layout) -> Self {
        match spec.id() {
            WorkloadId::MiniKv => Workload::Kv(MiniKv::new(layout)),
            WorkloadId::MiniSearch => Workload::Search(MiniSearch::new(layout)),
            WorkloadId::MiniGraph => Workload::Graph(MiniGraph::new(layout)),
        }
    }

    pub fn handle<M: Memory>(&self, mem: &mut M, request: &[u8]) -> Result<Vec<u8>, Fault> {
        match self {
            Workload::Kv(w) => w.handle(mem, request),
            Workload::Search(w) => w.handle(mem, request),
            Workload::Graph(w) => w.handle(mem, request),
        }
    }
}
