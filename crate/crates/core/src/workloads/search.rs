//! mini-search: inverted index with term-at-a-time scoring and top-k results.
//!
//! | segment           | tag     | contents                                        |
//! |-------------------|---------|-------------------------------------------------|
//! | `search.meta`     | private | doc count, vocabulary size, k                   |
//! | `search.dict`     | private | per term: postings pointer u32, postings len u32|
//! | `search.postings` | heap    | postings: doc u32, weight u32, doc-ascending    |
//! | `search.ranks`    | private | static rank u32 per document                    |
//! | `search.frame`    | stack   | per-document score accumulators                 |
//!
//! Request: `<nterms u8> <term u32 LE>*`. Response: up to k doc ids (u32 LE),
//! ordered by `acc * 1024 + rank` descending, ties by doc id ascending.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::memory::{Fault, ImageMemory, Layout, Memory};
use super::WorkloadError;
use crate::region::RegionKind;

const RANK_SCALE: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub docs: u32,
    pub vocab: u32,
    pub terms_per_doc: u32,
    pub k: u32,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            docs: 200,
            vocab: 64,
            terms_per_doc: 12,
            k: 10,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let check = |ok: bool, m: &str| if ok { Ok(()) } else { Err(WorkloadError::Config(m.into())) };
        check((1..=20_000).contains(&self.docs), "mini-search docs not in 1..=20000")?;
        check((1..=4096).contains(&self.vocab), "mini-search vocab not in 1..=4096")?;
        check((1..=64).contains(&self.terms_per_doc), "mini-search terms_per_doc not in 1..=64")?;
        check((1..=100).contains(&self.k), "mini-search k not in 1..=100")
    }
}

fn zipf(vocab: u32) -> Zipf<f64> {
    Zipf::new(f64::from(vocab), 1.0).expect("vocab >= 1")
}

/// Postings per term, each sorted by doc id, plus per-doc static ranks.
fn corpus(p: &SearchParams, seed: u64) -> (Vec<Vec<(u32, u32)>>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = zipf(p.vocab);
    let mut postings = vec![Vec::new(); p.vocab as usize];
    let mut ranks = Vec::with_capacity(p.docs as usize);
    for doc in 0..p.docs {
        let mut tf = std::collections::BTreeMap::new();
        for _ in 0..p.terms_per_doc {
            let term = dist.sample(&mut rng) as u32 - 1;
            *tf.entry(term).or_insert(0u32) += 1;
        }
        for (term, w) in tf {
            postings[term as usize].push((doc, w));
        }
        ranks.push(rng.random_range(0..RANK_SCALE as u32));
    }
    (postings, ranks)
}

pub fn layout(p: &SearchParams) -> Layout {
    let total_postings = u64::from(p.docs) * u64::from(p.terms_per_doc);
    Layout::builder()
        .segment("search.meta", RegionKind::Private, 16)
        .segment("search.dict", RegionKind::Private, u64::from(p.vocab) * 8)
        .segment("search.postings", RegionKind::Heap, total_postings * 8)
        .segment("search.ranks", RegionKind::Private, u64::from(p.docs) * 4)
        .segment("search.frame", RegionKind::Stack, u64::from(p.docs) * 4)
        .build()
}

pub fn generate(p: &SearchParams, seed: u64) -> (Layout, Vec<u8>) {
    let layout = layout(p);
    let (postings, ranks) = corpus(p, seed);
    let mut mem = ImageMemory::new(layout.total_len());
    let seg = |n: &str| layout.segment(n).unwrap().start;
    let (meta, dict, post, rank) = (
        seg("search.meta"),
        seg("search.dict"),
        seg("search.postings"),
        seg("search.ranks"),
    );
    let mut w = |a: u64, v: u32| mem.write_u32(a, v).expect("in image");
    w(meta, p.docs);
    w(meta + 4, p.vocab);
    w(meta + 8, p.k);
    let mut cursor = post;
    for (t, list) in postings.iter().enumerate() {
        w(dict + 8 * t as u64, cursor as u32);
        w(dict + 8 * t as u64 + 4, list.len() as u32);
        for &(doc, weight) in list {
            w(cursor, doc);
            w(cursor + 4, weight);
            cursor += 8;
        }
    }
    for (d, r) in ranks.iter().enumerate() {
        w(rank + 4 * d as u64, *r);
    }
    (layout, mem.bytes)
}

pub fn request(terms: &[u32]) -> Vec<u8> {
    let mut r = vec![terms.len() as u8];
    for t in terms {
        r.extend_from_slice(&t.to_le_bytes());
    }
    r
}

pub fn queries(p: &SearchParams, seed: u64, count: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7365_6172);
    let dist = zipf(p.vocab);
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=3);
            let terms: Vec<u32> = (0..n).map(|_| dist.sample(&mut rng) as u32 - 1).collect();
            request(&terms)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MiniSearch {
    meta: u64,
    dict: u64,
    ranks: u64,
    frame: u64,
}

impl MiniSearch {
    pub fn new(layout: &Layout) -> Self {
        let seg = |n: &str| layout.segment(n).unwrap().start;
        MiniSearch {
            meta: seg("search.meta"),
            dict: seg("search.dict"),
            ranks: seg("search.ranks"),
            frame: seg("search.frame"),
        }
    }

    pub fn handle<M: Memory>(&self, mem: &mut M, req: &[u8]) -> Result<Vec<u8>, Fault> {
        let Some((&n, rest)) = req.split_first() else {
            return Ok(Vec::new());
        };
        if rest.len() != 4 * usize::from(n) {
            return Ok(Vec::new());
        }
        let docs = mem.read_u32(self.meta)?;
        let vocab = mem.read_u32(self.meta + 4)?;
        let k = mem.read_u32(self.meta + 8)? as usize;
        for chunk in rest.chunks_exact(4) {
            let term = u32::from_le_bytes(chunk.try_into().unwrap());
            if term >= vocab {
                continue;
            }
            let entry = self.dict + 8 * u64::from(term);
            let mut at = u64::from(mem.read_ptr(entry)?);
            let len = mem.read_u32(entry + 4)?;
            for _ in 0..len {
                let doc = mem.read_u32(at)?;
                let weight = mem.read_u32(at + 4)?;
                let slot = self.frame + 4 * u64::from(doc);
                let acc = mem.read_u32(slot)?;
                mem.write_u32(slot, acc.wrapping_add(weight))?;
                at += 8;
            }
        }
        let mut hits = Vec::new();
        for doc in 0..docs {
            let slot = self.frame + 4 * u64::from(doc);
            let acc = mem.read_u32(slot)?;
            if acc != 0 {
                let rank = mem.read_u32(self.ranks + 4 * u64::from(doc))?;
                hits.push((u64::from(acc) * RANK_SCALE + u64::from(rank), doc));
                mem.write_u32(slot, 0)?;
            }
        }
        hits.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(hits.iter().take(k).flat_map(|&(_, d)| d.to_le_bytes()).collect())
    }
}
