//! mini-kv: chained hash table, GET-dominated with in-place SETs.
//!
//! Arena segments:
//!
//! | segment    | tag     | contents                                           |
//! |------------|---------|----------------------------------------------------|
//! | `kv.meta`  | private | bucket mask u32, key count u32, value length u32   |
//! | `kv.index` | heap    | one u32 head pointer per bucket (`NIL` when empty) |
//! | `kv.items` | heap    | items: next u32, key_len u16, val_len u16, key, val|
//! | `kv.frame` | stack   | chain cursor of the running lookup                 |
//!
//! Requests: `G <klen u8> <key>` and `S <klen u8> <key> <value>`.
//! Responses: `V<value>`, `NOT_FOUND`, `STORED`, `NOT_STORED`, `ERROR`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::memory::{Access, Fault, ImageMemory, Layout, Memory, NIL};
use super::WorkloadError;
use crate::region::RegionKind;

pub const NOT_FOUND: &[u8] = b"NOT_FOUND";
pub const STORED: &[u8] = b"STORED";
pub const NOT_STORED: &[u8] = b"NOT_STORED";
pub const ERROR: &[u8] = b"ERROR";

pub const ITEM_HEADER: u64 = 8;
const KEY_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KvParams {
    pub keys: u32,
    pub buckets: u32,
    pub value_len: u32,
}

impl Default for KvParams {
    fn default() -> Self {
        KvParams {
            keys: 100,
            buckets: 16,
            value_len: 32,
        }
    }
}

impl KvParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::Config(m));
        if !(1..=20_000).contains(&self.keys) {
            return bad(format!("mini-kv keys {} not in 1..=20000", self.keys));
        }
        if !self.buckets.is_power_of_two() || self.buckets > 65_536 {
            return bad(format!("mini-kv buckets {} must be a power of two <= 65536", self.buckets));
        }
        if !(1..=1024).contains(&self.value_len) {
            return bad(format!("mini-kv value_len {} not in 1..=1024", self.value_len));
        }
        Ok(())
    }

    fn item_len(&self) -> u64 {
        ITEM_HEADER + KEY_LEN as u64 + u64::from(self.value_len)
    }
}

pub fn key_name(i: u32) -> Vec<u8> {
    format!("key-{i:05}").into_bytes()
}

/// 32-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    bytes.iter().fold(0x811c_9dc5u32, |h, &b| {
        (h ^ u32::from(b)).wrapping_mul(0x0100_0193)
    })
}

pub fn layout(p: &KvParams) -> Layout {
    Layout::builder()
        .segment("kv.meta", RegionKind::Private, 16)
        .segment("kv.index", RegionKind::Heap, u64::from(p.buckets) * 4)
        .segment("kv.items", RegionKind::Heap, u64::from(p.keys) * p.item_len())
        .segment("kv.frame", RegionKind::Stack, 16)
        .build()
}

pub fn generate(p: &KvParams, seed: u64) -> (Layout, Vec<u8>) {
    let layout = layout(p);
    let mut mem = ImageMemory::new(layout.total_len());
    let meta = layout.segment("kv.meta").unwrap().start;
    let index = layout.segment("kv.index").unwrap().start;
    let items = layout.segment("kv.items").unwrap().start;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let w = |m: &mut ImageMemory, a: u64, v: u32| m.write_u32(a, v).expect("in image");
    w(&mut mem, meta, p.buckets - 1);
    w(&mut mem, meta + 4, p.keys);
    w(&mut mem, meta + 8, p.value_len);
    for b in 0..u64::from(p.buckets) {
        w(&mut mem, index + 4 * b, NIL);
    }
    for i in 0..p.keys {
        let key = key_name(i);
        let mut value = vec![0u8; p.value_len as usize];
        rng.fill_bytes(&mut value);
        let at = items + u64::from(i) * p.item_len();
        let slot = index + 4 * u64::from(fnv1a(&key) & (p.buckets - 1));
        let head = mem.read_u32(slot).unwrap();
        w(&mut mem, at, head);
        mem.store(at + 4, &(key.len() as u16).to_le_bytes()).unwrap();
        mem.store(at + 6, &(p.value_len as u16).to_le_bytes()).unwrap();
        mem.store(at + ITEM_HEADER, &key).unwrap();
        mem.store(at + ITEM_HEADER + key.len() as u64, &value).unwrap();
        w(&mut mem, slot, at as u32);
    }
    (layout, mem.bytes)
}

pub fn get_request(key: &[u8]) -> Vec<u8> {
    let mut r = vec![b'G', key.len() as u8];
    r.extend_from_slice(key);
    r
}

pub fn set_request(key: &[u8], value: &[u8]) -> Vec<u8> {
    let mut r = vec![b'S', key.len() as u8];
    r.extend_from_slice(key);
    r.extend_from_slice(value);
    r
}

/// 85% GET of a present key, 10% SET of a present key, 5% GET of an absent key.
pub fn queries(p: &KvParams, seed: u64, count: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b76_5f71);
    (0..count)
        .map(|_| {
            let roll = rng.random_range(0..100);
            let key = key_name(rng.random_range(0..p.keys));
            if roll < 5 {
                get_request(format!("miss-{:04}", rng.random_range(0..10_000)).as_bytes())
            } else if roll < 15 {
                let mut value = vec![0u8; p.value_len as usize];
                rng.fill_bytes(&mut value);
                set_request(&key, &value)
            } else {
                get_request(&key)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MiniKv {
    meta: u64,
    index: u64,
    frame: u64,
}

impl MiniKv {
    pub fn new(layout: &Layout) -> Self {
        MiniKv {
            meta: layout.segment("kv.meta").unwrap().start,
            index: layout.segment("kv.index").unwrap().start,
            frame: layout.segment("kv.frame").unwrap().start,
        }
    }

    /// Walks the bucket chain; returns the item address holding `key`.
    fn lookup<M: Memory>(&self, mem: &mut M, key: &[u8]) -> Result<Option<(u64, u16)>, Fault> {
        let mask = mem.read_u32(self.meta)?;
        let slot = self.index + 4 * u64::from(fnv1a(key) & mask);
        let head = mem.read_ptr(slot)?;
        mem.write_u32(self.frame, head)?;
        loop {
            let cur = mem.read_ptr(self.frame)?;
            if cur == NIL {
                return Ok(None);
            }
            let cur = u64::from(cur);
            let mut hdr = [0u8; ITEM_HEADER as usize];
            mem.load(cur, &mut hdr, Access::Pointer)?;
            let next = u32::from_le_bytes(hdr[0..4].try_into().unwrap());
            let klen = u16::from_le_bytes(hdr[4..6].try_into().unwrap());
            let vlen = u16::from_le_bytes(hdr[6..8].try_into().unwrap());
            if usize::from(klen) == key.len() && mem.read_vec(cur + ITEM_HEADER, key.len())? == key {
                return Ok(Some((cur + ITEM_HEADER + u64::from(klen), vlen)));
            }
            mem.write_u32(self.frame, next)?;
        }
    }

    pub fn handle<M: Memory>(&self, mem: &mut M, req: &[u8]) -> Result<Vec<u8>, Fault> {
        let Some((&op, rest)) = req.split_first() else {
            return Ok(ERROR.to_vec());
        };
        let Some((&klen, rest)) = rest.split_first() else {
            return Ok(ERROR.to_vec());
        };
        if rest.len() < usize::from(klen) {
            return Ok(ERROR.to_vec());
        }
        let (key, value) = rest.split_at(usize::from(klen));
        match op {
            b'G' => Ok(match self.lookup(mem, key)? {
                Some((at, vlen)) => {
                    let mut out = vec![b'V'];
                    out.extend(mem.read_vec(at, usize::from(vlen))?);
                    out
                }
                None => NOT_FOUND.to_vec(),
            }),
            b'S' => Ok(match self.lookup(mem, key)? {
                Some((at, vlen)) if usize::from(vlen) == value.len() => {
                    mem.store(at, value)?;
                    STORED.to_vec()
                }
                _ => NOT_STORED.to_vec(),
            }),
            _ => Ok(ERROR.to_vec()),
        }
    }
}
