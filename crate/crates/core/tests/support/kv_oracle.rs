//! Reference interpreter for mini-kv over a raw arena image.
//!
//! Written from the item format alone and kept free of the workload code:
//! it decodes requests, walks bucket chains and applies SETs byte by byte,
//! and treats any access past the image end as a crash and any revisited
//! chain node within one lookup as a hang.

use std::collections::HashSet;

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleOutcome {
    Crash { queries_served: u64 },
    Hang,
    Incorrect { mismatched: u64 },
    Masked,
}

/// Offsets of the four segments inside the image.
#[derive(Debug, Clone, Copy)]
pub struct KvOffsets {
    pub meta: u64,
    pub index: u64,
    pub frame: u64,
}

enum Stop {
    OutOfBounds,
    Cycle,
}

struct Machine {
    mem: Vec<u8>,
    at: KvOffsets,
}

impl Machine {
    fn bytes(&self, addr: u64, len: u64) -> Result<&[u8], Stop> {
        let end = addr.checked_add(len).ok_or(Stop::OutOfBounds)?;
        if end > self.mem.len() as u64 {
            return Err(Stop::OutOfBounds);
        }
        Ok(&self.mem[addr as usize..end as usize])
    }

    fn u32_at(&self, addr: u64) -> Result<u32, Stop> {
        let b = self.bytes(addr, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn put(&mut self, addr: u64, data: &[u8]) -> Result<(), Stop> {
        self.bytes(addr, data.len() as u64)?;
        self.mem[addr as usize..addr as usize + data.len()].copy_from_slice(data);
        Ok(())
    }

    fn hash(key: &[u8]) -> u32 {
        let mut h: u32 = 2_166_136_261;
        for &b in key {
            h ^= b as u32;
            h = h.wrapping_mul(16_777_619);
        }
        h
    }

    /// Address and length of the value stored under `key`.
    fn find(&mut self, key: &[u8]) -> Result<Option<(u64, u64)>, Stop> {
        let mask = self.u32_at(self.at.meta)?;
        let slot = self.at.index + 4 * (Self::hash(key) & mask) as u64;
        let head = self.u32_at(slot)?;
        self.put(self.at.frame, &head.to_le_bytes())?;
        let mut seen = HashSet::new();
        loop {
            let node = self.u32_at(self.at.frame)?;
            if node == NIL {
                return Ok(None);
            }
            if !seen.insert(node) {
                return Err(Stop::Cycle);
            }
            let node = node as u64;
            let h = self.bytes(node, 8)?.to_vec();
            let next = u32::from_le_bytes([h[0], h[1], h[2], h[3]]);
            let klen = u16::from_le_bytes([h[4], h[5]]) as u64;
            let vlen = u16::from_le_bytes([h[6], h[7]]) as u64;
            if klen == key.len() as u64 && self.bytes(node + 8, klen)? == key {
                return Ok(Some((node + 8 + klen, vlen)));
            }
            self.put(self.at.frame, &next.to_le_bytes())?;
        }
    }

    fn serve(&mut self, req: &[u8]) -> Result<Vec<u8>, Stop> {
        if req.len() < 2 || req.len() < 2 + req[1] as usize {
            return Ok(b"ERROR".to_vec());
        }
        let key = &req[2..2 + req[1] as usize];
        let value = &req[2 + req[1] as usize..];
        match req[0] {
            b'G' => match self.find(key)? {
                Some((at, len)) => {
                    let mut out = b"V".to_vec();
                    out.extend_from_slice(self.bytes(at, len)?);
                    Ok(out)
                }
                None => Ok(b"NOT_FOUND".to_vec()),
            },
            b'S' => match self.find(key)? {
                Some((at, len)) if len == value.len() as u64 => {
                    self.put(at, value)?;
                    Ok(b"STORED".to_vec())
                }
                _ => Ok(b"NOT_STORED".to_vec()),
            },
            _ => Ok(b"ERROR".to_vec()),
        }
    }
}

/// Runs `queries` against `image`, flipping `bit` of byte `addr` once
/// `after` queries have been answered.
pub fn run(
    image: &[u8],
    at: KvOffsets,
    queries: &[Vec<u8>],
    flip: Option<(u64, u8, usize)>,
) -> (Vec<Vec<u8>>, Option<OracleOutcome>) {
    let mut m = Machine { mem: image.to_vec(), at };
    let mut out = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        if let Some((addr, bit, after)) = flip {
            if i == after {
                m.mem[addr as usize] ^= 1 << bit;
            }
        }
        match m.serve(q) {
            Ok(r) => out.push(r),
            Err(Stop::OutOfBounds) => {
                let served = out.len() as u64;
                return (out, Some(OracleOutcome::Crash { queries_served: served }));
            }
            Err(Stop::Cycle) => return (out, Some(OracleOutcome::Hang)),
        }
    }
    (out, None)
}

/// Outcome of one flip, judged per query against the clean run.
pub fn classify(image: &[u8], at: KvOffsets, queries: &[Vec<u8>], flip: (u64, u8, usize)) -> OracleOutcome {
    let (golden, end) = run(image, at, queries, None);
    assert!(end.is_none(), "clean run must complete");
    let (actual, end) = run(image, at, queries, Some(flip));
    if let Some(o) = end {
        return o;
    }
    let mismatched = actual.iter().zip(&golden).filter(|(a, g)| a != g).count() as u64;
    if mismatched == 0 {
        OracleOutcome::Masked
    } else {
        OracleOutcome::Incorrect { mismatched }
    }
}
