//! Typed view of a target's virtual memory layout.
//!
//! The text grammar is the one the Linux kernel uses for `/proc/<pid>/maps`:
//!
//! ```text
//! 00601000-00622000 rw-p 00000000 00:00 0          [heap]
//! start    end      perm offset   dev   inode      label
//! ```
//!
//! Kind inference is fixed:
//!
//! | label / mapping                         | kind          |
//! |-----------------------------------------|---------------|
//! | `[heap]`                                | `heap`        |
//! | `[stack]`, `[stack:<tid>]`              | `stack`       |
//! | no label, writable, private (`p`)       | `private`     |
//! | absolute path                           | `mapped-file` |
//! | anything else (`[vdso]`, read-only anon)| `other`       |
//!
//! "private" is an assumption: anonymous private writable memory is the closest
//! operational reading of an application's private data region.

use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegionError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("regions overlap: {first} and {second}")]
    Overlap { first: String, second: String },
    #[error("invalid region {0}")]
    Invalid(String),
    #[error("requested {requested} targets but only {available} byte*bit positions exist")]
    Capacity { requested: u128, available: u128 },
    #[error("no region matches filter {0}")]
    EmptyDomain(String),
    #[error("sample size must be at least 1")]
    ZeroSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    Heap,
    Stack,
    Private,
    MappedFile,
    Other,
}

impl RegionKind {
    pub const ALL: [RegionKind; 5] = [
        RegionKind::Heap,
        RegionKind::Stack,
        RegionKind::Private,
        RegionKind::MappedFile,
        RegionKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::Heap => "heap",
            RegionKind::Stack => "stack",
            RegionKind::Private => "private",
            RegionKind::MappedFile => "mapped-file",
            RegionKind::Other => "other",
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RegionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown region kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permissions {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
    /// `s` in the fourth column; `p` (copy-on-write private) otherwise.
    pub shared: bool,
}

impl Permissions {
    pub const RW_PRIVATE: Permissions = Permissions {
        read: true,
        write: true,
        execute: false,
        shared: false,
    };

    fn parse(s: &str) -> Option<Self> {
        let b = s.as_bytes();
        if b.len() != 4 {
            return None;
        }
        let flag = |c: u8, set: u8| match c {
            c if c == set => Some(true),
            b'-' => Some(false),
            _ => None,
        };
        Some(Permissions {
            read: flag(b[0], b'r')?,
            write: flag(b[1], b'w')?,
            execute: flag(b[2], b'x')?,
            shared: match b[3] {
                b's' => true,
                b'p' => false,
                _ => return None,
            },
        })
    }
}

impl fmt::Display for Permissions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}{}",
            if self.read { 'r' } else { '-' },
            if self.write { 'w' } else { '-' },
            if self.execute { 'x' } else { '-' },
            if self.shared { 's' } else { 'p' },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRegion {
    pub start: u64,
    pub length: u64,
    pub kind: RegionKind,
    pub permissions: Permissions,
    /// Backing path, pseudo-path (`[heap]`) or allocator tag. Empty for anonymous maps.
    pub label: String,
    pub file_offset: u64,
    pub device: String,
    pub inode: u64,
}

impl MemoryRegion {
    /// Builds an anonymous read-write region, as used for arena segments.
    pub fn anonymous(start: u64, length: u64, kind: RegionKind, label: impl Into<String>) -> Self {
        MemoryRegion {
            start,
            length,
            kind,
            permissions: Permissions::RW_PRIVATE,
            label: label.into(),
            file_offset: 0,
            device: "00:00".to_string(),
            inode: 0,
        }
    }

    pub fn end(&self) -> u64 {
        self.start + self.length
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.end()
    }

    pub fn validate(&self) -> Result<(), RegionError> {
        if self.length == 0 {
            return Err(RegionError::Invalid(format!("{:x}: zero length", self.start)));
        }
        if self.start.checked_add(self.length).is_none() {
            return Err(RegionError::Invalid(format!(
                "{:x}+{:x} overflows the address width",
                self.start, self.length
            )));
        }
        Ok(())
    }
}

impl fmt::Display for MemoryRegion {
    /// Canonical maps line: zero-padded lowercase hex, single spaces.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:08x}-{:08x} {} {:08x} {} {}",
            self.start,
            self.end(),
            self.permissions,
            self.file_offset,
            self.device,
            self.inode
        )?;
        if !self.label.is_empty() {
            write!(f, " {}", self.label)?;
        }
        Ok(())
    }
}

pub fn infer_kind(label: &str, permissions: &Permissions) -> RegionKind {
    if label == "[heap]" {
        RegionKind::Heap
    } else if label == "[stack]" || (label.starts_with("[stack:") && label.ends_with(']')) {
        RegionKind::Stack
    } else if label.is_empty() && permissions.write && !permissions.shared {
        RegionKind::Private
    } else if label.starts_with('/') {
        RegionKind::MappedFile
    } else {
        RegionKind::Other
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRegionMap {
    pub regions: Vec<MemoryRegion>,
    /// Milliseconds since the Unix epoch; zero for synthetic maps.
    pub snapshot_unix_ms: u64,
}

impl MemoryRegionMap {
    /// Sorts and validates; rejects overlapping or degenerate regions.
    pub fn new(mut regions: Vec<MemoryRegion>, snapshot_unix_ms: u64) -> Result<Self, RegionError> {
        for r in &regions {
            r.validate()?;
        }
        regions.sort_by_key(|r| r.start);
        for pair in regions.windows(2) {
            if pair[0].end() > pair[1].start {
                return Err(RegionError::Overlap {
                    first: pair[0].to_string(),
                    second: pair[1].to_string(),
                });
            }
        }
        Ok(MemoryRegionMap {
            regions,
            snapshot_unix_ms,
        })
    }

    pub fn empty() -> Self {
        MemoryRegionMap {
            regions: Vec::new(),
            snapshot_unix_ms: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&MemoryRegion> {
        self.regions.get(index)
    }

    /// Index of the region containing `addr`.
    pub fn find(&self, addr: u64) -> Option<usize> {
        let idx = self.regions.partition_point(|r| r.start <= addr);
        idx.checked_sub(1).filter(|&i| self.regions[i].contains(addr))
    }

    pub fn find_label(&self, label: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.label == label)
    }

    /// Absolute address of a target, validated against this map.
    pub fn resolve(&self, target: &InjectionTarget) -> Result<u64, RegionError> {
        target.validate(self)?;
        Ok(self.regions[target.region_index].start + target.offset)
    }

    /// Shifts every region by `base`; used to place arena segment maps at the
    /// address a live process reported.
    pub fn rebased(&self, base: u64) -> Result<Self, RegionError> {
        let regions = self
            .regions
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.start = r
                    .start
                    .checked_add(base)
                    .ok_or_else(|| RegionError::Invalid(format!("rebase {base:#x} overflows")))?;
                Ok(r)
            })
            .collect::<Result<Vec<_>, RegionError>>()?;
        MemoryRegionMap::new(regions, self.snapshot_unix_ms)
    }

    /// Canonical maps text, one region per line.
    pub fn to_maps_text(&self) -> String {
        let mut out = String::new();
        for r in &self.regions {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("region map serializes")
    }
}

/// Parses the platform's textual maps listing.
pub fn parse_region_map(raw_text: &str) -> Result<MemoryRegionMap, RegionError> {
    let mut regions = Vec::new();
    for (i, line) in raw_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        regions.push(parse_line(line).map_err(|reason| RegionError::Parse {
            line: i + 1,
            reason,
        })?);
    }
    MemoryRegionMap::new(regions, 0)
}

fn parse_line(line: &str) -> Result<MemoryRegion, String> {
    let mut rest = line.trim_start();
    let mut field = |name: &str| -> Result<&str, String> {
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let (tok, tail) = rest.split_at(end);
        if tok.is_empty() {
            return Err(format!("missing {name} field"));
        }
        rest = tail.trim_start();
        Ok(tok)
    };
    let range = field("address range")?;
    let perms = field("permissions")?;
    let offset = field("offset")?;
    let device = field("device")?.to_string();
    let inode = field("inode")?;
    let label = rest.trim_end().to_string();

    let (lo, hi) = range
        .split_once('-')
        .ok_or_else(|| format!("address range `{range}` lacks '-'"))?;
    let start = u64::from_str_radix(lo, 16).map_err(|e| format!("start `{lo}`: {e}"))?;
    let end = u64::from_str_radix(hi, 16).map_err(|e| format!("end `{hi}`: {e}"))?;
    if end <= start {
        return Err(format!("empty or inverted range {range}"));
    }
    let permissions =
        Permissions::parse(perms).ok_or_else(|| format!("bad permission string `{perms}`"))?;
    let file_offset =
        u64::from_str_radix(offset, 16).map_err(|e| format!("offset `{offset}`: {e}"))?;
    if !device.contains(':') {
        return Err(format!("bad device `{device}`"));
    }
    let inode = inode
        .parse::<u64>()
        .map_err(|e| format!("inode `{inode}`: {e}"))?;

    Ok(MemoryRegion {
        start,
        length: end - start,
        kind: infer_kind(&label, &permissions),
        permissions,
        label,
        file_offset,
        device,
        inode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InjectionTarget {
    pub region_index: usize,
    pub offset: u64,
    pub bit: u8,
}

impl InjectionTarget {
    pub fn validate(&self, map: &MemoryRegionMap) -> Result<(), RegionError> {
        let region = map.get(self.region_index).ok_or_else(|| {
            RegionError::Invalid(format!(
                "region index {} out of range ({} regions)",
                self.region_index,
                map.len()
            ))
        })?;
        if self.offset >= region.length {
            return Err(RegionError::Invalid(format!(
                "offset {:#x} beyond region length {:#x}",
                self.offset, region.length
            )));
        }
        if self.bit > 7 {
            return Err(RegionError::Invalid(format!("bit {} not in 0..=7", self.bit)));
        }
        Ok(())
    }
}

/// Which regions an address sample is drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionFilter {
    All,
    Kind(RegionKind),
    /// Exact label match, e.g. an arena segment name.
    Label(String),
}

impl RegionFilter {
    pub fn matches(&self, region: &MemoryRegion) -> bool {
        match self {
            RegionFilter::All => true,
            RegionFilter::Kind(k) => region.kind == *k,
            RegionFilter::Label(l) => region.label == *l,
        }
    }
}

impl fmt::Display for RegionFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionFilter::All => f.write_str("all"),
            RegionFilter::Kind(k) => write!(f, "kind={k}"),
            RegionFilter::Label(l) => write!(f, "label={l}"),
        }
    }
}

/// Draws `n` distinct targets uniformly over the byte*bit positions of the
/// filtered regions. Equal inputs give identical output.
pub fn sample_addresses(
    map: &MemoryRegionMap,
    filter: &RegionFilter,
    n: usize,
    seed: u64,
) -> Result<Vec<InjectionTarget>, RegionError> {
    if n == 0 {
        return Err(RegionError::ZeroSample);
    }
    // (region index, first global bit position)
    let mut domain = Vec::new();
    let mut total: u128 = 0;
    for (i, r) in map.regions.iter().enumerate() {
        if filter.matches(r) {
            domain.push((i, total));
            total += u128::from(r.length) * 8;
        }
    }
    if domain.is_empty() {
        return Err(RegionError::EmptyDomain(filter.to_string()));
    }
    if (n as u128) > total {
        return Err(RegionError::Capacity {
            requested: n as u128,
            available: total,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<u128> = if let Ok(small) = usize::try_from(total) {
        index::sample(&mut rng, small, n)
            .into_iter()
            .map(|p| p as u128)
            .collect()
    } else {
        floyd_sample(&mut rng, total, n)
    };

    Ok(positions
        .into_iter()
        .map(|pos| {
            let slot = domain.partition_point(|&(_, first)| first <= pos) - 1;
            let (region_index, first) = domain[slot];
            let rel = pos - first;
            InjectionTarget {
                region_index,
                offset: (rel / 8) as u64,
                bit: (rel % 8) as u8,
            }
        })
        .collect())
}

// Position spaces wider than usize (huge mappings on 32-bit hosts).
fn floyd_sample(rng: &mut ChaCha8Rng, total: u128, n: usize) -> Vec<u128> {
    use rand::Rng;
    let mut chosen = std::collections::HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for j in (total - n as u128)..total {
        let t = rng.random_range(0..=j);
        let pick = if chosen.insert(t) { t } else {
            chosen.insert(j);
            j
        };
        out.push(pick);
    }
    out
}
