//! The memory interface bundled workloads keep their injectable state behind.

use serde::{Deserialize, Serialize};

use crate::region::{MemoryRegion, MemoryRegionMap, RegionKind};

/// Sentinel for "no item" in arena pointer fields.
pub const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Access outside the mapped arena.
    Segv { addr: u64 },
    /// The access budget (simulated time limit) ran out.
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Data,
    /// Load of a value the program will use as an address.
    Pointer,
}

pub trait Memory {
    fn load(&mut self, addr: u64, buf: &mut [u8], access: Access) -> Result<(), Fault>;
    fn store(&mut self, addr: u64, data: &[u8]) -> Result<(), Fault>;

    fn read_u16(&mut self, addr: u64) -> Result<u16, Fault> {
        let mut b = [0u8; 2];
        self.load(addr, &mut b, Access::Data)?;
        Ok(u16::from_le_bytes(b))
    }

    fn read_u32(&mut self, addr: u64) -> Result<u32, Fault> {
        let mut b = [0u8; 4];
        self.load(addr, &mut b, Access::Data)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_ptr(&mut self, addr: u64) -> Result<u32, Fault> {
        let mut b = [0u8; 4];
        self.load(addr, &mut b, Access::Pointer)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_vec(&mut self, addr: u64, len: usize) -> Result<Vec<u8>, Fault> {
        let mut v = vec![0u8; len];
        self.load(addr, &mut v, Access::Data)?;
        Ok(v)
    }

    fn write_u32(&mut self, addr: u64, value: u32) -> Result<(), Fault> {
        self.store(addr, &value.to_le_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub kind: RegionKind,
    pub start: u64,
    pub len: u64,
}

impl Segment {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }
}

/// Named, contiguous, 8-byte aligned segments making up one arena image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub segments: Vec<Segment>,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn total_len(&self) -> u64 {
        self.segments.last().map_or(0, Segment::end)
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn index_of(&self, addr: u64) -> Option<usize> {
        let i = self.segments.partition_point(|s| s.start <= addr);
        i.checked_sub(1).filter(|&i| addr < self.segments[i].end())
    }

    /// Region map with one anonymous rw region per segment, based at zero.
    pub fn region_map(&self) -> MemoryRegionMap {
        let regions = self
            .segments
            .iter()
            .map(|s| MemoryRegion::anonymous(s.start, s.len, s.kind, s.name.clone()))
            .collect();
        MemoryRegionMap::new(regions, 0).expect("layout segments are disjoint and non-empty")
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    segments: Vec<Segment>,
    cursor: u64,
}

impl LayoutBuilder {
    pub fn segment(mut self, name: &str, kind: RegionKind, len: u64) -> Self {
        let len = len.max(1);
        self.segments.push(Segment {
            name: name.to_string(),
            kind,
            start: self.cursor,
            len,
        });
        self.cursor = (self.cursor + len + 7) & !7;
        self
    }

    pub fn build(self) -> Layout {
        Layout {
            segments: self.segments,
        }
    }
}

/// Unchecked, uninstrumented memory over a byte image; used to build datasets.
#[derive(Debug, Clone)]
pub struct ImageMemory {
    pub bytes: Vec<u8>,
}

impl ImageMemory {
    pub fn new(len: u64) -> Self {
        ImageMemory {
            bytes: vec![0; len as usize],
        }
    }
}

impl Memory for ImageMemory {
    fn load(&mut self, addr: u64, buf: &mut [u8], _: Access) -> Result<(), Fault> {
        let end = addr
            .checked_add(buf.len() as u64)
            .filter(|&e| e <= self.bytes.len() as u64)
            .ok_or(Fault::Segv { addr })?;
        buf.copy_from_slice(&self.bytes[addr as usize..end as usize]);
        Ok(())
    }

    fn store(&mut self, addr: u64, data: &[u8]) -> Result<(), Fault> {
        let end = addr
            .checked_add(data.len() as u64)
            .filter(|&e| e <= self.bytes.len() as u64)
            .ok_or(Fault::Segv { addr })?;
        self.bytes[addr as usize..end as usize].copy_from_slice(data);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_aligns_segments() {
        let l = Layout::builder()
            .segment("a", RegionKind::Private, 5)
            .segment("b", RegionKind::Heap, 16)
            .build();
        assert_eq!(l.segments[1].start, 8);
        assert_eq!(l.total_len(), 24);
        assert_eq!(l.index_of(6), None);
        assert_eq!(l.index_of(9), Some(1));
        let map = l.region_map();
        assert_eq!(map.regions[1].label, "b");
        assert_eq!(map.regions[1].kind, RegionKind::Heap);
    }

    #[test]
    fn image_memory_bounds() {
        let mut m = ImageMemory::new(8);
        m.write_u32(4, 0xdead_beef).unwrap();
        assert_eq!(m.read_u32(4).unwrap(), 0xdead_beef);
        assert_eq!(m.read_u32(5), Err(Fault::Segv { addr: 5 }));
        assert_eq!(m.store(u64::MAX, &[1]), Err(Fault::Segv { addr: u64::MAX }));
    }
}
