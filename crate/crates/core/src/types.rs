//! Core domain types shared by every part of the simulator.

use std::fmt;

/// Largest warp id representable in the 6-bit WID fields of the hardware tables.
pub const MAX_WID_BITS: u32 = 6;

/// Index of a warp resident on the SM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct WarpId(pub u8);

impl WarpId {
    #[inline]
    pub fn new(id: usize) -> Self {
        debug_assert!(id < (1 << MAX_WID_BITS));
        Self(id as u8)
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WarpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W{}", self.0)
    }
}

/// Byte-granular global memory address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct GlobalAddress(pub u64);

impl GlobalAddress {
    /// Clears the offset bits below `line_bytes` (a power of two).
    #[inline]
    pub fn block_aligned(self, line_bytes: u64) -> Self {
        Self(self.0 & !(line_bytes - 1))
    }
}

impl fmt::Display for GlobalAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Alu,
    Load,
    Store,
}

/// Memory space of a load/store. Local is per-thread spill space and is
/// write-back in L1D; global is write-through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MemSpace {
    #[default]
    Global,
    Local,
}

/// One coalesced warp instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub warp: WarpId,
    pub kind: AccessKind,
    /// Present iff `kind` is `Load` or `Store`.
    pub addr: Option<GlobalAddress>,
    pub space: MemSpace,
}

impl TraceRecord {
    pub fn alu(warp: WarpId) -> Self {
        Self {
            warp,
            kind: AccessKind::Alu,
            addr: None,
            space: MemSpace::Global,
        }
    }

    pub fn load(warp: WarpId, addr: u64) -> Self {
        Self {
            warp,
            kind: AccessKind::Load,
            addr: Some(GlobalAddress(addr)),
            space: MemSpace::Global,
        }
    }

    pub fn store(warp: WarpId, addr: u64) -> Self {
        Self {
            warp,
            kind: AccessKind::Store,
            addr: Some(GlobalAddress(addr)),
            space: MemSpace::Global,
        }
    }

    pub fn with_space(mut self, space: MemSpace) -> Self {
        self.space = space;
        self
    }

    pub fn is_memory(&self) -> bool {
        !matches!(self.kind, AccessKind::Alu)
    }
}

/// An ordered list of trace records. Records of different warps may be
/// interleaved; each warp's own records are in program order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One past the highest warp id referenced.
    pub fn warp_count(&self) -> usize {
        self.records.iter().map(|r| r.warp.index() + 1).max().unwrap_or(0)
    }

    pub fn memory_records(&self) -> usize {
        self.records.iter().filter(|r| r.is_memory()).count()
    }

    /// Distinct 128-byte-aligned blocks touched, times the line size.
    pub fn footprint_bytes(&self, line_bytes: u64) -> u64 {
        let mut blocks: Vec<u64> = self
            .records
            .iter()
            .filter_map(|r| r.addr.map(|a| a.0 / line_bytes))
            .collect();
        blocks.sort_unstable();
        blocks.dedup();
        blocks.len() as u64 * line_bytes
    }

    /// Splits the trace into per-warp program-order streams, indexed by warp id.
    pub fn per_warp(&self) -> Vec<Vec<TraceRecord>> {
        let mut streams = vec![Vec::new(); self.warp_count()];
        for r in &self.records {
            streams[r.warp.index()].push(*r);
        }
        streams
    }

    /// Interleaves per-warp streams round-robin, one record at a time.
    pub fn interleave(streams: Vec<Vec<TraceRecord>>) -> Self {
        let longest = streams.iter().map(Vec::len).max().unwrap_or(0);
        let mut records = Vec::with_capacity(streams.iter().map(Vec::len).sum());
        for i in 0..longest {
            for s in &streams {
                if let Some(r) = s.get(i) {
                    records.push(*r);
                }
            }
        }
        Self { records }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_alignment_clears_low_bits() {
        assert_eq!(GlobalAddress(0x12345).block_aligned(128).0, 0x12300);
        assert_eq!(GlobalAddress(0x80).block_aligned(128).0, 0x80);
    }

    #[test]
    fn per_warp_keeps_program_order() {
        let w0 = WarpId(0);
        let w2 = WarpId(2);
        let t = Trace::new(vec![
            TraceRecord::load(w2, 0x100),
            TraceRecord::alu(w0),
            TraceRecord::load(w2, 0x200),
        ]);
        let s = t.per_warp();
        assert_eq!(s.len(), 3);
        assert!(s[1].is_empty());
        assert_eq!(s[2][0].addr, Some(GlobalAddress(0x100)));
        assert_eq!(s[2][1].addr, Some(GlobalAddress(0x200)));
    }

    #[test]
    fn interleave_round_robin() {
        let a = vec![TraceRecord::alu(WarpId(0)); 2];
        let b = vec![TraceRecord::alu(WarpId(1)); 1];
        let t = Trace::interleave(vec![a, b]);
        let ids: Vec<_> = t.records.iter().map(|r| r.warp.0).collect();
        assert_eq!(ids, vec![0, 1, 0]);
    }
}
