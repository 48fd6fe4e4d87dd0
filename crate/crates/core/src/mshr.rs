//! Miss status holding registers shared by L1D and the shared-memory cache,
//! plus the L2 request port and the response queue.

use crate::config::SimConfig;
use crate::smem::SmemLocation;
use crate::types::{GlobalAddress, WarpId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FillDestination {
    L1d,
    Smem,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MshrEntry {
    /// Block-aligned global address.
    pub global_addr: GlobalAddress,
    pub destination: FillDestination,
    /// Translated shared-memory location; present iff destination is `Smem`.
    pub smem_addr: Option<SmemLocation>,
    pub waiters: Vec<WarpId>,
    pub fill_ready_cycle: u64,
    /// Filled from the response queue rather than from L2.
    pub from_response_queue: bool,
}

#[derive(Debug, Clone)]
pub struct Mshr {
    entries: Vec<MshrEntry>,
    capacity: usize,
    line_bytes: u64,
    port_free_cycle: u64,
    port_cycles: u64,
    l2_hit_latency: u64,
    dram_latency: u64,
    l2_miss_ratio: f64,
    response_latency: u64,
    /// Blocks evicted into the response queue and not yet claimed by a fill.
    response_queue: Vec<GlobalAddress>,
}

impl Mshr {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            entries: Vec::with_capacity(cfg.mshr_entries),
            capacity: cfg.mshr_entries,
            line_bytes: cfg.line_bytes,
            port_free_cycle: 0,
            port_cycles: cfg.mem_port_cycles,
            l2_hit_latency: cfg.l2_hit_latency_cycles,
            dram_latency: cfg.dram_latency_cycles,
            l2_miss_ratio: cfg.l2_miss_ratio,
            response_latency: cfg.response_queue_latency,
            response_queue: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[MshrEntry] {
        &self.entries
    }

    pub fn lookup(&self, addr: GlobalAddress) -> Option<&MshrEntry> {
        let block = addr.block_aligned(self.line_bytes);
        self.entries.iter().find(|e| e.global_addr == block)
    }

    /// Adds `warp` as a waiter on an existing entry. Returns false when no
    /// entry for the block exists.
    pub fn merge(&mut self, addr: GlobalAddress, warp: WarpId) -> bool {
        let block = addr.block_aligned(self.line_bytes);
        match self.entries.iter_mut().find(|e| e.global_addr == block) {
            Some(e) => {
                if !e.waiters.contains(&warp) {
                    e.waiters.push(warp);
                }
                true
            }
            None => false,
        }
    }

    pub fn push_response(&mut self, addr: GlobalAddress) {
        let block = addr.block_aligned(self.line_bytes);
        if !self.response_queue.contains(&block) {
            self.response_queue.push(block);
        }
    }

    pub fn has_response(&self, addr: GlobalAddress) -> bool {
        self.response_queue.contains(&addr.block_aligned(self.line_bytes))
    }

    /// Allocates a new entry. The caller has checked `is_full` and that no
    /// entry for the block exists.
    pub fn allocate(
        &mut self,
        addr: GlobalAddress,
        destination: FillDestination,
        smem_addr: Option<SmemLocation>,
        warp: WarpId,
        now: u64,
    ) -> &MshrEntry {
        debug_assert!(!self.is_full());
        debug_assert_eq!(smem_addr.is_some(), destination == FillDestination::Smem);
        let block = addr.block_aligned(self.line_bytes);
        debug_assert!(self.lookup(block).is_none());

        let (fill_ready_cycle, from_response_queue) =
            if let Some(pos) = self.response_queue.iter().position(|b| *b == block) {
                self.response_queue.swap_remove(pos);
                (now + self.response_latency, true)
            } else {
                let start = self.port_free_cycle.max(now);
                self.port_free_cycle = start + self.port_cycles;
                (start + self.fill_latency(block), false)
            };

        self.entries.push(MshrEntry {
            global_addr: block,
            destination,
            smem_addr,
            waiters: vec![warp],
            fill_ready_cycle,
            from_response_queue,
        });
        self.entries.last().unwrap()
    }

    fn fill_latency(&self, block: GlobalAddress) -> u64 {
        if self.l2_miss_ratio > 0.0 && unit_hash(block.0) < self.l2_miss_ratio {
            self.dram_latency
        } else {
            self.l2_hit_latency
        }
    }

    /// Removes and returns every entry whose fill is ready at `now`, in
    /// ready-cycle order (ties in allocation order).
    pub fn drain_ready(&mut self, now: u64) -> Vec<MshrEntry> {
        if !self.entries.iter().any(|e| e.fill_ready_cycle <= now) {
            return Vec::new();
        }
        let (mut ready, pending): (Vec<_>, Vec<_>) = std::mem::take(&mut self.entries)
            .into_iter()
            .partition(|e| e.fill_ready_cycle <= now);
        self.entries = pending;
        ready.sort_by_key(|e| e.fill_ready_cycle);
        ready
    }
}

/// Deterministic map of a block address to [0, 1) (splitmix64 finalizer).
fn unit_hash(x: u64) -> f64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;

    #[test]
    fn port_serializes_requests() {
        let cfg = default_config();
        let mut m = Mshr::new(&cfg);
        let a = m
            .allocate(GlobalAddress(0x0), FillDestination::L1d, None, WarpId(0), 10)
            .fill_ready_cycle;
        let b = m
            .allocate(GlobalAddress(0x80), FillDestination::L1d, None, WarpId(1), 10)
            .fill_ready_cycle;
        assert_eq!(a, 130);
        assert_eq!(b, 132);
        let c = m
            .allocate(GlobalAddress(0x100), FillDestination::L1d, None, WarpId(1), 50)
            .fill_ready_cycle;
        assert_eq!(c, 50 + 120);
    }

    #[test]
    fn response_queue_token_short_circuits_l2() {
        let cfg = default_config();
        let mut m = Mshr::new(&cfg);
        m.push_response(GlobalAddress(0x1234));
        assert!(m.has_response(GlobalAddress(0x1200)));
        let e = m
            .allocate(GlobalAddress(0x1200), FillDestination::L1d, None, WarpId(0), 7)
            .clone();
        assert_eq!(e.fill_ready_cycle, 8);
        assert!(e.from_response_queue);
        assert!(!m.has_response(GlobalAddress(0x1200)));
    }

    #[test]
    fn merge_and_drain() {
        let cfg = default_config();
        let mut m = Mshr::new(&cfg);
        m.allocate(GlobalAddress(0x0), FillDestination::L1d, None, WarpId(0), 0);
        assert!(m.merge(GlobalAddress(0x40), WarpId(3)));
        assert!(!m.merge(GlobalAddress(0x80), WarpId(3)));
        assert!(m.drain_ready(119).is_empty());
        let done = m.drain_ready(120);
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].waiters, vec![WarpId(0), WarpId(3)]);
        assert!(m.is_empty());
    }

    #[test]
    fn l2_miss_ratio_is_deterministic() {
        let cfg = SimConfig {
            l2_miss_ratio: 0.5,
            ..default_config()
        };
        let lat = |block: u64| {
            let mut m = Mshr::new(&cfg);
            m.allocate(GlobalAddress(block * 128), FillDestination::L1d, None, WarpId(0), 0)
                .fill_ready_cycle
        };
        let mut dram = 0;
        for b in 0..1000 {
            let l = lat(b);
            assert_eq!(l, lat(b));
            assert!(l == 120 || l == 220);
            dram += (l == 220) as usize;
        }
        assert!((400..600).contains(&dram), "dram fills {dram}");
    }
}
