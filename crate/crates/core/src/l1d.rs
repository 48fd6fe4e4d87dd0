//! Set-associative L1D cache with per-line owner warp ids.
//!
//! Lines are reserved at miss time and filled when the MSHR entry drains, so
//! the hit/miss sequence matches an allocate-on-access LRU model whenever
//! fills complete before the next conflicting access. Pending lines are never
//! chosen as victims.

use thiserror::Error;

use crate::config::SimConfig;
use crate::mshr::{FillDestination, Mshr, MshrEntry};
use crate::types::{GlobalAddress, MemSpace, WarpId};

/// XOR-hashed set index: low set bits of the block index XOR the next-higher
/// set bits.
pub fn set_index(addr: GlobalAddress, cfg: &SimConfig) -> u64 {
    let block = addr.0 >> cfg.line_bytes.trailing_zeros();
    hash_block(block, cfg.l1d_sets(), cfg.xor_hashing)
}

#[inline]
pub(crate) fn hash_block(block: u64, sets: u64, xor: bool) -> u64 {
    let mask = sets - 1;
    if xor {
        let bits = sets.trailing_zeros();
        (block & mask) ^ ((block >> bits) & mask)
    } else {
        block & mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheLine {
    pub valid: bool,
    /// Reserved by an outstanding fill.
    pub pending: bool,
    /// Full block index.
    pub tag: u64,
    pub owner: WarpId,
    pub dirty: bool,
    pub lru_stamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EvictionEvent {
    /// Block index of the evicted line.
    pub evicted_block: u64,
    /// Warp whose fill brought the evicted data.
    pub victim_owner: WarpId,
    /// Warp whose access caused the eviction.
    pub evictor: WarpId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessOutcome {
    Hit,
    MissIssued,
    MissMerged,
    Bypassed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub outcome: AccessOutcome,
    pub eviction: Option<EvictionEvent>,
    /// Cycle at which a miss's data arrives; `None` for hits and bypasses.
    pub fill_ready_cycle: Option<u64>,
}

impl Access {
    fn done(outcome: AccessOutcome) -> Self {
        Self {
            outcome,
            eviction: None,
            fill_ready_cycle: None,
        }
    }
}

/// Structural hazards; the engine stalls the warp and retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("all MSHR entries are in use")]
    MshrFull,
    #[error("block has an outstanding fill to another structure")]
    BlockInFlight,
    #[error("every way of the set is reserved by an outstanding fill")]
    SetReserved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagProbe {
    Present(WarpId),
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("block {0} is not resident in L1D")]
pub struct NotPresent(pub GlobalAddress);

/// Line handed to the response queue by a migration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MigratedLine {
    pub owner: WarpId,
    pub dirty: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WarpCacheStats {
    pub hits: u64,
    pub misses_issued: u64,
    pub misses_merged: u64,
    pub bypassed: u64,
    pub evictions_caused: u64,
    pub evictions_suffered: u64,
}

impl WarpCacheStats {
    pub fn misses(&self) -> u64 {
        self.misses_issued + self.misses_merged + self.bypassed
    }

    pub fn accesses(&self) -> u64 {
        self.hits + self.misses()
    }

    pub fn add(&mut self, other: &WarpCacheStats) {
        self.hits += other.hits;
        self.misses_issued += other.misses_issued;
        self.misses_merged += other.misses_merged;
        self.bypassed += other.bypassed;
        self.evictions_caused += other.evictions_caused;
        self.evictions_suffered += other.evictions_suffered;
    }
}

#[derive(Debug, Clone)]
pub struct CacheModel {
    sets: Vec<Vec<CacheLine>>,
    num_sets: u64,
    line_shift: u32,
    xor_hashing: bool,
    clock: u64,
    mshr: Mshr,
    stats: Vec<WarpCacheStats>,
    writebacks: u64,
}

impl CacheModel {
    pub fn new(cfg: &SimConfig) -> Self {
        let num_sets = cfg.l1d_sets();
        Self {
            sets: vec![vec![CacheLine::default(); cfg.l1d_ways]; num_sets as usize],
            num_sets,
            line_shift: cfg.line_bytes.trailing_zeros(),
            xor_hashing: cfg.xor_hashing,
            clock: 0,
            mshr: Mshr::new(cfg),
            stats: vec![WarpCacheStats::default(); cfg.max_warps],
            writebacks: 0,
        }
    }

    #[inline]
    fn block_of(&self, addr: GlobalAddress) -> u64 {
        addr.0 >> self.line_shift
    }

    #[inline]
    fn block_addr(&self, block: u64) -> GlobalAddress {
        GlobalAddress(block << self.line_shift)
    }

    pub fn set_of_block(&self, block: u64) -> usize {
        hash_block(block, self.num_sets, self.xor_hashing) as usize
    }

    pub fn mshr(&self) -> &Mshr {
        &self.mshr
    }

    pub fn mshr_mut(&mut self) -> &mut Mshr {
        &mut self.mshr
    }

    pub fn stats(&self) -> &[WarpCacheStats] {
        &self.stats
    }

    pub fn writebacks(&self) -> u64 {
        self.writebacks
    }

    fn find(&self, block: u64) -> Option<(usize, usize)> {
        let set = self.set_of_block(block);
        self.sets[set]
            .iter()
            .position(|l| l.valid && l.tag == block)
            .map(|way| (set, way))
    }

    pub fn access(
        &mut self,
        warp: WarpId,
        addr: GlobalAddress,
        is_store: bool,
        space: MemSpace,
        now: u64,
    ) -> Result<Access, AccessError> {
        let block = self.block_of(addr);
        self.clock += 1;

        if let Some((set, way)) = self.find(block) {
            let line = &mut self.sets[set][way];
            if !line.pending {
                line.lru_stamp = self.clock;
                if is_store && space == MemSpace::Local {
                    line.dirty = true;
                }
                self.stats[warp.index()].hits += 1;
                return Ok(Access::done(AccessOutcome::Hit));
            }
            if is_store {
                // Write-through passes the in-flight line.
                self.stats[warp.index()].bypassed += 1;
                return Ok(Access::done(AccessOutcome::Bypassed));
            }
            let merged = self.mshr.merge(addr, warp);
            debug_assert!(merged, "pending line without MSHR entry");
            let ready = self.mshr.lookup(addr).map(|e| e.fill_ready_cycle);
            self.stats[warp.index()].misses_merged += 1;
            return Ok(Access {
                outcome: AccessOutcome::MissMerged,
                eviction: None,
                fill_ready_cycle: ready,
            });
        }

        if is_store {
            // Write no-allocate: the store goes straight to the write queue.
            self.stats[warp.index()].bypassed += 1;
            return Ok(Access::done(AccessOutcome::Bypassed));
        }

        if self.mshr.lookup(addr).is_some() {
            return Err(AccessError::BlockInFlight);
        }
        if self.mshr.is_full() {
            return Err(AccessError::MshrFull);
        }
        let set = self.set_of_block(block);
        let way = self.pick_victim(set).ok_or(AccessError::SetReserved)?;

        let old = self.sets[set][way];
        let eviction = if old.valid {
            if old.dirty {
                self.writebacks += 1;
            }
            self.stats[warp.index()].evictions_caused += 1;
            self.stats[old.owner.index()].evictions_suffered += 1;
            Some(EvictionEvent {
                evicted_block: old.tag,
                victim_owner: old.owner,
                evictor: warp,
            })
        } else {
            None
        };
        self.sets[set][way] = CacheLine {
            valid: true,
            pending: true,
            tag: block,
            owner: warp,
            dirty: false,
            lru_stamp: self.clock,
        };
        let ready = self
            .mshr
            .allocate(addr, FillDestination::L1d, None, warp, now)
            .fill_ready_cycle;
        self.stats[warp.index()].misses_issued += 1;
        Ok(Access {
            outcome: AccessOutcome::MissIssued,
            eviction,
            fill_ready_cycle: Some(ready),
        })
    }

    fn pick_victim(&self, set: usize) -> Option<usize> {
        let lines = &self.sets[set];
        if let Some(way) = lines.iter().position(|l| !l.valid) {
            return Some(way);
        }
        lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.pending)
            .min_by_key(|(_, l)| l.lru_stamp)
            .map(|(way, _)| way)
    }

    /// Completes an L1D-destined fill.
    pub fn fill(&mut self, entry: &MshrEntry) {
        debug_assert_eq!(entry.destination, FillDestination::L1d);
        let block = self.block_of(entry.global_addr);
        if let Some((set, way)) = self.find(block) {
            self.sets[set][way].pending = false;
        }
    }

    /// Non-mutating tag check of a filled line.
    pub fn probe_tag(&self, addr: GlobalAddress) -> TagProbe {
        match self.find(self.block_of(addr)) {
            Some((set, way)) if !self.sets[set][way].pending => TagProbe::Present(self.sets[set][way].owner),
            _ => TagProbe::Absent,
        }
    }

    /// True if the block holds a line (filled or reserved).
    pub fn holds(&self, addr: GlobalAddress) -> bool {
        self.find(self.block_of(addr)).is_some()
    }

    pub fn is_pending(&self, addr: GlobalAddress) -> bool {
        self.find(self.block_of(addr))
            .is_some_and(|(set, way)| self.sets[set][way].pending)
    }

    /// Invalidates a resident line and queues its data in the response queue
    /// so the next fill of that block skips the L2 round trip.
    pub fn evict_to_response_queue(&mut self, addr: GlobalAddress) -> Result<MigratedLine, NotPresent> {
        let block = self.block_of(addr);
        match self.find(block) {
            Some((set, way)) if !self.sets[set][way].pending => {
                let line = std::mem::take(&mut self.sets[set][way]);
                self.mshr.push_response(self.block_addr(block));
                Ok(MigratedLine {
                    owner: line.owner,
                    dirty: line.dirty,
                })
            }
            _ => Err(NotPresent(addr.block_aligned(1 << self.line_shift))),
        }
    }

    /// Block indices of every valid (filled or reserved) line.
    pub fn resident_blocks(&self) -> impl Iterator<Item = u64> + '_ {
        self.sets.iter().flatten().filter(|l| l.valid).map(|l| l.tag)
    }

    pub fn lines(&self, set: usize) -> &[CacheLine] {
        &self.sets[set]
    }
}
