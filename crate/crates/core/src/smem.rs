//! Unused shared memory repurposed as a direct-mapped cache.
//!
//! Shared memory is 32 banks of 8-byte words split into two bank groups of
//! 16. A 128-byte block is striped across one group at one row; its tag
//! lives in the other group, so a tag and its data can be read in the same
//! cycle. Two 31-bit tags (25 tag bits + 6-bit WID) share one bank word, so
//! a tag row of one group holds 32 tags.
//!
//! Address fields, LSB first: `F` byte offset (3 bits), `B` bank in group
//! (4), `G` bank group (1), `R` row (8). The rest of the address is tag.

use thiserror::Error;

use crate::config::SimConfig;
use crate::l1d::{Access, AccessError, AccessOutcome, CacheModel, EvictionEvent, TagProbe, WarpCacheStats};
use crate::mshr::{FillDestination, MshrEntry};
use crate::types::{GlobalAddress, MemSpace, WarpId};

/// Data rows served by one tag row (per bank group).
pub const TAGS_PER_ROW: usize = 32;
/// Width of the tag field stored beside each WID.
pub const TAG_BITS: u32 = 25;
/// Bits of the tag holding the folded row quotient.
pub const TAG_ROW_QUOTIENT_BITS: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SmmtOwner {
    Cta(u32),
    CiaoCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SmmtEntry {
    pub owner: SmmtOwner,
    pub base_row: usize,
    pub size_rows: usize,
}

impl SmmtEntry {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.base_row..self.base_row + self.size_rows
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmmtError {
    #[error("CTA {cta} needs {rows} rows but only {free} are free")]
    OutOfRows { cta: u32, rows: usize, free: usize },
    #[error("CTA {0} already holds a reservation")]
    DuplicateCta(u32),
}

/// Shared memory management table: per-CTA reservations plus at most one
/// cache reservation, as non-overlapping row ranges.
#[derive(Debug, Clone)]
pub struct Smmt {
    total_rows: usize,
    entries: Vec<SmmtEntry>,
}

impl Smmt {
    pub fn new(total_rows: usize) -> Self {
        Self {
            total_rows,
            entries: Vec::new(),
        }
    }

    pub fn total_rows(&self) -> usize {
        self.total_rows
    }

    pub fn entries(&self) -> &[SmmtEntry] {
        &self.entries
    }

    fn cta_end(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.owner, SmmtOwner::Cta(_)))
            .map(|e| e.base_row + e.size_rows)
            .max()
            .unwrap_or(0)
    }

    /// Rows above every CTA reservation.
    pub fn unused_rows(&self) -> usize {
        self.total_rows - self.cta_end()
    }

    pub fn cta_rows(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.owner, SmmtOwner::Cta(_)))
            .map(|e| e.size_rows)
            .sum()
    }

    /// Reserves `rows` contiguous rows for a CTA, packed from row 0. Drops
    /// any cache reservation, which must be recomputed afterwards.
    pub fn reserve_cta(&mut self, cta: u32, rows: usize) -> Result<SmmtEntry, SmmtError> {
        if self.entries.iter().any(|e| e.owner == SmmtOwner::Cta(cta)) {
            return Err(SmmtError::DuplicateCta(cta));
        }
        let free = self.unused_rows();
        if rows > free {
            return Err(SmmtError::OutOfRows { cta, rows, free });
        }
        self.entries.retain(|e| e.owner != SmmtOwner::CiaoCache);
        let entry = SmmtEntry {
            owner: SmmtOwner::Cta(cta),
            base_row: self.cta_end(),
            size_rows: rows,
        };
        self.entries.push(entry);
        Ok(entry)
    }

    pub fn cache_entry(&self) -> Option<SmmtEntry> {
        self.entries.iter().copied().find(|e| e.owner == SmmtOwner::CiaoCache)
    }

    fn set_cache_entry(&mut self, entry: Option<SmmtEntry>) {
        self.entries.retain(|e| e.owner != SmmtOwner::CiaoCache);
        if let Some(e) = entry {
            self.entries.push(e);
        }
    }

    /// True if `row` lies inside a CTA-owned range.
    pub fn is_cta_row(&self, row: usize) -> bool {
        self.entries
            .iter()
            .any(|e| matches!(e.owner, SmmtOwner::Cta(_)) && e.rows().contains(&row))
    }
}

/// A position in shared memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SmemLocation {
    /// Byte offset within an 8-byte bank word (3 bits).
    pub f: u8,
    /// Bank within the group (4 bits).
    pub b: u8,
    /// Bank group (1 bit).
    pub g: u8,
    /// Row (8 bits).
    pub r: u8,
}

impl SmemLocation {
    pub fn pack(self) -> u16 {
        debug_assert!(self.f < 8 && self.b < 16 && self.g < 2);
        self.f as u16 | (self.b as u16) << 3 | (self.g as u16) << 7 | (self.r as u16) << 8
    }

    pub fn unpack(bits: u16) -> Self {
        Self {
            f: (bits & 0x7) as u8,
            b: ((bits >> 3) & 0xF) as u8,
            g: ((bits >> 7) & 0x1) as u8,
            r: (bits >> 8) as u8,
        }
    }

    /// Absolute bank number, 0..32.
    pub fn bank(self) -> usize {
        self.g as usize * 16 + self.b as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("tag value {0:#x} does not fit in {TAG_BITS} bits")]
pub struct TagOverflow(pub u64);

/// A stored tag: 25 tag bits and a 6-bit WID, plus a valid flag in the top
/// bit of its 32-bit half word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SmemTag {
    pub tag_bits: u32,
    pub wid: WarpId,
    pub valid: bool,
}

impl SmemTag {
    pub fn new(tag: u64, wid: WarpId, valid: bool) -> Result<Self, TagOverflow> {
        if tag >> TAG_BITS != 0 {
            return Err(TagOverflow(tag));
        }
        Ok(Self {
            tag_bits: tag as u32,
            wid,
            valid,
        })
    }

    pub fn pack(self) -> u32 {
        self.tag_bits | (self.wid.0 as u32 & 0x3F) << TAG_BITS | (self.valid as u32) << 31
    }

    pub fn unpack(bits: u32) -> Self {
        Self {
            tag_bits: bits & ((1 << TAG_BITS) - 1),
            wid: WarpId(((bits >> TAG_BITS) & 0x3F) as u8),
            valid: bits >> 31 != 0,
        }
    }

    /// Two tags in one 64-bit bank word; `low` takes byte offset 0.
    pub fn pack_word(low: SmemTag, high: SmemTag) -> u64 {
        low.pack() as u64 | (high.pack() as u64) << 32
    }

    pub fn unpack_word(word: u64) -> (SmemTag, SmemTag) {
        (Self::unpack(word as u32), Self::unpack((word >> 32) as u32))
    }
}

/// Registers of the address translation unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TranslationUnit {
    /// Rows held by CTAs (the row-usage mask register).
    pub cta_mask: u8,
    pub data_offset: u16,
    pub tag_offset: u16,
    /// Data rows; each holds one block per bank group.
    pub cache_rows: u16,
}

impl TranslationUnit {
    pub fn new(data_offset: u16, tag_offset: u16, cache_rows: u16) -> Self {
        assert!(cache_rows as usize <= 256, "cache_rows exceeds the 8-bit row field");
        Self {
            cta_mask: 0,
            data_offset,
            tag_offset,
            cache_rows,
        }
    }

    pub fn tag_rows(&self) -> u16 {
        (self.cache_rows as usize).div_ceil(TAGS_PER_ROW) as u16
    }

    /// Number of blocks the cache can hold.
    pub fn capacity_blocks(&self) -> usize {
        self.cache_rows as usize * 2
    }

    pub fn data_rows(&self) -> std::ops::Range<usize> {
        self.data_offset as usize..(self.data_offset + self.cache_rows) as usize
    }

    pub fn tag_row_range(&self) -> std::ops::Range<usize> {
        self.tag_offset as usize..(self.tag_offset + self.tag_rows()) as usize
    }
}

/// Largest data-row count whose data and tag rows fit in `unused` rows.
pub fn cache_rows_for(unused: usize) -> usize {
    let mut n = unused.min(256);
    while n > 0 && n + n.div_ceil(TAGS_PER_ROW) > unused {
        n -= 1;
    }
    n
}

/// Carves the unused rows above the CTAs into a data region followed by its
/// tag region and records the reservation in the SMMT.
pub fn reserve_cache_space(smmt: &mut Smmt) -> TranslationUnit {
    let base = smmt.cta_end();
    let rows = cache_rows_for(smmt.unused_rows());
    let tu = TranslationUnit {
        cta_mask: smmt.cta_rows().min(255) as u8,
        data_offset: base as u16,
        tag_offset: (base + rows) as u16,
        cache_rows: rows as u16,
    };
    let entry = (rows > 0).then(|| SmmtEntry {
        owner: SmmtOwner::CiaoCache,
        base_row: base,
        size_rows: rows + tu.tag_rows() as usize,
    });
    smmt.set_cache_entry(entry);
    tu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("the shared-memory cache has no rows")]
pub struct ZeroCapacity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Translation {
    pub data: SmemLocation,
    pub tag_loc: SmemLocation,
    /// Expected tag: address bits above bit 15 followed by the 9-bit row quotient.
    pub tag_expect: u64,
    /// Direct-mapped slot, `row_in_cache * 2 + G`.
    pub slot: usize,
}

impl Translation {
    /// Tag position within its row: `(bank << 1) | half`.
    pub fn tag_position(&self) -> u8 {
        (self.tag_loc.b << 1) | (self.tag_loc.f >> 2)
    }
}

pub fn translate(addr: GlobalAddress, tu: &TranslationUnit) -> Result<Translation, ZeroCapacity> {
    if tu.cache_rows == 0 {
        return Err(ZeroCapacity);
    }
    let a = addr.0;
    let f = (a & 0x7) as u8;
    let b = ((a >> 3) & 0xF) as u8;
    let g = ((a >> 7) & 0x1) as u8;
    let row_field = ((a >> 8) & 0xFF) as u16;
    let row = row_field % tu.cache_rows;
    let quotient = (row_field / tu.cache_rows) as u64;

    let data_row = tu.data_offset + row;
    let pos = (row as usize % TAGS_PER_ROW) as u8;
    let tag_row = tu.tag_offset + row / TAGS_PER_ROW as u16;
    debug_assert!(data_row < 256 && tag_row < 256);

    Ok(Translation {
        data: SmemLocation {
            f,
            b,
            g,
            r: data_row as u8,
        },
        tag_loc: SmemLocation {
            f: (pos & 1) << 2,
            b: pos >> 1,
            g: g ^ 1,
            r: tag_row as u8,
        },
        tag_expect: ((a >> 16) << TAG_ROW_QUOTIENT_BITS) | quotient,
        slot: row as usize * 2 + g as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SmemAccessError {
    #[error(transparent)]
    ZeroCapacity(#[from] ZeroCapacity),
    #[error(transparent)]
    Hazard(#[from] AccessError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct SmemLine {
    valid: bool,
    pending: bool,
    tag: u64,
    block: u64,
    owner: WarpId,
    dirty: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SmemOccupancy {
    pub cta_rows: usize,
    pub cache_data_rows: usize,
    pub cache_tag_rows: usize,
    pub total_rows: usize,
}

#[derive(Debug, Clone)]
pub struct SmemCache {
    smmt: Smmt,
    tu: TranslationUnit,
    lines: Vec<SmemLine>,
    stats: Vec<WarpCacheStats>,
    migrations_in: u64,
    writebacks: u64,
}

impl SmemCache {
    /// Builds the SMMT from the configured CTA usage and reserves the rest.
    pub fn new(cfg: &SimConfig) -> Self {
        let mut smmt = Smmt::new(cfg.smem_rows());
        let cta_rows = cfg.cta_smem_rows();
        if cta_rows > 0 {
            smmt.reserve_cta(0, cta_rows)
                .expect("validated config keeps CTA usage within shared memory");
        }
        Self::with_smmt(smmt, cfg.max_warps)
    }

    pub fn with_smmt(mut smmt: Smmt, warps: usize) -> Self {
        let tu = reserve_cache_space(&mut smmt);
        Self {
            smmt,
            tu,
            lines: vec![SmemLine::default(); tu.capacity_blocks()],
            stats: vec![WarpCacheStats::default(); warps],
            migrations_in: 0,
            writebacks: 0,
        }
    }

    pub fn translation_unit(&self) -> &TranslationUnit {
        &self.tu
    }

    pub fn smmt(&self) -> &Smmt {
        &self.smmt
    }

    pub fn capacity_blocks(&self) -> usize {
        self.tu.capacity_blocks()
    }

    pub fn stats(&self) -> &[WarpCacheStats] {
        &self.stats
    }

    pub fn migrations_in(&self) -> u64 {
        self.migrations_in
    }

    pub fn writebacks(&self) -> u64 {
        self.writebacks
    }

    pub fn occupancy(&self) -> SmemOccupancy {
        SmemOccupancy {
            cta_rows: self.smmt.cta_rows(),
            cache_data_rows: self.tu.cache_rows as usize,
            cache_tag_rows: if self.tu.cache_rows > 0 {
                self.tu.tag_rows() as usize
            } else {
                0
            },
            total_rows: self.smmt.total_rows(),
        }
    }

    fn lookup(&self, addr: GlobalAddress) -> Option<(Translation, &SmemLine)> {
        let t = translate(addr, &self.tu).ok()?;
        let line = &self.lines[t.slot];
        (line.valid && line.tag == t.tag_expect).then_some((t, line))
    }

    /// Non-mutating check of a filled line.
    pub fn probe_tag(&self, addr: GlobalAddress) -> TagProbe {
        match self.lookup(addr) {
            Some((_, l)) if !l.pending => TagProbe::Present(l.owner),
            _ => TagProbe::Absent,
        }
    }

    /// True if the block holds a line (filled or reserved).
    pub fn holds(&self, addr: GlobalAddress) -> bool {
        self.lookup(addr).is_some()
    }

    pub fn is_pending(&self, addr: GlobalAddress) -> bool {
        self.lookup(addr).is_some_and(|(_, l)| l.pending)
    }

    pub fn access(
        &mut self,
        l1d: &mut CacheModel,
        warp: WarpId,
        addr: GlobalAddress,
        is_store: bool,
        space: MemSpace,
        now: u64,
    ) -> Result<Access, SmemAccessError> {
        let t = translate(addr, &self.tu)?;
        debug_assert!(!self.smmt.is_cta_row(t.data.r as usize) && !self.smmt.is_cta_row(t.tag_loc.r as usize));
        let block = addr.0 >> 7;
        let line = self.lines[t.slot];
        let stats = &mut self.stats[warp.index()];

        if line.valid && line.tag == t.tag_expect {
            if !line.pending {
                if is_store && space == MemSpace::Local {
                    self.lines[t.slot].dirty = true;
                }
                stats.hits += 1;
                return Ok(Access {
                    outcome: AccessOutcome::Hit,
                    eviction: None,
                    fill_ready_cycle: None,
                });
            }
            if is_store {
                stats.bypassed += 1;
                return Ok(Access {
                    outcome: AccessOutcome::Bypassed,
                    eviction: None,
                    fill_ready_cycle: None,
                });
            }
            l1d.mshr_mut().merge(addr, warp);
            stats.misses_merged += 1;
            return Ok(Access {
                outcome: AccessOutcome::MissMerged,
                eviction: None,
                fill_ready_cycle: l1d.mshr().lookup(addr).map(|e| e.fill_ready_cycle),
            });
        }

        if is_store {
            stats.bypassed += 1;
            return Ok(Access {
                outcome: AccessOutcome::Bypassed,
                eviction: None,
                fill_ready_cycle: None,
            });
        }
        if l1d.mshr().lookup(addr).is_some() {
            return Err(AccessError::BlockInFlight.into());
        }
        if l1d.mshr().is_full() {
            return Err(AccessError::MshrFull.into());
        }
        if line.valid && line.pending {
            return Err(AccessError::SetReserved.into());
        }

        // Migrate from L1D through the response queue when the block is there.
        let mut dirty = false;
        if let TagProbe::Present(_) = l1d.probe_tag(addr) {
            let moved = l1d
                .evict_to_response_queue(addr)
                .expect("probe reported the block present");
            dirty = moved.dirty;
            self.migrations_in += 1;
        }

        let eviction = if line.valid {
            if line.dirty {
                self.writebacks += 1;
            }
            self.stats[warp.index()].evictions_caused += 1;
            self.stats[line.owner.index()].evictions_suffered += 1;
            Some(EvictionEvent {
                evicted_block: line.block,
                victim_owner: line.owner,
                evictor: warp,
            })
        } else {
            None
        };
        self.lines[t.slot] = SmemLine {
            valid: true,
            pending: true,
            tag: t.tag_expect,
            block,
            owner: warp,
            dirty,
        };
        let ready = l1d
            .mshr_mut()
            .allocate(addr, FillDestination::Smem, Some(t.data), warp, now)
            .fill_ready_cycle;
        self.stats[warp.index()].misses_issued += 1;
        Ok(Access {
            outcome: AccessOutcome::MissIssued,
            eviction,
            fill_ready_cycle: Some(ready),
        })
    }

    /// Completes a shared-memory-destined fill at its translated location.
    pub fn fill(&mut self, entry: &MshrEntry) {
        debug_assert_eq!(entry.destination, FillDestination::Smem);
        if let Some((t, _)) = self.lookup(entry.global_addr) {
            debug_assert_eq!(Some(t.data), entry.smem_addr);
            self.lines[t.slot].pending = false;
        }
    }

    /// Invalidates a filled line and hands its data to the response queue.
    pub fn evict_to_response_queue(&mut self, l1d: &mut CacheModel, addr: GlobalAddress) -> bool {
        match self.lookup(addr) {
            Some((t, l)) if !l.pending => {
                self.lines[t.slot] = SmemLine::default();
                l1d.mshr_mut().push_response(addr.block_aligned(128));
                true
            }
            _ => false,
        }
    }

    /// Block indices of every valid (filled or reserved) line.
    pub fn resident_blocks(&self) -> impl Iterator<Item = u64> + '_ {
        self.lines.iter().filter(|l| l.valid).map(|l| l.block)
    }
}
