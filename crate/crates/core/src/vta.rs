//! Cache interference detector: victim tag array, per-warp VTA-hit counters,
//! the interference list and the IRS metric.
//!
//! One detector serves both L1D and the shared-memory cache.

use std::collections::VecDeque;

use thiserror::Error;

use crate::config::SimConfig;
use crate::l1d::EvictionEvent;
use crate::types::WarpId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VtaEntry {
    pub block: u64,
    pub evictor: WarpId,
}

/// One FIFO set per warp, indexed by the warp that brought the evicted data.
#[derive(Debug, Clone)]
pub struct VictimTagArray {
    sets: Vec<VecDeque<VtaEntry>>,
    entries_per_set: usize,
}

impl VictimTagArray {
    pub fn new(sets: usize, entries_per_set: usize) -> Self {
        Self {
            sets: vec![VecDeque::with_capacity(entries_per_set); sets],
            entries_per_set,
        }
    }

    pub fn insert(&mut self, owner: WarpId, entry: VtaEntry) {
        let set = &mut self.sets[owner.index()];
        if set.len() == self.entries_per_set {
            set.pop_front();
        }
        set.push_back(entry);
    }

    /// Removes and returns the entry for `block` in `owner`'s set.
    pub fn take(&mut self, owner: WarpId, block: u64) -> Option<VtaEntry> {
        let set = &mut self.sets[owner.index()];
        let pos = set.iter().position(|e| e.block == block)?;
        set.remove(pos)
    }

    pub fn set(&self, owner: WarpId) -> &VecDeque<VtaEntry> {
        &self.sets[owner.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterferenceEntry {
    pub interferer: WarpId,
    /// 2-bit saturating counter, 0..=3.
    pub counter: u8,
}

impl InterferenceEntry {
    pub const COUNTER_MAX: u8 = 3;

    /// Applies one interference event by `evictor`.
    pub fn observe(&mut self, evictor: WarpId) {
        if self.interferer == evictor {
            self.counter = (self.counter + 1).min(Self::COUNTER_MAX);
        } else {
            self.counter = self.counter.saturating_sub(1);
            if self.counter == 0 {
                self.interferer = evictor;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct InterferenceList {
    entries: Vec<InterferenceEntry>,
}

impl InterferenceList {
    /// Every entry starts as (self, 00).
    pub fn new(warps: usize) -> Self {
        Self {
            entries: (0..warps)
                .map(|w| InterferenceEntry {
                    interferer: WarpId::new(w),
                    counter: 0,
                })
                .collect(),
        }
    }

    pub fn entry(&self, warp: WarpId) -> InterferenceEntry {
        self.entries[warp.index()]
    }

    pub fn update(&mut self, victim: WarpId, evictor: WarpId) {
        self.entries[victim.index()].observe(evictor);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtaLookup {
    Hit(WarpId),
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpochKind {
    HighCutoff,
    LowCutoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum IrsError {
    #[error("IRS is undefined before the first instruction")]
    NoInstructions,
    #[error("IRS is undefined with no active warps")]
    NoActiveWarps,
}

/// Counters feeding the IRS metric. Reset when a detector is created.
#[derive(Debug, Clone)]
pub struct IrsCounters {
    pub vta_hits: Vec<u64>,
    pub inst_total: u64,
    pub active_warps: usize,
    window_hits_base: Vec<u64>,
    window_inst_base: u64,
}

impl IrsCounters {
    fn new(warps: usize) -> Self {
        Self {
            vta_hits: vec![0; warps],
            inst_total: 0,
            active_warps: 0,
            window_hits_base: vec![0; warps],
            window_inst_base: 0,
        }
    }
}

/// Evaluates `hits / (insts / active)`.
pub fn irs_value(hits: u64, insts: u64, active: usize) -> Result<f64, IrsError> {
    if insts == 0 {
        return Err(IrsError::NoInstructions);
    }
    if active == 0 {
        return Err(IrsError::NoActiveWarps);
    }
    // Computed as one correctly rounded division of exact integers.
    Ok((hits as u128 * active as u128) as f64 / insts as f64)
}

#[derive(Debug, Clone)]
pub struct InterferenceDetector {
    vta: VictimTagArray,
    list: InterferenceList,
    counters: IrsCounters,
    /// `matrix[victim][evictor]` = cumulative VTA hits.
    matrix: Vec<Vec<u64>>,
    high_epoch: u64,
    low_epoch: u64,
    windowed: bool,
}

impl InterferenceDetector {
    pub fn new(cfg: &SimConfig) -> Self {
        let warps = cfg.vta_sets;
        Self {
            vta: VictimTagArray::new(warps, cfg.vta_entries_per_warp),
            list: InterferenceList::new(warps),
            counters: IrsCounters::new(warps),
            matrix: vec![vec![0; warps]; warps],
            high_epoch: cfg.high_epoch_insts,
            low_epoch: cfg.low_epoch_insts,
            windowed: cfg.irs_windowed,
        }
    }

    pub fn vta(&self) -> &VictimTagArray {
        &self.vta
    }

    pub fn record_eviction(&mut self, ev: EvictionEvent) {
        self.vta.insert(
            ev.victim_owner,
            VtaEntry {
                block: ev.evicted_block,
                evictor: ev.evictor,
            },
        );
    }

    /// Called on every miss by `warp`. A hit consumes the matching entry.
    pub fn check_vta(&mut self, warp: WarpId, block: u64) -> VtaLookup {
        match self.vta.take(warp, block) {
            Some(entry) => {
                self.counters.vta_hits[warp.index()] += 1;
                self.matrix[warp.index()][entry.evictor.index()] += 1;
                self.update_interference(warp, entry.evictor);
                VtaLookup::Hit(entry.evictor)
            }
            None => VtaLookup::Miss,
        }
    }

    pub fn update_interference(&mut self, victim: WarpId, evictor: WarpId) {
        self.list.update(victim, evictor);
    }

    pub fn interference_entry(&self, warp: WarpId) -> InterferenceEntry {
        self.list.entry(warp)
    }

    /// Most interfering warp, or `warp` itself when none has been seen.
    pub fn most_interfering(&self, warp: WarpId) -> WarpId {
        self.list.entry(warp).interferer
    }

    pub fn count_instruction(&mut self) {
        self.counters.inst_total += 1;
    }

    pub fn set_active_warps(&mut self, n: usize) {
        self.counters.active_warps = n;
    }

    pub fn counters(&self) -> &IrsCounters {
        &self.counters
    }

    pub fn vta_hits(&self, warp: WarpId) -> u64 {
        self.counters.vta_hits[warp.index()]
    }

    pub fn inst_total(&self) -> u64 {
        self.counters.inst_total
    }

    pub fn irs(&self, warp: WarpId) -> Result<f64, IrsError> {
        let c = &self.counters;
        if self.windowed {
            irs_value(
                c.vta_hits[warp.index()] - c.window_hits_base[warp.index()],
                c.inst_total - c.window_inst_base,
                c.active_warps,
            )
        } else {
            irs_value(c.vta_hits[warp.index()], c.inst_total, c.active_warps)
        }
    }

    /// Starts a new IRS window; only meaningful with `irs_windowed`.
    pub fn roll_window(&mut self) {
        let c = &mut self.counters;
        c.window_hits_base.clone_from(&c.vta_hits);
        c.window_inst_base = c.inst_total;
    }

    pub fn epoch_len(&self, kind: EpochKind) -> u64 {
        match kind {
            EpochKind::HighCutoff => self.high_epoch,
            EpochKind::LowCutoff => self.low_epoch,
        }
    }

    /// True when `inst_total` is a positive multiple of the epoch length.
    pub fn epoch_tick(&self, kind: EpochKind) -> bool {
        let len = self.epoch_len(kind);
        let n = self.counters.inst_total;
        n > 0 && n.is_multiple_of(len)
    }

    pub fn matrix(&self) -> &[Vec<u64>] {
        &self.matrix
    }
}
