//! Run statistics and their CSV renderings.

use std::io;
use std::path::Path;

use serde::Serialize;

use crate::config::Policy;
use crate::l1d::{AccessOutcome, WarpCacheStats};
use crate::scheduler::EpochEvent;
use crate::smem::SmemOccupancy;
use crate::types::WarpId;
use crate::vta::EpochKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WarpStats {
    pub issued: u64,
    pub l1d: WarpCacheStats,
    pub smem: WarpCacheStats,
    pub vta_hits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineSample {
    pub cycle: u64,
    pub active: usize,
    pub isolated: usize,
    pub stalled: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    L1d,
    Smem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessRecord {
    pub cycle: u64,
    pub warp: WarpId,
    pub is_store: bool,
    pub structure: Structure,
    pub outcome: AccessOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub policy: Policy,
    pub cycles: u64,
    pub instructions: u64,
    pub ipc: f64,
    pub warps: Vec<WarpStats>,
    /// `interference[victim][evictor]` cumulative VTA hits.
    pub interference: Vec<Vec<u64>>,
    pub timeline: Vec<TimelineSample>,
    pub epochs: Vec<EpochEvent>,
    pub smem_occupancy: SmemOccupancy,
    pub migrations_to_smem: u64,
    pub writebacks: u64,
    /// Cycles where a block was valid in both L1D and the shared-memory
    /// cache. Only counted when the auditor is enabled.
    pub coherence_violations: u64,
    pub transition_violations: u64,
    pub accesses: Option<Vec<AccessRecord>>,
    pub schedule: Option<Vec<WarpId>>,
}

impl SimStats {
    pub fn l1d_total(&self) -> WarpCacheStats {
        let mut t = WarpCacheStats::default();
        self.warps.iter().for_each(|w| t.add(&w.l1d));
        t
    }

    pub fn smem_total(&self) -> WarpCacheStats {
        let mut t = WarpCacheStats::default();
        self.warps.iter().for_each(|w| t.add(&w.smem));
        t
    }

    pub fn l1d_hit_rate(&self) -> f64 {
        ratio(self.l1d_total().hits, self.l1d_total().accesses())
    }

    pub fn smem_hit_rate(&self) -> f64 {
        ratio(self.smem_total().hits, self.smem_total().accesses())
    }

    /// Hits in either structure over all routed accesses.
    pub fn combined_hit_rate(&self) -> f64 {
        let (l, s) = (self.l1d_total(), self.smem_total());
        ratio(l.hits + s.hits, l.accesses() + s.accesses())
    }

    pub fn vta_hits_total(&self) -> u64 {
        self.warps.iter().map(|w| w.vta_hits).sum()
    }

    pub fn action_count(&self, action: crate::scheduler::CiaoAction) -> usize {
        self.epochs.iter().filter(|e| e.action == action).count()
    }
}

pub(crate) fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    policy: &'a str,
    trace: &'a str,
    cycles: u64,
    instructions: u64,
    ipc: f64,
    l1d_hit_rate: f64,
    smem_hit_rate: f64,
}

#[derive(Debug, Serialize)]
struct InterferenceRow<'a> {
    policy: &'a str,
    victim: u8,
    evictor: u8,
    count: u64,
}

#[derive(Debug, Serialize)]
struct TimelineRow<'a> {
    policy: &'a str,
    cycle: u64,
    active: usize,
    isolated: usize,
    stalled: usize,
}

#[derive(Debug, Serialize)]
struct EpochRow<'a> {
    policy: &'a str,
    epoch_kind: &'a str,
    epoch_index: u64,
    cycle: u64,
    acting_warp: u8,
    irs: f64,
    action: &'a str,
    target_warp: Option<u8>,
}

#[derive(Debug, Serialize)]
struct WarpRow<'a> {
    policy: &'a str,
    warp: usize,
    issued: u64,
    l1d_hits: u64,
    l1d_misses: u64,
    l1d_evictions_caused: u64,
    l1d_evictions_suffered: u64,
    smem_hits: u64,
    smem_misses: u64,
    smem_evictions_caused: u64,
    smem_evictions_suffered: u64,
    vta_hits: u64,
}

#[derive(Debug, Serialize)]
struct SmemRow<'a> {
    policy: &'a str,
    trace: &'a str,
    total_rows: usize,
    cta_rows: usize,
    cache_data_rows: usize,
    cache_tag_rows: usize,
    migrations_to_smem: u64,
}

/// One completed run and the trace label it belongs to.
#[derive(Debug, Clone, Copy)]
pub struct RunReport<'a> {
    pub trace: &'a str,
    pub stats: &'a SimStats,
}

fn writer(path: &Path) -> io::Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(io::Error::other)
}

fn finish(mut w: csv::Writer<std::fs::File>) -> io::Result<()> {
    w.flush()
}

pub fn epoch_kind_name(kind: EpochKind) -> &'static str {
    match kind {
        EpochKind::HighCutoff => "high",
        EpochKind::LowCutoff => "low",
    }
}

/// Writes `summary.csv`, `interference.csv`, `timeline.csv`, `epochs.csv`,
/// `warps.csv` and `smem.csv` into `dir`.
pub fn write_reports(dir: &Path, runs: &[RunReport<'_>]) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut summary = writer(&dir.join("summary.csv"))?;
    let mut interference = writer(&dir.join("interference.csv"))?;
    let mut timeline = writer(&dir.join("timeline.csv"))?;
    let mut epochs = writer(&dir.join("epochs.csv"))?;
    let mut warps = writer(&dir.join("warps.csv"))?;
    let mut smem = writer(&dir.join("smem.csv"))?;

    for run in runs {
        let s = run.stats;
        let policy = s.policy.name();
        summary
            .serialize(SummaryRow {
                policy,
                trace: run.trace,
                cycles: s.cycles,
                instructions: s.instructions,
                ipc: s.ipc,
                l1d_hit_rate: s.l1d_hit_rate(),
                smem_hit_rate: s.smem_hit_rate(),
            })
            .map_err(io::Error::other)?;

        for (victim, row) in s.interference.iter().enumerate() {
            for (evictor, &count) in row.iter().enumerate() {
                if count > 0 {
                    interference
                        .serialize(InterferenceRow {
                            policy,
                            victim: victim as u8,
                            evictor: evictor as u8,
                            count,
                        })
                        .map_err(io::Error::other)?;
                }
            }
        }

        for t in &s.timeline {
            timeline
                .serialize(TimelineRow {
                    policy,
                    cycle: t.cycle,
                    active: t.active,
                    isolated: t.isolated,
                    stalled: t.stalled,
                })
                .map_err(io::Error::other)?;
        }

        for e in &s.epochs {
            epochs
                .serialize(EpochRow {
                    policy,
                    epoch_kind: epoch_kind_name(e.kind),
                    epoch_index: e.epoch_index,
                    cycle: e.cycle,
                    acting_warp: e.acting.0,
                    irs: e.irs,
                    action: e.action.name(),
                    target_warp: e.target.map(|t| t.0),
                })
                .map_err(io::Error::other)?;
        }

        for (i, w) in s.warps.iter().enumerate() {
            warps
                .serialize(WarpRow {
                    policy,
                    warp: i,
                    issued: w.issued,
                    l1d_hits: w.l1d.hits,
                    l1d_misses: w.l1d.misses(),
                    l1d_evictions_caused: w.l1d.evictions_caused,
                    l1d_evictions_suffered: w.l1d.evictions_suffered,
                    smem_hits: w.smem.hits,
                    smem_misses: w.smem.misses(),
                    smem_evictions_caused: w.smem.evictions_caused,
                    smem_evictions_suffered: w.smem.evictions_suffered,
                    vta_hits: w.vta_hits,
                })
                .map_err(io::Error::other)?;
        }

        let o = s.smem_occupancy;
        smem.serialize(SmemRow {
            policy,
            trace: run.trace,
            total_rows: o.total_rows,
            cta_rows: o.cta_rows,
            cache_data_rows: o.cache_data_rows,
            cache_tag_rows: o.cache_tag_rows,
            migrations_to_smem: s.migrations_to_smem,
        })
        .map_err(io::Error::other)?;
    }

    finish(summary)?;
    finish(interference)?;
    finish(timeline)?;
    finish(epochs)?;
    finish(warps)?;
    finish(smem)
}
