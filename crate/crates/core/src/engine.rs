//! Cycle loop for one SM.
//!
//! Each cycle: pick a warp, issue its next record (ALU in one cycle; loads
//! and stores to L1D or the shared-memory cache by the warp's I flag), drain
//! ready MSHR fills, then run epoch bookkeeping. A warp with an outstanding
//! miss is blocked until its fill arrives.

use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::l1d::{Access, AccessError, AccessOutcome, CacheModel};
use crate::mshr::FillDestination;
use crate::scheduler::Scheduler;
use crate::smem::{SmemAccessError, SmemCache};
use crate::stats::{AccessRecord, SimStats, Structure, TimelineSample, WarpStats};
use crate::types::{AccessKind, GlobalAddress, Trace, TraceRecord, WarpId};
use crate::vta::{EpochKind, InterferenceDetector};

/// Cycles between timeline samples.
pub const TIMELINE_INTERVAL: u64 = 1000;

/// Cycles without any issue after which a run is declared stuck.
const WATCHDOG_CYCLES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("malformed trace at record {index}: {reason}")]
    MalformedTrace { index: usize, reason: String },
    #[error("no instruction issued for {WATCHDOG_CYCLES} cycles (stuck at cycle {cycle})")]
    Stuck { cycle: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Check L1D / shared-memory exclusivity every cycle.
    pub audit_coherence: bool,
    /// Keep every routed access in `SimStats::accesses`.
    pub record_accesses: bool,
    /// Keep the issuing warp of every instruction in `SimStats::schedule`.
    pub record_schedule: bool,
}

pub fn run(trace: &Trace, cfg: &SimConfig) -> Result<SimStats, SimError> {
    run_with(trace, cfg, &RunOptions::default())
}

/// Runs every `(trace, config)` cell independently; results are in input order.
pub fn run_matrix(cells: &[(&Trace, SimConfig)], opts: &RunOptions) -> Vec<Result<SimStats, SimError>> {
    cells
        .par_iter()
        .map(|(trace, cfg)| run_with(trace, cfg, opts))
        .collect()
}

fn check_trace(trace: &Trace, cfg: &SimConfig) -> Result<(), SimError> {
    for (index, r) in trace.records.iter().enumerate() {
        let bad = |reason: String| Err(SimError::MalformedTrace { index, reason });
        if r.warp.index() >= cfg.max_warps {
            return bad(format!("warp {} exceeds max_warps {}", r.warp.0, cfg.max_warps));
        }
        match (r.kind, r.addr) {
            (AccessKind::Alu, Some(_)) => return bad("ALU record carries an address".into()),
            (AccessKind::Load | AccessKind::Store, None) => return bad("memory record without an address".into()),
            _ => {}
        }
    }
    Ok(())
}

struct Sm<'a> {
    cfg: &'a SimConfig,
    opts: &'a RunOptions,
    streams: Vec<Vec<TraceRecord>>,
    sched: Scheduler,
    det: InterferenceDetector,
    l1d: CacheModel,
    smem: SmemCache,
    issued: Vec<u64>,
    instructions: u64,
    now: u64,
    coherence_violations: u64,
    timeline: Vec<TimelineSample>,
    accesses: Vec<AccessRecord>,
    schedule: Vec<WarpId>,
}

pub fn run_with(trace: &Trace, cfg: &SimConfig, opts: &RunOptions) -> Result<SimStats, SimError> {
    cfg.validate()?;
    check_trace(trace, cfg)?;
    let mut sm = Sm::new(trace, cfg, opts);
    sm.run()?;
    Ok(sm.into_stats())
}

impl<'a> Sm<'a> {
    fn new(trace: &Trace, cfg: &'a SimConfig, opts: &'a RunOptions) -> Self {
        let streams = trace.per_warp();
        let mut sched = Scheduler::new(cfg, streams.len());
        for (w, s) in streams.iter().enumerate() {
            if s.is_empty() {
                sched.finish(WarpId::new(w));
            }
        }
        let mut det = InterferenceDetector::new(cfg);
        det.set_active_warps(sched.live_warps());
        Self {
            cfg,
            opts,
            issued: vec![0; streams.len()],
            streams,
            sched,
            det,
            l1d: CacheModel::new(cfg),
            smem: SmemCache::new(cfg),
            instructions: 0,
            now: 0,
            coherence_violations: 0,
            timeline: Vec::new(),
            accesses: Vec::new(),
            schedule: Vec::new(),
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        let mut last_issue = 0;
        while !self.sched.all_finished() {
            if self.issue_cycle() {
                last_issue = self.now;
            } else if self.now - last_issue > WATCHDOG_CYCLES {
                return Err(SimError::Stuck { cycle: self.now });
            }
            self.drain_fills();
            if self.cfg.scheduler.is_ciao() {
                self.sched.ensure_progress(&self.det, self.now);
            }
            if self.opts.audit_coherence {
                self.audit();
            }
            if self.now.is_multiple_of(TIMELINE_INTERVAL) {
                let (active, isolated, stalled) = self.sched.mode_counts();
                self.timeline.push(TimelineSample {
                    cycle: self.now,
                    active,
                    isolated,
                    stalled,
                });
            }
            self.now += 1;
        }
        Ok(())
    }

    /// Issues at most one instruction. Returns whether one issued.
    fn issue_cycle(&mut self) -> bool {
        let Some(w) = self.sched.select_warp(self.now) else {
            return false;
        };
        let pc = self.sched.warp(w).pc;
        let rec = self.streams[w.index()][pc];

        if rec.is_memory() {
            match self.memory_access(w, &rec) {
                Ok(access) => {
                    if matches!(access.outcome, AccessOutcome::MissIssued | AccessOutcome::MissMerged) {
                        self.sched.warp_mut(w).waiting_fill = true;
                    }
                }
                Err(_) => {
                    self.sched.warp_mut(w).ready_at = self.now + 1;
                    return false;
                }
            }
        }

        let st = self.sched.warp_mut(w);
        st.pc += 1;
        let done = st.pc == self.streams[w.index()].len() && !st.waiting_fill;
        self.issued[w.index()] += 1;
        self.instructions += 1;
        self.det.count_instruction();
        if self.opts.record_schedule {
            self.schedule.push(w);
        }
        if done {
            self.finish(w);
        }
        self.sched.on_instruction(w, &self.det, self.now);
        if self.cfg.irs_windowed && self.det.epoch_tick(EpochKind::HighCutoff) {
            self.det.roll_window();
        }
        true
    }

    fn finish(&mut self, w: WarpId) {
        self.sched.finish(w);
        self.det.set_active_warps(self.sched.live_warps());
    }

    fn memory_access(&mut self, w: WarpId, rec: &TraceRecord) -> Result<Access, AccessError> {
        let addr = rec.addr.expect("checked trace");
        let is_store = rec.kind == AccessKind::Store;
        let to_smem = self.cfg.scheduler.uses_smem_cache() && self.sched.warp(w).i && self.smem.capacity_blocks() > 0;

        let (structure, access) = if to_smem {
            let r = self
                .smem
                .access(&mut self.l1d, w, addr, is_store, rec.space, self.now)
                .map_err(|e| match e {
                    SmemAccessError::Hazard(h) => h,
                    SmemAccessError::ZeroCapacity(_) => unreachable!("capacity checked before routing"),
                })?;
            (Structure::Smem, r)
        } else {
            if !is_store {
                self.reclaim_from_smem(addr)?;
            }
            (Structure::L1d, self.l1d.access(w, addr, is_store, rec.space, self.now)?)
        };

        if !is_store && matches!(access.outcome, AccessOutcome::MissIssued | AccessOutcome::MissMerged) {
            self.det.check_vta(w, addr.0 >> self.cfg.line_bytes.trailing_zeros());
        }
        if let Some(ev) = access.eviction {
            self.det.record_eviction(ev);
        }
        if self.opts.record_accesses {
            self.accesses.push(AccessRecord {
                cycle: self.now,
                warp: w,
                is_store,
                structure,
                outcome: access.outcome,
            });
        }
        Ok(access)
    }

    /// Moves a block resident in the shared-memory cache back through the
    /// response queue before an L1D load of it.
    fn reclaim_from_smem(&mut self, addr: GlobalAddress) -> Result<(), AccessError> {
        if !self.smem.holds(addr) {
            return Ok(());
        }
        if self.smem.is_pending(addr) {
            return Err(AccessError::BlockInFlight);
        }
        if self.l1d.mshr().is_full() {
            return Err(AccessError::MshrFull);
        }
        self.smem.evict_to_response_queue(&mut self.l1d, addr);
        Ok(())
    }

    fn drain_fills(&mut self) {
        for entry in self.l1d.mshr_mut().drain_ready(self.now) {
            match entry.destination {
                FillDestination::L1d => self.l1d.fill(&entry),
                FillDestination::Smem => self.smem.fill(&entry),
            }
            for &waiter in &entry.waiters {
                let st = self.sched.warp_mut(waiter);
                st.waiting_fill = false;
                if !st.finished && st.pc == self.streams[waiter.index()].len() {
                    self.finish(waiter);
                }
            }
        }
    }

    fn audit(&mut self) {
        let in_smem: HashSet<u64> = self.smem.resident_blocks().collect();
        if !in_smem.is_empty() && self.l1d.resident_blocks().any(|b| in_smem.contains(&b)) {
            self.coherence_violations += 1;
        }
    }

    fn into_stats(self) -> SimStats {
        let warps = (0..self.streams.len())
            .map(|i| WarpStats {
                issued: self.issued[i],
                l1d: self.l1d.stats()[i],
                smem: self.smem.stats()[i],
                vta_hits: self.det.vta_hits(WarpId::new(i)),
            })
            .collect();
        let n = self.streams.len();
        let interference = self.det.matrix()[..n].iter().map(|row| row[..n].to_vec()).collect();
        let mut sched = self.sched;
        SimStats {
            policy: self.cfg.scheduler,
            cycles: self.now,
            instructions: self.instructions,
            ipc: if self.now == 0 {
                0.0
            } else {
                self.instructions as f64 / self.now as f64
            },
            warps,
            interference,
            timeline: self.timeline,
            epochs: sched.take_log(),
            smem_occupancy: self.smem.occupancy(),
            migrations_to_smem: self.smem.migrations_in(),
            writebacks: self.l1d.writebacks() + self.smem.writebacks(),
            coherence_violations: self.coherence_violations,
            transition_violations: sched.transition_violations(),
            accesses: self.opts.record_accesses.then_some(self.accesses),
            schedule: self.opts.record_schedule.then_some(self.schedule),
        }
    }
}
