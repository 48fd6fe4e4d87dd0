//! Warp scheduling: greedy-then-oldest ordering, the static and CCWS-like
//! throttling baselines, and the CIAO isolate/stall/reactivate state machine.

use std::fmt;

use crate::config::{Policy, SimConfig};
use crate::types::WarpId;
use crate::vta::{EpochKind, InterferenceDetector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpState {
    pub wid: WarpId,
    /// Active flag; cleared while the warp is throttled.
    pub v: bool,
    /// Isolation flag; set while the warp's requests go to shared memory.
    pub i: bool,
    pub finished: bool,
    /// Launch order; lower is older.
    pub gto_age: u32,
    /// Index of the next record in the warp's stream.
    pub pc: usize,
    /// Waiting on an outstanding fill.
    pub waiting_fill: bool,
    /// Earliest cycle a structurally stalled access may retry.
    pub ready_at: u64,
}

impl WarpState {
    pub fn new(wid: WarpId) -> Self {
        Self {
            wid,
            v: true,
            i: false,
            finished: false,
            gto_age: wid.0 as u32,
            pc: 0,
            waiting_fill: false,
            ready_at: 0,
        }
    }

    pub fn mode(&self) -> WarpMode {
        match (self.v, self.i) {
            (false, _) => WarpMode::Stalled,
            (true, true) => WarpMode::Isolated,
            (true, false) => WarpMode::Active,
        }
    }

    fn issuable(&self, now: u64) -> bool {
        !self.finished && self.v && !self.waiting_fill && self.ready_at <= now
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WarpMode {
    Active,
    Isolated,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairEntry {
    /// Interfered warp whose IRS triggered the isolation.
    pub field0: Option<WarpId>,
    /// Interfered warp whose IRS triggered the stall.
    pub field1: Option<WarpId>,
}

#[derive(Debug, Clone)]
pub struct PairList {
    entries: Vec<PairEntry>,
    overwrite: bool,
}

impl PairList {
    pub fn new(warps: usize, overwrite: bool) -> Self {
        Self {
            entries: vec![PairEntry::default(); warps],
            overwrite,
        }
    }

    pub fn entry(&self, w: WarpId) -> PairEntry {
        self.entries[w.index()]
    }

    fn set_field(slot: &mut Option<WarpId>, trigger: WarpId, overwrite: bool) {
        if slot.is_none() || overwrite {
            *slot = Some(trigger);
        }
    }

    fn record_isolation(&mut self, w: WarpId, trigger: WarpId) {
        Self::set_field(&mut self.entries[w.index()].field0, trigger, self.overwrite);
    }

    fn record_stall(&mut self, w: WarpId, trigger: WarpId) {
        Self::set_field(&mut self.entries[w.index()].field1, trigger, self.overwrite);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CiaoAction {
    None,
    Isolate,
    Stall,
    Reactivate,
    Unredirect,
}

impl CiaoAction {
    pub fn name(self) -> &'static str {
        match self {
            CiaoAction::None => "none",
            CiaoAction::Isolate => "isolate",
            CiaoAction::Stall => "stall",
            CiaoAction::Reactivate => "reactivate",
            CiaoAction::Unredirect => "unredirect",
        }
    }
}

impl fmt::Display for CiaoAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One evaluation at an epoch boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochEvent {
    pub kind: EpochKind,
    /// `inst_total / epoch_length` at the boundary; 0 for forced reactivations.
    pub epoch_index: u64,
    pub cycle: u64,
    /// Warp whose IRS was evaluated.
    pub acting: WarpId,
    pub irs: f64,
    pub action: CiaoAction,
    /// Warp whose state changed.
    pub target: Option<WarpId>,
}

/// CCWS-like throttling: each warp's locality score is its VTA hits with a
/// halving decay per low-cutoff epoch. Warps are stacked by score and those
/// that push the stack past `base * live_warps` are throttled.
#[derive(Debug, Clone)]
pub struct CcwsLite {
    scores: Vec<u64>,
    last_hits: Vec<u64>,
    active: Vec<bool>,
    base: u64,
    weight: u64,
}

impl CcwsLite {
    pub fn new(warps: usize, base: u64, weight: u64) -> Self {
        Self {
            scores: vec![0; warps],
            last_hits: vec![0; warps],
            active: vec![true; warps],
            base,
            weight,
        }
    }

    pub fn scores(&self) -> &[u64] {
        &self.scores
    }

    pub fn is_active(&self, w: WarpId) -> bool {
        self.active[w.index()]
    }

    /// Folds in VTA hits since the previous update and recomputes the active set.
    pub fn update(&mut self, detector: &InterferenceDetector, states: &[WarpState]) -> Vec<WarpId> {
        for s in states {
            let w = s.wid.index();
            let hits = detector.vta_hits(s.wid);
            let fresh = hits - self.last_hits[w];
            self.last_hits[w] = hits;
            self.scores[w] = (self.scores[w] >> 1) + fresh * self.weight;
        }
        self.recompute(states)
    }

    /// Recomputes the active set from the current scores.
    pub fn recompute(&mut self, states: &[WarpState]) -> Vec<WarpId> {
        let mut live: Vec<&WarpState> = states.iter().filter(|s| !s.finished).collect();
        live.sort_by(|a, b| {
            self.scores[b.wid.index()]
                .cmp(&self.scores[a.wid.index()])
                .then(a.gto_age.cmp(&b.gto_age))
        });
        let cutoff = self.base * live.len() as u64;
        self.active.iter_mut().for_each(|a| *a = false);
        let mut stacked = 0;
        let mut kept = Vec::new();
        for s in live {
            stacked += self.base + self.scores[s.wid.index()];
            if stacked > cutoff && !kept.is_empty() {
                break;
            }
            self.active[s.wid.index()] = true;
            kept.push(s.wid);
        }
        kept
    }
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: Policy,
    high_cutoff: f64,
    low_cutoff: f64,
    swl_limit: usize,
    warps: Vec<WarpState>,
    pairs: PairList,
    greedy: Option<WarpId>,
    ccws: CcwsLite,
    /// Warps acted on by the CIAO state machine, most recent last.
    action_stack: Vec<WarpId>,
    log: Vec<EpochEvent>,
    transition_violations: u64,
}

impl Scheduler {
    pub fn new(cfg: &SimConfig, warp_count: usize) -> Self {
        Self {
            policy: cfg.scheduler,
            high_cutoff: cfg.high_cutoff,
            low_cutoff: cfg.low_cutoff,
            swl_limit: cfg.best_swl_limit.unwrap_or(cfg.max_warps),
            warps: (0..warp_count).map(|w| WarpState::new(WarpId::new(w))).collect(),
            pairs: PairList::new(warp_count, cfg.pair_list_overwrite),
            greedy: None,
            ccws: CcwsLite::new(warp_count, cfg.ccws_base_score, cfg.ccws_vta_weight),
            action_stack: Vec::new(),
            log: Vec::new(),
            transition_violations: 0,
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn warps(&self) -> &[WarpState] {
        &self.warps
    }

    pub fn warp(&self, w: WarpId) -> &WarpState {
        &self.warps[w.index()]
    }

    pub fn warp_mut(&mut self, w: WarpId) -> &mut WarpState {
        &mut self.warps[w.index()]
    }

    pub fn pairs(&self) -> &PairList {
        &self.pairs
    }

    pub fn ccws(&self) -> &CcwsLite {
        &self.ccws
    }

    pub fn log(&self) -> &[EpochEvent] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<EpochEvent> {
        std::mem::take(&mut self.log)
    }

    pub fn transition_violations(&self) -> u64 {
        self.transition_violations
    }

    /// Unfinished warps, which is the IRS denominator's active-warp count.
    pub fn live_warps(&self) -> usize {
        self.warps.iter().filter(|w| !w.finished).count()
    }

    pub fn all_finished(&self) -> bool {
        self.warps.iter().all(|w| w.finished)
    }

    /// Sets a warp's flags directly. For scripted scenarios and tests.
    pub fn force_flags(&mut self, w: WarpId, v: bool, i: bool) {
        let s = &mut self.warps[w.index()];
        s.v = v;
        s.i = i;
    }

    /// Age of the youngest warp inside the Best-SWL window: the oldest
    /// `swl_limit` unfinished warps.
    fn swl_window_edge(&self) -> u32 {
        let mut ages: Vec<u32> = self.warps.iter().filter(|w| !w.finished).map(|w| w.gto_age).collect();
        if ages.len() <= self.swl_limit {
            return u32::MAX;
        }
        *ages.select_nth_unstable(self.swl_limit - 1).1
    }

    fn allowed(&self, w: &WarpState, swl_edge: u32) -> bool {
        match self.policy {
            Policy::BestSwl => w.gto_age <= swl_edge,
            Policy::CcwsLite => self.ccws.is_active(w.wid),
            _ => true,
        }
    }

    /// Greedy-then-oldest selection over the warps the policy allows.
    pub fn select_warp(&mut self, now: u64) -> Option<WarpId> {
        let edge = if self.policy == Policy::BestSwl {
            self.swl_window_edge()
        } else {
            u32::MAX
        };
        if let Some(g) = self.greedy {
            let s = &self.warps[g.index()];
            if s.issuable(now) && self.allowed(s, edge) {
                return Some(g);
            }
        }
        let pick = self
            .warps
            .iter()
            .filter(|s| s.issuable(now) && self.allowed(s, edge))
            .min_by_key(|s| s.gto_age)
            .map(|s| s.wid);
        self.greedy = pick;
        pick
    }

    fn is_finished(&self, w: WarpId) -> bool {
        self.warps[w.index()].finished
    }

    fn transition(&mut self, w: WarpId, to: WarpMode) {
        let from = self.warps[w.index()].mode();
        let legal = match (from, to) {
            (WarpMode::Active, WarpMode::Isolated)
            | (WarpMode::Isolated, WarpMode::Stalled)
            | (WarpMode::Isolated, WarpMode::Active) => self.policy != Policy::CiaoT,
            (WarpMode::Stalled, WarpMode::Isolated) => self.policy == Policy::CiaoC,
            (WarpMode::Active, WarpMode::Stalled) | (WarpMode::Stalled, WarpMode::Active) => {
                self.policy == Policy::CiaoT
            }
            _ => false,
        };
        if !legal {
            self.transition_violations += 1;
        }
        let s = &mut self.warps[w.index()];
        match to {
            WarpMode::Active => {
                s.v = true;
                s.i = false;
            }
            WarpMode::Isolated => {
                s.v = true;
                s.i = true;
            }
            WarpMode::Stalled => s.v = false,
        }
    }

    fn push_action(&mut self, w: WarpId) {
        self.action_stack.retain(|x| *x != w);
        self.action_stack.push(w);
    }

    /// Front of the throttled/isolated list: the most recently acted-on
    /// unfinished warp that is still stalled or isolated.
    pub fn low_epoch_front(&mut self) -> Option<WarpId> {
        let warps = &self.warps;
        self.action_stack
            .retain(|w| !warps[w.index()].finished && (!warps[w.index()].v || warps[w.index()].i));
        self.action_stack.last().copied()
    }

    /// High-cutoff epoch step for warp `i` (the warp that closed the epoch).
    pub fn ciao_high_epoch_step(&mut self, i: WarpId, detector: &InterferenceDetector, cycle: u64) -> EpochEvent {
        let irs_i = detector.irs(i).unwrap_or(0.0);
        let j = detector.most_interfering(i);
        let mut event = EpochEvent {
            kind: EpochKind::HighCutoff,
            epoch_index: detector.inst_total() / detector.epoch_len(EpochKind::HighCutoff),
            cycle,
            acting: i,
            irs: irs_i,
            action: CiaoAction::None,
            target: None,
        };
        if !self.warps[i.index()].v || irs_i <= self.high_cutoff || j == i || self.is_finished(j) {
            return event;
        }
        let target = self.warps[j.index()];
        let action = match self.policy {
            Policy::CiaoP if !target.i => CiaoAction::Isolate,
            Policy::CiaoT if target.v => CiaoAction::Stall,
            Policy::CiaoC if !target.i => CiaoAction::Isolate,
            Policy::CiaoC if target.v => CiaoAction::Stall,
            _ => CiaoAction::None,
        };
        match action {
            CiaoAction::Isolate => {
                self.transition(j, WarpMode::Isolated);
                self.pairs.record_isolation(j, i);
                self.push_action(j);
            }
            CiaoAction::Stall => {
                self.transition(j, WarpMode::Stalled);
                self.pairs.record_stall(j, i);
                self.push_action(j);
                if self.greedy == Some(j) {
                    self.greedy = None;
                }
            }
            _ => {}
        }
        event.action = action;
        event.target = (action != CiaoAction::None).then_some(j);
        event
    }

    /// Low-cutoff epoch step for the front warp `i`.
    pub fn ciao_low_epoch_step(&mut self, i: WarpId, detector: &InterferenceDetector, cycle: u64) -> EpochEvent {
        let s = self.warps[i.index()];
        let pair = self.pairs.entry(i);
        let (trigger, releasing) = if !s.v {
            (pair.field1, CiaoAction::Reactivate)
        } else if s.i {
            (pair.field0, CiaoAction::Unredirect)
        } else {
            (None, CiaoAction::None)
        };
        let irs_k = trigger.map_or(0.0, |k| detector.irs(k).unwrap_or(0.0));
        let mut event = EpochEvent {
            kind: EpochKind::LowCutoff,
            epoch_index: detector.inst_total() / detector.epoch_len(EpochKind::LowCutoff),
            cycle,
            acting: trigger.unwrap_or(i),
            irs: irs_k,
            action: CiaoAction::None,
            target: None,
        };
        if releasing == CiaoAction::None {
            return event;
        }
        let hold = match trigger {
            Some(k) => irs_k > self.low_cutoff && !self.is_finished(k),
            None => false,
        };
        if hold {
            return event;
        }
        self.release(i, releasing);
        event.action = releasing;
        event.target = Some(i);
        event
    }

    fn release(&mut self, i: WarpId, how: CiaoAction) {
        let s = self.warps[i.index()];
        match how {
            CiaoAction::Reactivate => {
                let to = if s.i { WarpMode::Isolated } else { WarpMode::Active };
                self.transition(i, to);
                self.pairs.entries[i.index()].field1 = None;
            }
            CiaoAction::Unredirect => {
                self.transition(i, WarpMode::Active);
                self.pairs.entries[i.index()].field0 = None;
            }
            _ => unreachable!(),
        }
    }

    /// Runs the epoch steps due at the current instruction count. `issued` is
    /// the warp that executed the instruction closing the epoch.
    pub fn on_instruction(&mut self, issued: WarpId, detector: &InterferenceDetector, cycle: u64) {
        let low = detector.epoch_tick(EpochKind::LowCutoff);
        let high = detector.epoch_tick(EpochKind::HighCutoff);
        if low && self.policy == Policy::CcwsLite {
            self.ccws.update(detector, &self.warps);
            if self.greedy.is_some_and(|g| !self.ccws.is_active(g)) {
                self.greedy = None;
            }
        }
        if !self.policy.is_ciao() {
            return;
        }
        // Reactivation before new throttling when both epochs end together.
        if low {
            if let Some(front) = self.low_epoch_front() {
                let ev = self.ciao_low_epoch_step(front, detector, cycle);
                self.record(ev);
            }
        }
        if high && !self.warps[issued.index()].finished {
            let ev = self.ciao_high_epoch_step(issued, detector, cycle);
            self.record(ev);
        }
    }

    /// Keeps only epochs that changed some warp's mode.
    fn record(&mut self, ev: EpochEvent) {
        if ev.action != CiaoAction::None {
            self.log.push(ev);
        }
    }

    /// Reactivates the most recently stalled warp when every unfinished warp
    /// is stalled, since no instruction could otherwise close an epoch.
    pub fn ensure_progress(&mut self, detector: &InterferenceDetector, cycle: u64) {
        let live = self.warps.iter().filter(|w| !w.finished);
        let mut any = false;
        for w in live {
            if w.v {
                return;
            }
            any = true;
        }
        if !any {
            return;
        }
        let front = self
            .action_stack
            .iter()
            .rev()
            .copied()
            .find(|w| !self.warps[w.index()].v && !self.warps[w.index()].finished)
            .or_else(|| self.warps.iter().find(|w| !w.finished).map(|w| w.wid))
            .expect("an unfinished warp exists");
        let trigger = self.pairs.entry(front).field1;
        self.release(front, CiaoAction::Reactivate);
        self.log.push(EpochEvent {
            kind: EpochKind::LowCutoff,
            epoch_index: 0,
            cycle,
            acting: trigger.unwrap_or(front),
            irs: trigger.map_or(0.0, |k| detector.irs(k).unwrap_or(0.0)),
            action: CiaoAction::Reactivate,
            target: Some(front),
        });
    }

    /// Marks a warp finished; it leaves every scheduling structure.
    pub fn finish(&mut self, w: WarpId) {
        self.warps[w.index()].finished = true;
        if self.greedy == Some(w) {
            self.greedy = None;
        }
        if self.policy == Policy::CcwsLite {
            self.ccws.recompute(&self.warps);
        }
    }

    pub fn mode_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for w in self.warps.iter().filter(|w| !w.finished) {
            match w.mode() {
                WarpMode::Active => counts.0 += 1,
                WarpMode::Isolated => counts.1 += 1,
                WarpMode::Stalled => counts.2 += 1,
            }
        }
        counts
    }
}
