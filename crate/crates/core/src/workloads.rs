//! Synthetic trace generators.
//!
//! `gen_thrash` builds warps whose blocks all collide in the same L1D sets.
//! `gen_class` builds per-warp streams that reuse a private hot set, in three
//! flavours. LWS (large working set) warps reuse randomly chosen blocks
//! scattered across a wide footprint. SWS (small working set) and CI (compute
//! intensive) warps loop over adjacent slices of a small footprint with a few
//! irregular accesses.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::SimConfig;
use crate::l1d::set_index;
use crate::types::{GlobalAddress, Trace, TraceRecord, WarpId, MAX_WID_BITS};

/// Highest block index the thrash generator will consider.
const THRASH_BLOCK_BUDGET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("no colliding addresses for {warps} warps x {ways} ways in set {set} within the address budget")]
    Infeasible { warps: usize, ways: usize, set: usize },
    #[error("alu_ratio {0} is outside [0, 1]")]
    InvalidRatio(f64),
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkloadClass {
    Lws,
    Sws,
    Ci,
}

impl WorkloadClass {
    pub const ALL: [WorkloadClass; 3] = [WorkloadClass::Lws, WorkloadClass::Sws, WorkloadClass::Ci];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadClass::Lws => "LWS",
            WorkloadClass::Sws => "SWS",
            WorkloadClass::Ci => "CI",
        }
    }

    /// Default generator parameters for the class.
    pub fn preset(self) -> ClassParams {
        let (warps, footprint_bytes, alu_ratio, insts_per_warp) = match self {
            WorkloadClass::Lws => (48, 4 << 20, 0.4, 30_000),
            WorkloadClass::Sws => (8, 24 << 10, 0.5, 2000),
            WorkloadClass::Ci => (48, 24 << 10, 0.95, 2000),
        };
        ClassParams {
            class: self,
            warps,
            footprint_bytes,
            alu_ratio,
            insts_per_warp,
            seed: 1,
        }
    }
}

impl fmt::Display for WorkloadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadClass {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LWS" => Ok(WorkloadClass::Lws),
            "SWS" => Ok(WorkloadClass::Sws),
            "CI" => Ok(WorkloadClass::Ci),
            _ => Err(WorkloadError::InvalidArgument(format!("unknown workload class `{s}`"))),
        }
    }
}

/// Blocks for `warps` warps, `ways` per warp, all mapping to `set`.
/// Result is indexed `[warp][way]`.
pub fn colliding_blocks(
    set: usize,
    warps: usize,
    ways: usize,
    cfg: &SimConfig,
) -> Result<Vec<Vec<u64>>, WorkloadError> {
    let line = cfg.line_bytes;
    let need = warps * ways;
    let sets = cfg.l1d_sets();
    if need as u64 >= THRASH_BLOCK_BUDGET / sets {
        return Err(WorkloadError::Infeasible { warps, ways, set });
    }
    let mut found = Vec::with_capacity(need);
    // Each aligned run of `sets` consecutive blocks covers every set exactly
    // once under both the plain and the XOR hash, so one hit per run.
    let mut base = sets;
    while found.len() < need {
        let hit = (base..base + sets).find(|&b| set_index(GlobalAddress(b * line), cfg) == set as u64);
        match hit {
            Some(b) => found.push(b),
            None => return Err(WorkloadError::Infeasible { warps, ways, set }),
        }
        base += sets;
    }
    Ok(found.chunks(ways).map(<[u64]>::to_vec).collect())
}

/// Each warp owns `l1d_ways` blocks in each of `sets_touched` sets, so any
/// two warps together overflow those sets. Every round a warp loads all its
/// blocks once, visiting sets in a seed-dependent order shared by all warps;
/// `reuse` is the number of rounds.
pub fn gen_thrash(
    warps: usize,
    sets_touched: usize,
    reuse: usize,
    seed: u64,
    cfg: &SimConfig,
) -> Result<Trace, WorkloadError> {
    if warps == 0 || warps > 1 << MAX_WID_BITS {
        return Err(WorkloadError::InvalidArgument(format!(
            "warps must be in 1..={}",
            1 << MAX_WID_BITS
        )));
    }
    let sets = cfg.l1d_sets() as usize;
    if sets_touched == 0 || sets_touched > sets {
        return Err(WorkloadError::InvalidArgument(format!(
            "sets_touched must be in 1..={sets}"
        )));
    }
    let mut order: Vec<usize> = (0..sets).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(sets_touched);

    let ways = cfg.l1d_ways;
    let mut per_set = Vec::with_capacity(sets_touched);
    for &s in &order {
        per_set.push(colliding_blocks(s, warps, ways, cfg)?);
    }
    let streams = (0..warps)
        .map(|w| {
            let warp = WarpId::new(w);
            let mut recs = Vec::with_capacity(reuse * sets_touched * ways);
            for _ in 0..reuse {
                for blocks in &per_set {
                    for &b in &blocks[w] {
                        recs.push(TraceRecord::load(warp, b * cfg.line_bytes));
                    }
                }
            }
            recs
        })
        .collect();
    Ok(Trace::interleave(streams))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassParams {
    pub class: WorkloadClass,
    pub warps: usize,
    pub footprint_bytes: u64,
    /// Fraction of records that are ALU.
    pub alu_ratio: f64,
    pub insts_per_warp: usize,
    pub seed: u64,
}

/// Shape of a warp's memory stream.
struct Shape {
    /// Blocks in the warp's private reuse set.
    hot_blocks: u64,
    /// Hot blocks drawn at random from the footprint rather than laid out
    /// back to back.
    scattered: bool,
    /// Pick hot blocks uniformly instead of cycling through them in order.
    random_reuse: bool,
    /// Probability that a memory record leaves the hot set for a random block.
    irregular: f64,
}

/// Hot set size of an LWS warp. 48 warps of this overflow the 128-line L1D
/// several times over.
const LWS_HOT_BLOCKS: u64 = 28;

impl ClassParams {
    fn shape(&self, line: u64) -> Shape {
        let blocks = (self.footprint_bytes / line).max(1);
        match self.class {
            WorkloadClass::Lws => Shape {
                hot_blocks: LWS_HOT_BLOCKS.min(blocks),
                scattered: true,
                random_reuse: true,
                irregular: 0.0,
            },
            WorkloadClass::Sws | WorkloadClass::Ci => Shape {
                hot_blocks: (blocks / self.warps.max(1) as u64).max(1),
                scattered: false,
                random_reuse: false,
                irregular: 0.05,
            },
        }
    }

    pub fn generate(&self) -> Result<Trace, WorkloadError> {
        if !(0.0..=1.0).contains(&self.alu_ratio) {
            return Err(WorkloadError::InvalidRatio(self.alu_ratio));
        }
        if self.warps == 0 || self.warps > 1 << MAX_WID_BITS {
            return Err(WorkloadError::InvalidArgument(format!(
                "warps must be in 1..={}",
                1 << MAX_WID_BITS
            )));
        }
        let line = 128;
        if self.footprint_bytes < line {
            return Err(WorkloadError::InvalidArgument(
                "footprint must hold at least one 128-byte line".into(),
            ));
        }
        let shape = self.shape(line);
        let blocks = self.footprint_bytes / line;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let streams = (0..self.warps)
            .map(|w| {
                let warp = WarpId::new(w);
                // Unscattered hot sets are laid out back to back from the
                // start of the footprint, wrapping when it is too small.
                let hot: Vec<u64> = if shape.scattered {
                    (0..shape.hot_blocks).map(|_| rng.gen_range(0..blocks)).collect()
                } else {
                    (0..shape.hot_blocks)
                        .map(|k| (w as u64 * shape.hot_blocks + k) % blocks)
                        .collect()
                };
                let mut cursor = 0;
                (0..self.insts_per_warp)
                    .map(|_| {
                        if rng.gen_bool(self.alu_ratio) {
                            return TraceRecord::alu(warp);
                        }
                        let block = if rng.gen_bool(shape.irregular) {
                            rng.gen_range(0..blocks)
                        } else if shape.random_reuse {
                            hot[rng.gen_range(0..hot.len())]
                        } else {
                            let b = hot[cursor];
                            cursor = (cursor + 1) % hot.len();
                            b
                        };
                        TraceRecord::load(warp, block * line)
                    })
                    .collect()
            })
            .collect();
        Ok(Trace::interleave(streams))
    }
}

/// Class trace with the preset's length.
pub fn gen_class(
    class: WorkloadClass,
    warps: usize,
    footprint_bytes: u64,
    alu_ratio: f64,
    seed: u64,
) -> Result<Trace, WorkloadError> {
    ClassParams {
        warps,
        footprint_bytes,
        alu_ratio,
        seed,
        ..class.preset()
    }
    .generate()
}
