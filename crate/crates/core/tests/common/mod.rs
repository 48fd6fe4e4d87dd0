#![allow(dead_code)]

use ciao_core::{GlobalAddress, Trace, TraceRecord, WarpId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Set index written from the bit-slice definition, independent of the crate.
pub fn ref_set(block: u64, sets: u64, xor: bool) -> u64 {
    let bits = sets.trailing_zeros();
    let low = block & (sets - 1);
    if xor {
        low ^ ((block >> bits) & (sets - 1))
    } else {
        low
    }
}

/// Associative list per set, most recently used first.
pub struct RefLru {
    sets: Vec<Vec<u64>>,
    ways: usize,
    xor: bool,
}

impl RefLru {
    pub fn new(sets: usize, ways: usize, xor: bool) -> Self {
        Self {
            sets: vec![Vec::new(); sets],
            ways,
            xor,
        }
    }

    /// Returns whether `block` hit; a miss allocates it.
    pub fn access(&mut self, block: u64) -> bool {
        let s = ref_set(block, self.sets.len() as u64, self.xor) as usize;
        let list = &mut self.sets[s];
        if let Some(pos) = list.iter().position(|&b| b == block) {
            let b = list.remove(pos);
            list.insert(0, b);
            true
        } else {
            list.insert(0, block);
            list.truncate(self.ways);
            false
        }
    }
}

/// Direct-mapped cache keyed by an arbitrary slot function.
pub struct RefDirect {
    slots: Vec<Option<u64>>,
}

impl RefDirect {
    pub fn new(slots: usize) -> Self {
        Self {
            slots: vec![None; slots],
        }
    }

    pub fn access(&mut self, slot: usize, block: u64) -> bool {
        let hit = self.slots[slot] == Some(block);
        self.slots[slot] = Some(block);
        hit
    }
}

/// Random load-only trace over `blocks` distinct 128-byte blocks.
pub fn random_loads(seed: u64, warps: usize, loads: usize, blocks: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..loads)
        .map(|_| {
            let w = WarpId::new(rng.gen_range(0..warps));
            TraceRecord::load(w, rng.gen_range(0..blocks) * 128 + rng.gen_range(0..128))
        })
        .collect();
    Trace::new(records)
}

pub fn addr(block: u64) -> GlobalAddress {
    GlobalAddress(block * 128)
}
