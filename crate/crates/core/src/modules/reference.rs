//! Baseline module implementations.

use super::{
    BranchPredictor, BranchTargetPredictor, CacheView, CoreView, FillContext, ModuleStat,
    PrefetchContext, PrefetchHost, Prefetcher, ReplacementPolicy, ReplacementUpdate, VictimQuery,
};
use crate::trace::BranchClass;

/// Global-history predictor indexing a table of 2-bit counters with `fold(ip) ^ history`.
#[derive(Debug, Clone)]
pub struct GShare {
    bits: u32,
    history: u64,
    counters: Vec<u8>,
}

impl GShare {
    pub const DEFAULT_HISTORY_BITS: u32 = 14;

    pub fn new(history_bits: u32) -> Self {
        assert!((1..=24).contains(&history_bits));
        GShare {
            bits: history_bits,
            history: 0,
            counters: vec![1; 1 << history_bits],
        }
    }

    fn mask(&self) -> u64 {
        (1 << self.bits) - 1
    }

    /// XOR of successive `bits`-wide chunks of `ip`.
    pub fn fold(ip: u64, bits: u32) -> u64 {
        let mask = (1u64 << bits) - 1;
        let mut folded = 0;
        let mut rest = ip;
        while rest != 0 {
            folded ^= rest & mask;
            rest >>= bits;
        }
        folded
    }

    fn index(&self, ip: u64) -> usize {
        ((Self::fold(ip, self.bits) ^ self.history) & self.mask()) as usize
    }

    pub fn history(&self) -> u64 {
        self.history
    }

    pub fn counter(&self, ip: u64) -> u8 {
        self.counters[self.index(ip)]
    }
}

impl Default for GShare {
    fn default() -> Self {
        Self::new(Self::DEFAULT_HISTORY_BITS)
    }
}

impl BranchPredictor for GShare {
    fn initialize(&mut self, _core: &CoreView) {}

    fn predict_branch(&mut self, ip: u64, _target: u64, _always_taken: bool, _class: BranchClass) -> bool {
        self.counter(ip) >= 2
    }

    fn last_branch_result(&mut self, ip: u64, _target: u64, taken: bool, _class: BranchClass) {
        let idx = self.index(ip);
        let c = &mut self.counters[idx];
        if taken {
            *c = (*c + 1).min(3);
        } else {
            *c = c.saturating_sub(1);
        }
        self.history = ((self.history << 1) | taken as u64) & self.mask();
    }

    fn final_stats(&mut self, _core: &CoreView) -> Vec<ModuleStat> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct BtbEntry {
    valid: bool,
    ip: u64,
    target: u64,
    always_taken: bool,
    stamp: u64,
}

/// Set-associative target table with LRU replacement. Only taken branches are inserted.
#[derive(Debug, Clone)]
pub struct BasicBtb {
    sets: usize,
    ways: usize,
    entries: Vec<BtbEntry>,
    clock: u64,
}

impl BasicBtb {
    pub fn new(sets: usize, ways: usize) -> Self {
        assert!(sets >= 1 && ways >= 1);
        BasicBtb {
            sets,
            ways,
            entries: vec![BtbEntry::default(); sets * ways],
            clock: 0,
        }
    }

    pub fn set_of(&self, ip: u64) -> usize {
        ((ip >> 2) % self.sets as u64) as usize
    }

    fn set_mut(&mut self, ip: u64) -> &mut [BtbEntry] {
        let s = self.set_of(ip);
        &mut self.entries[s * self.ways..(s + 1) * self.ways]
    }
}

impl Default for BasicBtb {
    fn default() -> Self {
        Self::new(1024, 4)
    }
}

impl BranchTargetPredictor for BasicBtb {
    fn initialize(&mut self, _core: &CoreView) {}

    fn btb_prediction(&mut self, ip: u64, _class: BranchClass) -> (u64, bool) {
        self.set_mut(ip)
            .iter()
            .find(|e| e.valid && e.ip == ip)
            .map_or((0, false), |e| (e.target, e.always_taken))
    }

    fn update_btb(&mut self, ip: u64, target: u64, taken: bool, _class: BranchClass) {
        self.clock += 1;
        let stamp = self.clock;
        let set = self.set_mut(ip);
        if let Some(e) = set.iter_mut().find(|e| e.valid && e.ip == ip) {
            if taken {
                e.target = target;
                e.stamp = stamp;
            } else {
                e.always_taken = false;
            }
            return;
        }
        if !taken {
            return;
        }
        let victim = set
            .iter()
            .position(|e| !e.valid)
            .unwrap_or_else(|| {
                set.iter()
                    .enumerate()
                    .min_by_key(|(_, e)| e.stamp)
                    .map(|(i, _)| i)
                    .unwrap()
            });
        set[victim] = BtbEntry {
            valid: true,
            ip,
            target,
            always_taken: true,
            stamp,
        };
    }

    fn final_stats(&mut self, _core: &CoreView) -> Vec<ModuleStat> {
        let used = self.entries.iter().filter(|e| e.valid).count();
        vec![ModuleStat::new("valid_entries", used as f64)]
    }
}

/// Prefetches the block after every activating access.
#[derive(Debug, Clone, Copy, Default)]
pub struct NextLine;

impl Prefetcher for NextLine {
    fn initialize(&mut self, _cache: &CacheView) {}

    fn cache_operate(&mut self, host: &mut PrefetchHost, ctx: &PrefetchContext) -> u32 {
        let next = ctx.address + host.view().block_size();
        host.prefetch_line(next, true, 0);
        0
    }

    fn cache_fill(&mut self, _host: &mut PrefetchHost, _ctx: &FillContext) -> u32 {
        0
    }

    fn cycle_operate(&mut self, _host: &mut PrefetchHost) {}

    fn branch_operate(&mut self, _host: &mut PrefetchHost, _ip: u64, _class: BranchClass, _target: u64) {}

    fn final_stats(&mut self, _cache: &CacheView) -> Vec<ModuleStat> {
        Vec::new()
    }
}

/// The do-nothing prefetcher.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPrefetcher;

impl Prefetcher for NoPrefetcher {
    fn initialize(&mut self, _cache: &CacheView) {}

    fn cache_operate(&mut self, _host: &mut PrefetchHost, ctx: &PrefetchContext) -> u32 {
        let _ = ctx;
        0
    }

    fn cache_fill(&mut self, _host: &mut PrefetchHost, _ctx: &FillContext) -> u32 {
        0
    }

    fn cycle_operate(&mut self, _host: &mut PrefetchHost) {}

    fn branch_operate(&mut self, _host: &mut PrefetchHost, _ip: u64, _class: BranchClass, _target: u64) {}

    fn final_stats(&mut self, _cache: &CacheView) -> Vec<ModuleStat> {
        Vec::new()
    }
}

/// Least-recently-used replacement; invalid ways are chosen first.
#[derive(Debug, Clone, Default)]
pub struct Lru {
    ways: usize,
    stamps: Vec<u64>,
    clock: u64,
}

impl ReplacementPolicy for Lru {
    fn initialize(&mut self, cache: &CacheView) {
        self.ways = cache.ways();
        self.stamps = vec![0; cache.sets() * cache.ways()];
    }

    fn find_victim(&mut self, cache: &CacheView, query: &VictimQuery) -> usize {
        let blocks = cache.set(query.set);
        if let Some(w) = blocks.iter().position(|b| !b.valid) {
            return w;
        }
        let base = query.set * self.ways;
        (0..self.ways)
            .min_by_key(|&w| self.stamps[base + w])
            .unwrap_or(0)
    }

    fn update_replacement_state(&mut self, _cache: &CacheView, update: &ReplacementUpdate) {
        if update.way >= self.ways {
            return;
        }
        self.clock += 1;
        self.stamps[update.set * self.ways + update.way] = self.clock;
    }

    fn final_stats(&mut self, _cache: &CacheView) -> Vec<ModuleStat> {
        Vec::new()
    }
}
