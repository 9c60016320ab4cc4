//! Pluggable module families and the views they get of their host.
//!
//! Every family is a trait whose methods are all required. Hosts hand modules
//! read-only views; the only way a prefetcher can affect its cache is
//! [`PrefetchHost::prefetch_line`].

mod reference;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

pub use reference::{BasicBtb, GShare, Lru, NextLine, NoPrefetcher};

use crate::config::{CacheNodeConfig, ConfigError, CoreConfig, NodeKind};
use crate::memory::AccessType;
use crate::trace::BranchClass;

/// One named statistic reported by a module at the end of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleStat {
    pub name: String,
    pub value: f64,
}

impl ModuleStat {
    pub fn new(name: impl Into<String>, value: impl Into<f64>) -> Self {
        ModuleStat {
            name: name.into(),
            value: value.into(),
        }
    }
}

/// Read-only view of a core, given to branch modules.
#[derive(Debug, Clone, Copy)]
pub struct CoreView<'a> {
    pub core_id: usize,
    pub config: &'a CoreConfig,
}

/// One block slot of a cache or TLB as seen by modules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Block {
    pub valid: bool,
    pub dirty: bool,
    /// Filled by a prefetch and not yet touched by a demand access.
    pub prefetched: bool,
    /// Block-aligned address (virtual page address in a TLB).
    pub address: u64,
    pub ip: u64,
    /// Translation payload in a TLB; unused in caches.
    pub data: u64,
}

/// Read-only view of a cache node.
#[derive(Debug, Clone, Copy)]
pub struct CacheView<'a> {
    node_id: usize,
    config: &'a CacheNodeConfig,
    blocks: &'a [Block],
    cycle: u64,
    pq_occupancy: usize,
    mshr_occupancy: usize,
}

impl<'a> CacheView<'a> {
    /// `blocks` holds `sets * ways` entries, set-major.
    pub fn new(
        node_id: usize,
        config: &'a CacheNodeConfig,
        blocks: &'a [Block],
        cycle: u64,
        pq_occupancy: usize,
        mshr_occupancy: usize,
    ) -> Self {
        assert_eq!(blocks.len(), config.sets * config.ways);
        CacheView {
            node_id,
            config,
            blocks,
            cycle,
            pq_occupancy,
            mshr_occupancy,
        }
    }

    pub fn node_id(&self) -> usize {
        self.node_id
    }

    pub fn name(&self) -> &'a str {
        &self.config.name
    }

    pub fn kind(&self) -> NodeKind {
        self.config.kind
    }

    pub fn config(&self) -> &'a CacheNodeConfig {
        self.config
    }

    pub fn sets(&self) -> usize {
        self.config.sets
    }

    pub fn ways(&self) -> usize {
        self.config.ways
    }

    pub fn block_size(&self) -> u64 {
        self.config.block_size
    }

    /// Cycle count of this node's clock.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn pq_occupancy(&self) -> usize {
        self.pq_occupancy
    }

    pub fn mshr_occupancy(&self) -> usize {
        self.mshr_occupancy
    }

    pub fn set(&self, set: usize) -> &'a [Block] {
        let w = self.config.ways;
        &self.blocks[set * w..(set + 1) * w]
    }

    pub fn block(&self, set: usize, way: usize) -> &'a Block {
        &self.set(set)[way]
    }

    /// Set index of an address.
    pub fn set_of(&self, address: u64) -> usize {
        ((address / self.config.block_size) % self.config.sets as u64) as usize
    }

    /// Hash of the block array, for checking that contents did not change.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.blocks.hash(&mut h);
        h.finish()
    }
}

/// Receiver of prefetch requests; implemented by cache nodes.
pub trait PrefetchSink {
    /// Enqueues a block-aligned prefetch. Returns false, with no side effect, if the queue is full.
    fn prefetch_line(&mut self, address: u64, fill_this_level: bool, metadata: u32) -> bool;
}

/// What a prefetcher hook may touch: a read-only view plus the prefetch queue.
pub struct PrefetchHost<'a> {
    view: CacheView<'a>,
    sink: &'a mut dyn PrefetchSink,
}

impl<'a> PrefetchHost<'a> {
    pub fn new(view: CacheView<'a>, sink: &'a mut dyn PrefetchSink) -> Self {
        PrefetchHost { view, sink }
    }

    pub fn view(&self) -> &CacheView<'a> {
        &self.view
    }

    /// Requests a prefetch of the block containing `address` into this node's
    /// prefetch queue. With `fill_this_level` false the block fills only the
    /// levels below.
    pub fn prefetch_line(&mut self, address: u64, fill_this_level: bool, metadata: u32) -> bool {
        let aligned = address & !(self.view.block_size() - 1);
        self.sink.prefetch_line(aligned, fill_this_level, metadata)
    }
}

/// Arguments of [`Prefetcher::cache_operate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchContext {
    /// Block-aligned address of the access.
    pub address: u64,
    pub ip: u64,
    pub core_id: usize,
    pub cache_hit: bool,
    pub access_type: AccessType,
    pub metadata_in: u32,
}

/// Arguments of [`Prefetcher::cache_fill`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillContext {
    pub address: u64,
    pub set: usize,
    /// Equal to the way count when the fill bypassed the cache.
    pub way: usize,
    pub was_prefetch: bool,
    /// Zero when no valid block was evicted.
    pub evicted_address: u64,
    pub metadata: u32,
}

/// Arguments of [`ReplacementPolicy::find_victim`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VictimQuery {
    pub core_id: usize,
    pub set: usize,
    pub ip: u64,
    pub address: u64,
    pub access_type: AccessType,
}

/// Arguments of [`ReplacementPolicy::update_replacement_state`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplacementUpdate {
    pub core_id: usize,
    pub set: usize,
    pub way: usize,
    pub address: u64,
    pub ip: u64,
    /// Address evicted by the fill; zero on hits and clean installs.
    pub victim_address: u64,
    pub access_type: AccessType,
    pub hit: bool,
}

pub trait BranchPredictor {
    fn initialize(&mut self, core: &CoreView);
    /// Direction prediction for a branch entering the front end.
    fn predict_branch(
        &mut self,
        ip: u64,
        predicted_target: u64,
        always_taken: bool,
        class: BranchClass,
    ) -> bool;
    /// Training with the resolved outcome, in program order.
    fn last_branch_result(&mut self, ip: u64, target: u64, taken: bool, class: BranchClass);
    fn final_stats(&mut self, core: &CoreView) -> Vec<ModuleStat>;
}

pub trait BranchTargetPredictor {
    fn initialize(&mut self, core: &CoreView);
    /// Returns `(target, always_taken)`; a target of zero predicts not-taken.
    fn btb_prediction(&mut self, ip: u64, class: BranchClass) -> (u64, bool);
    fn update_btb(&mut self, ip: u64, target: u64, taken: bool, class: BranchClass);
    fn final_stats(&mut self, core: &CoreView) -> Vec<ModuleStat>;
}

pub trait Prefetcher {
    fn initialize(&mut self, cache: &CacheView);
    /// Called for activating accesses, hit or miss. The return value travels
    /// with the packet to the next level as its metadata.
    fn cache_operate(&mut self, host: &mut PrefetchHost, ctx: &PrefetchContext) -> u32;
    /// Called once per fill, including bypassed fills.
    fn cache_fill(&mut self, host: &mut PrefetchHost, ctx: &FillContext) -> u32;
    /// Called once per cycle of the host cache.
    fn cycle_operate(&mut self, host: &mut PrefetchHost);
    /// Called for each branch read from the trace; only on L1I prefetchers.
    fn branch_operate(&mut self, host: &mut PrefetchHost, ip: u64, class: BranchClass, predicted_target: u64);
    fn final_stats(&mut self, cache: &CacheView) -> Vec<ModuleStat>;
}

pub trait ReplacementPolicy {
    fn initialize(&mut self, cache: &CacheView);
    /// Returns a way in `[0, ways)`, or `ways` to bypass the fill.
    fn find_victim(&mut self, cache: &CacheView, query: &VictimQuery) -> usize;
    /// Called on every hit and every non-bypassed fill.
    fn update_replacement_state(&mut self, cache: &CacheView, update: &ReplacementUpdate);
    fn final_stats(&mut self, cache: &CacheView) -> Vec<ModuleStat>;
}

pub type Factory<T> = Box<dyn Fn() -> Box<T>>;

/// Name-to-factory tables for the four families.
#[derive(Default)]
pub struct ModuleRegistry {
    branch_predictors: BTreeMap<String, Factory<dyn BranchPredictor>>,
    btbs: BTreeMap<String, Factory<dyn BranchTargetPredictor>>,
    prefetchers: BTreeMap<String, Factory<dyn Prefetcher>>,
    replacements: BTreeMap<String, Factory<dyn ReplacementPolicy>>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("{family} module '{name}' is already registered")]
pub struct DuplicateModule {
    pub family: &'static str,
    pub name: String,
}

fn insert<T: ?Sized>(
    table: &mut BTreeMap<String, Factory<T>>,
    family: &'static str,
    name: &str,
    factory: Factory<T>,
) -> Result<(), DuplicateModule> {
    if table.contains_key(name) {
        return Err(DuplicateModule {
            family,
            name: name.to_string(),
        });
    }
    table.insert(name.to_string(), factory);
    Ok(())
}

fn create<T: ?Sized>(
    table: &BTreeMap<String, Factory<T>>,
    family: &'static str,
    name: &str,
) -> Result<Box<T>, ConfigError> {
    table
        .get(name)
        .map(|f| f())
        .ok_or_else(|| ConfigError::UnknownModule {
            family,
            name: name.to_string(),
        })
}

impl ModuleRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A registry holding `gshare`, `basic_btb`, `next_line`, `no` and `lru`.
    pub fn with_reference_modules() -> Self {
        let mut r = Self::empty();
        r.register_branch_predictor("gshare", || Box::new(GShare::default()))
            .unwrap();
        r.register_btb("basic_btb", || Box::new(BasicBtb::default()))
            .unwrap();
        r.register_prefetcher("next_line", || Box::new(NextLine)).unwrap();
        r.register_prefetcher("no", || Box::new(NoPrefetcher)).unwrap();
        r.register_replacement("lru", || Box::new(Lru::default()))
            .unwrap();
        r
    }

    pub fn register_branch_predictor(
        &mut self,
        name: &str,
        factory: impl Fn() -> Box<dyn BranchPredictor> + 'static,
    ) -> Result<(), DuplicateModule> {
        insert(&mut self.branch_predictors, "branch predictor", name, Box::new(factory))
    }

    pub fn register_btb(
        &mut self,
        name: &str,
        factory: impl Fn() -> Box<dyn BranchTargetPredictor> + 'static,
    ) -> Result<(), DuplicateModule> {
        insert(&mut self.btbs, "btb", name, Box::new(factory))
    }

    pub fn register_prefetcher(
        &mut self,
        name: &str,
        factory: impl Fn() -> Box<dyn Prefetcher> + 'static,
    ) -> Result<(), DuplicateModule> {
        insert(&mut self.prefetchers, "prefetcher", name, Box::new(factory))
    }

    pub fn register_replacement(
        &mut self,
        name: &str,
        factory: impl Fn() -> Box<dyn ReplacementPolicy> + 'static,
    ) -> Result<(), DuplicateModule> {
        insert(&mut self.replacements, "replacement", name, Box::new(factory))
    }

    pub fn branch_predictor(&self, name: &str) -> Result<Box<dyn BranchPredictor>, ConfigError> {
        create(&self.branch_predictors, "branch predictor", name)
    }

    pub fn btb(&self, name: &str) -> Result<Box<dyn BranchTargetPredictor>, ConfigError> {
        create(&self.btbs, "btb", name)
    }

    pub fn prefetcher(&self, name: &str) -> Result<Box<dyn Prefetcher>, ConfigError> {
        create(&self.prefetchers, "prefetcher", name)
    }

    pub fn replacement(&self, name: &str) -> Result<Box<dyn ReplacementPolicy>, ConfigError> {
        create(&self.replacements, "replacement", name)
    }

    pub fn names(&self) -> BTreeMap<&'static str, Vec<String>> {
        fn keys<T: ?Sized>(m: &BTreeMap<String, Factory<T>>) -> Vec<String> {
            m.keys().cloned().collect()
        }
        BTreeMap::from([
            ("branch_predictor", keys(&self.branch_predictors)),
            ("btb", keys(&self.btbs)),
            ("prefetcher", keys(&self.prefetchers)),
            ("replacement", keys(&self.replacements)),
        ])
    }
}
