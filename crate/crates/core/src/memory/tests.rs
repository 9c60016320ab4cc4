use super::*;
use crate::modules::{CacheView, FillContext, ModuleStat, PrefetchContext, PrefetchHost, Prefetcher};
use proptest::prelude::*;

const L1D: &str = "cpu0_L1D";
const L2: &str = "cpu0_L2C";

/// A memory system driven directly, one component edge at a time.
struct Rig {
    mem: MemorySystem,
    topo: Topology,
    time: u64,
}

impl Rig {
    fn new(cfg: &SystemConfig) -> Self {
        Self::with_registry(cfg, &ModuleRegistry::with_reference_modules())
    }

    fn with_registry(cfg: &SystemConfig, registry: &ModuleRegistry) -> Self {
        let topo = cfg.validate().unwrap();
        let mem = MemorySystem::new(cfg, &topo, registry).unwrap();
        Rig { mem, topo, time: 0 }
    }

    fn id(&self, name: &str) -> usize {
        self.topo.node(name).unwrap()
    }

    fn node(&self, name: &str) -> &CacheNode {
        self.mem.node(self.id(name))
    }

    fn step(&mut self) {
        let t = self.mem.next_tick();
        self.time = t;
        self.mem.operate(t).unwrap();
    }

    fn send(&mut self, node: &str, queue: QueueKind, p: Packet) -> bool {
        let id = self.id(node);
        self.mem.add_packet(Target::Node(id), queue, p, self.time)
    }

    /// Steps until `n` responses reach core 0; returns them with their arrival times.
    fn wait(&mut self, n: usize) -> Vec<(u64, Packet)> {
        let mut got = Vec::new();
        for _ in 0..200_000 {
            if got.len() >= n {
                return got;
            }
            self.step();
            let t = self.time;
            got.extend(self.mem.take_core_responses(0).map(|p| (t, p)));
        }
        panic!("only {} of {n} responses arrived", got.len());
    }

    fn settle(&mut self) {
        for _ in 0..200_000 {
            if self.mem.is_idle() {
                return;
            }
            self.step();
            self.mem.take_core_responses(0).for_each(drop);
        }
        panic!("memory system did not drain");
    }
}

fn read(addr: u64) -> Packet {
    let mut p = Packet::new(AccessType::Read, addr);
    p.return_to = Some(Endpoint::Core {
        core: 0,
        port: CorePort::L1d,
    });
    p
}

fn write(addr: u64) -> Packet {
    Packet::new(AccessType::Write, addr)
}

fn translation(vaddr: u64) -> Packet {
    let mut p = Packet::new(AccessType::Translation, vaddr);
    p.return_to = Some(Endpoint::Core {
        core: 0,
        port: CorePort::Dtlb,
    });
    p
}

fn small_l1d(sets: usize, ways: usize) -> SystemConfig {
    let mut cfg = SystemConfig::default_for(1);
    let n = cfg.node_mut(L1D).unwrap();
    n.sets = sets;
    n.ways = ways;
    cfg
}

#[test]
fn decompose_matches_bit_fields() {
    let (sets, bs) = (64u64, 64u64);
    for addr in [0u64, 63, 64, 0x12345, 0xdead_beef, u64::MAX >> 4] {
        let expect = (addr >> 12, (addr >> 6) & 63, addr & 63);
        assert_eq!(decompose_address(addr, sets, bs), expect, "{addr:#x}");
    }
    assert_eq!(decompose_address(0x12345, 64, 64), (0x12, 0x0d, 0x05));
}

#[test]
fn read_queue_rejects_when_full() {
    let mut rig = Rig::new(&SystemConfig::default_for(1));
    let cap = rig.node(L1D).config().rq_size;
    for i in 0..cap as u64 {
        assert!(rig.send(L1D, QueueKind::Read, read(i * 64)));
    }
    assert!(!rig.send(L1D, QueueKind::Read, read(cap as u64 * 64)));
    // same block as a queued read still merges
    assert!(rig.send(L1D, QueueKind::Read, read(0)));
    assert_eq!(rig.node(L1D).queue_occupancy(QueueKind::Read), cap);
}

#[test]
fn same_cycle_reads_share_one_miss() {
    let mut rig = Rig::new(&SystemConfig::default_for(1));
    rig.send(L1D, QueueKind::Read, read(0x4000));
    rig.send(L1D, QueueKind::Read, read(0x4008));
    let got = rig.wait(2);
    assert_eq!(got.len(), 2);
    let s = rig.node(L1D).stats();
    assert_eq!(s.misses[AccessType::Read.index()], 1);
    assert_eq!(s.completed_misses, 1);
    assert_eq!(rig.node(L2).stats().total_misses(), 1);
}

#[test]
fn later_read_merges_into_mshr() {
    let mut rig = Rig::new(&SystemConfig::default_for(1));
    rig.send(L1D, QueueKind::Read, read(0x4000));
    for _ in 0..20 {
        rig.step();
    }
    assert_eq!(rig.node(L1D).mshr_occupancy(), 1);
    rig.send(L1D, QueueKind::Read, read(0x4000));
    let got = rig.wait(2);
    assert_eq!(got[0].0, got[1].0, "both complete with the fill");
    let s = rig.node(L1D).stats();
    assert_eq!(s.misses[AccessType::Read.index()], 2);
    assert_eq!(s.mshr_merges, 1);
    assert_eq!(s.completed_misses, 1);
}

#[test]
fn hit_returns_after_hit_latency() {
    let mut rig = Rig::new(&SystemConfig::default_for(1));
    rig.send(L1D, QueueKind::Read, read(0x8000));
    rig.wait(1);
    rig.settle();
    let sent = rig.time;
    rig.send(L1D, QueueKind::Read, read(0x8000));
    let (at, _) = rig.wait(1)[0];
    let node = rig.node(L1D);
    assert_eq!(at - sent, node.config().hit_latency * node.period());
    assert_eq!(node.stats().hits[AccessType::Read.index()], 1);
}

#[test]
fn dirty_victim_is_written_back_once() {
    let mut rig = Rig::new(&small_l1d(1, 2));
    rig.send(L1D, QueueKind::Write, write(0x1000));
    rig.settle();
    assert!(rig.node(L1D).contains(0x1000));
    rig.send(L1D, QueueKind::Read, read(0x2000));
    rig.wait(1);
    rig.send(L1D, QueueKind::Read, read(0x3000));
    rig.wait(1);
    rig.settle();
    assert!(!rig.node(L1D).contains(0x1000));
    assert_eq!(rig.node(L1D).stats().writebacks, 1);
    let l2 = rig.node(L2).stats();
    let w = AccessType::Write.index();
    assert_eq!(l2.hits[w] + l2.misses[w], 1);
}

#[test]
fn clean_victim_is_not_written_back() {
    let mut rig = Rig::new(&small_l1d(1, 1));
    for a in [0x1000, 0x2000, 0x3000] {
        rig.send(L1D, QueueKind::Read, read(a));
        rig.wait(1);
    }
    rig.settle();
    assert_eq!(rig.node(L1D).stats().writebacks, 0);
    assert_eq!(rig.node(L2).stats().wq_serviced, 0);
}

/// Prefetches the next block into the levels below only.
struct NextBelow;

impl Prefetcher for NextBelow {
    fn initialize(&mut self, _: &CacheView) {}
    fn cache_operate(&mut self, host: &mut PrefetchHost, ctx: &PrefetchContext) -> u32 {
        let next = ctx.address + host.view().block_size();
        host.prefetch_line(next, false, 0);
        0
    }
    fn cache_fill(&mut self, _: &mut PrefetchHost, _: &FillContext) -> u32 {
        0
    }
    fn cycle_operate(&mut self, _: &mut PrefetchHost) {}
    fn branch_operate(&mut self, _: &mut PrefetchHost, _: u64, _: crate::trace::BranchClass, _: u64) {}
    fn final_stats(&mut self, _: &CacheView) -> Vec<ModuleStat> {
        Vec::new()
    }
}

#[test]
fn prefetch_below_fills_only_lower_level() {
    let mut registry = ModuleRegistry::with_reference_modules();
    registry.register_prefetcher("next_below", || Box::new(NextBelow)).unwrap();
    let mut cfg = SystemConfig::default_for(1);
    cfg.node_mut(L1D).unwrap().prefetcher = "next_below".into();
    let mut rig = Rig::with_registry(&cfg, &registry);
    rig.send(L1D, QueueKind::Read, read(0x10000));
    rig.wait(1);
    rig.settle();
    assert!(rig.node(L1D).contains(0x10000));
    assert!(!rig.node(L1D).contains(0x10040));
    assert!(rig.node(L2).contains(0x10040));
    let s = rig.node(L1D).stats();
    assert_eq!(s.pf_issued, 1);
    assert_eq!(s.pf_filled, 0);
    assert_eq!(rig.node(L2).stats().pf_filled, 1);
}

#[test]
fn page_walks_share_cached_entries() {
    let mut rig = Rig::new(&SystemConfig::default_for(1));
    let page = 4096;
    let (v0, v1) = (0x1000 * page, 0x1001 * page);
    rig.send("cpu0_DTLB", QueueKind::Read, translation(v0 + 12));
    let r0 = rig.wait(1)[0].1;
    rig.send("cpu0_DTLB", QueueKind::Read, translation(v1));
    let r1 = rig.wait(1)[0].1;
    rig.settle();

    let frame0 = rig.mem.vmem_mut().frame_of(0x1000).unwrap();
    let frame1 = rig.mem.vmem_mut().frame_of(0x1001).unwrap();
    assert_eq!(r0.data, frame0 * page);
    assert_eq!(r1.data, frame1 * page);

    let t = AccessType::Translation.index();
    let l1d = rig.node(L1D).stats();
    assert_eq!(l1d.misses[t], 4, "first walk is cold at every level");
    assert_eq!(l1d.hits[t], 4, "neighbouring page reuses every entry line");
    assert_eq!(rig.mem.ptw(0).stats().walk_reads, 8);
    assert_eq!(rig.mem.ptw(0).stats().completed, 2);
}

#[test]
fn lower_eviction_leaves_upper_copy() {
    let mut cfg = SystemConfig::default_for(1);
    let l2 = cfg.node_mut(L2).unwrap();
    l2.sets = 1;
    l2.ways = 1;
    let mut rig = Rig::new(&cfg);
    rig.send(L1D, QueueKind::Read, read(0x1000));
    rig.wait(1);
    let digest = rig.node(L1D).digest();
    rig.settle();
    rig.send(L2, QueueKind::Read, {
        let mut p = read(0x2000);
        p.return_to = None;
        p
    });
    rig.settle();
    assert!(!rig.node(L2).contains(0x1000));
    assert!(rig.node(L2).contains(0x2000));
    assert!(rig.node(L1D).contains(0x1000));
    assert_eq!(rig.node(L1D).digest(), digest);
}

#[test]
fn tlb_nodes_hit_on_repeat_translation() {
    let mut rig = Rig::new(&SystemConfig::default_for(1));
    rig.send("cpu0_DTLB", QueueKind::Read, translation(0x7000_0123));
    let first = rig.wait(1)[0].1;
    rig.send("cpu0_DTLB", QueueKind::Read, translation(0x7000_0fff));
    let second = rig.wait(1)[0].1;
    assert_eq!(first.data, second.data);
    let dtlb = rig.node("cpu0_DTLB").stats();
    assert_eq!(dtlb.hits[AccessType::Translation.index()], 1);
    assert_eq!(rig.mem.ptw(0).stats().walks, 1);
}

#[derive(Debug, Clone)]
enum Op {
    Read(u64),
    Write(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u64..512).prop_map(|b| Op::Read(b * 64)),
        1 => (0u64..512).prop_map(|b| Op::Write(b * 64)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn miss_accounting_is_conserved(ops in prop::collection::vec(op(), 1..200), gap in 0usize..4) {
        let mut cfg = small_l1d(4, 2);
        let l2 = cfg.node_mut(L2).unwrap();
        l2.sets = 8;
        l2.ways = 2;
        let mut rig = Rig::new(&cfg);
        for op in ops {
            let (q, p) = match op {
                Op::Read(a) => (QueueKind::Read, read(a)),
                Op::Write(a) => (QueueKind::Write, write(a)),
            };
            while !rig.send(L1D, q, p) {
                rig.step();
            }
            for _ in 0..gap {
                rig.step();
            }
            rig.mem.take_core_responses(0).for_each(drop);
        }
        rig.settle();
        for node in rig.mem.nodes() {
            let s = node.stats();
            prop_assert_eq!(s.fills + s.bypasses, s.completed_misses, "{}", node.name());
            prop_assert_eq!(s.total_misses(), s.mshr_merges + s.completed_misses, "{}", node.name());
            prop_assert_eq!(
                s.total_hits() + s.total_misses(),
                s.rq_serviced + s.wq_serviced + s.pq_serviced,
                "{}", node.name()
            );
            prop_assert_eq!(node.mshr_occupancy(), 0);
        }
    }

    #[test]
    fn every_read_gets_exactly_one_response(addrs in prop::collection::vec(0u64..4096, 1..100)) {
        let mut rig = Rig::new(&small_l1d(2, 2));
        let mut want = std::collections::HashMap::new();
        for (i, &a) in addrs.iter().enumerate() {
            let mut p = read(a * 8);
            p.token = i as u64;
            while !rig.send(L1D, QueueKind::Read, p) {
                rig.step();
                for r in rig.mem.take_core_responses(0) {
                    *want.entry(r.token).or_insert(0) += 1;
                }
            }
        }
        for _ in 0..200_000 {
            if rig.mem.is_idle() {
                break;
            }
            rig.step();
            for r in rig.mem.take_core_responses(0) {
                *want.entry(r.token).or_insert(0) += 1;
            }
        }
        prop_assert_eq!(want.len(), addrs.len());
        prop_assert!(want.values().all(|&n| n == 1));
    }
}

// --- DRAM ---

fn dram_cfg() -> crate::config::DramConfig {
    SystemConfig::default_for(1).dram
}

/// Runs until `n` reads complete; returns `(completion_cycle, address)`.
fn drain_dram(d: &mut Dram, n: usize) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut done = Vec::new();
    for _ in 0..100_000 {
        if out.len() >= n {
            break;
        }
        let c = d.cycle();
        d.operate(d.next_tick(), &mut done);
        out.extend(done.drain(..).map(|p| (c, p.address)));
    }
    out
}

#[test]
fn map_address_field_order() {
    let cfg = dram_cfg();
    // 128 columns, 8 banks, 1 rank, 1 channel
    assert_eq!(map_address(0, &cfg), DramAddress { channel: 0, rank: 0, bank: 0, row: 0, column: 0 });
    assert_eq!(map_address(64, &cfg).column, 1);
    assert_eq!(map_address(127 * 64, &cfg).column, 127);
    let a = map_address(128 * 64, &cfg);
    assert_eq!((a.bank, a.column, a.row), (1, 0, 0));
    let a = map_address(128 * 8 * 64, &cfg);
    assert_eq!((a.bank, a.column, a.row), (0, 0, 1));
    let addr = (5 * 8 * 128 + 3 * 128 + 17) * 64 + 9;
    let a = map_address(addr, &cfg);
    assert_eq!((a.row, a.bank, a.column), (5, 3, 17));

    let mut two = cfg.clone();
    two.channels = 2;
    two.ranks_per_channel = 2;
    let a = map_address((((1 * 2 + 1) * 2 + 1) * 8 * 128 + 2 * 128) * 64, &two);
    assert_eq!((a.channel, a.rank, a.bank, a.row), (1, 1, 2, 1));
}

#[test]
fn row_hit_costs_cas_plus_burst() {
    let cfg = dram_cfg();
    let mut d = Dram::new(cfg.clone());
    d.add_packet(QueueKind::Read, Packet::new(AccessType::Read, 0), 0);
    let start = d.cycle();
    let (first, _) = drain_dram(&mut d, 1)[0];
    assert_eq!(first - start, cfg.t_rp + cfg.t_rcd + cfg.t_cas + cfg.burst_cycles_per_block);
    let start = d.cycle();
    d.add_packet(QueueKind::Read, Packet::new(AccessType::Read, 64), 0);
    let (second, _) = drain_dram(&mut d, 1)[0];
    assert_eq!(second - start, cfg.t_cas + cfg.burst_cycles_per_block);
    assert_eq!(d.stats().row_hits, 1);
    assert_eq!(d.stats().row_misses, 1);
    assert_eq!(d.stats().row_conflicts, 0);
}

#[test]
fn row_hits_are_spaced_by_burst() {
    let cfg = dram_cfg();
    let mut d = Dram::new(cfg.clone());
    for i in 0..8 {
        d.add_packet(QueueKind::Read, Packet::new(AccessType::Read, i * 64), 0);
    }
    let done = drain_dram(&mut d, 8);
    assert_eq!(done.len(), 8);
    for w in done.windows(2) {
        assert!(w[1].0 - w[0].0 >= cfg.burst_cycles_per_block);
    }
    assert_eq!(d.stats().row_hits, 7);
}

#[test]
fn conflict_costs_precharge_and_activate() {
    let cfg = dram_cfg();
    let row = 8 * 128 * 64;
    let mut d = Dram::new(cfg.clone());
    d.add_packet(QueueKind::Read, Packet::new(AccessType::Read, 0), 0);
    drain_dram(&mut d, 1);
    let start = d.cycle();
    d.add_packet(QueueKind::Read, Packet::new(AccessType::Read, row), 0);
    let (t, _) = drain_dram(&mut d, 1)[0];
    assert_eq!(t - start, cfg.t_rp + cfg.t_rcd + cfg.t_cas + cfg.burst_cycles_per_block);
    assert_eq!(d.stats().row_conflicts, 1);
    assert_eq!(d.stats().row_misses, 2);
}

#[test]
fn writes_drain_when_queue_is_nearly_full() {
    let cfg = dram_cfg();
    let mut d = Dram::new(cfg.clone());
    let n = (cfg.wq_size * 3).div_ceil(4) as u64;
    for i in 0..n {
        d.add_packet(QueueKind::Write, Packet::new(AccessType::Write, i * 64), 0);
    }
    d.add_packet(QueueKind::Read, Packet::new(AccessType::Read, 1 << 24), 0);
    let mut done = Vec::new();
    d.operate(d.next_tick(), &mut done);
    assert_eq!(d.stats().writes, 1, "drain mode serves writes before the waiting read");
    assert_eq!(d.stats().reads, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bus_serializes_reads(blocks in prop::collection::vec(0u64..(1 << 16), 1..48)) {
        let cfg = dram_cfg();
        let mut d = Dram::new(cfg.clone());
        for &b in &blocks {
            prop_assert!(d.add_packet(QueueKind::Read, Packet::new(AccessType::Read, b * 64), 0));
        }
        let done = drain_dram(&mut d, blocks.len());
        prop_assert_eq!(done.len(), blocks.len());
        let min = cfg.t_cas + cfg.burst_cycles_per_block;
        prop_assert!(done[0].0 >= min);
        for w in done.windows(2) {
            prop_assert!(w[1].0 - w[0].0 >= cfg.burst_cycles_per_block);
        }
        let s = d.stats();
        prop_assert_eq!(s.row_hits + s.row_misses, blocks.len() as u64);
        prop_assert!(s.row_conflicts <= s.row_misses);
        prop_assert!(d.is_idle());
    }
}
