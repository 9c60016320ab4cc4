use std::collections::VecDeque;

use super::{AccessType, Endpoint, MemorySystem, Packet, QueueKind, Target};
use crate::config::{CacheNodeConfig, NodeKind, Sink};
use crate::modules::{
    Block, CacheView, FillContext, ModuleStat, PrefetchContext, PrefetchHost, PrefetchSink,
    Prefetcher, ReplacementPolicy, ReplacementUpdate, VictimQuery,
};
use crate::sim::SimError;
use crate::trace::BranchClass;

/// Splits an address into `(tag, set, offset)`.
pub fn decompose_address(address: u64, sets: u64, block_size: u64) -> (u64, u64, u64) {
    let block = address / block_size;
    (block / sets, block % sets, address % block_size)
}

/// Counters of one node. Arrays are indexed by [`AccessType::index`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: [u64; 4],
    pub misses: [u64; 4],
    /// Misses that joined an outstanding MSHR entry.
    pub mshr_merges: u64,
    pub fills: u64,
    pub bypasses: u64,
    pub writebacks: u64,
    pub rq_serviced: u64,
    pub wq_serviced: u64,
    pub pq_serviced: u64,
    /// Head-of-queue lookups that could not proceed (MSHR or lower queue full).
    pub stalls: u64,
    pub pf_requested: u64,
    pub pf_issued: u64,
    pub pf_rejected: u64,
    /// Own prefetches dropped because the lower level cannot take them.
    pub pf_dropped: u64,
    pub pf_filled: u64,
    pub pf_useful: u64,
    pub pf_useless: u64,
    /// Demand misses that merged into an in-flight prefetch.
    pub pf_late: u64,
    pub miss_latency_cycles: u64,
    pub completed_misses: u64,
    pub cycles: u64,
}

impl CacheStats {
    pub fn total_hits(&self) -> u64 {
        self.hits.iter().sum()
    }

    pub fn total_misses(&self) -> u64 {
        self.misses.iter().sum()
    }
}

#[derive(Debug, Clone)]
struct QueueEntry {
    packet: Packet,
    ready_at: u64,
    /// Requests merged into this entry; they share its lookup.
    extra: Vec<Packet>,
}

struct PrefetchQueue {
    entries: VecDeque<QueueEntry>,
    capacity: usize,
    // context stamped on packets created by prefetch_line
    ready_at: u64,
    core_id: usize,
    ip: u64,
    requested: u64,
    issued: u64,
    rejected: u64,
}

impl PrefetchSink for PrefetchQueue {
    fn prefetch_line(&mut self, address: u64, fill_this_level: bool, metadata: u32) -> bool {
        self.requested += 1;
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.packet.address == address && e.packet.return_to.is_none())
        {
            e.packet.fill_this_level |= fill_this_level;
            self.issued += 1;
            return true;
        }
        if self.entries.len() >= self.capacity {
            self.rejected += 1;
            return false;
        }
        let mut p = Packet::new(AccessType::Prefetch, address);
        p.fill_this_level = fill_this_level;
        p.metadata = metadata;
        p.core_id = self.core_id;
        p.ip = self.ip;
        p.issued_at = self.ready_at;
        self.entries.push_back(QueueEntry {
            packet: p,
            ready_at: self.ready_at,
            extra: Vec::new(),
        });
        self.issued += 1;
        true
    }
}

#[derive(Debug, Clone)]
struct MshrEntry {
    address: u64,
    ip: u64,
    core_id: usize,
    kind: AccessType,
    waiters: Vec<Packet>,
    /// No demand request has joined this miss.
    prefetch_only: bool,
    dirty: bool,
    metadata: u32,
    issued_at: u64,
    fill_at: Option<u64>,
    data: u64,
}

/// One cache or TLB level.
pub struct CacheNode {
    id: usize,
    config: CacheNodeConfig,
    lower: Sink,
    home_core: usize,
    period: u64,
    next_tick: u64,
    cycle: u64,
    blocks: Vec<Block>,
    // prefetch-accounting epoch per block, so warmup prefetches are not scored after a reset
    pf_epoch: Vec<u32>,
    epoch: u32,
    rq: VecDeque<QueueEntry>,
    wq: VecDeque<QueueEntry>,
    pq: PrefetchQueue,
    mshr: Vec<MshrEntry>,
    returns: VecDeque<(u64, Packet)>,
    activate: [bool; 4],
    /// None when prefetching is disabled for the whole machine.
    prefetcher: Option<Box<dyn Prefetcher>>,
    replacement: Box<dyn ReplacementPolicy>,
    stats: CacheStats,
}

macro_rules! prefetch_host {
    ($node:ident) => {
        PrefetchHost::new(
            CacheView::new(
                $node.id,
                &$node.config,
                &$node.blocks,
                $node.cycle,
                $node.pq.entries.len(),
                $node.mshr.len(),
            ),
            &mut $node.pq,
        )
    };
}

macro_rules! view {
    ($node:ident) => {
        CacheView::new(
            $node.id,
            &$node.config,
            &$node.blocks,
            $node.cycle,
            $node.pq.entries.len(),
            $node.mshr.len(),
        )
    };
}

impl CacheNode {
    pub fn new(
        id: usize,
        config: CacheNodeConfig,
        lower: Sink,
        home_core: usize,
        prefetcher: Option<Box<dyn Prefetcher>>,
        replacement: Box<dyn ReplacementPolicy>,
    ) -> Self {
        let slots = config.sets * config.ways;
        let mut activate = [false; 4];
        for t in &config.prefetch_activate_on {
            activate[t.index()] = true;
        }
        let mut node = CacheNode {
            id,
            period: super::period_fs(config.frequency),
            next_tick: 0,
            cycle: 0,
            blocks: vec![Block::default(); slots],
            pf_epoch: vec![0; slots],
            epoch: 0,
            rq: VecDeque::with_capacity(config.rq_size),
            wq: VecDeque::with_capacity(config.wq_size),
            pq: PrefetchQueue {
                entries: VecDeque::with_capacity(config.pq_size),
                capacity: config.pq_size,
                ready_at: 0,
                core_id: home_core,
                ip: 0,
                requested: 0,
                issued: 0,
                rejected: 0,
            },
            mshr: Vec::with_capacity(config.mshr_size),
            returns: VecDeque::new(),
            activate,
            prefetcher,
            replacement,
            stats: CacheStats::default(),
            lower,
            home_core,
            config,
        };
        let view = view!(node);
        if let Some(pf) = node.prefetcher.as_mut() {
            pf.initialize(&view);
        }
        node.replacement.initialize(&view);
        node
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn config(&self) -> &CacheNodeConfig {
        &self.config
    }

    pub fn view(&self) -> CacheView<'_> {
        view!(self)
    }

    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    /// Cycles operated since construction (not reset by warmup).
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn stats(&self) -> CacheStats {
        let mut s = self.stats.clone();
        s.pf_requested = self.pq.requested;
        s.pf_issued = self.pq.issued;
        s.pf_rejected = self.pq.rejected;
        s
    }

    pub fn mshr_occupancy(&self) -> usize {
        self.mshr.len()
    }

    pub fn queue_occupancy(&self, queue: QueueKind) -> usize {
        match queue {
            QueueKind::Read => self.rq.len(),
            QueueKind::Write => self.wq.len(),
            QueueKind::Prefetch => self.pq.entries.len(),
        }
    }

    /// Whether a block is present.
    pub fn contains(&self, address: u64) -> bool {
        self.lookup(self.align(address)).is_some()
    }

    pub fn digest(&self) -> u64 {
        self.view().digest()
    }

    pub fn is_idle(&self) -> bool {
        self.rq.is_empty()
            && self.wq.is_empty()
            && self.pq.entries.is_empty()
            && self.mshr.is_empty()
            && self.returns.is_empty()
    }

    pub(crate) fn reset_stats(&mut self) {
        self.stats = CacheStats::default();
        self.pq.requested = 0;
        self.pq.issued = 0;
        self.pq.rejected = 0;
        self.epoch += 1;
    }

    pub(crate) fn final_stats(&mut self) -> (Vec<ModuleStat>, Vec<ModuleStat>) {
        let view = view!(self);
        (
            self.prefetcher.as_mut().map(|pf| pf.final_stats(&view)).unwrap_or_default(),
            self.replacement.final_stats(&view),
        )
    }

    fn align(&self, address: u64) -> u64 {
        address & !(self.config.block_size - 1)
    }

    fn set_of(&self, address: u64) -> usize {
        ((address / self.config.block_size) % self.config.sets as u64) as usize
    }

    fn lookup(&self, address: u64) -> Option<usize> {
        let ways = self.config.ways;
        let base = self.set_of(address) * ways;
        (0..ways).find(|&w| {
            let b = &self.blocks[base + w];
            b.valid && b.address == address
        })
    }

    fn lookup_latency(&self) -> u64 {
        self.config.hit_latency * self.period
    }

    pub fn has_room(&self, queue: QueueKind) -> bool {
        match queue {
            QueueKind::Read => self.rq.len() < self.config.rq_size,
            QueueKind::Write => self.wq.len() < self.config.wq_size,
            QueueKind::Prefetch => self.pq.entries.len() < self.config.pq_size,
        }
    }

    pub(crate) fn add_packet(&mut self, queue: QueueKind, mut packet: Packet, now: u64) -> bool {
        packet.address = self.align(packet.address);
        let ready_at = now + self.lookup_latency();
        let (q, cap) = match queue {
            QueueKind::Read => (&mut self.rq, self.config.rq_size),
            QueueKind::Write => (&mut self.wq, self.config.wq_size),
            QueueKind::Prefetch => (&mut self.pq.entries, self.config.pq_size),
        };
        if queue != QueueKind::Write {
            if let Some(e) = q
                .iter_mut()
                .find(|e| e.packet.address == packet.address && e.packet.kind == packet.kind)
            {
                e.extra.push(packet);
                return true;
            }
        }
        if q.len() >= cap {
            return false;
        }
        q.push_back(QueueEntry {
            packet,
            ready_at,
            extra: Vec::new(),
        });
        true
    }

    pub(crate) fn push_return(&mut self, packet: Packet, now: u64) {
        self.returns.push_back((now, packet));
    }

    fn lower_target(&self, core_id: usize) -> Target {
        match self.lower {
            Sink::Node(j) => Target::Node(j),
            Sink::Dram => Target::Dram,
            Sink::Ptw => Target::Ptw(core_id),
        }
    }

    pub(crate) fn branch_operate(&mut self, ip: u64, class: BranchClass, target: u64, core: usize, now: u64) {
        self.pq.ready_at = now + self.lookup_latency();
        self.pq.core_id = core;
        self.pq.ip = ip;
        if let Some(pf) = self.prefetcher.as_mut() {
            let mut host = prefetch_host!(self);
            pf.branch_operate(&mut host, ip, class, target);
        }
    }

    pub(crate) fn operate(&mut self, sys: &mut MemorySystem, now: u64) -> Result<(), SimError> {
        self.pq.ready_at = now + self.lookup_latency();
        self.handle_returns();
        self.handle_fills(sys, now)?;

        let mut blocked = [false; 3];
        for _ in 0..self.config.max_tag_lookups_per_cycle {
            let pick = [QueueKind::Read, QueueKind::Write, QueueKind::Prefetch]
                .into_iter()
                .enumerate()
                .find(|&(i, q)| {
                    !blocked[i]
                        && self
                            .queue(q)
                            .front()
                            .is_some_and(|e| e.ready_at <= now)
                });
            let Some((qi, q)) = pick else { break };
            if !self.service(sys, q, now) {
                // a stalled head still uses its lookup slot
                blocked[qi] = true;
                self.stats.stalls += 1;
            }
        }

        self.pq.core_id = self.home_core;
        self.pq.ip = 0;
        if let Some(pf) = self.prefetcher.as_mut() {
            let mut host = prefetch_host!(self);
            pf.cycle_operate(&mut host);
        }

        self.cycle += 1;
        self.stats.cycles += 1;
        self.next_tick += self.period;
        Ok(())
    }

    fn queue(&mut self, q: QueueKind) -> &mut VecDeque<QueueEntry> {
        match q {
            QueueKind::Read => &mut self.rq,
            QueueKind::Write => &mut self.wq,
            QueueKind::Prefetch => &mut self.pq.entries,
        }
    }

    fn handle_returns(&mut self) {
        let fill_delay = self.config.fill_latency * self.period;
        while let Some((arrived, p)) = self.returns.pop_front() {
            let addr = self.align(p.address);
            match self.mshr.iter_mut().find(|m| m.address == addr && m.fill_at.is_none()) {
                Some(m) => {
                    m.fill_at = Some(arrived + fill_delay);
                    m.data = p.data;
                }
                None => debug_assert!(false, "{}: response without MSHR for {addr:#x}", self.config.name),
            }
        }
    }

    fn handle_fills(&mut self, sys: &mut MemorySystem, now: u64) -> Result<(), SimError> {
        loop {
            let Some(idx) = self
                .mshr
                .iter()
                .enumerate()
                .filter(|(_, m)| m.fill_at.is_some_and(|t| t <= now))
                .min_by_key(|(i, m)| (m.fill_at, *i))
                .map(|(i, _)| i)
            else {
                return Ok(());
            };
            // a fill may evict a dirty block, so it needs room for the writeback first
            let entry = &self.mshr[idx];
            if self.config.kind == NodeKind::Cache {
                let target = self.lower_target(entry.core_id);
                if !sys.has_writeback_room(target) {
                    return Ok(());
                }
            }
            let entry = self.mshr.remove(idx);
            self.fill(sys, entry, now)?;
        }
    }

    fn fill(&mut self, sys: &mut MemorySystem, entry: MshrEntry, now: u64) -> Result<(), SimError> {
        let ways = self.config.ways;
        let set = self.set_of(entry.address);
        let query = VictimQuery {
            core_id: entry.core_id,
            set,
            ip: entry.ip,
            address: entry.address,
            access_type: entry.kind,
        };
        let view = view!(self);
        let way = self.replacement.find_victim(&view, &query);
        if way > ways {
            return Err(SimError::ModuleContract(format!(
                "replacement policy '{}' on node '{}' returned way {way} for a {ways}-way set",
                self.config.replacement, self.config.name
            )));
        }
        let mut evicted = 0;
        if way == ways {
            self.stats.bypasses += 1;
        } else {
            let slot = set * ways + way;
            let victim = self.blocks[slot];
            if victim.valid {
                evicted = victim.address;
                if victim.prefetched && self.pf_epoch[slot] == self.epoch {
                    self.stats.pf_useless += 1;
                }
                if victim.dirty {
                    let mut wb = Packet::new(AccessType::Write, victim.address);
                    wb.ip = victim.ip;
                    wb.core_id = entry.core_id;
                    wb.issued_at = now;
                    wb.from_upper = true;
                    let target = self.lower_target(entry.core_id);
                    let accepted = sys.add_packet(target, QueueKind::Write, wb, now);
                    debug_assert!(accepted, "writeback room was checked");
                    self.stats.writebacks += 1;
                }
            }
            self.blocks[slot] = Block {
                valid: true,
                dirty: entry.dirty,
                prefetched: entry.prefetch_only,
                address: entry.address,
                ip: entry.ip,
                data: entry.data,
            };
            self.pf_epoch[slot] = self.epoch;
            if entry.prefetch_only {
                self.stats.pf_filled += 1;
            }
            self.stats.fills += 1;
            let view = view!(self);
            self.replacement.update_replacement_state(
                &view,
                &ReplacementUpdate {
                    core_id: entry.core_id,
                    set,
                    way,
                    address: entry.address,
                    ip: entry.ip,
                    victim_address: evicted,
                    access_type: entry.kind,
                    hit: false,
                },
            );
        }
        self.pq.core_id = entry.core_id;
        self.pq.ip = entry.ip;
        let ctx = FillContext {
            address: entry.address,
            set,
            way,
            was_prefetch: entry.prefetch_only,
            evicted_address: evicted,
            metadata: entry.metadata,
        };
        if let Some(pf) = self.prefetcher.as_mut() {
            let mut host = prefetch_host!(self);
            pf.cache_fill(&mut host, &ctx);
        }

        self.stats.completed_misses += 1;
        self.stats.miss_latency_cycles += now.saturating_sub(entry.issued_at) / self.period;
        for mut w in entry.waiters {
            w.data = entry.data;
            if let Some(to) = w.return_to {
                sys.deliver(to, w, now);
            }
        }
        Ok(())
    }

    fn activates(&self, p: &Packet) -> bool {
        self.activate[p.kind.index()] && (p.kind != AccessType::Prefetch || p.from_upper)
    }

    fn cache_operate(&mut self, p: &Packet, hit: bool) -> u32 {
        if self.prefetcher.is_none() || !self.activates(p) {
            return p.metadata;
        }
        let ctx = PrefetchContext {
            address: p.address,
            ip: p.ip,
            core_id: p.core_id,
            cache_hit: hit,
            access_type: p.kind,
            metadata_in: p.metadata,
        };
        self.pq.core_id = p.core_id;
        self.pq.ip = p.ip;
        match self.prefetcher.as_mut() {
            Some(pf) => {
                let mut host = prefetch_host!(self);
                pf.cache_operate(&mut host, &ctx)
            }
            None => p.metadata,
        }
    }

    fn count_serviced(&mut self, q: QueueKind) {
        match q {
            QueueKind::Read => self.stats.rq_serviced += 1,
            QueueKind::Write => self.stats.wq_serviced += 1,
            QueueKind::Prefetch => self.stats.pq_serviced += 1,
        }
    }

    /// Looks up the head of `q`. Returns false if it must stay queued.
    fn service(&mut self, sys: &mut MemorySystem, q: QueueKind, now: u64) -> bool {
        let head = self.queue(q).front().expect("caller checked head").packet;
        let kind = head.kind;
        if let Some(way) = self.lookup(head.address) {
            let entry = self.queue(q).pop_front().unwrap();
            self.count_serviced(q);
            self.stats.hits[kind.index()] += 1;
            let set = self.set_of(head.address);
            let slot = set * self.config.ways + way;
            let block = &mut self.blocks[slot];
            if kind == AccessType::Write {
                block.dirty = true;
            }
            if kind.is_demand() && block.prefetched {
                block.prefetched = false;
                if self.pf_epoch[slot] == self.epoch {
                    self.stats.pf_useful += 1;
                }
            }
            let data = block.data;
            let view = view!(self);
            self.replacement.update_replacement_state(
                &view,
                &ReplacementUpdate {
                    core_id: head.core_id,
                    set,
                    way,
                    address: head.address,
                    ip: head.ip,
                    victim_address: 0,
                    access_type: kind,
                    hit: true,
                },
            );
            self.cache_operate(&head, true);
            for mut p in std::iter::once(entry.packet).chain(entry.extra) {
                p.data = data;
                if let Some(to) = p.return_to {
                    sys.deliver(to, p, now);
                }
            }
            return true;
        }

        // miss
        if let Some(m) = self.mshr.iter().position(|m| m.address == head.address) {
            let entry = self.queue(q).pop_front().unwrap();
            self.count_serviced(q);
            self.stats.misses[kind.index()] += 1;
            self.stats.mshr_merges += 1;
            let mshr = &mut self.mshr[m];
            if kind.is_demand() && mshr.prefetch_only {
                mshr.prefetch_only = false;
                self.stats.pf_late += 1;
            }
            if kind == AccessType::Write {
                mshr.dirty = true;
            }
            mshr.waiters.extend(
                std::iter::once(entry.packet)
                    .chain(entry.extra)
                    .filter(|p| p.return_to.is_some()),
            );
            self.cache_operate(&head, false);
            return true;
        }

        let own_prefetch = kind == AccessType::Prefetch && !head.from_upper && head.return_to.is_none();
        if own_prefetch && !head.fill_this_level {
            // fill only below: hand the prefetch to the next cache as its own
            let Sink::Node(j) = self.lower else {
                self.queue(q).pop_front();
                self.count_serviced(q);
                self.stats.misses[kind.index()] += 1;
                self.stats.pf_dropped += 1;
                return true;
            };
            if !sys.has_room(Target::Node(j), QueueKind::Prefetch, head.address) {
                return false;
            }
            self.queue(q).pop_front();
            self.count_serviced(q);
            self.stats.misses[kind.index()] += 1;
            let mut fwd = head;
            fwd.fill_this_level = true;
            fwd.from_upper = true;
            fwd.return_to = None;
            sys.add_packet(Target::Node(j), QueueKind::Prefetch, fwd, now);
            return true;
        }

        if self.mshr.len() >= self.config.mshr_size {
            return false;
        }

        if kind == AccessType::Write {
            // write-allocate without fetching the rest of the block
            let entry = self.queue(q).pop_front().unwrap();
            self.count_serviced(q);
            self.stats.misses[kind.index()] += 1;
            let metadata = self.cache_operate(&head, false);
            debug_assert!(self.mshr.iter().all(|m| m.address != head.address));
        self.mshr.push(MshrEntry {
                address: head.address,
                ip: head.ip,
                core_id: head.core_id,
                kind,
                waiters: entry.extra.into_iter().filter(|p| p.return_to.is_some()).collect(),
                prefetch_only: false,
                dirty: true,
                metadata,
                issued_at: now,
                fill_at: Some(now + self.config.fill_latency * self.period),
                data: 0,
            });
            return true;
        }

        let target = self.lower_target(head.core_id);
        let (lower_queue, lower_kind) = match kind {
            AccessType::Prefetch if self.config.prefetch_as_fill_here => {
                (QueueKind::Prefetch, AccessType::Prefetch)
            }
            AccessType::Prefetch => (
                QueueKind::Read,
                match self.config.kind {
                    NodeKind::Cache => AccessType::Read,
                    NodeKind::Tlb => AccessType::Translation,
                },
            ),
            other => (QueueKind::Read, other),
        };
        // a page walker has a single request queue
        let lower_queue = if matches!(target, Target::Ptw(_)) {
            QueueKind::Read
        } else {
            lower_queue
        };
        if !sys.has_room(target, lower_queue, head.address) {
            return false;
        }
        let entry = self.queue(q).pop_front().unwrap();
        self.count_serviced(q);
        self.stats.misses[kind.index()] += 1;
        let metadata = self.cache_operate(&head, false);
        let mut fwd = head;
        fwd.kind = lower_kind;
        fwd.metadata = metadata;
        fwd.from_upper = true;
        fwd.fill_this_level = true;
        fwd.return_to = Some(Endpoint::Node(self.id));
        fwd.token = 0;
        fwd.issued_at = now;
        let accepted = sys.add_packet(target, lower_queue, fwd, now);
        debug_assert!(accepted, "lower room was checked");
        debug_assert!(self.mshr.iter().all(|m| m.address != head.address));
        self.mshr.push(MshrEntry {
            address: head.address,
            ip: head.ip,
            core_id: head.core_id,
            kind,
            waiters: std::iter::once(entry.packet)
                .chain(entry.extra)
                .filter(|p| p.return_to.is_some())
                .collect(),
            prefetch_only: kind == AccessType::Prefetch,
            dirty: false,
            metadata,
            issued_at: now,
            fill_at: None,
            data: 0,
        });
        true
    }
}
