//! Memory hierarchy: cache and TLB nodes, page table walkers, virtual memory and DRAM.
//!
//! Components talk only through queues. A request carries the endpoint its
//! response must be delivered to; every level that forwards a miss creates a
//! new packet addressed back to itself.

mod cache;
mod dram;
mod ptw;
mod vmem;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use cache::{decompose_address, CacheNode, CacheStats};
pub use dram::{map_address, Dram, DramAddress, DramStats};
pub use ptw::{PageTableWalker, PtwStats};
pub use vmem::{pte_address, FramesExhausted, VirtualMemory, BITS_PER_LEVEL, PTE_REGION_BASE};

use crate::config::{ConfigError, Sink, SystemConfig, Topology};
use crate::modules::ModuleRegistry;
use crate::sim::SimError;
use crate::trace::BranchClass;

/// Femtoseconds per cycle at `mhz`.
pub fn period_fs(mhz: u64) -> u64 {
    1_000_000_000 / mhz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccessType {
    Read,
    Write,
    Prefetch,
    Translation,
}

impl AccessType {
    pub const ALL: [AccessType; 4] = [
        AccessType::Read,
        AccessType::Write,
        AccessType::Prefetch,
        AccessType::Translation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AccessType::Read => "READ",
            AccessType::Write => "WRITE",
            AccessType::Prefetch => "PREFETCH",
            AccessType::Translation => "TRANSLATION",
        }
    }

    pub fn is_demand(self) -> bool {
        self != AccessType::Prefetch
    }
}

/// Which core structure a response belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorePort {
    Itlb,
    L1i,
    Dtlb,
    L1d,
}

/// Receiver of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Core { core: usize, port: CorePort },
    Node(usize),
    Ptw(usize),
}

/// Receiver of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Node(usize),
    Dram,
    Ptw(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueueKind {
    Read,
    Write,
    Prefetch,
}

/// A request or response travelling through the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    /// Physical address, or virtual address for TLB lookups. Aligned on enqueue.
    pub address: u64,
    pub v_address: u64,
    pub ip: u64,
    pub kind: AccessType,
    pub core_id: usize,
    pub instr_id: u64,
    /// Requester-private tag echoed back in the response.
    pub token: u64,
    pub metadata: u32,
    /// For prefetches: whether the issuing level wants the block itself.
    pub fill_this_level: bool,
    /// Set when a cache forwards the packet to a lower level.
    pub from_upper: bool,
    /// Translation result (physical page base) in TLB responses.
    pub data: u64,
    pub return_to: Option<Endpoint>,
    /// Time the packet entered the hierarchy, in femtoseconds.
    pub issued_at: u64,
}

impl Packet {
    pub fn new(kind: AccessType, address: u64) -> Self {
        Packet {
            address,
            v_address: address,
            ip: 0,
            kind,
            core_id: 0,
            instr_id: 0,
            token: 0,
            metadata: 0,
            fill_this_level: true,
            from_upper: false,
            data: 0,
            return_to: None,
            issued_at: 0,
        }
    }
}

/// All memory-side components of a machine.
pub struct MemorySystem {
    nodes: Vec<Option<CacheNode>>,
    ptws: Vec<Option<PageTableWalker>>,
    dram: Dram,
    vmem: VirtualMemory,
    core_inbox: Vec<VecDeque<Packet>>,
    dram_done: Vec<Packet>,
}

impl MemorySystem {
    /// Builds every node, binds its modules and calls their `initialize` hooks.
    pub fn new(
        cfg: &SystemConfig,
        topo: &Topology,
        registry: &ModuleRegistry,
    ) -> Result<Self, ConfigError> {
        Self::with_prefetchers(cfg, topo, registry, true)
    }

    /// Like [`MemorySystem::new`]. With `prefetchers` false no prefetcher is
    /// bound to any node and no prefetch hook is ever called.
    pub fn with_prefetchers(
        cfg: &SystemConfig,
        topo: &Topology,
        registry: &ModuleRegistry,
        prefetchers: bool,
    ) -> Result<Self, ConfigError> {
        // The first core whose hierarchy reaches a node issues its self-generated prefetches.
        let mut home = vec![usize::MAX; cfg.caches.len()];
        for (core, nodes) in topo.cores.iter().enumerate().rev() {
            for start in [nodes.itlb, nodes.dtlb, nodes.l1i, nodes.l1d] {
                let mut at = Some(start);
                while let Some(i) = at {
                    home[i] = core;
                    at = match topo.lower[i] {
                        Sink::Node(j) => Some(j),
                        _ => None,
                    };
                }
            }
        }
        let mut nodes = Vec::with_capacity(cfg.caches.len());
        for (i, node_cfg) in cfg.caches.iter().enumerate() {
            let prefetcher = if prefetchers {
                Some(registry.prefetcher(&node_cfg.prefetcher)?)
            } else {
                None
            };
            let replacement = registry.replacement(&node_cfg.replacement)?;
            let home_core = if home[i] == usize::MAX { 0 } else { home[i] };
            nodes.push(Some(CacheNode::new(
                i,
                node_cfg.clone(),
                topo.lower[i],
                home_core,
                prefetcher,
                replacement,
            )));
        }
        let ptws = cfg
            .cores
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Some(PageTableWalker::new(
                    i,
                    topo.cores[i].l1d,
                    cfg.pt_levels,
                    cfg.page_size,
                    c,
                ))
            })
            .collect();
        Ok(MemorySystem {
            nodes,
            ptws,
            dram: Dram::new(cfg.dram.clone()),
            vmem: VirtualMemory::new(cfg.vm_seed, cfg.dram.capacity_bytes(), cfg.page_size),
            core_inbox: vec![VecDeque::new(); cfg.num_cores],
            dram_done: Vec::new(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &CacheNode {
        self.nodes[i].as_ref().expect("node is not being operated")
    }

    pub fn node_mut(&mut self, i: usize) -> &mut CacheNode {
        self.nodes[i].as_mut().expect("node is not being operated")
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CacheNode> {
        self.nodes.iter().map(|n| n.as_ref().expect("node is not being operated"))
    }

    pub fn ptw(&self, core: usize) -> &PageTableWalker {
        self.ptws[core].as_ref().expect("walker is not being operated")
    }

    pub fn dram(&self) -> &Dram {
        &self.dram
    }

    pub fn vmem(&self) -> &VirtualMemory {
        &self.vmem
    }

    pub fn vmem_mut(&mut self) -> &mut VirtualMemory {
        &mut self.vmem
    }

    /// Whether `queue` of `target` can take a packet for `address` right now.
    pub fn has_room(&self, target: Target, queue: QueueKind, address: u64) -> bool {
        match target {
            Target::Node(i) => self.node(i).has_room(queue),
            Target::Dram => self.dram.has_room(queue, address),
            Target::Ptw(core) => self.ptw(core).has_room(),
        }
    }

    /// Whether `target` can take a writeback for any address.
    pub(crate) fn has_writeback_room(&self, target: Target) -> bool {
        match target {
            Target::Dram => self.dram.has_room_everywhere(QueueKind::Write),
            t => self.has_room(t, QueueKind::Write, 0),
        }
    }

    /// Offers a packet to a component queue. Returns false, with no side
    /// effect, when the queue is full.
    pub fn add_packet(&mut self, target: Target, queue: QueueKind, packet: Packet, now: u64) -> bool {
        match target {
            Target::Node(i) => self.node_mut(i).add_packet(queue, packet, now),
            Target::Dram => self.dram.add_packet(queue, packet, now),
            Target::Ptw(core) => self.ptws[core]
                .as_mut()
                .expect("walker is not being operated")
                .add_packet(packet, now),
        }
    }

    pub(crate) fn deliver(&mut self, to: Endpoint, packet: Packet, now: u64) {
        match to {
            Endpoint::Core { core, .. } => self.core_inbox[core].push_back(packet),
            Endpoint::Node(i) => self.node_mut(i).push_return(packet, now),
            Endpoint::Ptw(core) => self.ptws[core]
                .as_mut()
                .expect("walker is not being operated")
                .push_return(packet),
        }
    }

    /// Responses addressed to a core, in delivery order.
    pub fn take_core_responses(&mut self, core: usize) -> impl Iterator<Item = Packet> + '_ {
        self.core_inbox[core].drain(..)
    }

    pub fn next_tick(&self) -> u64 {
        let nodes = self.nodes().map(|n| n.next_tick());
        let ptws = self.ptws.iter().flatten().map(|p| p.next_tick());
        nodes
            .chain(ptws)
            .chain(std::iter::once(self.dram.next_tick()))
            .min()
            .unwrap()
    }

    /// Operates every component whose clock ticks at `now`.
    pub fn operate(&mut self, now: u64) -> Result<(), SimError> {
        for i in 0..self.nodes.len() {
            if self.node(i).next_tick() == now {
                self.operate_node(i, now)?;
            }
        }
        for core in 0..self.ptws.len() {
            if self.ptw(core).next_tick() == now {
                let mut ptw = self.ptws[core].take().unwrap();
                let res = ptw.operate(self, now);
                self.ptws[core] = Some(ptw);
                res?;
            }
        }
        if self.dram.next_tick() == now {
            self.operate_dram(now);
        }
        Ok(())
    }

    /// Runs one cycle of node `i` regardless of its clock.
    pub fn operate_node(&mut self, i: usize, now: u64) -> Result<(), SimError> {
        let mut node = self.nodes[i].take().expect("node is not being operated");
        let res = node.operate(self, now);
        self.nodes[i] = Some(node);
        res
    }

    /// Runs one DRAM cycle regardless of its clock.
    pub fn operate_dram(&mut self, now: u64) {
        let mut done = std::mem::take(&mut self.dram_done);
        self.dram.operate(now, &mut done);
        for p in done.drain(..) {
            if let Some(to) = p.return_to {
                self.deliver(to, p, now);
            }
        }
        self.dram_done = done;
    }

    /// Forwards a branch read from the trace to the prefetcher of an L1I node.
    pub fn branch_operate(
        &mut self,
        node: usize,
        ip: u64,
        class: BranchClass,
        target: u64,
        core: usize,
        now: u64,
    ) {
        self.node_mut(node).branch_operate(ip, class, target, core, now);
    }

    /// Zeroes every memory-side counter; contents and module state are kept.
    pub fn reset_stats(&mut self) {
        for n in self.nodes.iter_mut().flatten() {
            n.reset_stats();
        }
        for p in self.ptws.iter_mut().flatten() {
            p.reset_stats();
        }
        self.dram.reset_stats();
    }

    /// True when no request is queued or in flight anywhere.
    pub fn is_idle(&self) -> bool {
        self.nodes().all(|n| n.is_idle())
            && self.ptws.iter().flatten().all(|p| p.is_idle())
            && self.dram.is_idle()
            && self.core_inbox.iter().all(|q| q.is_empty())
    }
}

#[cfg(test)]
mod tests;
