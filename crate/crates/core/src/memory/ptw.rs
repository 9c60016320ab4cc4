use std::collections::VecDeque;

use super::{pte_address, AccessType, Endpoint, MemorySystem, Packet, QueueKind, Target};
use crate::config::CoreConfig;
use crate::sim::SimError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PtwStats {
    /// Walks started.
    pub walks: u64,
    /// Page-table reads sent to the data cache.
    pub walk_reads: u64,
    /// Requests that joined a walk already in progress.
    pub merged: u64,
    pub walk_cycles: u64,
    pub completed: u64,
}

#[derive(Debug)]
struct Walk {
    vpage: u64,
    /// Next level to read, 1-based.
    level: u32,
    outstanding: bool,
    waiters: Vec<Packet>,
    started_at: u64,
}

/// Per-core page table walker. Each walk reads one entry per level through
/// the core's L1D, then resolves the mapping from [`super::VirtualMemory`].
pub struct PageTableWalker {
    core: usize,
    l1d: usize,
    levels: u32,
    page_size: u64,
    period: u64,
    next_tick: u64,
    rq: VecDeque<(u64, Packet)>,
    rq_size: usize,
    walks: Vec<Walk>,
    max_walks: usize,
    returns: VecDeque<Packet>,
    stats: PtwStats,
}

impl PageTableWalker {
    pub fn new(core: usize, l1d: usize, levels: u32, page_size: u64, cfg: &CoreConfig) -> Self {
        PageTableWalker {
            core,
            l1d,
            levels,
            page_size,
            period: super::period_fs(cfg.frequency),
            next_tick: 0,
            rq: VecDeque::new(),
            rq_size: cfg.ptw_rq_size,
            walks: Vec::new(),
            max_walks: cfg.ptw_mshr_size,
            returns: VecDeque::new(),
            stats: PtwStats::default(),
        }
    }

    pub fn stats(&self) -> &PtwStats {
        &self.stats
    }

    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    pub fn active_walks(&self) -> usize {
        self.walks.len()
    }

    pub fn has_room(&self) -> bool {
        self.rq.len() < self.rq_size
    }

    pub fn is_idle(&self) -> bool {
        self.rq.is_empty() && self.walks.is_empty() && self.returns.is_empty()
    }

    pub(crate) fn reset_stats(&mut self) {
        self.stats = PtwStats::default();
    }

    pub(crate) fn add_packet(&mut self, packet: Packet, now: u64) -> bool {
        if !self.has_room() {
            return false;
        }
        self.rq.push_back((now + self.period, packet));
        true
    }

    pub(crate) fn push_return(&mut self, packet: Packet) {
        self.returns.push_back(packet);
    }

    pub(crate) fn operate(&mut self, sys: &mut MemorySystem, now: u64) -> Result<(), SimError> {
        while let Some(p) = self.returns.pop_front() {
            let Some(i) = self
                .walks
                .iter()
                .position(|w| w.outstanding && w.vpage == p.token)
            else {
                debug_assert!(false, "walk response without a walk");
                continue;
            };
            let w = &mut self.walks[i];
            w.outstanding = false;
            w.level += 1;
            if w.level > self.levels {
                let w = self.walks.remove(i);
                let frame = sys.vmem_mut().frame_of(w.vpage)?;
                self.stats.completed += 1;
                self.stats.walk_cycles += (now - w.started_at) / self.period;
                for mut waiter in w.waiters {
                    waiter.data = frame * self.page_size;
                    if let Some(to) = waiter.return_to {
                        sys.deliver(to, waiter, now);
                    }
                }
            }
        }

        for w in self.walks.iter_mut().filter(|w| !w.outstanding) {
            let target = Target::Node(self.l1d);
            let addr = pte_address(w.vpage, w.level, self.levels);
            if !sys.has_room(target, QueueKind::Read, addr) {
                continue;
            }
            let mut p = Packet::new(AccessType::Translation, addr);
            p.core_id = self.core;
            p.token = w.vpage;
            p.return_to = Some(Endpoint::Ptw(self.core));
            p.from_upper = true;
            p.issued_at = now;
            sys.add_packet(target, QueueKind::Read, p, now);
            w.outstanding = true;
            self.stats.walk_reads += 1;
        }

        while let Some(&(ready, p)) = self.rq.front() {
            if ready > now {
                break;
            }
            let vpage = p.address / self.page_size;
            if let Some(w) = self.walks.iter_mut().find(|w| w.vpage == vpage) {
                w.waiters.push(p);
                self.stats.merged += 1;
            } else if self.walks.len() < self.max_walks {
                self.walks.push(Walk {
                    vpage,
                    level: 1,
                    outstanding: false,
                    waiters: vec![p],
                    started_at: now,
                });
                self.stats.walks += 1;
            } else {
                break;
            }
            self.rq.pop_front();
        }

        self.next_tick += self.period;
        Ok(())
    }
}
