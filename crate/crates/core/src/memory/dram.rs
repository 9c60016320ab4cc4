use std::collections::VecDeque;

use super::{Packet, QueueKind};
use crate::config::DramConfig;

/// Location of a block in the DRAM array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DramAddress {
    pub channel: u64,
    pub rank: u64,
    pub bank: u64,
    pub row: u64,
    pub column: u64,
}

/// Maps a physical address to DRAM coordinates. From the block number upward:
/// column, bank, rank, channel, then row in the remaining bits.
pub fn map_address(paddr: u64, cfg: &DramConfig) -> DramAddress {
    let mut b = paddr / cfg.block_size;
    let mut take = |n: u64| {
        let v = b % n;
        b /= n;
        v
    };
    let column = take(cfg.columns_per_row);
    let bank = take(cfg.banks_per_rank);
    let rank = take(cfg.ranks_per_channel);
    let channel = take(cfg.channels);
    let row = b % cfg.rows_per_bank;
    DramAddress {
        channel,
        rank,
        bank,
        row,
        column,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DramStats {
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    /// Accesses that did not find their row open (includes conflicts).
    pub row_misses: u64,
    /// Row misses where another row was open.
    pub row_conflicts: u64,
    pub bus_busy_cycles: u64,
    pub read_latency_cycles: u64,
    pub cycles: u64,
}

#[derive(Debug, Clone)]
struct DramRequest {
    packet: Packet,
    coords: DramAddress,
    arrival: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Bank {
    open_row: Option<u64>,
    busy_until: u64,
}

#[derive(Debug)]
struct Channel {
    rq: VecDeque<DramRequest>,
    wq: VecDeque<DramRequest>,
    banks: Vec<Bank>,
    bus_free: u64,
    draining: bool,
    /// `(done_cycle, request, is_write)`
    in_flight: VecDeque<(u64, DramRequest, bool)>,
}

/// Channels of banks with open-row state and a shared data bus per channel.
pub struct Dram {
    cfg: DramConfig,
    channels: Vec<Channel>,
    period: u64,
    next_tick: u64,
    cycle: u64,
    stats: DramStats,
}

impl Dram {
    pub fn new(cfg: DramConfig) -> Self {
        let banks = (cfg.ranks_per_channel * cfg.banks_per_rank) as usize;
        let channels = (0..cfg.channels)
            .map(|_| Channel {
                rq: VecDeque::new(),
                wq: VecDeque::new(),
                banks: vec![Bank::default(); banks],
                bus_free: 0,
                draining: false,
                in_flight: VecDeque::new(),
            })
            .collect();
        Dram {
            period: super::period_fs(cfg.frequency),
            channels,
            cfg,
            next_tick: 0,
            cycle: 0,
            stats: DramStats::default(),
        }
    }

    pub fn config(&self) -> &DramConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &DramStats {
        &self.stats
    }

    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn is_idle(&self) -> bool {
        self.channels
            .iter()
            .all(|c| c.rq.is_empty() && c.wq.is_empty() && c.in_flight.is_empty())
    }

    pub fn reset_stats(&mut self) {
        self.stats = DramStats::default();
    }

    fn queue_len(&self, ch: usize, queue: QueueKind) -> (usize, usize) {
        let c = &self.channels[ch];
        match queue {
            QueueKind::Write => (c.wq.len(), self.cfg.wq_size),
            _ => (c.rq.len(), self.cfg.rq_size),
        }
    }

    /// Prefetches share the read queue.
    pub fn has_room(&self, queue: QueueKind, address: u64) -> bool {
        let ch = map_address(address, &self.cfg).channel as usize;
        let (len, cap) = self.queue_len(ch, queue);
        len < cap
    }

    pub(crate) fn has_room_everywhere(&self, queue: QueueKind) -> bool {
        (0..self.channels.len()).all(|ch| {
            let (len, cap) = self.queue_len(ch, queue);
            len < cap
        })
    }

    pub fn add_packet(&mut self, queue: QueueKind, packet: Packet, _now: u64) -> bool {
        if !self.has_room(queue, packet.address) {
            return false;
        }
        let coords = map_address(packet.address, &self.cfg);
        let req = DramRequest {
            packet,
            coords,
            arrival: self.cycle,
        };
        let c = &mut self.channels[coords.channel as usize];
        match queue {
            QueueKind::Write => c.wq.push_back(req),
            _ => c.rq.push_back(req),
        }
        true
    }

    fn bank_index(&self, a: &DramAddress) -> usize {
        (a.rank * self.cfg.banks_per_rank + a.bank) as usize
    }

    /// Picks a request whose bank is free: the oldest row hit, else the oldest.
    fn pick(&self, ch: usize, write: bool) -> Option<usize> {
        let c = &self.channels[ch];
        let q = if write { &c.wq } else { &c.rq };
        let free = |r: &DramRequest| c.banks[self.bank_index(&r.coords)].busy_until <= self.cycle;
        let hit = |r: &DramRequest| c.banks[self.bank_index(&r.coords)].open_row == Some(r.coords.row);
        q.iter()
            .position(|r| free(r) && hit(r))
            .or_else(|| q.iter().position(free))
    }

    fn issue(&mut self, ch: usize, idx: usize, write: bool) {
        let c = &mut self.channels[ch];
        let req = if write { c.wq.remove(idx) } else { c.rq.remove(idx) }.unwrap();
        let bank = &mut c.banks[(req.coords.rank * self.cfg.banks_per_rank + req.coords.bank) as usize];
        let (t_rp, t_rcd, t_cas) = (self.cfg.t_rp, self.cfg.t_rcd, self.cfg.t_cas);
        let lat = match bank.open_row {
            Some(r) if r == req.coords.row => {
                self.stats.row_hits += 1;
                t_cas
            }
            open => {
                // a closed bank is charged the full precharge as well
                self.stats.row_misses += 1;
                if open.is_some() {
                    self.stats.row_conflicts += 1;
                }
                t_rp + t_rcd + t_cas
            }
        };
        let burst = self.cfg.burst_cycles_per_block;
        let now = self.cycle;
        bank.open_row = Some(req.coords.row);
        bank.busy_until = now + (lat - t_cas) + burst;
        let start = (now + lat).max(c.bus_free);
        let done = start + burst;
        c.bus_free = done;
        self.stats.bus_busy_cycles += burst;
        if write {
            self.stats.writes += 1;
        } else {
            self.stats.reads += 1;
            self.stats.read_latency_cycles += done - req.arrival;
        }
        let pos = c.in_flight.partition_point(|(d, _, _)| *d <= done);
        c.in_flight.insert(pos, (done, req, write));
    }

    /// Runs one DRAM cycle. Completed reads are appended to `done`.
    pub fn operate(&mut self, _now: u64, done: &mut Vec<Packet>) {
        for ch in 0..self.channels.len() {
            let c = &mut self.channels[ch];
            while c.in_flight.front().is_some_and(|(d, _, _)| *d <= self.cycle) {
                let (_, req, write) = c.in_flight.pop_front().unwrap();
                if !write {
                    done.push(req.packet);
                }
            }
            if c.wq.len() * 4 >= self.cfg.wq_size * 3 {
                c.draining = true;
            } else if c.wq.is_empty() {
                c.draining = false;
            }
            let writes_first = c.draining || c.rq.is_empty();
            let choice = self
                .pick(ch, writes_first)
                .map(|i| (i, writes_first))
                .or_else(|| self.pick(ch, !writes_first).map(|i| (i, !writes_first)));
            if let Some((i, write)) = choice {
                self.issue(ch, i, write);
            }
        }
        self.cycle += 1;
        self.stats.cycles += 1;
        self.next_tick += self.period;
    }
}
