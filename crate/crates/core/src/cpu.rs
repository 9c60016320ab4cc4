//! Out-of-order core driven by an instruction trace.
//!
//! The front end reads records, predicts branches and fetches their blocks
//! through the ITLB and L1I into a fetch buffer. Fetched records are
//! dispatched into the ROB, executed in program order and retired in order.
//! Register operands do not create dependencies; loads complete when their
//! data returns and stores write to the L1D at retirement.

use std::collections::VecDeque;

use crate::config::{CoreConfig, CoreNodes};
use crate::memory::{period_fs, AccessType, CorePort, Endpoint, MemorySystem, Packet, QueueKind, Target};
use crate::modules::{BranchPredictor, BranchTargetPredictor, CoreView, ModuleStat};
use crate::sim::SimError;
use crate::trace::{BranchClass, InstructionSource, TraceInstruction};

/// Cycles without a retirement after which the run is declared stuck.
pub const DEADLOCK_CYCLES: u64 = 1_000_000;

/// Measurement-phase counters of one core.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoreStats {
    pub instructions: u64,
    pub cycles: u64,
    /// Retired branches, indexed by `BranchClass as usize`.
    pub branches: [u64; 7],
    pub mispredictions: [u64; 7],
    pub loads: u64,
    pub stores: u64,
    /// Cycles in which dispatch was blocked by a full ROB, LQ or SQ.
    pub dispatch_stall_cycles: u64,
    /// Cycles in which fetch waited for a mispredicted branch or its penalty.
    pub fetch_stall_cycles: u64,
}

impl CoreStats {
    pub fn total_branches(&self) -> u64 {
        self.branches.iter().sum()
    }

    pub fn total_mispredictions(&self) -> u64 {
        self.mispredictions.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Translate,
    Translating,
    Access,
    Accessing,
    Done,
}

#[derive(Debug, Clone, Copy)]
struct FetchGroup {
    id: u64,
    /// Block-aligned virtual address.
    vaddr: u64,
    paddr: u64,
    stage: Stage,
}

#[derive(Debug, Clone, Copy)]
struct FetchedRecord {
    rec: TraceInstruction,
    id: u64,
    group: u64,
    class: BranchClass,
    /// Actual target if taken, else 0.
    target: u64,
    mispredicted: bool,
}

#[derive(Debug, Clone, Copy)]
struct MemOp {
    vaddr: u64,
    paddr: u64,
    store: bool,
    stage: Stage,
}

#[derive(Debug, Clone)]
struct RobEntry {
    id: u64,
    ip: u64,
    class: BranchClass,
    taken: bool,
    target: u64,
    mispredicted: bool,
    dispatched_at: u64,
    ready_at: u64,
    mem: Vec<MemOp>,
    pending_mem: usize,
    loads: usize,
    stores: usize,
    stores_written: usize,
}

impl RobEntry {
    fn is_done(&self, executed: bool, cycle: u64) -> bool {
        executed && self.ready_at <= cycle && self.pending_mem == 0
    }
}

pub struct Core {
    id: usize,
    cfg: CoreConfig,
    nodes: CoreNodes,
    page_size: u64,
    /// L1I block size; consecutive records in one block share a fetch.
    fetch_block: u64,
    period: u64,
    next_tick: u64,
    cycle: u64,
    source: Box<dyn InstructionSource>,
    lookahead: Option<TraceInstruction>,
    drained: bool,
    next_id: u64,
    next_group: u64,
    groups: VecDeque<FetchGroup>,
    buffer: VecDeque<FetchedRecord>,
    rob: VecDeque<RobEntry>,
    /// Number of ROB entries, from the head, that have executed.
    executed: usize,
    lq_used: usize,
    sq_used: usize,
    /// `(instr_id, operand)` memory operations waiting for a queue slot.
    mem_pending: VecDeque<(u64, usize)>,
    waiting_on: Option<u64>,
    fetch_resume_at: u64,
    last_retire_cycle: u64,
    retired_total: u64,
    measuring: bool,
    frozen: bool,
    target: u64,
    bp: Box<dyn BranchPredictor>,
    btb: Box<dyn BranchTargetPredictor>,
    stats: CoreStats,
}

impl Core {
    /// Builds a core and calls the `initialize` hooks of its branch modules.
    /// `simulate` is the number of measured instructions after which counters freeze.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        cfg: CoreConfig,
        nodes: CoreNodes,
        page_size: u64,
        fetch_block: u64,
        source: Box<dyn InstructionSource>,
        mut bp: Box<dyn BranchPredictor>,
        mut btb: Box<dyn BranchTargetPredictor>,
        simulate: u64,
    ) -> Self {
        let view = CoreView {
            core_id: id,
            config: &cfg,
        };
        bp.initialize(&view);
        btb.initialize(&view);
        Core {
            id,
            period: period_fs(cfg.frequency),
            nodes,
            page_size,
            fetch_block,
            next_tick: 0,
            cycle: 0,
            source,
            lookahead: None,
            drained: false,
            next_id: 0,
            next_group: 0,
            groups: VecDeque::new(),
            buffer: VecDeque::with_capacity(cfg.ifetch_buffer_size),
            rob: VecDeque::with_capacity(cfg.rob_size),
            executed: 0,
            lq_used: 0,
            sq_used: 0,
            mem_pending: VecDeque::new(),
            waiting_on: None,
            fetch_resume_at: 0,
            last_retire_cycle: 0,
            retired_total: 0,
            measuring: false,
            frozen: false,
            target: simulate,
            bp,
            btb,
            stats: CoreStats::default(),
            cfg,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn config(&self) -> &CoreConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &CoreStats {
        &self.stats
    }

    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    /// Cycles since construction.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Instructions retired since construction, warmup included.
    pub fn retired_total(&self) -> u64 {
        self.retired_total
    }

    pub fn rob_occupancy(&self) -> usize {
        self.rob.len()
    }

    pub fn lq_occupancy(&self) -> usize {
        self.lq_used
    }

    pub fn sq_occupancy(&self) -> usize {
        self.sq_used
    }

    /// Measured instruction count reached; counters no longer change.
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// The trace ended and every instruction has left the pipeline.
    pub fn is_drained(&self) -> bool {
        self.drained && self.lookahead.is_none() && self.buffer.is_empty() && self.rob.is_empty()
    }

    /// Starts the measurement phase with zeroed counters.
    pub(crate) fn start_measurement(&mut self) {
        self.stats = CoreStats::default();
        self.measuring = true;
        self.frozen = self.target == 0;
    }

    pub(crate) fn final_stats(&mut self) -> (Vec<ModuleStat>, Vec<ModuleStat>) {
        let view = CoreView {
            core_id: self.id,
            config: &self.cfg,
        };
        (self.bp.final_stats(&view), self.btb.final_stats(&view))
    }

    fn counting(&self) -> bool {
        self.measuring && !self.frozen
    }

    pub(crate) fn operate(&mut self, sys: &mut MemorySystem, now: u64) -> Result<(), SimError> {
        // the cycle that retires the last measured instruction still counts
        let counting = self.counting();
        self.take_responses(sys);
        self.retire(sys, now);
        self.execute();
        self.issue_memory(sys, now);
        self.dispatch();
        self.fetch(sys, now)?;

        if counting {
            self.stats.cycles += 1;
        }
        if !self.rob.is_empty() && self.cycle - self.last_retire_cycle > DEADLOCK_CYCLES {
            return Err(SimError::Deadlock {
                core: self.id,
                cycle: self.cycle,
            });
        }
        self.cycle += 1;
        self.next_tick += self.period;
        Ok(())
    }

    fn rob_index(&self, id: u64) -> Option<usize> {
        let head = self.rob.front()?.id;
        let i = id.checked_sub(head)? as usize;
        (i < self.rob.len()).then_some(i)
    }

    fn take_responses(&mut self, sys: &mut MemorySystem) {
        let responses: Vec<Packet> = sys.take_core_responses(self.id).collect();
        for p in responses {
            let Some(Endpoint::Core { port, .. }) = p.return_to else {
                continue;
            };
            match port {
                CorePort::Itlb | CorePort::L1i => {
                    let Some(g) = self.groups.iter_mut().find(|g| g.id == p.token) else {
                        continue;
                    };
                    if port == CorePort::Itlb {
                        g.paddr = p.data + g.vaddr % self.page_size;
                        g.stage = Stage::Access;
                    } else {
                        g.stage = Stage::Done;
                    }
                }
                CorePort::Dtlb | CorePort::L1d => {
                    let (id, op) = (p.token / 8, (p.token % 8) as usize);
                    let Some(i) = self.rob_index(id) else { continue };
                    let e = &mut self.rob[i];
                    let m = &mut e.mem[op];
                    if port == CorePort::Dtlb {
                        m.paddr = p.data + m.vaddr % self.page_size;
                        if m.store {
                            m.stage = Stage::Done;
                            e.pending_mem -= 1;
                        } else {
                            m.stage = Stage::Access;
                            self.mem_pending.push_back((id, op));
                        }
                    } else {
                        m.stage = Stage::Done;
                        e.pending_mem -= 1;
                    }
                }
            }
        }
    }

    fn retire(&mut self, sys: &mut MemorySystem, now: u64) {
        for _ in 0..self.cfg.retire_width {
            let Some(head) = self.rob.front_mut() else { break };
            if !head.is_done(self.executed > 0, self.cycle) {
                break;
            }
            // stores are written to the L1D as they retire
            let mut blocked = false;
            let stores: Vec<MemOp> = head.mem.iter().filter(|m| m.store).copied().collect();
            while head.stores_written < stores.len() {
                let m = stores[head.stores_written];
                let mut p = Packet::new(AccessType::Write, m.paddr);
                p.v_address = m.vaddr;
                p.ip = head.ip;
                p.core_id = self.id;
                p.instr_id = head.id;
                p.issued_at = now;
                if !sys.add_packet(Target::Node(self.nodes.l1d), QueueKind::Write, p, now) {
                    blocked = true;
                    break;
                }
                head.stores_written += 1;
            }
            if blocked {
                break;
            }
            let e = self.rob.pop_front().unwrap();
            debug_assert_eq!(e.id, self.retired_total, "retire out of program order");
            self.executed -= 1;
            self.lq_used -= e.loads;
            self.sq_used -= e.stores;
            self.retired_total += 1;
            self.last_retire_cycle = self.cycle;
            if self.counting() {
                let s = &mut self.stats;
                s.instructions += 1;
                s.loads += e.loads as u64;
                s.stores += e.stores as u64;
                if e.class.is_branch() {
                    s.branches[e.class as usize] += 1;
                    if e.mispredicted {
                        s.mispredictions[e.class as usize] += 1;
                    }
                }
                if s.instructions == self.target {
                    self.frozen = true;
                }
            }
        }
    }

    fn execute(&mut self) {
        let mut n = 0;
        while n < self.cfg.execute_width && self.executed < self.rob.len() {
            let i = self.executed;
            if self.rob[i].dispatched_at >= self.cycle {
                break;
            }
            let e = &mut self.rob[i];
            e.ready_at = self.cycle + self.cfg.arithmetic_latency;
            for (op, m) in e.mem.iter().enumerate() {
                if m.stage == Stage::Translate {
                    self.mem_pending.push_back((e.id, op));
                }
            }
            if e.class.is_branch() {
                self.bp.last_branch_result(e.ip, e.target, e.taken, e.class);
                self.btb.update_btb(e.ip, e.target, e.taken, e.class);
                if self.waiting_on == Some(e.id) {
                    self.waiting_on = None;
                    self.fetch_resume_at = self.cycle + self.cfg.mispredict_penalty;
                }
            }
            self.executed += 1;
            n += 1;
        }
    }

    fn issue_memory(&mut self, sys: &mut MemorySystem, now: u64) {
        let mut left = VecDeque::with_capacity(self.mem_pending.len());
        while let Some((id, op)) = self.mem_pending.pop_front() {
            let Some(i) = self.rob_index(id) else { continue };
            let e = &mut self.rob[i];
            let m = e.mem[op];
            let (target, port, kind, addr) = match m.stage {
                Stage::Translate => (self.nodes.dtlb, CorePort::Dtlb, AccessType::Translation, m.vaddr),
                Stage::Access => (self.nodes.l1d, CorePort::L1d, AccessType::Read, m.paddr),
                _ => continue,
            };
            let mut p = Packet::new(kind, addr);
            p.v_address = m.vaddr;
            p.ip = e.ip;
            p.core_id = self.id;
            p.instr_id = id;
            p.token = id * 8 + op as u64;
            p.return_to = Some(Endpoint::Core { core: self.id, port });
            p.issued_at = now;
            if sys.add_packet(Target::Node(target), QueueKind::Read, p, now) {
                e.mem[op].stage = if m.stage == Stage::Translate {
                    Stage::Translating
                } else {
                    Stage::Accessing
                };
            } else {
                left.push_back((id, op));
            }
        }
        self.mem_pending = left;
    }

    fn dispatch(&mut self) {
        for _ in 0..self.cfg.decode_width {
            let Some(r) = self.buffer.front() else { break };
            let ready = self
                .groups
                .iter()
                .find(|g| g.id == r.group)
                .is_some_and(|g| g.stage == Stage::Done);
            if !ready {
                break;
            }
            let loads = r.rec.loads().count().min(self.cfg.lq_size);
            let stores = r.rec.stores().count().min(self.cfg.sq_size);
            if self.rob.len() >= self.cfg.rob_size
                || self.lq_used + loads > self.cfg.lq_size
                || self.sq_used + stores > self.cfg.sq_size
            {
                if self.counting() {
                    self.stats.dispatch_stall_cycles += 1;
                }
                break;
            }
            let r = self.buffer.pop_front().unwrap();
            let mut mem = Vec::with_capacity(loads + stores);
            for vaddr in r.rec.loads().take(loads) {
                mem.push(MemOp {
                    vaddr,
                    paddr: 0,
                    store: false,
                    stage: Stage::Translate,
                });
            }
            // stores use operand slots 4 and 5
            mem.resize(
                if stores > 0 { 4 } else { mem.len() },
                MemOp {
                    vaddr: 0,
                    paddr: 0,
                    store: false,
                    stage: Stage::Done,
                },
            );
            for vaddr in r.rec.stores().take(stores) {
                mem.push(MemOp {
                    vaddr,
                    paddr: 0,
                    store: true,
                    stage: Stage::Translate,
                });
            }
            self.lq_used += loads;
            self.sq_used += stores;
            self.rob.push_back(RobEntry {
                id: r.id,
                ip: r.rec.ip,
                class: r.class,
                taken: r.rec.branch_taken,
                target: r.target,
                mispredicted: r.mispredicted,
                dispatched_at: self.cycle,
                ready_at: 0,
                pending_mem: loads + stores,
                mem,
                loads,
                stores,
                stores_written: 0,
            });
        }
        while let Some(g) = self.groups.front() {
            let used = self.buffer.front().is_some_and(|r| r.group <= g.id);
            if used || g.stage != Stage::Done {
                break;
            }
            self.groups.pop_front();
        }
    }

    fn read_record(&mut self) -> Result<Option<TraceInstruction>, SimError> {
        let cur = match self.lookahead.take() {
            Some(r) => r,
            None => match self.source.next_instruction()? {
                Some(r) => r,
                None => {
                    self.drained = true;
                    return Ok(None);
                }
            },
        };
        self.lookahead = self.source.next_instruction()?;
        if self.lookahead.is_none() {
            self.drained = true;
        }
        Ok(Some(cur))
    }

    fn fetch(&mut self, sys: &mut MemorySystem, now: u64) -> Result<(), SimError> {
        let stalled = self.waiting_on.is_some() || self.cycle < self.fetch_resume_at;
        if stalled && self.counting() {
            self.stats.fetch_stall_cycles += 1;
        }
        let mut n = 0;
        while !stalled
            && n < self.cfg.fetch_width
            && self.buffer.len() < self.cfg.ifetch_buffer_size
            && !(self.drained && self.lookahead.is_none())
        {
            let Some(rec) = self.read_record()? else { break };
            n += 1;
            let id = self.next_id;
            self.next_id += 1;
            let block = rec.ip & !(self.fetch_block - 1);
            let group = match self.groups.back() {
                Some(g) if g.vaddr == block && g.stage == Stage::Translate => g.id,
                _ => {
                    let g = FetchGroup {
                        id: self.next_group,
                        vaddr: block,
                        paddr: 0,
                        stage: Stage::Translate,
                    };
                    self.next_group += 1;
                    self.groups.push_back(g);
                    g.id
                }
            };
            let class = rec.branch_class();
            let target = match (rec.branch_taken, self.lookahead) {
                (true, Some(next)) => next.ip,
                _ => 0,
            };
            let mut mispredicted = false;
            if class.is_branch() {
                let (btb_target, always_taken) = self.btb.btb_prediction(rec.ip, class);
                let direction = self.bp.predict_branch(rec.ip, btb_target, always_taken, class);
                let predicted_taken = if class == BranchClass::Conditional {
                    direction && btb_target != 0
                } else {
                    true
                };
                mispredicted = predicted_taken != rec.branch_taken
                    || (rec.branch_taken && btb_target != target);
                let predicted_target = if predicted_taken { btb_target } else { 0 };
                sys.branch_operate(self.nodes.l1i, rec.ip, class, predicted_target, self.id, now);
            }
            self.buffer.push_back(FetchedRecord {
                rec,
                id,
                group,
                class,
                target,
                mispredicted,
            });
            if mispredicted {
                self.waiting_on = Some(id);
                break;
            }
        }

        for g in self.groups.iter_mut() {
            let (node, port, kind, addr) = match g.stage {
                Stage::Translate => (self.nodes.itlb, CorePort::Itlb, AccessType::Translation, g.vaddr),
                Stage::Access => (self.nodes.l1i, CorePort::L1i, AccessType::Read, g.paddr),
                _ => continue,
            };
            let mut p = Packet::new(kind, addr);
            p.v_address = g.vaddr;
            p.ip = g.vaddr;
            p.core_id = self.id;
            p.token = g.id;
            p.return_to = Some(Endpoint::Core { core: self.id, port });
            p.issued_at = now;
            if sys.add_packet(Target::Node(node), QueueKind::Read, p, now) {
                g.stage = if g.stage == Stage::Translate {
                    Stage::Translating
                } else {
                    Stage::Accessing
                };
            }
        }
        Ok(())
    }
}
