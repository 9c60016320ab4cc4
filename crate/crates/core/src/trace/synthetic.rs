//! Deterministic synthetic trace generation for tests and demos.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    TraceError, TraceInstruction, REG_FLAGS, REG_INSTRUCTION_POINTER,
};

/// Base address of generated code.
pub const CODE_BASE: u64 = 0x40_0000;
const INSTR_BYTES: u64 = 4;
const POINTER_BLOCK: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    StreamingLoad,
    StridedLoad,
    RandomLoad,
    LoopBranch,
    PointerChase,
    PureArithmetic,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::StreamingLoad,
        Pattern::StridedLoad,
        Pattern::RandomLoad,
        Pattern::LoopBranch,
        Pattern::PointerChase,
        Pattern::PureArithmetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::StreamingLoad => "streaming-load",
            Pattern::StridedLoad => "strided-load",
            Pattern::RandomLoad => "random-load",
            Pattern::LoopBranch => "loop-branch",
            Pattern::PointerChase => "pointer-chase",
            Pattern::PureArithmetic => "pure-arithmetic",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| TraceError::Spec(format!("unknown pattern '{s}'")))
    }
}

/// Parameters of a synthetic trace. Identical specs produce identical traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub pattern: Pattern,
    /// Number of records to emit.
    pub length: u64,
    pub seed: u64,
    /// Byte distance between consecutive loads (streaming and strided patterns).
    pub stride: u64,
    /// First data address.
    pub start: u64,
    /// Size of the data region in bytes; 0 means unbounded for streaming patterns.
    pub range: u64,
    /// Loop body length for `loop-branch`; code footprint in instructions otherwise.
    pub body_len: u32,
    /// Probability that the loop branch is taken.
    pub taken_rate: f64,
    /// Arithmetic instructions inserted after every load.
    pub spacing: u32,
}

impl SyntheticSpec {
    pub fn new(pattern: Pattern, length: u64, seed: u64) -> Self {
        SyntheticSpec {
            pattern,
            length,
            seed,
            stride: 64,
            start: 0x10000,
            range: match pattern {
                Pattern::RandomLoad | Pattern::PointerChase => 1 << 20,
                _ => 0,
            },
            body_len: 64,
            taken_rate: 0.99,
            spacing: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let fail = |msg: &str| Err(TraceError::Spec(msg.to_string()));
        if self.length == 0 {
            return fail("length must be > 0");
        }
        if self.body_len == 0 {
            return fail("body_len must be > 0");
        }
        if !(0.0..=1.0).contains(&self.taken_rate) {
            return fail("taken_rate must lie in [0, 1]");
        }
        match self.pattern {
            Pattern::StreamingLoad | Pattern::StridedLoad => {
                if self.stride == 0 {
                    return fail("stride must be non-zero");
                }
                if self.start == 0 {
                    return fail("start address must be non-zero");
                }
            }
            Pattern::RandomLoad => {
                if self.range < 8 {
                    return fail("random-load needs a range of at least 8 bytes");
                }
                if self.start == 0 {
                    return fail("start address must be non-zero");
                }
            }
            Pattern::PointerChase => {
                if self.range < POINTER_BLOCK {
                    return fail("pointer-chase needs a range of at least 64 bytes");
                }
                if self.range / POINTER_BLOCK > u32::MAX as u64 {
                    return fail("pointer-chase range too large");
                }
                if self.start == 0 {
                    return fail("start address must be non-zero");
                }
            }
            Pattern::LoopBranch | Pattern::PureArithmetic => {}
        }
        Ok(())
    }
}

/// Streaming generator; yields exactly `spec.length` records.
pub struct SyntheticTrace {
    spec: SyntheticSpec,
    rng: ChaCha8Rng,
    emitted: u64,
    mem_ops: u64,
    chain: Vec<u32>,
    pending: std::collections::VecDeque<TraceInstruction>,
    // loop-branch position within the current iteration
    loop_pos: u32,
}

impl SyntheticTrace {
    pub fn new(spec: SyntheticSpec) -> Result<Self, TraceError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let chain = if spec.pattern == Pattern::PointerChase {
            let mut order: Vec<u32> = (0..(spec.range / POINTER_BLOCK) as u32).collect();
            order.shuffle(&mut rng);
            order
        } else {
            Vec::new()
        };
        Ok(SyntheticTrace {
            spec,
            rng,
            emitted: 0,
            mem_ops: 0,
            chain,
            pending: Default::default(),
            loop_pos: 0,
        })
    }

    fn code_ip(&self, slot: u64) -> u64 {
        CODE_BASE + INSTR_BYTES * (slot % self.spec.body_len as u64)
    }

    fn arithmetic(ip: u64) -> TraceInstruction {
        TraceInstruction {
            ip,
            dest_regs: [1, 0],
            src_regs: [2, 3, 0, 0],
            ..Default::default()
        }
    }

    fn load(ip: u64, addr: u64, chained: bool) -> TraceInstruction {
        let reg = if chained { 5 } else { 4 };
        TraceInstruction {
            ip,
            dest_regs: [reg, 0],
            src_regs: [5, 0, 0, 0],
            src_mem: [addr, 0, 0, 0],
            ..Default::default()
        }
    }

    fn next_load_address(&mut self) -> u64 {
        let k = self.mem_ops;
        self.mem_ops += 1;
        let s = &self.spec;
        match s.pattern {
            Pattern::StreamingLoad | Pattern::StridedLoad => {
                let offset = k.wrapping_mul(s.stride);
                let offset = if s.range > 0 { offset % s.range } else { offset };
                s.start.wrapping_add(offset)
            }
            Pattern::RandomLoad => s.start + 8 * self.rng.gen_range(0..s.range / 8),
            Pattern::PointerChase => {
                let idx = self.chain[(k % self.chain.len() as u64) as usize] as u64;
                s.start + idx * POINTER_BLOCK
            }
            Pattern::LoopBranch | Pattern::PureArithmetic => unreachable!(),
        }
    }

    fn refill(&mut self) {
        let slot = self.emitted + self.pending.len() as u64;
        match self.spec.pattern {
            Pattern::PureArithmetic => {
                let ip = self.code_ip(slot);
                self.pending.push_back(Self::arithmetic(ip));
            }
            Pattern::StreamingLoad
            | Pattern::StridedLoad
            | Pattern::RandomLoad
            | Pattern::PointerChase => {
                let chained = self.spec.pattern == Pattern::PointerChase;
                let addr = self.next_load_address();
                let ip = self.code_ip(slot);
                self.pending.push_back(Self::load(ip, addr, chained));
                for i in 0..self.spec.spacing as u64 {
                    let ip = self.code_ip(slot + 1 + i);
                    self.pending.push_back(Self::arithmetic(ip));
                }
            }
            Pattern::LoopBranch => {
                let body = self.spec.body_len as u64;
                if (self.loop_pos as u64) < body {
                    let ip = CODE_BASE + INSTR_BYTES * self.loop_pos as u64;
                    self.pending.push_back(Self::arithmetic(ip));
                    self.loop_pos += 1;
                    return;
                }
                self.loop_pos = 0;
                let branch_ip = CODE_BASE + INSTR_BYTES * body;
                let taken = self.rng.gen_bool(self.spec.taken_rate);
                self.pending.push_back(TraceInstruction {
                    ip: branch_ip,
                    is_branch: true,
                    branch_taken: taken,
                    dest_regs: [REG_INSTRUCTION_POINTER, 0],
                    src_regs: [REG_INSTRUCTION_POINTER, REG_FLAGS, 0, 0],
                    ..Default::default()
                });
                if !taken {
                    // loop exit: one instruction, then jump back to the loop head
                    self.pending
                        .push_back(Self::arithmetic(branch_ip + INSTR_BYTES));
                    self.pending.push_back(TraceInstruction {
                        ip: branch_ip + 2 * INSTR_BYTES,
                        is_branch: true,
                        branch_taken: true,
                        dest_regs: [REG_INSTRUCTION_POINTER, 0],
                        ..Default::default()
                    });
                }
            }
        }
    }
}

impl Iterator for SyntheticTrace {
    type Item = TraceInstruction;

    fn next(&mut self) -> Option<TraceInstruction> {
        if self.emitted == self.spec.length {
            return None;
        }
        if self.pending.is_empty() {
            self.refill();
        }
        self.emitted += 1;
        self.pending.pop_front()
    }
}

/// Generates the whole trace in memory.
pub fn generate_synthetic_trace(spec: &SyntheticSpec) -> Result<Vec<TraceInstruction>, TraceError> {
    Ok(SyntheticTrace::new(spec.clone())?.collect())
}
