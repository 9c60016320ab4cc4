//! Instruction trace format.
//!
//! A trace is a flat sequence of fixed-size 64-byte records, optionally wrapped
//! in a gzip or xz container. Each record describes one retired instruction:
//!
//! | offset | size | field          |
//! |--------|------|----------------|
//! | 0      | 8    | `ip`           |
//! | 8      | 1    | `is_branch`    |
//! | 9      | 1    | `branch_taken` |
//! | 10     | 2    | `dest_regs`    |
//! | 12     | 4    | `src_regs`     |
//! | 16     | 16   | `dest_mem`     |
//! | 32     | 32   | `src_mem`      |
//!
//! All multi-byte fields are little-endian. A register id or memory address of
//! zero marks an unused slot.

mod io;
pub mod synthetic;

pub use io::{
    open_trace, Compression, InstructionSource, ReplayingTrace, TraceReader, TraceWriter, VecSource,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Size in bytes of one serialized record.
pub const RECORD_SIZE: usize = 64;
pub const NUM_DEST_REGS: usize = 2;
pub const NUM_SRC_REGS: usize = 4;
pub const NUM_DEST_MEM: usize = 2;
pub const NUM_SRC_MEM: usize = 4;

/// Register ids with special meaning for branch classification.
pub const REG_STACK_POINTER: u8 = 6;
pub const REG_FLAGS: u8 = 25;
pub const REG_INSTRUCTION_POINTER: u8 = 26;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("I/O error on trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt trace: {0}")]
    Corrupt(String),
    #[error("trace {0} contains no instructions")]
    Empty(String),
    #[error("invalid synthetic trace spec: {0}")]
    Spec(String),
}

/// One decoded trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TraceInstruction {
    pub ip: u64,
    pub is_branch: bool,
    pub branch_taken: bool,
    pub dest_regs: [u8; NUM_DEST_REGS],
    pub src_regs: [u8; NUM_SRC_REGS],
    pub dest_mem: [u64; NUM_DEST_MEM],
    pub src_mem: [u64; NUM_SRC_MEM],
}

impl TraceInstruction {
    pub fn to_bytes(&self) -> [u8; RECORD_SIZE] {
        let mut buf = [0u8; RECORD_SIZE];
        buf[0..8].copy_from_slice(&self.ip.to_le_bytes());
        buf[8] = self.is_branch as u8;
        buf[9] = self.branch_taken as u8;
        buf[10..12].copy_from_slice(&self.dest_regs);
        buf[12..16].copy_from_slice(&self.src_regs);
        for (i, addr) in self.dest_mem.iter().enumerate() {
            let at = 16 + i * 8;
            buf[at..at + 8].copy_from_slice(&addr.to_le_bytes());
        }
        for (i, addr) in self.src_mem.iter().enumerate() {
            let at = 32 + i * 8;
            buf[at..at + 8].copy_from_slice(&addr.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(buf: &[u8; RECORD_SIZE]) -> Result<Self, TraceError> {
        let flag = |at: usize, name: &str| match buf[at] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(TraceError::Corrupt(format!(
                "{name} byte must be 0 or 1, found {other}"
            ))),
        };
        let is_branch = flag(8, "is_branch")?;
        let branch_taken = flag(9, "branch_taken")?;
        if branch_taken && !is_branch {
            return Err(TraceError::Corrupt(
                "branch_taken set on a non-branch record".into(),
            ));
        }
        let word = |at: usize| u64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
        let mut rec = TraceInstruction {
            ip: word(0),
            is_branch,
            branch_taken,
            ..Default::default()
        };
        rec.dest_regs.copy_from_slice(&buf[10..12]);
        rec.src_regs.copy_from_slice(&buf[12..16]);
        for i in 0..NUM_DEST_MEM {
            rec.dest_mem[i] = word(16 + i * 8);
        }
        for i in 0..NUM_SRC_MEM {
            rec.src_mem[i] = word(32 + i * 8);
        }
        Ok(rec)
    }

    /// Non-zero source memory operands.
    pub fn loads(&self) -> impl Iterator<Item = u64> + '_ {
        self.src_mem.iter().copied().filter(|&a| a != 0)
    }

    /// Non-zero destination memory operands.
    pub fn stores(&self) -> impl Iterator<Item = u64> + '_ {
        self.dest_mem.iter().copied().filter(|&a| a != 0)
    }

    pub fn branch_class(&self) -> BranchClass {
        classify_branch(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum BranchClass {
    NotBranch = 0,
    DirectJump = 1,
    IndirectJump = 2,
    Conditional = 3,
    DirectCall = 4,
    IndirectCall = 5,
    Return = 6,
}

impl BranchClass {
    pub const ALL: [BranchClass; 7] = [
        BranchClass::NotBranch,
        BranchClass::DirectJump,
        BranchClass::IndirectJump,
        BranchClass::Conditional,
        BranchClass::DirectCall,
        BranchClass::IndirectCall,
        BranchClass::Return,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BranchClass::NotBranch => "NOT_BRANCH",
            BranchClass::DirectJump => "DIRECT_JUMP",
            BranchClass::IndirectJump => "INDIRECT_JUMP",
            BranchClass::Conditional => "CONDITIONAL",
            BranchClass::DirectCall => "DIRECT_CALL",
            BranchClass::IndirectCall => "INDIRECT_CALL",
            BranchClass::Return => "RETURN",
        }
    }

    pub fn is_branch(self) -> bool {
        self != BranchClass::NotBranch
    }
}

impl std::fmt::Display for BranchClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifies a record from its register operands alone; the format carries no opcode.
pub fn classify_branch(rec: &TraceInstruction) -> BranchClass {
    if !rec.is_branch {
        return BranchClass::NotBranch;
    }
    let is_special =
        |r: u8| r == REG_STACK_POINTER || r == REG_FLAGS || r == REG_INSTRUCTION_POINTER;
    let srcs = || rec.src_regs.iter().copied().filter(|&r| r != 0);
    let reads = |r: u8| srcs().any(|s| s == r);
    let writes = |r: u8| rec.dest_regs.contains(&r);

    let reads_sp = reads(REG_STACK_POINTER);
    let reads_ip = reads(REG_INSTRUCTION_POINTER);
    let reads_flags = reads(REG_FLAGS);
    let reads_other = srcs().any(|r| !is_special(r));
    let writes_sp = writes(REG_STACK_POINTER);

    if !writes(REG_INSTRUCTION_POINTER) {
        BranchClass::IndirectJump
    } else if reads_flags {
        BranchClass::Conditional
    } else if srcs().next().is_none() {
        BranchClass::DirectJump
    } else if writes_sp && reads_other {
        BranchClass::IndirectCall
    } else if writes_sp && reads_ip {
        BranchClass::DirectCall
    } else if reads_sp && !reads_ip {
        BranchClass::Return
    } else {
        BranchClass::IndirectJump
    }
}
