//! The global simulation loop.

use thiserror::Error;

use crate::config::{ConfigError, SystemConfig, Topology};
use crate::cpu::Core;
use crate::memory::{FramesExhausted, MemorySystem};
use crate::metrics::{ModuleReport, SimReport};
use crate::modules::ModuleRegistry;
use crate::trace::{InstructionSource, TraceError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("module contract violation: {0}")]
    ModuleContract(String),
    #[error(transparent)]
    FramesExhausted(#[from] FramesExhausted),
    #[error("core {core} retired nothing for {} cycles (stuck at cycle {cycle})", crate::cpu::DEADLOCK_CYCLES)]
    Deadlock { core: usize, cycle: u64 },
    #[error("{0}")]
    Usage(String),
}

/// Build-time switches that are not part of the machine description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// When false, no prefetcher is bound anywhere.
    pub prefetchers: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { prefetchers: true }
    }
}

/// A machine plus its traces, advanced on a global femtosecond clock.
///
/// Every component ticks at its own frequency. At each time step the memory
/// side operates first, then the cores whose clock edge falls on that step.
pub struct Simulation {
    cfg: SystemConfig,
    topo: Topology,
    cores: Vec<Core>,
    mem: MemorySystem,
    warmup: u64,
    time: u64,
    measuring: bool,
    finished: bool,
    module_stats: Option<ModuleReport>,
}

impl Simulation {
    /// Assembles the machine and calls every module's `initialize` hook.
    /// Each core retires `warmup` instructions before counters are reset, then
    /// counts `simulate` instructions.
    pub fn new(
        cfg: SystemConfig,
        registry: &ModuleRegistry,
        sources: Vec<Box<dyn InstructionSource>>,
        warmup: u64,
        simulate: u64,
    ) -> Result<Self, SimError> {
        Self::with_options(cfg, registry, sources, warmup, simulate, SimOptions::default())
    }

    pub fn with_options(
        cfg: SystemConfig,
        registry: &ModuleRegistry,
        sources: Vec<Box<dyn InstructionSource>>,
        warmup: u64,
        simulate: u64,
        options: SimOptions,
    ) -> Result<Self, SimError> {
        let topo = cfg.validate()?;
        if sources.len() != cfg.num_cores {
            return Err(SimError::Usage(format!(
                "configuration has {} cores but {} traces were given",
                cfg.num_cores,
                sources.len()
            )));
        }
        let mut cores = Vec::with_capacity(cfg.num_cores);
        for (i, source) in sources.into_iter().enumerate() {
            let c = &cfg.cores[i];
            let bp = registry.branch_predictor(&c.branch_predictor)?;
            let btb = registry.btb(&c.btb)?;
            cores.push(Core::new(
                i,
                c.clone(),
                topo.cores[i],
                cfg.page_size,
                cfg.caches[topo.cores[i].l1i].block_size,
                source,
                bp,
                btb,
                simulate,
            ));
        }
        let mem = MemorySystem::with_prefetchers(&cfg, &topo, registry, options.prefetchers)?;
        let mut sim = Simulation {
            cfg,
            topo,
            cores,
            mem,
            warmup,
            time: 0,
            measuring: false,
            finished: false,
            module_stats: None,
        };
        if warmup == 0 {
            sim.start_measurement();
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn core(&self, i: usize) -> &Core {
        &self.cores[i]
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn memory(&self) -> &MemorySystem {
        &self.mem
    }

    pub fn memory_mut(&mut self) -> &mut MemorySystem {
        &mut self.mem
    }

    /// Current global time in femtoseconds.
    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn is_measuring(&self) -> bool {
        self.measuring
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn start_measurement(&mut self) {
        for c in &mut self.cores {
            c.start_measurement();
        }
        self.mem.reset_stats();
        self.measuring = true;
    }

    fn all_done(&self) -> bool {
        self.measuring && self.cores.iter().all(|c| c.is_frozen() || c.is_drained())
    }

    /// Advances to the next clock edge. Returns false once every core has
    /// finished (or drained its trace).
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.finished {
            return Ok(false);
        }
        if self.all_done() || self.cores.iter().all(|c| c.is_drained()) {
            self.finish();
            return Ok(false);
        }
        let core_tick = self.cores.iter().map(|c| c.next_tick()).min().unwrap_or(u64::MAX);
        let t = core_tick.min(self.mem.next_tick());
        self.time = t;
        self.mem.operate(t)?;
        for c in &mut self.cores {
            if c.next_tick() == t {
                c.operate(&mut self.mem, t)?;
            }
        }
        if !self.measuring && self.cores.iter().all(|c| c.retired_total() >= self.warmup || c.is_drained()) {
            self.start_measurement();
        }
        Ok(true)
    }

    /// Runs until every core has retired its measured instructions, then
    /// calls the modules' `final_stats` hooks and builds the report.
    pub fn run(&mut self) -> Result<SimReport, SimError> {
        while self.step()? {}
        Ok(self.report())
    }

    fn finish(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        let mut report = ModuleReport::default();
        for c in &mut self.cores {
            let (bp, btb) = c.final_stats();
            report.cores.push((bp, btb));
        }
        for i in 0..self.mem.node_count() {
            report.nodes.push(self.mem.node_mut(i).final_stats());
        }
        self.module_stats = Some(report);
    }

    /// Report of the counters as they stand. Module statistics are included
    /// once the run has finished.
    pub fn report(&self) -> SimReport {
        SimReport::collect(self, self.module_stats.as_ref())
    }
}
