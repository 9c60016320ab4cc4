//! Trace-driven, cycle-level simulator for multicore processors.
//!
//! A machine is described by a JSON [`config::SystemConfig`]: cores, a graph
//! of cache and TLB nodes, and DRAM. Branch predictors, BTBs, prefetchers and
//! replacement policies are pluggable [`modules`] looked up by name in a
//! [`modules::ModuleRegistry`]. Each core replays one instruction trace.
//!
//! ```no_run
//! use tracesim::{config::SystemConfig, modules::ModuleRegistry, sim::Simulation};
//! use tracesim::trace::{synthetic::{generate_synthetic_trace, Pattern, SyntheticSpec}, VecSource};
//!
//! let trace = generate_synthetic_trace(&SyntheticSpec::new(Pattern::StreamingLoad, 10_000, 1)).unwrap();
//! let mut sim = Simulation::new(
//!     SystemConfig::default_for(1),
//!     &ModuleRegistry::with_reference_modules(),
//!     vec![Box::new(VecSource::looping(trace))],
//!     1_000,
//!     5_000,
//! )
//! .unwrap();
//! let report = sim.run().unwrap();
//! println!("{}", report.to_text());
//! ```

pub mod cli;
pub mod config;
pub mod cpu;
pub mod memory;
pub mod metrics;
pub mod modules;
pub mod sim;
pub mod trace;
