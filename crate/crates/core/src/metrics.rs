//! End-of-run report: derived ratios, flat JSON and a text summary.
//!
//! JSON keys are flat and dotted (`core0.ipc`, `node.LLC.READ.misses`,
//! `dram.row_hits`). A ratio whose denominator is zero is reported as 0 and
//! accompanied by `<key>.undefined: true`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde_json::Value;

use crate::config::{NodeKind, Sink};
use crate::cpu::CoreStats;
use crate::memory::{AccessType, CacheStats, DramStats, PtwStats};
use crate::modules::ModuleStat;
use crate::sim::Simulation;
use crate::trace::BranchClass;

/// A ratio that may be undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub defined: bool,
}

impl Ratio {
    pub fn new(num: f64, den: f64) -> Ratio {
        if den == 0.0 {
            Ratio {
                value: 0.0,
                defined: false,
            }
        } else {
            Ratio {
                value: num / den,
                defined: true,
            }
        }
    }

    pub fn of(num: u64, den: u64) -> Ratio {
        Ratio::new(num as f64, den as f64)
    }
}

/// Events per thousand instructions.
pub fn mpki(events: u64, instructions: u64) -> Ratio {
    Ratio::new(events as f64 * 1000.0, instructions as f64)
}

/// `final_stats` output of every module, in core and node order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModuleReport {
    /// `(branch predictor, btb)` per core.
    pub cores: Vec<(Vec<ModuleStat>, Vec<ModuleStat>)>,
    /// `(prefetcher, replacement)` per node.
    pub nodes: Vec<(Vec<ModuleStat>, Vec<ModuleStat>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreReport {
    pub stats: CoreStats,
    pub ptw: PtwStats,
    pub ipc: Ratio,
    pub branch_accuracy: Ratio,
    pub branch_mpki: Ratio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub name: String,
    pub kind: NodeKind,
    pub stats: CacheStats,
    /// Instructions retired by the cores whose requests can reach this node.
    pub instructions: u64,
    pub mpki: Ratio,
    pub prefetch_accuracy: Ratio,
    pub avg_miss_latency: Ratio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DramReport {
    pub stats: DramStats,
    pub row_hit_rate: Ratio,
    pub bus_busy_fraction: Ratio,
    pub avg_read_latency: Ratio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub cores: Vec<CoreReport>,
    pub nodes: Vec<NodeReport>,
    pub dram: DramReport,
    pub modules: Option<ModuleReport>,
}

impl SimReport {
    pub fn collect(sim: &Simulation, modules: Option<&ModuleReport>) -> SimReport {
        let mem = sim.memory();
        let topo = sim.topology();
        let cores: Vec<CoreReport> = sim
            .cores()
            .iter()
            .map(|c| {
                let s = c.stats().clone();
                let retire_width = c.config().retire_width as f64;
                let mut ipc = Ratio::of(s.instructions, s.cycles);
                ipc.value = ipc.value.min(retire_width);
                CoreReport {
                    ipc,
                    branch_accuracy: Ratio::of(
                        s.total_branches() - s.total_mispredictions(),
                        s.total_branches(),
                    ),
                    branch_mpki: mpki(s.total_mispredictions(), s.instructions),
                    ptw: mem.ptw(c.id()).stats().clone(),
                    stats: s,
                }
            })
            .collect();

        // which cores' requests can reach each node
        let mut reach: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); mem.node_count()];
        for (core, n) in topo.cores.iter().enumerate() {
            let mut stack = vec![n.itlb, n.dtlb, n.l1i, n.l1d];
            while let Some(i) = stack.pop() {
                if !reach[i].insert(core) {
                    continue;
                }
                match topo.lower[i] {
                    Sink::Node(j) => stack.push(j),
                    Sink::Ptw => stack.push(n.l1d),
                    Sink::Dram => {}
                }
            }
        }

        let nodes = mem
            .nodes()
            .enumerate()
            .map(|(i, n)| {
                let s = n.stats();
                let instructions = reach[i]
                    .iter()
                    .map(|&c| cores[c].stats.instructions)
                    .sum();
                NodeReport {
                    name: n.name().to_string(),
                    kind: n.config().kind,
                    instructions,
                    mpki: mpki(s.total_misses(), instructions),
                    prefetch_accuracy: Ratio::of(s.pf_useful, s.pf_useful + s.pf_useless),
                    avg_miss_latency: Ratio::of(s.miss_latency_cycles, s.completed_misses),
                    stats: s,
                }
            })
            .collect();

        let d = mem.dram().stats().clone();
        let channels = mem.dram().config().channels;
        let mut bus = Ratio::of(d.bus_busy_cycles, d.cycles * channels);
        bus.value = bus.value.min(1.0);
        let dram = DramReport {
            row_hit_rate: Ratio::of(d.row_hits, d.row_hits + d.row_misses),
            bus_busy_fraction: bus,
            avg_read_latency: Ratio::of(d.read_latency_cycles, d.reads),
            stats: d,
        };
        SimReport {
            cores,
            nodes,
            dram,
            modules: modules.cloned(),
        }
    }

    /// All report values under flat dotted keys.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut m = Flat::default();
        for (i, c) in self.cores.iter().enumerate() {
            let p = format!("core{i}");
            let s = &c.stats;
            m.int(&p, "instructions", s.instructions);
            m.int(&p, "cycles", s.cycles);
            m.ratio(&p, "ipc", c.ipc);
            m.int(&p, "loads", s.loads);
            m.int(&p, "stores", s.stores);
            m.int(&p, "dispatch_stall_cycles", s.dispatch_stall_cycles);
            m.int(&p, "fetch_stall_cycles", s.fetch_stall_cycles);
            m.int(&p, "branch.predictions", s.total_branches());
            m.int(&p, "branch.mispredictions", s.total_mispredictions());
            m.ratio(&p, "branch.accuracy", c.branch_accuracy);
            m.ratio(&p, "branch.mpki", c.branch_mpki);
            for class in BranchClass::ALL.into_iter().filter(|c| c.is_branch()) {
                let k = class as usize;
                let name = class.name();
                m.int(&p, &format!("branch.{name}.predictions"), s.branches[k]);
                m.int(&p, &format!("branch.{name}.mispredictions"), s.mispredictions[k]);
                m.ratio(&p, &format!("branch.{name}.mpki"), mpki(s.mispredictions[k], s.instructions));
            }
            m.int(&p, "ptw.walks", c.ptw.walks);
            m.int(&p, "ptw.walk_reads", c.ptw.walk_reads);
            m.int(&p, "ptw.merged", c.ptw.merged);
        }
        for n in &self.nodes {
            let p = format!("node.{}", n.name);
            let s = &n.stats;
            for t in AccessType::ALL {
                let k = t.index();
                m.int(&p, &format!("{}.hits", t.name()), s.hits[k]);
                m.int(&p, &format!("{}.misses", t.name()), s.misses[k]);
                m.int(&p, &format!("{}.accesses", t.name()), s.hits[k] + s.misses[k]);
            }
            m.int(&p, "hits", s.total_hits());
            m.int(&p, "misses", s.total_misses());
            m.int(&p, "instructions", n.instructions);
            m.ratio(&p, "mpki", n.mpki);
            m.int(&p, "mshr_merges", s.mshr_merges);
            m.int(&p, "fills", s.fills);
            m.int(&p, "bypasses", s.bypasses);
            m.int(&p, "writebacks", s.writebacks);
            m.int(&p, "stalls", s.stalls);
            m.int(&p, "rq_serviced", s.rq_serviced);
            m.int(&p, "wq_serviced", s.wq_serviced);
            m.int(&p, "pq_serviced", s.pq_serviced);
            m.int(&p, "cycles", s.cycles);
            m.ratio(&p, "avg_miss_latency", n.avg_miss_latency);
            m.int(&p, "prefetch.requested", s.pf_requested);
            m.int(&p, "prefetch.issued", s.pf_issued);
            m.int(&p, "prefetch.rejected", s.pf_rejected);
            m.int(&p, "prefetch.dropped", s.pf_dropped);
            m.int(&p, "prefetch.filled", s.pf_filled);
            m.int(&p, "prefetch.useful", s.pf_useful);
            m.int(&p, "prefetch.useless", s.pf_useless);
            m.int(&p, "prefetch.late", s.pf_late);
            m.ratio(&p, "prefetch.accuracy", n.prefetch_accuracy);
        }
        let d = &self.dram.stats;
        m.int("dram", "reads", d.reads);
        m.int("dram", "writes", d.writes);
        m.int("dram", "row_hits", d.row_hits);
        m.int("dram", "row_misses", d.row_misses);
        m.int("dram", "row_conflicts", d.row_conflicts);
        m.int("dram", "bus_busy_cycles", d.bus_busy_cycles);
        m.int("dram", "cycles", d.cycles);
        m.ratio("dram", "row_hit_rate", self.dram.row_hit_rate);
        m.ratio("dram", "bus_busy_fraction", self.dram.bus_busy_fraction);
        m.ratio("dram", "avg_read_latency", self.dram.avg_read_latency);
        if let Some(mods) = &self.modules {
            for (i, (bp, btb)) in mods.cores.iter().enumerate() {
                m.stats(&format!("module.core{i}.branch_predictor"), bp);
                m.stats(&format!("module.core{i}.btb"), btb);
            }
            for (n, (pf, repl)) in self.nodes.iter().zip(&mods.nodes) {
                m.stats(&format!("module.{}.prefetcher", n.name), pf);
                m.stats(&format!("module.{}.replacement", n.name), repl);
            }
        }
        m.0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_flat()).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.cores.iter().enumerate() {
            let s = &c.stats;
            let _ = writeln!(
                out,
                "core {i}: instructions {} cycles {} IPC {:.4}",
                s.instructions, s.cycles, c.ipc.value
            );
            let _ = writeln!(
                out,
                "core {i}: branches {} mispredictions {} accuracy {:.4} MPKI {:.4}",
                s.total_branches(),
                s.total_mispredictions(),
                c.branch_accuracy.value,
                c.branch_mpki.value
            );
            let _ = writeln!(
                out,
                "core {i}: page walks {} walk reads {}",
                c.ptw.walks, c.ptw.walk_reads
            );
        }
        for n in &self.nodes {
            let s = &n.stats;
            let _ = write!(out, "{:<12}", n.name);
            for t in AccessType::ALL {
                let k = t.index();
                let _ = write!(out, " {} {}/{}", t.name(), s.hits[k], s.misses[k]);
            }
            let _ = writeln!(
                out,
                " MPKI {:.4} avg miss latency {:.2}",
                n.mpki.value, n.avg_miss_latency.value
            );
            if s.pf_requested > 0 || s.pf_filled > 0 {
                let _ = writeln!(
                    out,
                    "{:<12} prefetch issued {} filled {} useful {} useless {} late {} accuracy {:.4}",
                    "",
                    s.pf_issued,
                    s.pf_filled,
                    s.pf_useful,
                    s.pf_useless,
                    s.pf_late,
                    n.prefetch_accuracy.value
                );
            }
        }
        let d = &self.dram.stats;
        let _ = writeln!(
            out,
            "DRAM: reads {} writes {} row hits {} row misses {} row conflicts {} bus busy {:.4}",
            d.reads,
            d.writes,
            d.row_hits,
            d.row_misses,
            d.row_conflicts,
            self.dram.bus_busy_fraction.value
        );
        if let Some(mods) = &self.modules {
            for (i, (bp, btb)) in mods.cores.iter().enumerate() {
                for st in bp.iter().chain(btb) {
                    let _ = writeln!(out, "core {i} module {}: {}", st.name, st.value);
                }
            }
            for (n, (pf, repl)) in self.nodes.iter().zip(&mods.nodes) {
                for st in pf.iter().chain(repl) {
                    let _ = writeln!(out, "{} module {}: {}", n.name, st.name, st.value);
                }
            }
        }
        out
    }
}

#[derive(Default)]
struct Flat(BTreeMap<String, Value>);

impl Flat {
    fn int(&mut self, prefix: &str, key: &str, v: u64) {
        self.0.insert(format!("{prefix}.{key}"), Value::from(v));
    }

    fn ratio(&mut self, prefix: &str, key: &str, r: Ratio) {
        let k = format!("{prefix}.{key}");
        if !r.defined {
            self.0.insert(format!("{k}.undefined"), Value::Bool(true));
        }
        self.0.insert(k, Value::from(r.value));
    }

    fn stats(&mut self, prefix: &str, stats: &[ModuleStat]) {
        for s in stats {
            let v = if s.value.is_finite() {
                Value::from(s.value)
            } else {
                Value::Null
            };
            self.0.insert(format!("{prefix}.{}", s.name), v);
        }
    }
}
