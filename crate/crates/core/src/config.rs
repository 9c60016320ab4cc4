//! Machine description: JSON parsing, defaults and topology validation.
//!
//! Parsing works on the JSON tree first. A complete default document is built
//! for the requested core count, the user document is merged over it, and the
//! result is deserialized into [`SystemConfig`] with every field present.
//! Keys the schema does not know are reported as warnings.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::memory::AccessType;

pub const DRAM_SINK: &str = "dram";
pub const PTW_SINK: &str = "ptw";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config key '{key}': {message}")]
    Type { key: String, message: String },
    #[error("config key '{key}': {message}")]
    Invalid { key: String, message: String },
    #[error("num_cores is {num_cores} but {listed} core entries were given")]
    CoreCountMismatch { num_cores: usize, listed: usize },
    #[error("duplicate cache node name '{0}'")]
    DuplicateNode(String),
    #[error("node '{node}' refers to unknown lower level '{target}'")]
    Dangling { node: String, target: String },
    #[error("cycle in hierarchy: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("TLB chain must sink at PTW: node '{0}' reaches dram")]
    TlbChainReachesDram(String),
    #[error("data chain must sink at dram: node '{0}' reaches ptw")]
    DataChainReachesPtw(String),
    #[error("core {core} {role} '{node}' must be a {expected} node")]
    KindMismatch {
        core: usize,
        role: &'static str,
        node: String,
        expected: &'static str,
    },
    #[error("unknown {family} module '{name}'")]
    UnknownModule { family: &'static str, name: String },
    #[error("node '{node}' is an L1I of cores with conflicting instruction prefetchers ('{first}' vs '{second}')")]
    InstructionPrefetcherConflict {
        node: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreConfig {
    /// MHz.
    pub frequency: u64,
    pub rob_size: usize,
    pub lq_size: usize,
    pub sq_size: usize,
    pub fetch_width: usize,
    pub decode_width: usize,
    pub execute_width: usize,
    pub retire_width: usize,
    pub mispredict_penalty: u64,
    pub arithmetic_latency: u64,
    /// Instructions that may wait between fetch and dispatch.
    pub ifetch_buffer_size: usize,
    pub ptw_rq_size: usize,
    pub ptw_mshr_size: usize,
    pub branch_predictor: String,
    pub btb: String,
    pub instruction_prefetcher: String,
    pub itlb: String,
    pub dtlb: String,
    pub l1i: String,
    pub l1d: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Cache,
    Tlb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheNodeConfig {
    pub name: String,
    pub kind: NodeKind,
    /// MHz. Defaults to the fastest core.
    pub frequency: u64,
    pub sets: usize,
    pub ways: usize,
    pub block_size: u64,
    pub hit_latency: u64,
    pub fill_latency: u64,
    pub rq_size: usize,
    pub wq_size: usize,
    pub pq_size: usize,
    pub mshr_size: usize,
    pub max_tag_lookups_per_cycle: usize,
    pub prefetch_as_fill_here: bool,
    pub prefetch_activate_on: Vec<AccessType>,
    pub lower_level: String,
    pub prefetcher: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DramConfig {
    pub channels: u64,
    pub ranks_per_channel: u64,
    pub banks_per_rank: u64,
    pub rows_per_bank: u64,
    pub columns_per_row: u64,
    pub block_size: u64,
    /// MHz.
    pub frequency: u64,
    #[serde(rename = "tRP")]
    pub t_rp: u64,
    #[serde(rename = "tRCD")]
    pub t_rcd: u64,
    #[serde(rename = "tCAS")]
    pub t_cas: u64,
    pub burst_cycles_per_block: u64,
    pub rq_size: usize,
    pub wq_size: usize,
}

impl DramConfig {
    pub fn capacity_bytes(&self) -> u64 {
        self.checked_capacity().unwrap_or(u64::MAX)
    }

    fn checked_capacity(&self) -> Option<u64> {
        [
            self.ranks_per_channel,
            self.banks_per_rank,
            self.rows_per_bank,
            self.columns_per_row,
            self.block_size,
        ]
        .into_iter()
        .try_fold(self.channels, u64::checked_mul)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_cores: usize,
    pub cores: Vec<CoreConfig>,
    pub caches: Vec<CacheNodeConfig>,
    pub dram: DramConfig,
    pub page_size: u64,
    pub pt_levels: u32,
    pub vm_seed: u64,
}

/// Where a node sends its misses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sink {
    Node(usize),
    Dram,
    /// The page table walker of the core that issued the request.
    Ptw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreNodes {
    pub itlb: usize,
    pub dtlb: usize,
    pub l1i: usize,
    pub l1d: usize,
}

/// Resolved hierarchy graph of a validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub lower: Vec<Sink>,
    pub cores: Vec<CoreNodes>,
    pub index: HashMap<String, usize>,
}

impl Topology {
    pub fn node(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

pub fn default_core(i: usize) -> Value {
    json!({
        "frequency": 4000,
        "rob_size": 256,
        "lq_size": 72,
        "sq_size": 56,
        "fetch_width": 4,
        "decode_width": 4,
        "execute_width": 4,
        "retire_width": 4,
        "mispredict_penalty": 20,
        "arithmetic_latency": 1,
        "ifetch_buffer_size": 64,
        "ptw_rq_size": 16,
        "ptw_mshr_size": 5,
        "branch_predictor": "gshare",
        "btb": "basic_btb",
        "instruction_prefetcher": "no",
        "itlb": format!("cpu{i}_ITLB"),
        "dtlb": format!("cpu{i}_DTLB"),
        "l1i": format!("cpu{i}_L1I"),
        "l1d": format!("cpu{i}_L1D"),
    })
}

/// Field defaults for a node of the given kind; `name` and `lower_level` still need filling.
pub fn default_node(kind: NodeKind, page_size: u64, frequency: u64) -> Map<String, Value> {
    let v = match kind {
        NodeKind::Cache => json!({
            "kind": "cache",
            "frequency": frequency,
            "sets": 64,
            "ways": 8,
            "block_size": 64,
            "hit_latency": 4,
            "fill_latency": 1,
            "lower_level": DRAM_SINK,
        }),
        NodeKind::Tlb => json!({
            "kind": "tlb",
            "frequency": frequency,
            "sets": 16,
            "ways": 4,
            "block_size": page_size,
            "hit_latency": 1,
            "fill_latency": 1,
            "lower_level": PTW_SINK,
        }),
    };
    let mut m = v.as_object().unwrap().clone();
    let common = json!({
        "rq_size": 32,
        "wq_size": 32,
        "pq_size": 32,
        "mshr_size": 16,
        "max_tag_lookups_per_cycle": 2,
        "prefetch_as_fill_here": true,
        "prefetch_activate_on": ["READ", "PREFETCH", "TRANSLATION"],
        "prefetcher": "no",
        "replacement": "lru",
    });
    m.extend(common.as_object().unwrap().clone());
    m
}

fn default_hierarchy(cores: &[Value], page_size: u64, frequency: u64) -> Vec<Value> {
    let n = cores.len() as u64;
    let mut nodes = Vec::new();
    let node = |kind, fields: Value| {
        let mut m = default_node(kind, page_size, frequency);
        m.extend(fields.as_object().unwrap().clone());
        Value::Object(m)
    };
    for (i, core) in cores.iter().enumerate() {
        let ipf = core
            .get("instruction_prefetcher")
            .cloned()
            .unwrap_or_else(|| json!("no"));
        nodes.push(node(NodeKind::Tlb, json!({"name": format!("cpu{i}_ITLB"), "lower_level": format!("cpu{i}_STLB")})));
        nodes.push(node(NodeKind::Tlb, json!({"name": format!("cpu{i}_DTLB"), "lower_level": format!("cpu{i}_STLB")})));
        nodes.push(node(
            NodeKind::Tlb,
            json!({"name": format!("cpu{i}_STLB"), "sets": 128, "ways": 12, "hit_latency": 8}),
        ));
        nodes.push(node(
            NodeKind::Cache,
            json!({"name": format!("cpu{i}_L1I"), "fill_latency": 4, "lower_level": format!("cpu{i}_L2C"), "prefetcher": ipf}),
        ));
        nodes.push(node(
            NodeKind::Cache,
            json!({"name": format!("cpu{i}_L1D"), "fill_latency": 4, "lower_level": format!("cpu{i}_L2C")}),
        ));
        nodes.push(node(
            NodeKind::Cache,
            json!({"name": format!("cpu{i}_L2C"), "sets": 1024, "hit_latency": 10, "lower_level": "LLC"}),
        ));
    }
    nodes.push(node(
        NodeKind::Cache,
        json!({"name": "LLC", "sets": 2048 * n, "ways": 16, "hit_latency": 20}),
    ));
    nodes
}

pub fn default_dram() -> Value {
    json!({
        "channels": 1,
        "ranks_per_channel": 1,
        "banks_per_rank": 8,
        "rows_per_bank": 65536,
        "columns_per_row": 128,
        "block_size": 64,
        "frequency": 1600,
        "tRP": 24,
        "tRCD": 24,
        "tCAS": 24,
        "burst_cycles_per_block": 4,
        "rq_size": 64,
        "wq_size": 64,
    })
}

/// Overlays the keys of `top` onto `base` (one level deep).
fn overlay(base: &Value, top: &Value) -> Value {
    let mut out = base.as_object().cloned().unwrap_or_default();
    if let Some(t) = top.as_object() {
        for (k, v) in t {
            out.insert(k.clone(), v.clone());
        }
    }
    Value::Object(out)
}

fn expect_object<'a>(v: &'a Value, key: &str) -> Result<&'a Map<String, Value>, ConfigError> {
    v.as_object().ok_or_else(|| ConfigError::Type {
        key: key.to_string(),
        message: "expected an object".into(),
    })
}

fn expect_array<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>, ConfigError> {
    v.as_array().ok_or_else(|| ConfigError::Type {
        key: key.to_string(),
        message: "expected an array".into(),
    })
}

fn expect_u64(v: &Value, key: &str) -> Result<u64, ConfigError> {
    v.as_u64().ok_or_else(|| ConfigError::Type {
        key: key.to_string(),
        message: "expected a non-negative integer".into(),
    })
}

/// Parses, defaults and validates a machine description. Warnings for unknown
/// keys are logged.
pub fn parse_config(text: &str) -> Result<SystemConfig, ConfigError> {
    let (cfg, warnings) = parse_config_with_warnings(text)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(cfg)
}

/// Like [`parse_config`] but returns the unknown-key warnings instead of logging them.
pub fn parse_config_with_warnings(text: &str) -> Result<(SystemConfig, Vec<String>), ConfigError> {
    let user: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let user_obj = expect_object(&user, "<root>")?;

    let listed = match user_obj.get("cores") {
        Some(c) => Some(expect_array(c, "cores")?.len()),
        None => None,
    };
    let num_cores = match user_obj.get("num_cores") {
        Some(v) => expect_u64(v, "num_cores")? as usize,
        None => listed.unwrap_or(1),
    };
    if num_cores == 0 {
        return Err(ConfigError::Invalid {
            key: "num_cores".into(),
            message: "must be >= 1".into(),
        });
    }
    if let Some(listed) = listed {
        if listed != num_cores {
            return Err(ConfigError::CoreCountMismatch { num_cores, listed });
        }
    }

    let user_cores = user_obj.get("cores").and_then(Value::as_array);
    let mut cores = Vec::with_capacity(num_cores);
    for i in 0..num_cores {
        let base = default_core(i);
        match user_cores.map(|c| &c[i]) {
            Some(entry) => {
                expect_object(entry, &format!("cores[{i}]"))?;
                cores.push(overlay(&base, entry));
            }
            None => cores.push(base),
        }
    }
    let max_freq = cores
        .iter()
        .filter_map(|c| c.get("frequency").and_then(Value::as_u64))
        .max()
        .unwrap_or(4000);
    let page_size = match user_obj.get("page_size") {
        Some(v) => expect_u64(v, "page_size")?,
        None => 4096,
    };

    let caches = match user_obj.get("caches") {
        Some(list) => {
            let list = expect_array(list, "caches")?;
            let mut out = Vec::with_capacity(list.len());
            for (i, entry) in list.iter().enumerate() {
                let obj = expect_object(entry, &format!("caches[{i}]"))?;
                let kind = match obj.get("kind") {
                    Some(Value::String(s)) if s == "tlb" => NodeKind::Tlb,
                    _ => NodeKind::Cache,
                };
                let mut base = default_node(kind, page_size, max_freq);
                // An L1I without an explicit prefetcher takes its core's instruction prefetcher.
                if let Some(Value::String(name)) = obj.get("name") {
                    if let Some(core) = cores.iter().find(|c| c.get("l1i") == Some(&json!(name))) {
                        if let Some(p) = core.get("instruction_prefetcher") {
                            base.insert("prefetcher".into(), p.clone());
                        }
                    }
                }
                out.push(overlay(&Value::Object(base), entry));
            }
            out
        }
        None => default_hierarchy(&cores, page_size, max_freq),
    };

    let dram = match user_obj.get("dram") {
        Some(d) => {
            expect_object(d, "dram")?;
            overlay(&default_dram(), d)
        }
        None => default_dram(),
    };

    let mut merged = user_obj.clone();
    merged.insert("num_cores".into(), json!(num_cores));
    merged.insert("cores".into(), Value::Array(cores));
    merged.insert("caches".into(), Value::Array(caches));
    merged.insert("dram".into(), dram);
    merged.entry("page_size").or_insert(json!(4096));
    merged.entry("pt_levels").or_insert(json!(4));
    merged.entry("vm_seed").or_insert(json!(0));

    let mut warnings = Vec::new();
    let mut on_unknown = |path: serde_ignored::Path| {
        warnings.push(format!("ignoring unknown config key '{path}'"));
    };
    let de = serde_ignored::Deserializer::new(Value::Object(merged), &mut on_unknown);
    let cfg: SystemConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Type {
        key: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok((cfg, warnings))
}

fn invalid(key: String, message: &str) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.to_string(),
    }
}

impl SystemConfig {
    /// The default machine with `num_cores` cores.
    pub fn default_for(num_cores: usize) -> SystemConfig {
        parse_config(&format!("{{\"num_cores\": {num_cores}}}")).expect("defaults are valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn node(&self, name: &str) -> Option<&CacheNodeConfig> {
        self.caches.iter().find(|n| n.name == name)
    }

    pub fn node_mut(&mut self, name: &str) -> Option<&mut CacheNodeConfig> {
        self.caches.iter_mut().find(|n| n.name == name)
    }

    /// Checks value ranges and the hierarchy graph.
    pub fn validate(&self) -> Result<Topology, ConfigError> {
        self.validate_values()?;
        self.validate_topology()
    }

    fn validate_values(&self) -> Result<(), ConfigError> {
        if self.num_cores != self.cores.len() {
            return Err(ConfigError::CoreCountMismatch {
                num_cores: self.num_cores,
                listed: self.cores.len(),
            });
        }
        for (i, c) in self.cores.iter().enumerate() {
            let sizes = [
                ("frequency", c.frequency as usize),
                ("rob_size", c.rob_size),
                ("lq_size", c.lq_size),
                ("sq_size", c.sq_size),
                ("fetch_width", c.fetch_width),
                ("decode_width", c.decode_width),
                ("execute_width", c.execute_width),
                ("retire_width", c.retire_width),
                ("arithmetic_latency", c.arithmetic_latency as usize),
                ("ifetch_buffer_size", c.ifetch_buffer_size),
                ("ptw_rq_size", c.ptw_rq_size),
                ("ptw_mshr_size", c.ptw_mshr_size),
            ];
            for (key, v) in sizes {
                if v == 0 {
                    return Err(invalid(format!("cores[{i}].{key}"), "must be >= 1"));
                }
            }
        }
        for (i, n) in self.caches.iter().enumerate() {
            let key = |f: &str| format!("caches[{i}].{f}");
            if n.name.is_empty() || n.name == DRAM_SINK || n.name == PTW_SINK {
                return Err(invalid(key("name"), "must be a non-empty, non-reserved name"));
            }
            let sizes = [
                ("frequency", n.frequency as usize),
                ("sets", n.sets),
                ("ways", n.ways),
                ("rq_size", n.rq_size),
                ("wq_size", n.wq_size),
                ("pq_size", n.pq_size),
                ("mshr_size", n.mshr_size),
                ("max_tag_lookups_per_cycle", n.max_tag_lookups_per_cycle),
            ];
            for (f, v) in sizes {
                if v == 0 {
                    return Err(invalid(key(f), "must be >= 1"));
                }
            }
            if !n.block_size.is_power_of_two() {
                return Err(invalid(key("block_size"), "must be a power of two"));
            }
            if n.kind == NodeKind::Tlb && n.block_size != self.page_size {
                return Err(invalid(key("block_size"), "a TLB block must equal page_size"));
            }
        }
        let d = &self.dram;
        let pow2 = [
            ("channels", d.channels),
            ("ranks_per_channel", d.ranks_per_channel),
            ("banks_per_rank", d.banks_per_rank),
            ("rows_per_bank", d.rows_per_bank),
            ("columns_per_row", d.columns_per_row),
            ("block_size", d.block_size),
        ];
        for (f, v) in pow2 {
            if !v.is_power_of_two() {
                return Err(invalid(format!("dram.{f}"), "must be a power of two"));
            }
        }
        let positive = [
            ("frequency", d.frequency),
            ("tRP", d.t_rp),
            ("tRCD", d.t_rcd),
            ("tCAS", d.t_cas),
            ("burst_cycles_per_block", d.burst_cycles_per_block),
            ("rq_size", d.rq_size as u64),
            ("wq_size", d.wq_size as u64),
        ];
        for (f, v) in positive {
            if v == 0 {
                return Err(invalid(format!("dram.{f}"), "must be >= 1"));
            }
        }
        if d.checked_capacity().is_none() {
            return Err(invalid("dram".into(), "capacity overflows"));
        }
        if !self.page_size.is_power_of_two() || self.page_size < d.block_size {
            return Err(invalid(
                "page_size".into(),
                "must be a power of two no smaller than a DRAM block",
            ));
        }
        if self.page_size > d.capacity_bytes() {
            return Err(invalid("page_size".into(), "exceeds DRAM capacity"));
        }
        if !(1..=4).contains(&self.pt_levels) {
            return Err(invalid("pt_levels".into(), "must be between 1 and 4"));
        }
        Ok(())
    }

    /// Resolves `lower_level` links and checks the sink rules.
    pub fn validate_topology(&self) -> Result<Topology, ConfigError> {
        let mut index = HashMap::new();
        for (i, n) in self.caches.iter().enumerate() {
            if index.insert(n.name.clone(), i).is_some() {
                return Err(ConfigError::DuplicateNode(n.name.clone()));
            }
        }
        let mut lower = Vec::with_capacity(self.caches.len());
        for n in &self.caches {
            lower.push(match n.lower_level.as_str() {
                DRAM_SINK => Sink::Dram,
                PTW_SINK => Sink::Ptw,
                other => Sink::Node(*index.get(other).ok_or_else(|| ConfigError::Dangling {
                    node: n.name.clone(),
                    target: other.to_string(),
                })?),
            });
        }

        // Follow every chain to its sink; a chain longer than the node count has a cycle.
        for (start, n) in self.caches.iter().enumerate() {
            let mut path = vec![n.name.clone()];
            let mut at = start;
            let sink = loop {
                match lower[at] {
                    Sink::Node(next) => {
                        path.push(self.caches[next].name.clone());
                        if next == start || path.len() > self.caches.len() + 1 {
                            return Err(ConfigError::Cycle(path));
                        }
                        at = next;
                    }
                    s => break s,
                }
            };
            match (n.kind, sink) {
                (NodeKind::Tlb, Sink::Dram) => {
                    return Err(ConfigError::TlbChainReachesDram(n.name.clone()))
                }
                (NodeKind::Cache, Sink::Ptw) => {
                    return Err(ConfigError::DataChainReachesPtw(n.name.clone()))
                }
                _ => {}
            }
        }

        let mut cores = Vec::with_capacity(self.cores.len());
        let mut l1i_prefetcher: BTreeMap<usize, &str> = BTreeMap::new();
        for (i, c) in self.cores.iter().enumerate() {
            let resolve = |role: &'static str, name: &str, kind: NodeKind| {
                let idx = *index.get(name).ok_or_else(|| ConfigError::Dangling {
                    node: format!("cores[{i}].{role}"),
                    target: name.to_string(),
                })?;
                if self.caches[idx].kind != kind {
                    return Err(ConfigError::KindMismatch {
                        core: i,
                        role,
                        node: name.to_string(),
                        expected: match kind {
                            NodeKind::Cache => "cache",
                            NodeKind::Tlb => "tlb",
                        },
                    });
                }
                Ok(idx)
            };
            let nodes = CoreNodes {
                itlb: resolve("itlb", &c.itlb, NodeKind::Tlb)?,
                dtlb: resolve("dtlb", &c.dtlb, NodeKind::Tlb)?,
                l1i: resolve("l1i", &c.l1i, NodeKind::Cache)?,
                l1d: resolve("l1d", &c.l1d, NodeKind::Cache)?,
            };
            let node = &self.caches[nodes.l1i];
            let bound = *l1i_prefetcher
                .entry(nodes.l1i)
                .or_insert(c.instruction_prefetcher.as_str());
            for other in [bound, node.prefetcher.as_str()] {
                if other != c.instruction_prefetcher {
                    return Err(ConfigError::InstructionPrefetcherConflict {
                        node: node.name.clone(),
                        first: other.to_string(),
                        second: c.instruction_prefetcher.clone(),
                    });
                }
            }
            cores.push(nodes);
        }
        Ok(Topology {
            lower,
            cores,
            index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_single_core_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg.num_cores, 1);
        let c = &cfg.cores[0];
        assert_eq!((c.frequency, c.rob_size, c.lq_size, c.sq_size), (4000, 256, 72, 56));
        assert_eq!(c.mispredict_penalty, 20);
        assert_eq!(cfg.caches.len(), 7);
        let l1d = cfg.node("cpu0_L1D").unwrap();
        assert_eq!(l1d.sets as u64 * l1d.ways as u64 * l1d.block_size, 32 * 1024);
        assert_eq!((l1d.hit_latency, l1d.fill_latency), (4, 4));
        let l2 = cfg.node("cpu0_L2C").unwrap();
        assert_eq!(l2.sets as u64 * l2.ways as u64 * l2.block_size, 512 * 1024);
        let llc = cfg.node("LLC").unwrap();
        assert_eq!(llc.sets as u64 * llc.ways as u64 * llc.block_size, 2 << 20);
        assert_eq!(llc.ways, 16);
        let stlb = cfg.node("cpu0_STLB").unwrap();
        assert_eq!(stlb.sets * stlb.ways, 1536);
        let dtlb = cfg.node("cpu0_DTLB").unwrap();
        assert_eq!((dtlb.sets * dtlb.ways, dtlb.ways), (64, 4));
        assert_eq!(cfg.dram.capacity_bytes(), 4 << 30);
        assert_eq!((cfg.page_size, cfg.pt_levels), (4096, 4));
    }

    #[test]
    fn two_cores_share_one_llc() {
        let cfg = parse_config(r#"{"num_cores":2}"#).unwrap();
        let topo = cfg.validate().unwrap();
        assert_eq!(cfg.cores.len(), 2);
        assert_eq!(cfg.cores[0].rob_size, cfg.cores[1].rob_size);
        let llc = topo.node("LLC").unwrap();
        for core in 0..2 {
            let l2 = topo.node(&format!("cpu{core}_L2C")).unwrap();
            assert_eq!(topo.lower[l2], Sink::Node(llc));
        }
        assert_eq!(cfg.node("LLC").unwrap().sets, 4096);
    }

    #[test]
    fn zero_rob_is_rejected() {
        let err = parse_config(r#"{"cores":[{"rob_size":0}]}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key.contains("rob_size")), "{err}");
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = parse_config("{\n  \"num_cores\": ,\n}").unwrap_err();
        assert!(matches!(err, ConfigError::Json { line: 2, .. }), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse_config(r#"{"cores":[{"rob_size":"big"}]}"#).unwrap_err();
        match err {
            ConfigError::Type { key, .. } => assert_eq!(key, "cores[0].rob_size"),
            other => panic!("{other}"),
        }
        let err = parse_config(r#"{"dram":{"tCAS":-1}}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Type { ref key, .. } if key == "dram.tCAS"), "{err}");
    }

    #[test]
    fn unknown_keys_warn() {
        let (_, warnings) =
            parse_config_with_warnings(r#"{"bogus":1,"cores":[{"turbo":true}],"dram":{"x":2}}"#).unwrap();
        assert_eq!(warnings.len(), 3, "{warnings:?}");
        assert!(warnings.iter().any(|w| w.contains("cores[0].turbo") || w.contains("cores.0.turbo")));
    }

    #[test]
    fn core_count_mismatch() {
        let err = parse_config(r#"{"num_cores":2,"cores":[{}]}"#).unwrap_err();
        assert_eq!(err, ConfigError::CoreCountMismatch { num_cores: 2, listed: 1 });
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        for text in ["{}", r#"{"num_cores":3,"dram":{"channels":2}}"#] {
            let a = parse_config(text).unwrap();
            let b = parse_config(&a.to_json()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.to_json(), b.to_json());
        }
    }

    fn with_lower(node: &str, lower: &str) -> Result<SystemConfig, ConfigError> {
        let mut cfg = SystemConfig::default_for(1);
        cfg.node_mut(node).unwrap().lower_level = lower.into();
        cfg.validate().map(|_| cfg)
    }

    #[test]
    fn tlb_to_dram_is_rejected() {
        let err = with_lower("cpu0_DTLB", "dram").unwrap_err();
        assert_eq!(err, ConfigError::TlbChainReachesDram("cpu0_DTLB".into()));
        assert!(err.to_string().contains("TLB chain must sink at PTW"));
    }

    #[test]
    fn data_to_ptw_is_rejected() {
        let err = with_lower("cpu0_L2C", "ptw").unwrap_err();
        assert!(matches!(err, ConfigError::DataChainReachesPtw(_)));
    }

    #[test]
    fn cycles_and_dangling_names() {
        let err = with_lower("LLC", "cpu0_L2C").unwrap_err();
        assert!(matches!(err, ConfigError::Cycle(_)), "{err}");
        let err = with_lower("LLC", "L4").unwrap_err();
        assert!(matches!(err, ConfigError::Dangling { .. }));
        let err = with_lower("LLC", "LLC").unwrap_err();
        assert!(matches!(err, ConfigError::Cycle(_)));
    }

    #[test]
    fn non_uniform_depth_is_accepted() {
        // core1's instruction side goes straight to the shared L2 of core0.
        let mut cfg = SystemConfig::default_for(2);
        cfg.node_mut("cpu1_L1I").unwrap().lower_level = "cpu0_L2C".into();
        cfg.node_mut("cpu1_L1D").unwrap().lower_level = "cpu0_L2C".into();
        cfg.caches.retain(|n| n.name != "cpu1_L2C");
        cfg.validate().unwrap();
    }

    #[test]
    fn core_roles_must_match_kinds() {
        let mut cfg = SystemConfig::default_for(1);
        cfg.cores[0].dtlb = "cpu0_L1D".into();
        assert!(matches!(cfg.validate(), Err(ConfigError::KindMismatch { .. })));
    }

    #[test]
    fn custom_cache_list_uses_kind_defaults() {
        let text = r#"{
            "caches": [
                {"name": "T", "kind": "tlb"},
                {"name": "C", "lower_level": "dram"}
            ],
            "cores": [{"itlb": "T", "dtlb": "T", "l1i": "C", "l1d": "C"}]
        }"#;
        let cfg = parse_config(text).unwrap();
        let t = cfg.node("T").unwrap();
        assert_eq!((t.lower_level.as_str(), t.block_size), ("ptw", 4096));
        assert_eq!(cfg.node("C").unwrap().block_size, 64);
    }

    #[test]
    fn instruction_prefetcher_follows_core() {
        let cfg = parse_config(r#"{"cores":[{"instruction_prefetcher":"next_line"}]}"#).unwrap();
        assert_eq!(cfg.node("cpu0_L1I").unwrap().prefetcher, "next_line");
        let mut bad = cfg.clone();
        bad.node_mut("cpu0_L1I").unwrap().prefetcher = "no".into();
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::InstructionPrefetcherConflict { .. })
        ));
    }

    #[test]
    fn dram_geometry_must_be_powers_of_two() {
        let err = parse_config(r#"{"dram":{"banks_per_rank":6}}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "dram.banks_per_rank"));
    }
}
