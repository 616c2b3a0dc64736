//! System configuration parsing and system generation. The CLI lives in
//! the binary; this module owns the file schema and the generated system
//! with its live capacity counters.

use crate::core::{CoreId, Error, KernelId, Result};
use crate::perfmon::CostModel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

fn default_stream_depth() -> usize {
    16
}

fn default_ssn_slots() -> usize {
    64
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CoreSpec {
    #[serde(rename = "processor", rename_all = "camelCase")]
    Processor {
        id: CoreId,
        dma_channels: u32,
        max_resident: u32,
    },
    #[serde(rename = "fabric_slot", rename_all = "camelCase")]
    FabricSlot {
        id: CoreId,
        area: u64,
        stream_ports: u32,
        block_ports: u32,
    },
}

impl CoreSpec {
    pub fn id(&self) -> CoreId {
        match self {
            CoreSpec::Processor { id, .. } => *id,
            CoreSpec::FabricSlot { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MemoryConfig {
    pub on_chip_words: usize,
    pub off_chip_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DefaultsConfig {
    #[serde(default = "default_stream_depth")]
    pub stream_depth: usize,
}

impl Default for DefaultsConfig {
    fn default() -> Self {
        Self {
            stream_depth: default_stream_depth(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SystemConfig {
    pub cores: Vec<CoreSpec>,
    pub memory: MemoryConfig,
    #[serde(default)]
    pub defaults: DefaultsConfig,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default = "default_ssn_slots")]
    pub ssn_stream_slots: usize,
    #[serde(default = "default_true")]
    pub interleaving: bool,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cores.is_empty() {
            return Err(Error::Semantic("at least one core is required".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.cores {
            if !seen.insert(c.id()) {
                return Err(Error::Semantic(format!("duplicate core id {}", c.id())));
            }
            match c {
                CoreSpec::Processor {
                    dma_channels,
                    max_resident,
                    ..
                } => {
                    if *dma_channels == 0 || *max_resident == 0 {
                        return Err(Error::Semantic(format!(
                            "processor {}: dmaChannels and maxResident must be positive",
                            c.id()
                        )));
                    }
                }
                CoreSpec::FabricSlot {
                    area,
                    stream_ports,
                    block_ports,
                    ..
                } => {
                    if *area == 0 || *stream_ports == 0 || *block_ports == 0 {
                        return Err(Error::Semantic(format!(
                            "fabric slot {}: area and port counts must be positive",
                            c.id()
                        )));
                    }
                }
            }
        }
        if self.ssn_stream_slots == 0 {
            return Err(Error::Semantic("ssnStreamSlots must be positive".into()));
        }
        if self.defaults.stream_depth == 0 {
            return Err(Error::Semantic("defaults.streamDepth must be positive".into()));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

pub fn parse_config(text: &str) -> Result<SystemConfig> {
    let cfg: SystemConfig =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Generated system with live capacity counters

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreKind {
    Processor,
    FabricSlot,
}

#[derive(Debug, Clone, Default)]
pub struct ResidentInfo {
    pub area: u64,
    pub finished: bool,
    pub dma_used: u32,
    pub stream_ports_used: u32,
    pub block_ports_used: u32,
}

#[derive(Debug, Clone)]
pub struct CoreState {
    pub id: CoreId,
    pub kind: CoreKind,
    pub dma_channels: u32,
    pub max_resident: u32,
    pub area: u64,
    pub stream_ports: u32,
    pub block_ports: u32,
    pub resident: BTreeMap<KernelId, ResidentInfo>,
}

impl CoreState {
    fn from_spec(spec: &CoreSpec) -> Self {
        match *spec {
            CoreSpec::Processor {
                id,
                dma_channels,
                max_resident,
            } => CoreState {
                id,
                kind: CoreKind::Processor,
                dma_channels,
                max_resident,
                area: 0,
                stream_ports: 0,
                block_ports: 0,
                resident: BTreeMap::new(),
            },
            CoreSpec::FabricSlot {
                id,
                area,
                stream_ports,
                block_ports,
            } => CoreState {
                id,
                kind: CoreKind::FabricSlot,
                dma_channels: 0,
                max_resident: 0,
                area,
                stream_ports,
                block_ports,
                resident: BTreeMap::new(),
            },
        }
    }

    /// Kernels currently occupying residency (finished HW kernels still
    /// hold fabric area until lazily evicted).
    pub fn active_count(&self) -> usize {
        self.resident.values().filter(|r| !r.finished).count()
    }

    pub fn dma_used(&self) -> u32 {
        self.resident.values().map(|r| r.dma_used).sum()
    }

    pub fn stream_ports_used(&self) -> u32 {
        self.resident.values().map(|r| r.stream_ports_used).sum()
    }

    pub fn block_ports_used(&self) -> u32 {
        self.resident.values().map(|r| r.block_ports_used).sum()
    }

    pub fn area_used(&self) -> u64 {
        self.resident.values().map(|r| r.area).sum()
    }

    pub fn free_area(&self) -> u64 {
        self.area - self.area_used()
    }

    /// Area reclaimable by evicting finished kernels.
    pub fn evictable_area(&self) -> u64 {
        self.resident
            .values()
            .filter(|r| r.finished)
            .map(|r| r.area)
            .sum()
    }
}

/// The instantiated system: live core states plus the pool parameters the
/// networks were generated from.
#[derive(Debug, Clone)]
pub struct System {
    pub cores: BTreeMap<CoreId, CoreState>,
    pub ssn_stream_slots: usize,
    pub on_chip_words: usize,
    pub off_chip_words: usize,
    pub default_stream_depth: usize,
    pub cost_model: CostModel,
    pub interleaving: bool,
}

pub fn generate_system(cfg: &SystemConfig) -> System {
    System {
        cores: cfg
            .cores
            .iter()
            .map(|c| (c.id(), CoreState::from_spec(c)))
            .collect(),
        ssn_stream_slots: cfg.ssn_stream_slots,
        on_chip_words: cfg.memory.on_chip_words,
        off_chip_words: cfg.memory.off_chip_words,
        default_stream_depth: cfg.defaults.stream_depth,
        cost_model: cfg.cost_model.clone(),
        interleaving: cfg.interleaving,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"cores":[{"id":0,"kind":"processor","dmaChannels":4,"maxResident":4}],
        "memory":{"onChipWords":16384,"offChipWords":1048576}}"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.cores.len(), 1);
        assert_eq!(cfg.defaults.stream_depth, 16);
        assert_eq!(cfg.ssn_stream_slots, 64);
        assert!(cfg.interleaving);
        assert_eq!(cfg.cost_model, CostModel::default());
    }

    #[test]
    fn mixed_processor_and_fabric_system_parses() {
        // multiple processors plus multiple fabric slots on shared networks
        let text = r#"{
          "cores":[
            {"id":0,"kind":"processor","dmaChannels":4,"maxResident":4},
            {"id":1,"kind":"processor","dmaChannels":2,"maxResident":2},
            {"id":2,"kind":"fabric_slot","area":100,"streamPorts":4,"blockPorts":2},
            {"id":3,"kind":"fabric_slot","area":60,"streamPorts":2,"blockPorts":2}
          ],
          "memory":{"onChipWords":8192,"offChipWords":1048576},
          "ssnStreamSlots":32
        }"#;
        let cfg = parse_config(text).unwrap();
        let sys = generate_system(&cfg);
        assert_eq!(sys.cores.len(), 4);
        assert_eq!(sys.cores[&2].kind, CoreKind::FabricSlot);
        assert_eq!(sys.cores[&2].area, 100);
        assert_eq!(sys.ssn_stream_slots, 32);
    }

    #[test]
    fn empty_cores_rejected() {
        let text = r#"{"cores":[],"memory":{"onChipWords":1,"offChipWords":1}}"#;
        assert!(matches!(parse_config(text), Err(Error::Semantic(_))));
    }

    #[test]
    fn duplicate_ids_and_zero_capacities_rejected() {
        let dup = r#"{"cores":[
            {"id":0,"kind":"processor","dmaChannels":4,"maxResident":4},
            {"id":0,"kind":"processor","dmaChannels":4,"maxResident":4}],
            "memory":{"onChipWords":1,"offChipWords":1}}"#;
        assert!(matches!(parse_config(dup), Err(Error::Semantic(_))));
        let zero = r#"{"cores":[{"id":0,"kind":"processor","dmaChannels":0,"maxResident":4}],
            "memory":{"onChipWords":1,"offChipWords":1}}"#;
        assert!(matches!(parse_config(zero), Err(Error::Semantic(_))));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_config("{"), Err(Error::Parse(_))));
        assert!(matches!(
            parse_config(r#"{"cores":[{"id":0,"kind":"gpu"}],"memory":{"onChipWords":1,"offChipWords":1}}"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn parse_render_identity() {
        let cfg = parse_config(MINIMAL).unwrap();
        let text = cfg.render();
        let cfg2 = parse_config(&text).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(cfg2.render(), text);
    }

    #[test]
    fn generation_is_pure_and_mirrors_config() {
        let cfg = parse_config(MINIMAL).unwrap();
        let a = generate_system(&cfg);
        let b = generate_system(&cfg);
        assert_eq!(a.cores.len(), b.cores.len());
        assert_eq!(a.on_chip_words, cfg.memory.on_chip_words);
        assert_eq!(a.off_chip_words, cfg.memory.off_chip_words);
        assert_eq!(a.default_stream_depth, cfg.defaults.stream_depth);
        for (id, core) in &a.cores {
            assert!(core.resident.is_empty());
            assert_eq!(core.id, *id);
        }
    }
}
