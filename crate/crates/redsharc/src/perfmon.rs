//! Event counting and trace emission in Analysis mode; strict no-op in
//! Release mode. Time is logical: it advances only through the cost model.

use crate::bsn::MemoryClass;
use crate::core::{Error, KernelId, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum EventKind {
    #[serde(rename = "PUSH")]
    Push,
    #[serde(rename = "POP")]
    Pop,
    #[serde(rename = "PEEK")]
    Peek,
    #[serde(rename = "BLOCK_READ")]
    BlockRead,
    #[serde(rename = "BLOCK_WRITE")]
    BlockWrite,
    #[serde(rename = "STALL")]
    Stall,
    #[serde(rename = "CONTEXT_SWITCH")]
    ContextSwitch,
    #[serde(rename = "RECONFIG")]
    Reconfig,
    #[serde(rename = "LAUNCH")]
    Launch,
    #[serde(rename = "FINISH")]
    Finish,
    #[serde(rename = "FREE")]
    Free,
    #[serde(rename = "CONFIGURE")]
    Configure,
}

pub const ALL_EVENT_KINDS: [EventKind; 12] = [
    EventKind::Push,
    EventKind::Pop,
    EventKind::Peek,
    EventKind::BlockRead,
    EventKind::BlockWrite,
    EventKind::Stall,
    EventKind::ContextSwitch,
    EventKind::Reconfig,
    EventKind::Launch,
    EventKind::Finish,
    EventKind::Free,
    EventKind::Configure,
];

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Push => "PUSH",
            EventKind::Pop => "POP",
            EventKind::Peek => "PEEK",
            EventKind::BlockRead => "BLOCK_READ",
            EventKind::BlockWrite => "BLOCK_WRITE",
            EventKind::Stall => "STALL",
            EventKind::ContextSwitch => "CONTEXT_SWITCH",
            EventKind::Reconfig => "RECONFIG",
            EventKind::Launch => "LAUNCH",
            EventKind::Finish => "FINISH",
            EventKind::Free => "FREE",
            EventKind::Configure => "CONFIGURE",
        }
    }
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub time: u64,
    pub kind: EventKind,
    pub kernel: Option<KernelId>,
    pub resource: Option<String>,
    #[serde(default)]
    pub detail: String,
}

/// Latencies in logical time units per instrumented point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CostModel {
    pub push: u64,
    pub pop: u64,
    pub peek: u64,
    pub block_on_chip: u64,
    pub block_off_chip: u64,
    pub context_switch: u64,
    pub reconfig: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            push: 1,
            pop: 1,
            peek: 1,
            block_on_chip: 1,
            block_off_chip: 10,
            context_switch: 5,
            reconfig: 1000,
        }
    }
}

impl CostModel {
    pub fn latency(&self, kind: EventKind, class: Option<MemoryClass>) -> u64 {
        match kind {
            EventKind::Push => self.push,
            EventKind::Pop => self.pop,
            EventKind::Peek => self.peek,
            EventKind::BlockRead | EventKind::BlockWrite => match class {
                Some(MemoryClass::OffChip) => self.block_off_chip,
                _ => self.block_on_chip,
            },
            EventKind::ContextSwitch => self.context_switch,
            EventKind::Reconfig => self.reconfig,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CounterSnapshot {
    pub totals: BTreeMap<EventKind, u64>,
    /// Per-resource breakdown, keyed by the rendered resource name.
    pub per_resource: BTreeMap<String, BTreeMap<EventKind, u64>>,
}

impl CounterSnapshot {
    pub fn total(&self, kind: EventKind) -> u64 {
        self.totals.get(&kind).copied().unwrap_or(0)
    }

    pub fn for_resource(&self, resource: &str, kind: EventKind) -> u64 {
        self.per_resource
            .get(resource)
            .and_then(|m| m.get(&kind))
            .copied()
            .unwrap_or(0)
    }

    pub fn all_zero(&self) -> bool {
        self.totals.values().all(|v| *v == 0)
    }
}

/// Analysis-mode recorder; constructed as a no-op for Release runs.
pub struct Recorder {
    enabled: bool,
    cost: CostModel,
    trace: Vec<TraceEvent>,
    counters: CounterSnapshot,
    seq: u64,
    time: u64,
}

impl Recorder {
    pub fn analysis(cost: CostModel) -> Self {
        Self {
            enabled: true,
            cost,
            trace: Vec::new(),
            counters: CounterSnapshot::default(),
            seq: 0,
            time: 0,
        }
    }

    pub fn release() -> Self {
        Self {
            enabled: false,
            cost: CostModel::default(),
            trace: Vec::new(),
            counters: CounterSnapshot::default(),
            seq: 0,
            time: 0,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(
        &mut self,
        kind: EventKind,
        kernel: Option<KernelId>,
        resource: Option<String>,
        detail: impl Into<String>,
        class: Option<MemoryClass>,
    ) {
        if !self.enabled {
            return;
        }
        self.time += self.cost.latency(kind, class);
        let ev = TraceEvent {
            seq: self.seq,
            time: self.time,
            kind,
            kernel,
            resource,
            detail: detail.into(),
        };
        self.seq += 1;
        *self.counters.totals.entry(kind).or_insert(0) += 1;
        if let Some(r) = &ev.resource {
            *self
                .counters
                .per_resource
                .entry(r.clone())
                .or_default()
                .entry(kind)
                .or_insert(0) += 1;
        }
        self.trace.push(ev);
    }

    pub fn snapshot_counters(&self) -> CounterSnapshot {
        self.counters.clone()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn now(&self) -> u64 {
        self.time
    }

    pub fn export_jsonl(&self, sink: &mut impl Write) -> Result<()> {
        for ev in &self.trace {
            let line =
                serde_json::to_string(ev).map_err(|e| Error::Io(format!("trace encode: {e}")))?;
            writeln!(sink, "{line}").map_err(|e| Error::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn export_csv(&self, sink: &mut impl Write) -> Result<()> {
        writeln!(sink, "seq,time,kind,kernel,resource,detail")
            .map_err(|e| Error::Io(e.to_string()))?;
        for ev in &self.trace {
            let kernel = ev.kernel.map(|k| k.to_string()).unwrap_or_default();
            let resource = ev.resource.clone().unwrap_or_default();
            writeln!(
                sink,
                "{},{},{},{},{},{}",
                ev.seq, ev.time, ev.kind, kernel, resource, ev.detail
            )
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TraceEvent>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(format!("trace line: {e}"))))
        .collect()
}
