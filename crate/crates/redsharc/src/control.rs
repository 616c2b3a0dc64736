//! The control kernel: configures BSN/SSN connections for a validated DFG,
//! schedules and launches worker kernels per the scheduling policy, frees
//! resources when both endpoints have finished, models partial
//! reconfiguration of fabric slots, and exposes pause/inspect debugging.
//!
//! Kernel tasks run under a deterministic cooperative engine: each task
//! executes on its own thread but exactly one runs at a time; a task hands
//! the baton back to the engine whenever it blocks on a stream or yields.
//! Runnable tasks are dispatched round-robin in ascending kernel id order.

use crate::bsn::{AllocHint, Bsn};
use crate::core::{
    BlockId, CoreId, Element, Error, KernelId, KernelLifecycle, PortIndex, Result, StreamId,
    ENV_KERNEL,
};
use crate::dfg::{Dfg, PortKind};
use crate::kernelapi::{
    EngineMsg, HwControlReg, KernelImpl, KernelKind, Registry, TaskCtx, TaskData, WaitReason,
};
use crate::perfmon::{CounterSnapshot, EventKind, Recorder, TraceEvent};
use crate::ssn::{ChannelSide, Endpoint, Ssn, StreamState};
use crate::sysio::{CoreKind, System, SystemConfig};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Analysis,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Deadlock,
    Error,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Completed => "COMPLETED",
            Outcome::Deadlock => "DEADLOCK",
            Outcome::Error => "ERROR",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub final_states: BTreeMap<KernelId, KernelLifecycle>,
    pub counters: CounterSnapshot,
    pub diagnostics: Vec<String>,
    /// Terminal stream captures, keyed by (producer kernel, output port).
    pub outputs: BTreeMap<(KernelId, PortIndex), Vec<Element>>,
    /// Full pushed sequence of every declared stream output.
    pub stream_history: BTreeMap<(KernelId, PortIndex), Vec<Element>>,
    pub streams_created: usize,
    pub streams_freed: usize,
    pub blocks_allocated: usize,
    pub blocks_freed: usize,
    pub on_chip_used: usize,
    pub off_chip_used: usize,
}

// ---------------------------------------------------------------------------
// Shared runtime state (networks, recorder, lifecycles)

pub struct Shared {
    pub ssn: Ssn,
    pub bsn: Bsn,
    pub recorder: Recorder,
    pub states: BTreeMap<KernelId, KernelLifecycle>,
    pub debug_status: BTreeMap<KernelId, u32>,
}

impl Shared {
    fn stream_res(s: StreamId) -> String {
        format!("stream:{s}")
    }

    fn block_res(b: BlockId) -> String {
        format!("block:{b}")
    }

    pub(crate) fn push_stream(&mut self, k: KernelId, s: StreamId, e: Element) -> Result<bool> {
        let accepted = self.ssn.try_push(k, s, e)?;
        if accepted {
            self.recorder
                .record(EventKind::Push, Some(k), Some(Self::stream_res(s)), "", None);
        }
        Ok(accepted)
    }

    pub(crate) fn pop_stream(&mut self, k: KernelId, s: StreamId) -> Result<Option<Element>> {
        let got = self.ssn.try_pop(k, s)?;
        if got.is_some() {
            self.recorder
                .record(EventKind::Pop, Some(k), Some(Self::stream_res(s)), "", None);
        }
        Ok(got)
    }

    pub(crate) fn peek_stream(&mut self, k: KernelId, s: StreamId) -> Result<Option<Element>> {
        let got = self.ssn.try_peek(k, s)?;
        if got.is_some() {
            self.recorder
                .record(EventKind::Peek, Some(k), Some(Self::stream_res(s)), "", None);
        }
        Ok(got)
    }

    pub(crate) fn write_block(
        &mut self,
        k: KernelId,
        b: BlockId,
        index: usize,
        e: Element,
    ) -> Result<()> {
        let class = self.bsn.write(Some(k), b, index, e)?;
        self.recorder.record(
            EventKind::BlockWrite,
            Some(k),
            Some(Self::block_res(b)),
            "",
            Some(class),
        );
        Ok(())
    }

    pub(crate) fn read_block(&mut self, k: KernelId, b: BlockId, index: usize) -> Result<Element> {
        let (e, class) = self.bsn.read(Some(k), b, index)?;
        self.recorder.record(
            EventKind::BlockRead,
            Some(k),
            Some(Self::block_res(b)),
            "",
            Some(class),
        );
        Ok(e)
    }

    /// Move data through shared physical channels and drain terminal
    /// streams into their capture logs (accounted as environment pops).
    fn pump_and_drain(&mut self) {
        self.ssn.pump_channels();
        for (s, n) in self.ssn.drain_terminals() {
            for _ in 0..n {
                self.recorder
                    .record(EventKind::Pop, None, Some(Self::stream_res(s)), "env", None);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scheduling policies

#[derive(Debug, Clone, Copy)]
pub struct ReadyKernel {
    pub id: KernelId,
    pub kind: KernelKind,
    pub area: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct CoreAvail {
    pub id: CoreId,
    pub kind: CoreKind,
    /// Processor residency slots still open.
    pub free_residency: u32,
    /// Slot area available counting lazily evictable finished kernels.
    pub free_area: u64,
}

impl CoreAvail {
    pub fn accepts(&self, k: &ReadyKernel) -> bool {
        match (k.kind, self.kind) {
            (KernelKind::Sw, CoreKind::Processor) => self.free_residency > 0,
            (KernelKind::Hw, CoreKind::FabricSlot) => self.free_area >= k.area,
            _ => false,
        }
    }
}

pub trait SchedulingPolicy {
    fn name(&self) -> &str;
    /// Assign ready kernels to available cores; each kernel and each core
    /// at most once per call.
    fn decide(
        &self,
        ready: &[ReadyKernel],
        cores: &[CoreAvail],
        g: &Dfg,
    ) -> Vec<(KernelId, CoreId)>;
}

struct FifoPolicy;

impl SchedulingPolicy for FifoPolicy {
    fn name(&self) -> &str {
        "fifo"
    }

    fn decide(
        &self,
        ready: &[ReadyKernel],
        cores: &[CoreAvail],
        _g: &Dfg,
    ) -> Vec<(KernelId, CoreId)> {
        let mut used = BTreeSet::new();
        let mut out = Vec::new();
        for rk in ready {
            if let Some(c) = cores
                .iter()
                .find(|c| !used.contains(&c.id) && c.accepts(rk))
            {
                used.insert(c.id);
                out.push((rk.id, c.id));
            }
        }
        out
    }
}

struct StaticPolicy {
    map: BTreeMap<KernelId, CoreId>,
}

impl SchedulingPolicy for StaticPolicy {
    fn name(&self) -> &str {
        "static"
    }

    fn decide(
        &self,
        ready: &[ReadyKernel],
        cores: &[CoreAvail],
        _g: &Dfg,
    ) -> Vec<(KernelId, CoreId)> {
        let mut used = BTreeSet::new();
        let mut out = Vec::new();
        for rk in ready {
            let Some(target) = self.map.get(&rk.id) else {
                continue;
            };
            if used.contains(target) {
                continue;
            }
            if let Some(c) = cores.iter().find(|c| c.id == *target) {
                if c.accepts(rk) {
                    used.insert(c.id);
                    out.push((rk.id, c.id));
                }
            }
        }
        out
    }
}

pub fn policy_fifo() -> Box<dyn SchedulingPolicy> {
    Box::new(FifoPolicy)
}

pub fn policy_static(map: BTreeMap<KernelId, CoreId>) -> Box<dyn SchedulingPolicy> {
    Box::new(StaticPolicy { map })
}

// ---------------------------------------------------------------------------
// Ready-set computation

/// A kernel is ready when it is not yet configured, all of its block
/// producers have finished, and each of its stream producers is launched
/// or becomes ready in the same pass (co-launch closure for pipelines).
/// Result is in ascending kernel id order.
pub fn compute_ready_set(g: &Dfg, states: &BTreeMap<KernelId, KernelLifecycle>) -> Vec<KernelId> {
    let mut ready: BTreeSet<KernelId> = BTreeSet::new();
    loop {
        let mut changed = false;
        for node in g.nodes() {
            let k = node.kernel;
            if ready.contains(&k) {
                continue;
            }
            let st = states
                .get(&k)
                .copied()
                .unwrap_or(KernelLifecycle::Pending);
            if st > KernelLifecycle::Ready {
                continue;
            }
            let blocks_ok = g.block_producers(k).iter().all(|p| {
                states.get(p).copied() == Some(KernelLifecycle::Finished)
            });
            let streams_ok = g.stream_producers(k).iter().all(|p| {
                let ps = states
                    .get(p)
                    .copied()
                    .unwrap_or(KernelLifecycle::Pending);
                ps >= KernelLifecycle::Ready || ready.contains(p)
            });
            if blocks_ok && streams_ok {
                ready.insert(k);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    ready.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Controller

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResourceId {
    Stream(StreamId),
    Block(BlockId),
}

struct Task {
    resume_tx: Option<Sender<()>>,
    join: Option<JoinHandle<()>>,
    /// None means runnable; Some(reason) means suspended on that condition.
    wait: Option<WaitReason>,
    core: CoreId,
    data: TaskData,
}

const ENGINE_RECV_TIMEOUT: Duration = Duration::from_secs(30);

pub struct Controller {
    dfg: Dfg,
    impls: BTreeMap<KernelId, Arc<KernelImpl>>,
    sys: System,
    policy: Box<dyn SchedulingPolicy>,
    shared: Arc<Mutex<Shared>>,
    engine_tx: Sender<EngineMsg>,
    engine_rx: Receiver<EngineMsg>,
    tasks: BTreeMap<KernelId, Task>,
    resources: BTreeMap<(KernelId, PortIndex), ResourceId>,
    outcome: Option<Outcome>,
    diagnostics: Vec<String>,
    paused: bool,
    stopped: BTreeSet<KernelId>,
    last_dispatched: Option<KernelId>,
    next_phys_port: PortIndex,
}

impl Controller {
    pub fn new(
        sys: System,
        dfg: Dfg,
        registry: &Registry,
        policy: Box<dyn SchedulingPolicy>,
        mode: RunMode,
    ) -> Result<Self> {
        let diags = dfg.validate(|name| registry.resolve(name).is_some());
        if !diags.is_empty() {
            let joined: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
            return Err(Error::Semantic(joined.join("; ")));
        }
        let mut impls = BTreeMap::new();
        for node in dfg.nodes() {
            impls.insert(
                node.kernel,
                registry.resolve(&node.impl_ref).expect("validated above"),
            );
        }
        Self::check_config_fit(&sys, &dfg, &impls)?;
        let recorder = match mode {
            RunMode::Analysis => Recorder::analysis(sys.cost_model.clone()),
            RunMode::Release => Recorder::release(),
        };
        let shared = Shared {
            ssn: Ssn::new(sys.ssn_stream_slots, sys.default_stream_depth),
            bsn: Bsn::new(sys.on_chip_words, sys.off_chip_words),
            recorder,
            states: dfg
                .kernel_ids()
                .map(|k| (k, KernelLifecycle::Pending))
                .collect(),
            debug_status: BTreeMap::new(),
        };
        let (engine_tx, engine_rx) = channel();
        Ok(Self {
            dfg,
            impls,
            sys,
            policy,
            shared: Arc::new(Mutex::new(shared)),
            engine_tx,
            engine_rx,
            tasks: BTreeMap::new(),
            resources: BTreeMap::new(),
            outcome: None,
            diagnostics: Vec::new(),
            paused: false,
            stopped: BTreeSet::new(),
            last_dispatched: None,
            next_phys_port: 0,
        })
    }

    /// Every kernel must have at least one core that could ever host it.
    fn check_config_fit(
        sys: &System,
        dfg: &Dfg,
        impls: &BTreeMap<KernelId, Arc<KernelImpl>>,
    ) -> Result<()> {
        for node in dfg.nodes() {
            let imp = &impls[&node.kernel];
            let stream_endpoints = node
                .inputs
                .iter()
                .flatten()
                .filter(|b| b.kind == PortKind::Stream)
                .count()
                + node
                    .outputs
                    .iter()
                    .flatten()
                    .filter(|o| o.kind == PortKind::Stream)
                    .count();
            let block_endpoints = node
                .inputs
                .iter()
                .flatten()
                .filter(|b| b.kind == PortKind::Block)
                .count()
                + node
                    .outputs
                    .iter()
                    .flatten()
                    .filter(|o| o.kind == PortKind::Block)
                    .count();
            let fits = sys.cores.values().any(|c| match (imp.kind, c.kind) {
                (KernelKind::Sw, CoreKind::Processor) => {
                    let cap = c.dma_channels as usize;
                    if sys.interleaving {
                        stream_endpoints == 0 || cap >= 1
                    } else {
                        stream_endpoints <= cap
                    }
                }
                (KernelKind::Hw, CoreKind::FabricSlot) => {
                    let scap = c.stream_ports as usize;
                    let bcap = c.block_ports as usize;
                    let streams_ok = if sys.interleaving {
                        stream_endpoints == 0 || scap >= 1
                    } else {
                        stream_endpoints <= scap
                    };
                    let blocks_ok = block_endpoints == 0 || bcap >= 1;
                    c.area >= imp.area && streams_ok && blocks_ok
                }
                _ => false,
            });
            if !fits {
                return Err(Error::ConfigMismatch(format!(
                    "kernel {} ({}) fits no core: needs {} stream / {} block endpoints{}",
                    node.kernel,
                    node.impl_ref,
                    stream_endpoints,
                    block_endpoints,
                    if imp.kind == KernelKind::Hw {
                        format!(", area {}", imp.area)
                    } else {
                        String::new()
                    }
                )));
            }
        }
        Ok(())
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn policy_name(&self) -> &str {
        self.policy.name()
    }

    pub fn kernel_state(&self, k: KernelId) -> Option<KernelLifecycle> {
        self.shared.lock().unwrap().states.get(&k).copied()
    }

    // -- resource configuration ----------------------------------------------

    fn ensure_resource(&mut self, producer: KernelId, port: PortIndex) -> Result<ResourceId> {
        if let Some(r) = self.resources.get(&(producer, port)) {
            return Ok(*r);
        }
        let decl = self
            .dfg
            .node(producer)
            .and_then(|n| n.outputs.get(port as usize).copied().flatten())
            .expect("validated graph has all outputs declared");
        let consumers = self.dfg.consumers_of(producer, port);
        let mut st = self.shared.lock().unwrap();
        let r = match decl.kind {
            PortKind::Stream => {
                let depth = decl.depth.unwrap_or(self.sys.default_stream_depth);
                let s = st.ssn.create_stream(decl.elem_type, depth)?;
                let cons_ep = match consumers.as_slice() {
                    [] => Endpoint::consumer(ENV_KERNEL, 0),
                    [(ck, cp)] => Endpoint::consumer(*ck, *cp),
                    _ => unreachable!("validated: at most one stream consumer"),
                };
                let states = st.states.clone();
                st.ssn
                    .route_stream(s, Endpoint::producer(producer, port), cons_ep, &states)?;
                ResourceId::Stream(s)
            }
            PortKind::Block => {
                let b = st.bsn.alloc_block(decl.elem_type, decl.length, AllocHint::Auto)?;
                st.bsn.add_endpoint(b, producer)?;
                st.bsn.grant_access(b, producer)?;
                for (ck, _) in &consumers {
                    st.bsn.add_endpoint(b, *ck)?;
                }
                ResourceId::Block(b)
            }
        };
        drop(st);
        self.resources.insert((producer, port), r);
        Ok(r)
    }

    /// Configure streams/blocks for kernel `k` on core `c`, account port
    /// usage (with logical-over-physical interleaving when endpoints exceed
    /// the core's channels), place it, and launch its task.
    fn configure_and_launch(&mut self, k: KernelId, core_id: CoreId) -> Result<()> {
        let node = self.dfg.node(k).expect("scheduled kernel exists").clone();
        let imp = self.impls[&k].clone();
        let core = self
            .sys
            .cores
            .get(&core_id)
            .ok_or(Error::Semantic(format!("no core {core_id}")))?;

        // compatibility and residency/area capacity
        match (imp.kind, core.kind) {
            (KernelKind::Sw, CoreKind::Processor) => {
                if core.active_count() as u32 >= core.max_resident {
                    return Err(Error::NoCapacity(format!(
                        "processor {core_id} is at maxResident"
                    )));
                }
            }
            (KernelKind::Hw, CoreKind::FabricSlot) => {
                if core.free_area() + core.evictable_area() < imp.area {
                    return Err(Error::NoCapacity(format!(
                        "slot {core_id} lacks area for kernel {k}"
                    )));
                }
            }
            _ => {
                return Err(Error::IncompatibleCore(format!(
                    "kernel {k} ({:?}) cannot run on core {core_id} ({:?})",
                    imp.kind, core.kind
                )))
            }
        }

        // resources, in port order: inputs then outputs
        let mut stream_ids = Vec::new();
        let mut stream_lengths = Vec::new();
        let mut block_ids = Vec::new();
        let mut block_lengths = Vec::new();
        let mut produced = Vec::new();
        let mut consumed = Vec::new();
        for b in node.inputs.iter().flatten() {
            let len = self
                .dfg
                .node(b.producer)
                .and_then(|n| n.outputs.get(b.producer_port as usize).copied().flatten())
                .map(|o| o.length)
                .unwrap_or(0);
            match self.ensure_resource(b.producer, b.producer_port)? {
                ResourceId::Stream(s) => {
                    stream_ids.push(s);
                    stream_lengths.push(len);
                    consumed.push(s);
                }
                ResourceId::Block(bid) => {
                    block_ids.push(bid);
                    block_lengths.push(len);
                    self.shared.lock().unwrap().bsn.grant_access(bid, k)?;
                }
            }
        }
        let stream_inputs = stream_ids.len();
        let block_inputs = block_ids.len();
        for (port, decl) in node
            .outputs
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.map(|o| (i, o)))
        {
            match self.ensure_resource(k, port as PortIndex)? {
                ResourceId::Stream(s) => {
                    stream_ids.push(s);
                    stream_lengths.push(decl.length);
                    produced.push(s);
                }
                ResourceId::Block(bid) => {
                    block_ids.push(bid);
                    block_lengths.push(decl.length);
                }
            }
        }

        // port accounting and interleaving
        let core = self.sys.cores.get(&core_id).unwrap();
        let stream_cap = match core.kind {
            CoreKind::Processor => core.dma_channels,
            CoreKind::FabricSlot => core.stream_ports,
        };
        let free = stream_cap.saturating_sub(core.stream_ports_used());
        let n_prod = produced.len() as u32;
        let n_cons = consumed.len() as u32;
        let total = n_prod + n_cons;
        let mut bindings: Vec<(ChannelSide, Vec<StreamId>)> = Vec::new();
        let ports_used = if total <= free {
            total
        } else {
            if !self.sys.interleaving {
                // config fit guarantees total <= cap, so the shortage comes
                // from currently resident kernels: defer, do not fail
                return Err(Error::NoCapacity(format!(
                    "kernel {k} needs {total} stream endpoints but core {core_id} has {free} free channels"
                )));
            }
            let sides_needed = (n_prod > 0) as u32 + (n_cons > 0) as u32;
            if free < sides_needed {
                if stream_cap >= sides_needed {
                    // enough capacity once resident kernels release channels
                    return Err(Error::NoCapacity(format!(
                        "kernel {k}: no free channel per direction on core {core_id} yet"
                    )));
                }
                return Err(Error::PortLimit(format!(
                    "kernel {k}: core {core_id} cannot ever offer one channel per direction"
                )));
            }
            let prod_ports = if n_prod == 0 {
                0
            } else {
                n_prod.min((free - (n_cons > 0) as u32).max(1))
            };
            let cons_ports = if n_cons == 0 {
                0
            } else {
                n_cons.min(free - prod_ports)
            };
            if n_prod > prod_ports {
                let keep = (prod_ports - 1) as usize;
                bindings.push((ChannelSide::Producer, produced[keep..].to_vec()));
            }
            if n_cons > cons_ports {
                let keep = (cons_ports - 1) as usize;
                bindings.push((ChannelSide::Consumer, consumed[keep..].to_vec()));
            }
            prod_ports + cons_ports
        };
        let block_needed = block_ids.len() as u32;
        let block_cap = match core.kind {
            CoreKind::Processor => u32::MAX, // block access rides the RTOS DMA pointers
            CoreKind::FabricSlot => core.block_ports,
        };
        let bfree = block_cap.saturating_sub(core.block_ports_used());
        if block_needed > 0 && bfree == 0 {
            // block ports are validated positive per slot: resident kernels
            // hold them all right now, so defer rather than fail
            return Err(Error::NoCapacity(format!(
                "kernel {k}: no block ports free on core {core_id} yet"
            )));
        }
        let block_ports_used = block_needed.min(bfree);

        for (side, logical) in bindings {
            let port = self.next_phys_port;
            self.next_phys_port += 1;
            self.shared
                .lock()
                .unwrap()
                .ssn
                .bind_logical_channels(core_id, port, side, logical)?;
        }

        // placement: evict finished HW kernels lazily when area is needed
        let mut evicted = Vec::new();
        let already_resident;
        {
            let core = self.sys.cores.get_mut(&core_id).unwrap();
            already_resident = core.resident.contains_key(&k);
            if imp.kind == KernelKind::Hw && !already_resident {
                while core.free_area() < imp.area {
                    let victim = core
                        .resident
                        .iter()
                        .find(|(_, r)| r.finished)
                        .map(|(id, _)| *id)
                        .expect("capacity was checked with evictable area");
                    core.resident.remove(&victim);
                    evicted.push(victim);
                }
            }
            let entry = core.resident.entry(k).or_default();
            entry.area = if imp.kind == KernelKind::Hw { imp.area } else { 0 };
            entry.finished = false;
            entry.stream_ports_used = ports_used;
            entry.block_ports_used = block_ports_used;
        }

        // events + lifecycle + task spawn
        let data = TaskData {
            streams: stream_ids,
            stream_lengths,
            stream_inputs,
            blocks: block_ids,
            block_lengths,
            block_inputs,
        };
        {
            let mut st = self.shared.lock().unwrap();
            st.states.insert(k, KernelLifecycle::Configured);
            st.recorder.record(
                EventKind::Configure,
                Some(k),
                Some(format!("core:{core_id}")),
                format!(
                    "streams:{} blocks:{} ports:{} bports:{}",
                    data.streams.len(),
                    data.blocks.len(),
                    ports_used,
                    block_ports_used
                ),
                None,
            );
            if imp.kind == KernelKind::Hw && !already_resident {
                let ev_list: Vec<String> = evicted.iter().map(|e| e.to_string()).collect();
                st.recorder.record(
                    EventKind::Reconfig,
                    Some(k),
                    Some(format!("core:{core_id}")),
                    format!("area:{} evicted:{}", imp.area, ev_list.join("|")),
                    None,
                );
            }
            st.states.insert(k, KernelLifecycle::Running);
            st.recorder.record(
                EventKind::Launch,
                Some(k),
                Some(format!("core:{core_id}")),
                format!("area:{}", if imp.kind == KernelKind::Hw { imp.area } else { 0 }),
                None,
            );
        }
        self.spawn_task(k, core_id, data);
        Ok(())
    }

    fn spawn_task(&mut self, k: KernelId, core_id: CoreId, data: TaskData) {
        let (resume_tx, resume_rx) = channel();
        let mut ctx = TaskCtx {
            kernel: k,
            data: data.clone(),
            shared: Arc::clone(&self.shared),
            resume_rx,
            yield_tx: self.engine_tx.clone(),
            finished: false,
        };
        let body = self.impls[&k].body.clone();
        let join = std::thread::Builder::new()
            .name(format!("kernel-{k}"))
            .spawn(move || {
                // wait for the first dispatch
                if ctx.resume_rx.recv().is_err() {
                    return;
                }
                match body(&mut ctx) {
                    Ok(()) => {
                        if !ctx.finished {
                            // body forgot to notify; treat the return as the
                            // finish notification
                            let _ = ctx.yield_tx.send(EngineMsg::Finished { kernel: ctx.kernel });
                            let _ = ctx.resume_rx.recv();
                        }
                    }
                    Err(Error::Aborted) => {}
                    Err(error) => {
                        let _ = ctx.yield_tx.send(EngineMsg::Failed {
                            kernel: ctx.kernel,
                            error,
                        });
                        let _ = ctx.resume_rx.recv();
                    }
                }
            })
            .expect("spawn kernel task");
        self.tasks.insert(
            k,
            Task {
                resume_tx: Some(resume_tx),
                join: Some(join),
                wait: None,
                core: core_id,
                data,
            },
        );
    }

    // -- completion and resource freeing -------------------------------------

    fn on_kernel_finished(&mut self, k: KernelId) {
        {
            let mut st = self.shared.lock().unwrap();
            st.states.insert(k, KernelLifecycle::Finished);
            st.recorder.record(EventKind::Finish, Some(k), None, "", None);
        }
        if let Some(task) = self.tasks.get_mut(&k) {
            task.resume_tx = None; // release the parked thread
            if let Some(j) = task.join.take() {
                let _ = j.join();
            }
            let core_id = task.core;
            if let Some(core) = self.sys.cores.get_mut(&core_id) {
                match core.kind {
                    CoreKind::Processor => {
                        core.resident.remove(&k);
                    }
                    CoreKind::FabricSlot => {
                        if let Some(r) = core.resident.get_mut(&k) {
                            // area is held until lazy eviction; communication
                            // resources return immediately
                            r.finished = true;
                            r.stream_ports_used = 0;
                            r.block_ports_used = 0;
                        }
                    }
                }
            }
        }
        self.stopped.remove(&k);
        self.free_completed_resources();
    }

    /// Free every stream/block whose producer and consumers have all
    /// finished (§ resource-freeing rule: FREE only after all FINISHes).
    fn free_completed_resources(&mut self) {
        let mut st = self.shared.lock().unwrap();
        st.pump_and_drain();
        let states = st.states.clone();
        let finished = |k: KernelId| {
            k == ENV_KERNEL || states.get(&k).copied() == Some(KernelLifecycle::Finished)
        };
        let stream_ids: Vec<StreamId> = st.ssn.stream_ids().collect();
        for s in stream_ids {
            let d = st.ssn.descriptor(s).unwrap();
            if d.state == StreamState::Freed || d.state == StreamState::Unrouted {
                continue;
            }
            let done = d
                .producer
                .iter()
                .chain(d.consumer.iter())
                .all(|ep| finished(ep.kernel));
            if done {
                st.ssn.free_stream(s, &states).unwrap();
                st.recorder
                    .record(EventKind::Free, None, Some(Shared::stream_res(s)), "", None);
            }
        }
        let block_ids: Vec<BlockId> = st.bsn.block_ids().collect();
        for b in block_ids {
            let d = st.bsn.descriptor(b).unwrap();
            if d.state != crate::bsn::BlockState::Allocated {
                continue;
            }
            let done = d.endpoints().all(finished);
            if done {
                st.bsn.free_block(b, &states).unwrap();
                st.recorder
                    .record(EventKind::Free, None, Some(Shared::block_res(b)), "", None);
            }
        }
    }

    // -- dispatch -------------------------------------------------------------

    fn wait_satisfied(&self, shared: &Shared, wait: Option<WaitReason>) -> bool {
        match wait {
            None | Some(WaitReason::Explicit) => true,
            Some(WaitReason::StreamSpace(s)) => shared.ssn.can_push(s),
            Some(WaitReason::StreamData(s)) => shared.ssn.can_pop(s),
        }
    }

    fn dispatch_one(&mut self, k: KernelId) {
        if self.last_dispatched != Some(k) {
            self.shared.lock().unwrap().recorder.record(
                EventKind::ContextSwitch,
                Some(k),
                None,
                "dispatch",
                None,
            );
        }
        self.last_dispatched = Some(k);
        let Some(tx) = self.tasks.get(&k).and_then(|t| t.resume_tx.clone()) else {
            return;
        };
        if tx.send(()).is_err() {
            return;
        }
        // drop our clone immediately: joining a finished task requires the
        // task's resume channel to close, and this clone would keep it open
        drop(tx);
        loop {
            let msg = match self.engine_rx.recv_timeout(ENGINE_RECV_TIMEOUT) {
                Ok(m) => m,
                Err(_) => {
                    self.diagnostics
                        .push(format!("kernel {k} did not yield within the engine timeout"));
                    self.outcome = Some(Outcome::Error);
                    return;
                }
            };
            match msg {
                EngineMsg::Yield { kernel, reason } if kernel == k => {
                    match reason {
                        WaitReason::Explicit => {
                            let mut st = self.shared.lock().unwrap();
                            st.recorder.record(
                                EventKind::ContextSwitch,
                                Some(k),
                                None,
                                "yield",
                                None,
                            );
                            drop(st);
                            self.tasks.get_mut(&k).unwrap().wait = None;
                        }
                        WaitReason::StreamSpace(s) | WaitReason::StreamData(s) => {
                            let mut st = self.shared.lock().unwrap();
                            st.recorder.record(
                                EventKind::Stall,
                                Some(k),
                                Some(Shared::stream_res(s)),
                                "",
                                None,
                            );
                            drop(st);
                            self.tasks.get_mut(&k).unwrap().wait = Some(reason);
                        }
                    }
                    break;
                }
                EngineMsg::Finished { kernel } if kernel == k => {
                    self.on_kernel_finished(k);
                    break;
                }
                EngineMsg::Failed { kernel, error } if kernel == k => {
                    self.diagnostics
                        .push(format!("kernel {kernel} failed: {error}"));
                    if let Some(task) = self.tasks.get_mut(&k) {
                        task.resume_tx = None;
                        if let Some(j) = task.join.take() {
                            let _ = j.join();
                        }
                    }
                    self.outcome = Some(Outcome::Error);
                    break;
                }
                // stray message from a task that already finished (e.g. a
                // body that kept calling the API after notify)
                EngineMsg::Failed { kernel, error } => {
                    self.diagnostics
                        .push(format!("kernel {kernel} (finished) reported: {error}"));
                }
                EngineMsg::Yield { kernel, .. } | EngineMsg::Finished { kernel } => {
                    self.diagnostics
                        .push(format!("unexpected message from kernel {kernel}"));
                }
            }
        }
        self.shared.lock().unwrap().pump_and_drain();
    }

    fn core_avails(&self) -> Vec<CoreAvail> {
        self.sys
            .cores
            .values()
            .map(|c| CoreAvail {
                id: c.id,
                kind: c.kind,
                free_residency: match c.kind {
                    CoreKind::Processor => c.max_resident - c.active_count() as u32,
                    CoreKind::FabricSlot => 0,
                },
                free_area: match c.kind {
                    CoreKind::FabricSlot => c.free_area() + c.evictable_area(),
                    CoreKind::Processor => 0,
                },
            })
            .collect()
    }

    fn ready_info(&self, ready: &[KernelId]) -> Vec<ReadyKernel> {
        ready
            .iter()
            .map(|k| {
                let imp = &self.impls[k];
                ReadyKernel {
                    id: *k,
                    kind: imp.kind,
                    area: imp.area,
                }
            })
            .collect()
    }

    /// One scheduler + dispatch pass. Returns true when anything changed
    /// (a launch, a task step, or a finish).
    pub fn step(&mut self) -> bool {
        if self.outcome.is_some() {
            return false;
        }
        let mut progress = false;

        // scheduling pass
        let states = self.shared.lock().unwrap().states.clone();
        let ready = compute_ready_set(&self.dfg, &states);
        {
            let mut st = self.shared.lock().unwrap();
            for k in &ready {
                if st.states.get(k).copied() == Some(KernelLifecycle::Pending) {
                    st.states.insert(*k, KernelLifecycle::Ready);
                }
            }
        }
        let assignments = self
            .policy
            .decide(&self.ready_info(&ready), &self.core_avails(), &self.dfg);
        let mut assigned_kernels = BTreeSet::new();
        let mut assigned_cores = BTreeSet::new();
        for (k, c) in assignments {
            if !ready.contains(&k) || !assigned_kernels.insert(k) || !assigned_cores.insert(c) {
                self.diagnostics
                    .push(format!("policy returned invalid assignment ({k}, {c}); ignored"));
                continue;
            }
            match self.configure_and_launch(k, c) {
                Ok(()) => progress = true,
                Err(Error::NoCapacity(_)) => {} // defer to a later pass
                Err(e) => {
                    self.diagnostics
                        .push(format!("configuring kernel {k} on core {c}: {e}"));
                    self.outcome = Some(Outcome::Error);
                    return true;
                }
            }
        }

        // dispatch pass, ascending kernel id
        self.shared.lock().unwrap().pump_and_drain();
        let runnable: Vec<KernelId> = {
            let st = self.shared.lock().unwrap();
            self.tasks
                .iter()
                .filter(|(k, t)| {
                    st.states.get(k).copied() == Some(KernelLifecycle::Running)
                        && !self.stopped.contains(k)
                        && t.resume_tx.is_some()
                        && self.wait_satisfied(&st, t.wait)
                })
                .map(|(k, _)| *k)
                .collect()
        };
        for k in runnable {
            if self.outcome.is_some() {
                return true;
            }
            if self.shared.lock().unwrap().states.get(&k).copied()
                != Some(KernelLifecycle::Running)
            {
                continue;
            }
            self.dispatch_one(k);
            progress = true;
        }

        // completion / deadlock
        let st = self.shared.lock().unwrap();
        let all_finished = self
            .dfg
            .kernel_ids()
            .all(|k| st.states.get(&k).copied() == Some(KernelLifecycle::Finished));
        drop(st);
        if self.outcome.is_none() {
            if all_finished {
                self.free_completed_resources();
                self.outcome = Some(Outcome::Completed);
            } else if !progress {
                self.note_deadlock_diagnostics(&ready);
                self.outcome = Some(Outcome::Deadlock);
            }
        }
        progress
    }

    fn note_deadlock_diagnostics(&mut self, ready: &[KernelId]) {
        let st = self.shared.lock().unwrap();
        for k in ready {
            if st.states.get(k).copied() == Some(KernelLifecycle::Ready) {
                self.diagnostics.push(format!(
                    "kernel {k} starved: ready but never assigned a core"
                ));
            }
        }
        for (k, t) in &self.tasks {
            if st.states.get(k).copied() == Some(KernelLifecycle::Running) {
                match t.wait {
                    Some(WaitReason::StreamSpace(s)) => self
                        .diagnostics
                        .push(format!("kernel {k} blocked pushing to full stream {s}")),
                    Some(WaitReason::StreamData(s)) => self
                        .diagnostics
                        .push(format!("kernel {k} blocked popping from empty stream {s}")),
                    _ => {
                        if self.stopped.contains(k) {
                            self.diagnostics.push(format!("kernel {k} is stopped"));
                        }
                    }
                }
            }
        }
    }

    /// True when no task can run, no ready kernel can be placed, and at
    /// least one kernel has not finished.
    pub fn detect_deadlock(&self) -> bool {
        if self.outcome == Some(Outcome::Deadlock) {
            return true;
        }
        if self.outcome.is_some() {
            return false;
        }
        let st = self.shared.lock().unwrap();
        let any_unfinished = self
            .dfg
            .kernel_ids()
            .any(|k| st.states.get(&k).copied() != Some(KernelLifecycle::Finished));
        if !any_unfinished {
            return false;
        }
        let any_runnable = self.tasks.iter().any(|(k, t)| {
            st.states.get(k).copied() == Some(KernelLifecycle::Running)
                && !self.stopped.contains(k)
                && t.resume_tx.is_some()
                && self.wait_satisfied(&st, t.wait)
        });
        if any_runnable {
            return false;
        }
        let states = st.states.clone();
        drop(st);
        let ready = compute_ready_set(&self.dfg, &states);
        let assignments =
            self.policy
                .decide(&self.ready_info(&ready), &self.core_avails(), &self.dfg);
        assignments.is_empty()
    }

    pub fn run(&mut self) -> RunReport {
        while self.outcome.is_none() && !self.paused {
            self.step();
        }
        self.report()
    }

    pub fn run_steps(&mut self, n: usize) {
        for _ in 0..n {
            if self.outcome.is_some() {
                break;
            }
            self.step();
        }
    }

    // -- pause / debug --------------------------------------------------------

    pub fn pause_all(&mut self) -> Result<()> {
        if self.outcome.is_some() {
            return Err(Error::NotRunning);
        }
        self.paused = true;
        Ok(())
    }

    pub fn resume(&mut self) -> Result<()> {
        if !self.paused {
            return Err(Error::NotRunning);
        }
        self.paused = false;
        Ok(())
    }

    fn require_paused(&self) -> Result<()> {
        if self.paused {
            Ok(())
        } else {
            Err(Error::NotPaused)
        }
    }

    pub fn debug_peek_stream(&self, s: StreamId) -> Result<Vec<Element>> {
        self.require_paused()?;
        self.shared.lock().unwrap().ssn.debug_peek(s)
    }

    pub fn debug_read_block(&self, b: BlockId, index: usize) -> Result<Element> {
        self.require_paused()?;
        Ok(self.shared.lock().unwrap().bsn.read(None, b, index)?.0)
    }

    pub fn block_elem_type(&self, b: BlockId) -> Result<crate::core::ElementType> {
        self.shared
            .lock()
            .unwrap()
            .bsn
            .descriptor(b)
            .map(|d| d.elem_type)
    }

    pub fn debug_write_block(&self, b: BlockId, index: usize, e: Element) -> Result<()> {
        self.require_paused()?;
        self.shared.lock().unwrap().bsn.write(None, b, index, e)?;
        Ok(())
    }

    /// Console `status` rendering: one line per kernel, stream, and block.
    pub fn status_lines(&self) -> Vec<String> {
        let st = self.shared.lock().unwrap();
        let mut out = Vec::new();
        for (k, s) in &st.states {
            out.push(format!("kernel {k} state={s}"));
        }
        for s in st.ssn.stream_ids() {
            out.push(st.ssn.render(s).unwrap());
        }
        for b in st.bsn.block_ids() {
            out.push(st.bsn.render(b).unwrap());
        }
        out
    }

    // -- HWKI control registers ----------------------------------------------

    fn require_hw_resident(&self, k: KernelId) -> Result<CoreId> {
        let imp = self.impls.get(&k).ok_or(Error::NotResident(k))?;
        if imp.kind != KernelKind::Hw {
            return Err(Error::NotResident(k));
        }
        self.tasks
            .get(&k)
            .map(|t| t.core)
            .filter(|c| {
                self.sys
                    .cores
                    .get(c)
                    .map(|core| core.resident.contains_key(&k))
                    .unwrap_or(false)
            })
            .ok_or(Error::NotResident(k))
    }

    pub fn hw_write_control(&mut self, k: KernelId, reg: HwControlReg) -> Result<()> {
        let core_id = self.require_hw_resident(k)?;
        match reg {
            HwControlReg::Stop => {
                self.stopped.insert(k);
            }
            HwControlReg::Start => {
                self.stopped.remove(&k);
                let state = self.kernel_state(k);
                if state == Some(KernelLifecycle::Configured) {
                    // restart after RESET: respawn the body fresh; the slot
                    // residency is unchanged so no RECONFIG is charged
                    let data = self.tasks.get(&k).map(|t| t.data.clone()).unwrap_or_default();
                    {
                        let mut st = self.shared.lock().unwrap();
                        st.states.insert(k, KernelLifecycle::Running);
                        st.recorder.record(
                            EventKind::Launch,
                            Some(k),
                            Some(format!("core:{core_id}")),
                            "restart",
                            None,
                        );
                    }
                    self.spawn_task(k, core_id, data);
                }
            }
            HwControlReg::Reset => {
                if let Some(task) = self.tasks.get_mut(&k) {
                    task.resume_tx = None; // abort the running body
                    if let Some(j) = task.join.take() {
                        let _ = j.join();
                    }
                    task.wait = None;
                }
                let mut st = self.shared.lock().unwrap();
                st.states.insert(k, KernelLifecycle::Configured);
                st.debug_status.remove(&k);
            }
        }
        Ok(())
    }

    pub fn hw_read_status(&self, k: KernelId) -> Result<u32> {
        self.require_hw_resident(k)?;
        let st = self.shared.lock().unwrap();
        let state = st
            .states
            .get(&k)
            .copied()
            .unwrap_or(KernelLifecycle::Pending);
        let debug = st.debug_status.get(&k).copied().unwrap_or(0);
        Ok(crate::kernelapi::encode_status(state, debug))
    }

    // -- reporting -------------------------------------------------------------

    pub fn trace(&self) -> Vec<TraceEvent> {
        self.shared.lock().unwrap().recorder.trace().to_vec()
    }

    pub fn export_trace_jsonl(&self, sink: &mut impl std::io::Write) -> Result<()> {
        self.shared.lock().unwrap().recorder.export_jsonl(sink)
    }

    pub fn export_trace_csv(&self, sink: &mut impl std::io::Write) -> Result<()> {
        self.shared.lock().unwrap().recorder.export_csv(sink)
    }

    pub fn report(&self) -> RunReport {
        let st = self.shared.lock().unwrap();
        let mut outputs = BTreeMap::new();
        let mut stream_history = BTreeMap::new();
        for ((producer, port), r) in &self.resources {
            if let ResourceId::Stream(s) = r {
                let d = st.ssn.descriptor(*s).unwrap();
                stream_history.insert((*producer, *port), d.history().to_vec());
                if d.is_terminal() {
                    outputs.insert((*producer, *port), st.ssn.capture(*s).to_vec());
                }
            }
        }
        RunReport {
            outcome: self.outcome.unwrap_or(Outcome::Error),
            final_states: st.states.clone(),
            counters: st.recorder.snapshot_counters(),
            diagnostics: self.diagnostics.clone(),
            outputs,
            stream_history,
            streams_created: st.ssn.created_count(),
            streams_freed: st.ssn.freed_count(),
            blocks_allocated: st.bsn.allocated_count(),
            blocks_freed: st.bsn.freed_count(),
            on_chip_used: st.bsn.on_chip_used(),
            off_chip_used: st.bsn.off_chip_used(),
        }
    }
}

impl Drop for Controller {
    fn drop(&mut self) {
        for task in self.tasks.values_mut() {
            task.resume_tx = None;
            if let Some(j) = task.join.take() {
                let _ = j.join();
            }
        }
    }
}

/// Generate the system from `cfg` and drive the graph to completion.
pub fn run_system(
    cfg: &SystemConfig,
    dfg: Dfg,
    registry: &Registry,
    policy: Box<dyn SchedulingPolicy>,
    mode: RunMode,
) -> Result<RunReport> {
    let sys = crate::sysio::generate_system(cfg);
    let mut ctl = Controller::new(sys, dfg, registry, policy, mode)?;
    Ok(ctl.run())
}
