//! Stream switch network: a runtime-reconfigurable crossbar of bounded
//! FIFOs carrying element streams between kernel endpoints.

use crate::core::{
    CoreId, Element, ElementType, Error, KernelId, KernelLifecycle, PortIndex, Result, StreamId,
    ENV_KERNEL,
};
use crate::kernelapi::PhysicalChannel;
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Producer,
    Consumer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub kernel: KernelId,
    pub port: PortIndex,
    pub direction: Direction,
}

impl Endpoint {
    pub fn producer(kernel: KernelId, port: PortIndex) -> Self {
        Self {
            kernel,
            port,
            direction: Direction::Producer,
        }
    }

    pub fn consumer(kernel: KernelId, port: PortIndex) -> Self {
        Self {
            kernel,
            port,
            direction: Direction::Consumer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamState {
    Unrouted,
    Routed,
    Active,
    Freed,
}

impl std::fmt::Display for StreamState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StreamState::Unrouted => "UNROUTED",
            StreamState::Routed => "ROUTED",
            StreamState::Active => "ACTIVE",
            StreamState::Freed => "FREED",
        };
        f.write_str(s)
    }
}

pub struct StreamDescriptor {
    pub id: StreamId,
    pub elem_type: ElementType,
    pub depth: usize,
    pub producer: Option<Endpoint>,
    pub consumer: Option<Endpoint>,
    pub state: StreamState,
    buffer: VecDeque<Element>,
    /// Full pushed sequence, kept for determinism audits and terminal capture.
    history: Vec<Element>,
}

impl StreamDescriptor {
    pub fn occupancy(&self) -> usize {
        self.buffer.len()
    }

    pub fn history(&self) -> &[Element] {
        &self.history
    }

    /// Consumed by the environment rather than a kernel.
    pub fn is_terminal(&self) -> bool {
        matches!(self.consumer, Some(ep) if ep.kernel == ENV_KERNEL)
    }
}

/// Side of the stream a shared physical channel sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelSide {
    Producer,
    Consumer,
}

pub struct Ssn {
    streams: BTreeMap<StreamId, StreamDescriptor>,
    next_id: StreamId,
    slots_total: usize,
    slots_free: usize,
    created: usize,
    freed: usize,
    default_depth: usize,
    channels: Vec<(ChannelSide, PhysicalChannel)>,
    /// stream -> index into `channels`, per side.
    prod_binding: BTreeMap<StreamId, usize>,
    cons_binding: BTreeMap<StreamId, usize>,
    /// Elements drained from terminal streams, per stream.
    captures: BTreeMap<StreamId, Vec<Element>>,
}

impl Ssn {
    pub fn new(slots: usize, default_depth: usize) -> Self {
        Self {
            streams: BTreeMap::new(),
            next_id: 0,
            slots_total: slots,
            slots_free: slots,
            created: 0,
            freed: 0,
            default_depth: default_depth.max(1),
            channels: Vec::new(),
            prod_binding: BTreeMap::new(),
            cons_binding: BTreeMap::new(),
            captures: BTreeMap::new(),
        }
    }

    pub fn default_depth(&self) -> usize {
        self.default_depth
    }

    pub fn slots_free(&self) -> usize {
        self.slots_free
    }

    pub fn created_count(&self) -> usize {
        self.created
    }

    pub fn freed_count(&self) -> usize {
        self.freed
    }

    pub fn create_stream(&mut self, t: ElementType, depth: usize) -> Result<StreamId> {
        if depth == 0 {
            return Err(Error::Semantic("stream depth must be at least 1".into()));
        }
        if self.slots_free == 0 {
            return Err(Error::CapacityExhausted(format!(
                "all {} SSN stream slots are in use",
                self.slots_total
            )));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.slots_free -= 1;
        self.created += 1;
        self.streams.insert(
            id,
            StreamDescriptor {
                id,
                elem_type: t,
                depth,
                producer: None,
                consumer: None,
                state: StreamState::Unrouted,
                buffer: VecDeque::new(),
                history: Vec::new(),
            },
        );
        Ok(id)
    }

    pub fn descriptor(&self, s: StreamId) -> Result<&StreamDescriptor> {
        self.streams.get(&s).ok_or(Error::UnknownStream(s))
    }

    fn descriptor_mut(&mut self, s: StreamId) -> Result<&mut StreamDescriptor> {
        self.streams.get_mut(&s).ok_or(Error::UnknownStream(s))
    }

    pub fn stream_ids(&self) -> impl Iterator<Item = StreamId> + '_ {
        self.streams.keys().copied()
    }

    pub fn route_stream(
        &mut self,
        s: StreamId,
        p: Endpoint,
        c: Endpoint,
        states: &BTreeMap<KernelId, KernelLifecycle>,
    ) -> Result<()> {
        if p.direction != Direction::Producer || c.direction != Direction::Consumer {
            return Err(Error::IllegalRoute(format!(
                "stream {s}: endpoints must be one producer and one consumer"
            )));
        }
        let finished = |k: KernelId| {
            k == ENV_KERNEL
                || states.get(&k).copied() == Some(KernelLifecycle::Finished)
        };
        let d = self.descriptor_mut(s)?;
        match d.state {
            StreamState::Unrouted => {}
            StreamState::Routed | StreamState::Active => {
                let prior_done = d
                    .producer
                    .iter()
                    .chain(d.consumer.iter())
                    .all(|ep| finished(ep.kernel));
                if !prior_done {
                    return Err(Error::Busy(format!(
                        "stream {s}: prior endpoints have not finished"
                    )));
                }
                // reclaimed crossbar path: start fresh for the new pair
                d.buffer.clear();
                d.history.clear();
            }
            StreamState::Freed => {
                return Err(Error::IllegalRoute(format!("stream {s} has been freed")))
            }
        }
        d.producer = Some(p);
        d.consumer = Some(c);
        d.state = StreamState::Routed;
        Ok(())
    }

    fn check_io_state(d: &StreamDescriptor) -> Result<()> {
        match d.state {
            StreamState::Routed | StreamState::Active => Ok(()),
            other => Err(Error::IllegalRoute(format!(
                "stream {} is {other} and cannot move data",
                d.id
            ))),
        }
    }

    /// Non-blocking push attempt. `Ok(true)` means the element was accepted
    /// (into the buffer or the producer-side staging queue); `Ok(false)`
    /// means the caller must wait for space.
    pub fn try_push(&mut self, caller: KernelId, s: StreamId, e: Element) -> Result<bool> {
        let binding = self.prod_binding.get(&s).copied();
        let d = self.streams.get_mut(&s).ok_or(Error::UnknownStream(s))?;
        Self::check_io_state(d)?;
        match d.producer {
            Some(ep) if ep.kernel == caller => {}
            _ => {
                return Err(Error::NotEndpoint {
                    kernel: caller,
                    stream: s,
                    role: "producer",
                })
            }
        }
        if e.element_type() != d.elem_type {
            return Err(Error::TypeMismatch {
                expected: d.elem_type,
                got: e.element_type(),
            });
        }
        let accepted = match binding {
            Some(ci) => {
                let ch = &mut self.channels[ci].1;
                if ch.can_accept(s) {
                    ch.offer(s, e)?;
                    true
                } else {
                    false
                }
            }
            None => {
                if d.buffer.len() < d.depth {
                    d.buffer.push_back(e);
                    true
                } else {
                    false
                }
            }
        };
        if accepted {
            let d = self.streams.get_mut(&s).unwrap();
            d.state = StreamState::Active;
            d.history.push(e);
        }
        Ok(accepted)
    }

    fn check_consumer(d: &StreamDescriptor, caller: KernelId) -> Result<()> {
        Self::check_io_state(d)?;
        match d.consumer {
            Some(ep) if ep.kernel == caller => Ok(()),
            _ => Err(Error::NotEndpoint {
                kernel: caller,
                stream: d.id,
                role: "consumer",
            }),
        }
    }

    /// Non-blocking pop attempt; `Ok(None)` means the caller must wait.
    pub fn try_pop(&mut self, caller: KernelId, s: StreamId) -> Result<Option<Element>> {
        let binding = self.cons_binding.get(&s).copied();
        let d = self.streams.get_mut(&s).ok_or(Error::UnknownStream(s))?;
        Self::check_consumer(d, caller)?;
        match binding {
            Some(ci) => Ok(self.channels[ci].1.take(s)),
            None => Ok(d.buffer.pop_front()),
        }
    }

    /// Non-blocking peek attempt; `Ok(None)` means the caller must wait.
    pub fn try_peek(&mut self, caller: KernelId, s: StreamId) -> Result<Option<Element>> {
        let binding = self.cons_binding.get(&s).copied();
        let d = self.streams.get(&s).ok_or(Error::UnknownStream(s))?;
        Self::check_consumer(d, caller)?;
        match binding {
            Some(ci) => Ok(self.channels[ci].1.peek(s).copied()),
            None => Ok(d.buffer.front().copied()),
        }
    }

    /// Current FIFO occupancy.
    pub fn level(&self, s: StreamId) -> Result<usize> {
        Ok(self.descriptor(s)?.occupancy())
    }

    /// True when a push could currently be accepted.
    pub fn can_push(&self, s: StreamId) -> bool {
        match self.prod_binding.get(&s) {
            Some(ci) => self.channels[*ci].1.can_accept(s),
            None => self
                .streams
                .get(&s)
                .map(|d| d.buffer.len() < d.depth)
                .unwrap_or(false),
        }
    }

    /// True when a pop or peek could currently succeed (an element is in
    /// the buffer or somewhere in flight through a shared channel).
    pub fn can_pop(&self, s: StreamId) -> bool {
        let buffered = self
            .streams
            .get(&s)
            .map(|d| !d.buffer.is_empty())
            .unwrap_or(false);
        let staged_in = self
            .cons_binding
            .get(&s)
            .map(|ci| self.channels[*ci].1.has(s))
            .unwrap_or(false);
        let staged_out = self
            .prod_binding
            .get(&s)
            .map(|ci| self.channels[*ci].1.has(s))
            .unwrap_or(false);
        buffered || staged_in || staged_out
    }

    pub fn free_stream(
        &mut self,
        s: StreamId,
        states: &BTreeMap<KernelId, KernelLifecycle>,
    ) -> Result<()> {
        let finished = |k: KernelId| {
            k == ENV_KERNEL || states.get(&k).copied() == Some(KernelLifecycle::Finished)
        };
        let d = self.descriptor_mut(s)?;
        if d.state == StreamState::Freed {
            return Ok(());
        }
        let done = d
            .producer
            .iter()
            .chain(d.consumer.iter())
            .all(|ep| finished(ep.kernel));
        if !done {
            return Err(Error::EndpointsActive(format!(
                "stream {s} still has unfinished endpoint kernels"
            )));
        }
        d.state = StreamState::Freed;
        d.buffer.clear();
        self.slots_free += 1;
        self.freed += 1;
        Ok(())
    }

    // -- logical-over-physical interleaving ---------------------------------

    /// Bind several logical streams to one physical port. `side` says which
    /// end of the streams shares the port.
    pub fn bind_logical_channels(
        &mut self,
        core: CoreId,
        port: PortIndex,
        side: ChannelSide,
        logical: Vec<StreamId>,
    ) -> Result<()> {
        if logical.is_empty() {
            return Err(Error::Semantic("empty logical stream list".into()));
        }
        for (s2, ch) in &self.channels {
            if ch.core == core && ch.port == port && *s2 == side {
                return Err(Error::PortBound(format!(
                    "core {core} port {port} already carries a channel"
                )));
            }
        }
        let mut bound = Vec::new();
        for s in &logical {
            let d = self.descriptor(*s)?;
            bound.push((*s, d.depth));
        }
        let ch = PhysicalChannel::new(core, port, bound)?;
        let idx = self.channels.len();
        self.channels.push((side, ch));
        for s in logical {
            let map = match side {
                ChannelSide::Producer => &mut self.prod_binding,
                ChannelSide::Consumer => &mut self.cons_binding,
            };
            if map.insert(s, idx).is_some() {
                return Err(Error::PortBound(format!(
                    "stream {s} already bound to a physical channel"
                )));
            }
        }
        Ok(())
    }

    /// Move elements across all shared physical channels: producer-side
    /// staging drains into stream buffers, stream buffers fill consumer-side
    /// staging. Returns how many elements moved.
    pub fn pump_channels(&mut self) -> usize {
        let mut moved = 0;
        for i in 0..self.channels.len() {
            // split borrow: lift the channel out while touching buffers
            let side = self.channels[i].0;
            let dummy = PhysicalChannel::new(0, 0, vec![(StreamId::MAX, 1)]).unwrap();
            let mut ch = std::mem::replace(&mut self.channels[i].1, dummy);
            match side {
                ChannelSide::Producer => {
                    moved += ch.pump_out(|s, e| {
                        let d = self.streams.get_mut(&s).unwrap();
                        if d.buffer.len() < d.depth {
                            d.buffer.push_back(*e);
                            true
                        } else {
                            false
                        }
                    });
                }
                ChannelSide::Consumer => {
                    moved += ch.pump_in(|s| self.streams.get_mut(&s).unwrap().buffer.pop_front());
                }
            }
            self.channels[i].1 = ch;
        }
        moved
    }

    /// Drain terminal streams into their capture logs. Returns per-stream
    /// drained counts so the caller can account the implicit pops.
    pub fn drain_terminals(&mut self) -> Vec<(StreamId, usize)> {
        let ids: Vec<StreamId> = self
            .streams
            .values()
            .filter(|d| d.is_terminal() && !d.buffer.is_empty())
            .map(|d| d.id)
            .collect();
        let mut drained = Vec::new();
        for s in ids {
            let d = self.streams.get_mut(&s).unwrap();
            let n = d.buffer.len();
            let cap = self.captures.entry(s).or_default();
            cap.extend(d.buffer.drain(..));
            drained.push((s, n));
        }
        drained
    }

    pub fn capture(&self, s: StreamId) -> &[Element] {
        self.captures.get(&s).map(|v| v.as_slice()).unwrap_or(&[])
    }

    // -- debug ---------------------------------------------------------------

    /// Everything in flight on the stream, oldest first: consumer staging,
    /// then the buffer, then producer staging.
    pub fn debug_peek(&self, s: StreamId) -> Result<Vec<Element>> {
        let d = self.descriptor(s)?;
        let mut out = Vec::new();
        if let Some(ci) = self.cons_binding.get(&s) {
            out.extend(self.channels[*ci].1.staged(s).copied());
        }
        out.extend(d.buffer.iter().copied());
        if let Some(ci) = self.prod_binding.get(&s) {
            out.extend(self.channels[*ci].1.staged(s).copied());
        }
        Ok(out)
    }

    pub fn render(&self, s: StreamId) -> Result<String> {
        let d = self.descriptor(s)?;
        Ok(format!(
            "stream {} type={} depth={} level={} state={}",
            d.id,
            d.elem_type,
            d.depth,
            d.occupancy(),
            d.state
        ))
    }
}
