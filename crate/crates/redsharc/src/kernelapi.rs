//! Kernel-facing interfaces: the SWKI task harness (cooperative context
//! switching, finish notification), the HWKI model (control registers,
//! status word, logical-channel interleaving), and the kernel registry.

use crate::control::Shared;
use crate::core::{
    BlockId, CoreId, Element, Error, KernelId, KernelLifecycle, PortIndex, Result, StreamId,
};
use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::{Arc, Mutex};

// ---------------------------------------------------------------------------
// Kernel registry

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Sw,
    Hw,
}

pub type KernelBody = dyn Fn(&mut TaskCtx) -> Result<()> + Send + Sync;

pub struct KernelImpl {
    pub name: String,
    pub kind: KernelKind,
    /// Fabric area required when placed in a slot (HW kernels only).
    pub area: u64,
    pub body: Arc<KernelBody>,
}

#[derive(Default)]
pub struct Registry {
    impls: BTreeMap<String, Arc<KernelImpl>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, kind: KernelKind, body: F) -> Result<String>
    where
        F: Fn(&mut TaskCtx) -> Result<()> + Send + Sync + 'static,
    {
        self.register_with_area(name, kind, 1, body)
    }

    pub fn register_hw<F>(&mut self, name: &str, area: u64, body: F) -> Result<String>
    where
        F: Fn(&mut TaskCtx) -> Result<()> + Send + Sync + 'static,
    {
        self.register_with_area(name, KernelKind::Hw, area, body)
    }

    pub fn register_with_area<F>(
        &mut self,
        name: &str,
        kind: KernelKind,
        area: u64,
        body: F,
    ) -> Result<String>
    where
        F: Fn(&mut TaskCtx) -> Result<()> + Send + Sync + 'static,
    {
        if self.impls.contains_key(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        self.impls.insert(
            name.to_string(),
            Arc::new(KernelImpl {
                name: name.to_string(),
                kind,
                area,
                body: Arc::new(body),
            }),
        );
        Ok(name.to_string())
    }

    pub fn resolve(&self, name: &str) -> Option<Arc<KernelImpl>> {
        self.impls.get(name).cloned()
    }
}

// ---------------------------------------------------------------------------
// HWKI control registers and status word

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HwControlReg {
    Start,
    Stop,
    Reset,
}

/// Status word layout: bits[2:0] lifecycle, bits[31:8] kernel debug value.
pub fn encode_status(state: KernelLifecycle, debug: u32) -> u32 {
    state.code() | ((debug & 0x00ff_ffff) << 8)
}

pub fn status_lifecycle(word: u32) -> u32 {
    word & 0x7
}

pub fn status_debug(word: u32) -> u32 {
    (word >> 8) & 0x00ff_ffff
}

// ---------------------------------------------------------------------------
// Logical-over-physical channel interleaving

/// A shared physical port carrying several logical streams. Each logical
/// stream gets its own staging FIFO so a full or empty logical channel never
/// blocks a different one; transfer through the port multiplexes ready
/// queues round-robin in bound order.
pub struct PhysicalChannel {
    pub core: CoreId,
    pub port: PortIndex,
    bound: Vec<StreamId>,
    queues: BTreeMap<StreamId, VecDeque<Element>>,
    caps: BTreeMap<StreamId, usize>,
    cursor: usize,
}

impl PhysicalChannel {
    pub fn new(core: CoreId, port: PortIndex, bound: Vec<(StreamId, usize)>) -> Result<Self> {
        if bound.is_empty() {
            return Err(Error::Semantic(
                "a physical channel needs at least one logical stream".into(),
            ));
        }
        let order: Vec<StreamId> = bound.iter().map(|(s, _)| *s).collect();
        let mut queues = BTreeMap::new();
        let mut caps = BTreeMap::new();
        for (s, cap) in bound {
            queues.insert(s, VecDeque::new());
            caps.insert(s, cap.max(1));
        }
        Ok(Self {
            core,
            port,
            bound: order,
            queues,
            caps,
            cursor: 0,
        })
    }

    pub fn carries(&self, s: StreamId) -> bool {
        self.queues.contains_key(&s)
    }

    pub fn can_accept(&self, s: StreamId) -> bool {
        self.queues[&s].len() < self.caps[&s]
    }

    /// Place an element on the logical stream's staging queue.
    pub fn offer(&mut self, s: StreamId, e: Element) -> Result<()> {
        if !self.can_accept(s) {
            return Err(Error::CapacityExhausted(format!(
                "staging queue for stream {s} is full"
            )));
        }
        self.queues.get_mut(&s).unwrap().push_back(e);
        Ok(())
    }

    pub fn has(&self, s: StreamId) -> bool {
        !self.queues[&s].is_empty()
    }

    pub fn peek(&self, s: StreamId) -> Option<&Element> {
        self.queues[&s].front()
    }

    pub fn take(&mut self, s: StreamId) -> Option<Element> {
        self.queues.get_mut(&s).unwrap().pop_front()
    }

    pub fn staged(&self, s: StreamId) -> impl Iterator<Item = &Element> {
        self.queues[&s].iter()
    }

    /// Drain staged elements through the shared port. Each mux cycle moves
    /// one element from the next ready logical queue whose destination
    /// accepts it; cycles repeat until no queue can make progress.
    pub fn pump_out(&mut self, mut deliver: impl FnMut(StreamId, &Element) -> bool) -> usize {
        let n = self.bound.len();
        let mut moved = 0;
        let mut stuck = 0;
        while stuck < n {
            let s = self.bound[self.cursor % n];
            self.cursor = (self.cursor + 1) % n;
            let q = self.queues.get_mut(&s).unwrap();
            match q.front() {
                Some(e) if deliver(s, e) => {
                    q.pop_front();
                    moved += 1;
                    stuck = 0;
                }
                _ => stuck += 1,
            }
        }
        moved
    }

    /// Fill staging queues from upstream through the shared port, one
    /// element per mux cycle, round-robin over logical streams with room.
    pub fn pump_in(&mut self, mut supply: impl FnMut(StreamId) -> Option<Element>) -> usize {
        let n = self.bound.len();
        let mut moved = 0;
        let mut stuck = 0;
        while stuck < n {
            let s = self.bound[self.cursor % n];
            self.cursor = (self.cursor + 1) % n;
            if self.queues[&s].len() < self.caps[&s] {
                if let Some(e) = supply(s) {
                    self.queues.get_mut(&s).unwrap().push_back(e);
                    moved += 1;
                    stuck = 0;
                    continue;
                }
            }
            stuck += 1;
        }
        moved
    }
}

// ---------------------------------------------------------------------------
// Task harness

/// Why a task yielded back to the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitReason {
    /// Blocked pushing: wake when the stream (or its staging queue) has room.
    StreamSpace(StreamId),
    /// Blocked popping or peeking: wake when an element is available.
    StreamData(StreamId),
    /// Explicit yield; runnable immediately.
    Explicit,
}

pub(crate) enum EngineMsg {
    Yield {
        kernel: KernelId,
        reason: WaitReason,
    },
    Finished {
        kernel: KernelId,
    },
    Failed {
        kernel: KernelId,
        error: Error,
    },
}

/// Per-kernel stream/block handles in DFG port order: input ports
/// ascending, then output ports ascending, filtered by kind. Lengths are
/// the declared element counts from the graph, index-parallel to the
/// handles; the first `stream_inputs`/`block_inputs` handles are inputs.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub streams: Vec<StreamId>,
    pub stream_lengths: Vec<usize>,
    pub stream_inputs: usize,
    pub blocks: Vec<BlockId>,
    pub block_lengths: Vec<usize>,
    pub block_inputs: usize,
}

/// The context handed to a kernel body. All blocking calls suspend the
/// task cooperatively and resume when the engine dispatches it again.
pub struct TaskCtx {
    pub(crate) kernel: KernelId,
    pub(crate) data: TaskData,
    pub(crate) shared: Arc<Mutex<Shared>>,
    pub(crate) resume_rx: Receiver<()>,
    pub(crate) yield_tx: Sender<EngineMsg>,
    pub(crate) finished: bool,
}

enum TryOp<T> {
    Done(T),
    Blocked,
}

impl TaskCtx {
    pub fn kernel(&self) -> KernelId {
        self.kernel
    }

    /// Stream handle for port slot `i` (inputs first, then outputs).
    pub fn stream(&self, i: usize) -> StreamId {
        self.data.streams[i]
    }

    /// Block handle for port slot `i` (inputs first, then outputs).
    pub fn block(&self, i: usize) -> BlockId {
        self.data.blocks[i]
    }

    pub fn streams(&self) -> &[StreamId] {
        &self.data.streams
    }

    pub fn blocks(&self) -> &[BlockId] {
        &self.data.blocks
    }

    /// Declared element count of the stream at slot `i`.
    pub fn stream_len(&self, i: usize) -> usize {
        self.data.stream_lengths[i]
    }

    /// Declared element count of the block at slot `i`.
    pub fn block_len(&self, i: usize) -> usize {
        self.data.block_lengths[i]
    }

    /// (slot, handle, declared length) for each input stream.
    pub fn input_streams(&self) -> Vec<(usize, StreamId, usize)> {
        (0..self.data.stream_inputs)
            .map(|i| (i, self.data.streams[i], self.data.stream_lengths[i]))
            .collect()
    }

    /// (slot, handle, declared length) for each output stream.
    pub fn output_streams(&self) -> Vec<(usize, StreamId, usize)> {
        (self.data.stream_inputs..self.data.streams.len())
            .map(|i| (i, self.data.streams[i], self.data.stream_lengths[i]))
            .collect()
    }

    /// (slot, handle, declared length) for each input block.
    pub fn input_blocks(&self) -> Vec<(usize, BlockId, usize)> {
        (0..self.data.block_inputs)
            .map(|i| (i, self.data.blocks[i], self.data.block_lengths[i]))
            .collect()
    }

    /// (slot, handle, declared length) for each output block.
    pub fn output_blocks(&self) -> Vec<(usize, BlockId, usize)> {
        (self.data.block_inputs..self.data.blocks.len())
            .map(|i| (i, self.data.blocks[i], self.data.block_lengths[i]))
            .collect()
    }

    pub fn stream_elem_type(&self, s: StreamId) -> Result<crate::core::ElementType> {
        let st = self.shared.lock().unwrap();
        st.ssn.descriptor(s).map(|d| d.elem_type)
    }

    pub fn block_elem_type(&self, b: BlockId) -> Result<crate::core::ElementType> {
        let st = self.shared.lock().unwrap();
        st.bsn.descriptor(b).map(|d| d.elem_type)
    }

    fn check_live(&self) -> Result<()> {
        if self.finished {
            Err(Error::KernelFinished(self.kernel))
        } else {
            Ok(())
        }
    }

    fn suspend(&mut self, reason: WaitReason) -> Result<()> {
        self.yield_tx
            .send(EngineMsg::Yield {
                kernel: self.kernel,
                reason,
            })
            .map_err(|_| Error::Aborted)?;
        self.resume_rx.recv().map_err(|_| Error::Aborted)
    }

    fn blocking<T>(
        &mut self,
        reason: WaitReason,
        mut attempt: impl FnMut(&mut Shared, KernelId) -> Result<TryOp<T>>,
    ) -> Result<T> {
        self.check_live()?;
        loop {
            {
                let mut st = self.shared.lock().unwrap();
                match attempt(&mut st, self.kernel)? {
                    TryOp::Done(v) => return Ok(v),
                    TryOp::Blocked => {}
                }
            }
            self.suspend(reason)?;
        }
    }

    /// Push `e` onto stream `s`; suspends while the stream is full.
    pub fn stream_push(&mut self, s: StreamId, e: Element) -> Result<()> {
        self.blocking(WaitReason::StreamSpace(s), |st, k| {
            if st.push_stream(k, s, e)? {
                Ok(TryOp::Done(()))
            } else {
                Ok(TryOp::Blocked)
            }
        })
    }

    /// Pop the oldest element from stream `s`; suspends while empty.
    pub fn stream_pop(&mut self, s: StreamId) -> Result<Element> {
        self.blocking(WaitReason::StreamData(s), |st, k| {
            Ok(match st.pop_stream(k, s)? {
                Some(e) => TryOp::Done(e),
                None => TryOp::Blocked,
            })
        })
    }

    /// Read the oldest element without removing it; suspends while empty.
    pub fn stream_peek(&mut self, s: StreamId) -> Result<Element> {
        self.blocking(WaitReason::StreamData(s), |st, k| {
            Ok(match st.peek_stream(k, s)? {
                Some(e) => TryOp::Done(e),
                None => TryOp::Blocked,
            })
        })
    }

    pub fn stream_level(&self, s: StreamId) -> Result<usize> {
        self.shared.lock().unwrap().ssn.level(s)
    }

    pub fn block_write(&mut self, b: BlockId, index: usize, e: Element) -> Result<()> {
        self.check_live()?;
        let mut st = self.shared.lock().unwrap();
        st.write_block(self.kernel, b, index, e)
    }

    pub fn block_read(&mut self, b: BlockId, index: usize) -> Result<Element> {
        self.check_live()?;
        let mut st = self.shared.lock().unwrap();
        st.read_block(self.kernel, b, index)
    }

    /// Cooperative yield; the task is runnable again on the next pass.
    pub fn yield_now(&mut self) -> Result<()> {
        self.check_live()?;
        self.suspend(WaitReason::Explicit)
    }

    /// Expose a kernel-defined debug value through the HWKI status word.
    pub fn set_debug_status(&mut self, value: u32) -> Result<()> {
        self.check_live()?;
        self.shared
            .lock()
            .unwrap()
            .debug_status
            .insert(self.kernel, value & 0x00ff_ffff);
        Ok(())
    }

    /// Signal completion. Must be the body's last action; the task performs
    /// no stream/block operations afterwards.
    pub fn finish(&mut self) -> Result<()> {
        if self.finished {
            return Err(Error::AlreadyFinished(self.kernel));
        }
        self.finished = true;
        self.yield_tx
            .send(EngineMsg::Finished {
                kernel: self.kernel,
            })
            .map_err(|_| Error::Aborted)?;
        // Park until the engine releases the task; keeps execution strictly
        // one-task-at-a-time even while the body's stack unwinds.
        let _ = self.resume_rx.recv();
        Ok(())
    }
}
