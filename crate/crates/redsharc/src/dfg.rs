//! Builder and validator for the application dataflow graph: kernels as
//! nodes, stream/block dependencies as edges, with per-port output
//! declarations. A JSON file format mirrors the programmatic API.

use crate::core::{ElementType, Error, KernelId, PortIndex, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortKind {
    Stream,
    Block,
}

impl fmt::Display for PortKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PortKind::Stream => "stream",
            PortKind::Block => "block",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputDecl {
    pub kind: PortKind,
    pub elem_type: ElementType,
    /// Exact element count the producer will emit (streams) or the block
    /// length; doubles as the termination criterion.
    pub length: usize,
    /// FIFO depth override for stream outputs; config default when unset.
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputBinding {
    pub kind: PortKind,
    pub producer: KernelId,
    pub producer_port: PortIndex,
}

#[derive(Debug, Clone)]
pub struct DfgNode {
    pub kernel: KernelId,
    pub impl_ref: String,
    pub inputs: Vec<Option<InputBinding>>,
    pub outputs: Vec<Option<OutputDecl>>,
}

#[derive(Debug, Clone, Default)]
pub struct Dfg {
    nodes: BTreeMap<KernelId, DfgNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    UnboundPort {
        kernel: KernelId,
        port: PortIndex,
        side: &'static str,
    },
    KindMismatch {
        consumer: KernelId,
        port: PortIndex,
        bound: PortKind,
        declared: PortKind,
    },
    MultipleStreamConsumers {
        producer: KernelId,
        port: PortIndex,
        count: usize,
    },
    BlockCycle {
        kernels: Vec<KernelId>,
    },
    UnresolvedImpl {
        kernel: KernelId,
        impl_ref: String,
    },
    DanglingProducer {
        consumer: KernelId,
        port: PortIndex,
        producer: KernelId,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UnboundPort { kernel, port, side } => {
                write!(f, "UNBOUND_PORT: kernel {kernel} {side} port {port} is unset")
            }
            Diagnostic::KindMismatch {
                consumer,
                port,
                bound,
                declared,
            } => write!(
                f,
                "KIND_MISMATCH: kernel {consumer} input {port} bound as {bound} but producer declares {declared}"
            ),
            Diagnostic::MultipleStreamConsumers {
                producer,
                port,
                count,
            } => write!(
                f,
                "MULTIPLE_STREAM_CONSUMERS: kernel {producer} output {port} has {count} consumers"
            ),
            Diagnostic::BlockCycle { kernels } => {
                write!(f, "BLOCK_CYCLE: kernels {kernels:?} form a block-dependency cycle")
            }
            Diagnostic::UnresolvedImpl { kernel, impl_ref } => {
                write!(f, "UNRESOLVED_IMPL: kernel {kernel} implementation `{impl_ref}` is not registered")
            }
            Diagnostic::DanglingProducer {
                consumer,
                port,
                producer,
            } => write!(
                f,
                "DANGLING_PRODUCER: kernel {consumer} input {port} references missing kernel {producer}"
            ),
        }
    }
}

impl Dfg {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DfgNode> {
        self.nodes.values()
    }

    pub fn node(&self, k: KernelId) -> Option<&DfgNode> {
        self.nodes.get(&k)
    }

    pub fn kernel_ids(&self) -> impl Iterator<Item = KernelId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn init_kernel(
        &mut self,
        k: KernelId,
        impl_ref: &str,
        num_inputs: usize,
        num_outputs: usize,
    ) -> Result<()> {
        if self.nodes.contains_key(&k) {
            return Err(Error::DuplicateKernel(k));
        }
        self.nodes.insert(
            k,
            DfgNode {
                kernel: k,
                impl_ref: impl_ref.to_string(),
                inputs: vec![None; num_inputs],
                outputs: vec![None; num_outputs],
            },
        );
        Ok(())
    }

    fn add_dependency(
        &mut self,
        kind: PortKind,
        consumer: KernelId,
        consumer_port: PortIndex,
        producer: KernelId,
        producer_port: PortIndex,
    ) -> Result<()> {
        let pnode = self
            .nodes
            .get(&producer)
            .ok_or(Error::Semantic(format!("producer kernel {producer} does not exist")))?;
        if (producer_port as usize) >= pnode.outputs.len() {
            return Err(Error::PortOutOfRange(format!(
                "kernel {producer} has no output port {producer_port}"
            )));
        }
        let cnode = self
            .nodes
            .get_mut(&consumer)
            .ok_or(Error::Semantic(format!("consumer kernel {consumer} does not exist")))?;
        let slot = cnode
            .inputs
            .get_mut(consumer_port as usize)
            .ok_or(Error::PortOutOfRange(format!(
                "kernel {consumer} has no input port {consumer_port}"
            )))?;
        if slot.is_some() {
            return Err(Error::Rebinding(format!(
                "kernel {consumer} input {consumer_port} is already bound"
            )));
        }
        *slot = Some(InputBinding {
            kind,
            producer,
            producer_port,
        });
        Ok(())
    }

    pub fn add_stream_dependency(
        &mut self,
        consumer: KernelId,
        consumer_port: PortIndex,
        producer: KernelId,
        producer_port: PortIndex,
    ) -> Result<()> {
        self.add_dependency(PortKind::Stream, consumer, consumer_port, producer, producer_port)
    }

    pub fn add_block_dependency(
        &mut self,
        consumer: KernelId,
        consumer_port: PortIndex,
        producer: KernelId,
        producer_port: PortIndex,
    ) -> Result<()> {
        self.add_dependency(PortKind::Block, consumer, consumer_port, producer, producer_port)
    }

    fn add_output(
        &mut self,
        kind: PortKind,
        k: KernelId,
        port: PortIndex,
        t: ElementType,
        length: usize,
        depth: Option<usize>,
    ) -> Result<()> {
        if length == 0 {
            return Err(Error::Semantic(format!(
                "kernel {k} output {port}: declared length must be at least 1"
            )));
        }
        let node = self
            .nodes
            .get_mut(&k)
            .ok_or(Error::Semantic(format!("kernel {k} does not exist")))?;
        let slot = node
            .outputs
            .get_mut(port as usize)
            .ok_or(Error::PortOutOfRange(format!(
                "kernel {k} has no output port {port}"
            )))?;
        if slot.is_some() {
            return Err(Error::Rebinding(format!(
                "kernel {k} output {port} is already declared"
            )));
        }
        *slot = Some(OutputDecl {
            kind,
            elem_type: t,
            length,
            depth,
        });
        Ok(())
    }

    pub fn add_output_stream(
        &mut self,
        k: KernelId,
        port: PortIndex,
        t: ElementType,
        length: usize,
    ) -> Result<()> {
        self.add_output(PortKind::Stream, k, port, t, length, None)
    }

    pub fn add_output_stream_with_depth(
        &mut self,
        k: KernelId,
        port: PortIndex,
        t: ElementType,
        length: usize,
        depth: usize,
    ) -> Result<()> {
        self.add_output(PortKind::Stream, k, port, t, length, Some(depth))
    }

    pub fn add_output_block(
        &mut self,
        k: KernelId,
        port: PortIndex,
        t: ElementType,
        length: usize,
    ) -> Result<()> {
        self.add_output(PortKind::Block, k, port, t, length, None)
    }

    /// Consumers bound to a given producer output port.
    pub fn consumers_of(
        &self,
        producer: KernelId,
        port: PortIndex,
    ) -> Vec<(KernelId, PortIndex)> {
        let mut out = Vec::new();
        for node in self.nodes.values() {
            for (i, b) in node.inputs.iter().enumerate() {
                if let Some(b) = b {
                    if b.producer == producer && b.producer_port == port {
                        out.push((node.kernel, i as PortIndex));
                    }
                }
            }
        }
        out
    }

    /// Empty iff the graph is fully bound, kinds agree across edges, stream
    /// outputs have at most one consumer, block edges are acyclic, and every
    /// implementation reference resolves.
    pub fn validate(&self, resolve: impl Fn(&str) -> bool) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        for node in self.nodes.values() {
            for (i, b) in node.inputs.iter().enumerate() {
                match b {
                    None => diags.push(Diagnostic::UnboundPort {
                        kernel: node.kernel,
                        port: i as PortIndex,
                        side: "input",
                    }),
                    Some(b) => match self.nodes.get(&b.producer) {
                        None => diags.push(Diagnostic::DanglingProducer {
                            consumer: node.kernel,
                            port: i as PortIndex,
                            producer: b.producer,
                        }),
                        Some(p) => {
                            if let Some(Some(decl)) = p.outputs.get(b.producer_port as usize) {
                                if decl.kind != b.kind {
                                    diags.push(Diagnostic::KindMismatch {
                                        consumer: node.kernel,
                                        port: i as PortIndex,
                                        bound: b.kind,
                                        declared: decl.kind,
                                    });
                                }
                            }
                            // an undeclared producer output is reported as
                            // that producer's own unbound port below
                        }
                    },
                }
            }
            for (i, o) in node.outputs.iter().enumerate() {
                if o.is_none() {
                    diags.push(Diagnostic::UnboundPort {
                        kernel: node.kernel,
                        port: i as PortIndex,
                        side: "output",
                    });
                }
            }
            if !resolve(&node.impl_ref) {
                diags.push(Diagnostic::UnresolvedImpl {
                    kernel: node.kernel,
                    impl_ref: node.impl_ref.clone(),
                });
            }
        }
        // single consumer per stream output (zero means a terminal output
        // captured by the environment)
        for node in self.nodes.values() {
            for (port, decl) in node.outputs.iter().enumerate() {
                if let Some(decl) = decl {
                    if decl.kind == PortKind::Stream {
                        let n = self.consumers_of(node.kernel, port as PortIndex).len();
                        if n > 1 {
                            diags.push(Diagnostic::MultipleStreamConsumers {
                                producer: node.kernel,
                                port: port as PortIndex,
                                count: n,
                            });
                        }
                    }
                }
            }
        }
        if let Some(cycle) = self.find_block_cycle() {
            diags.push(Diagnostic::BlockCycle { kernels: cycle });
        }
        diags
    }

    /// Block-dependency producers of `k` (deduplicated, ascending).
    pub fn block_producers(&self, k: KernelId) -> Vec<KernelId> {
        let mut out = BTreeSet::new();
        if let Some(node) = self.nodes.get(&k) {
            for b in node.inputs.iter().flatten() {
                if b.kind == PortKind::Block {
                    out.insert(b.producer);
                }
            }
        }
        out.into_iter().collect()
    }

    /// Stream-dependency producers of `k` (deduplicated, ascending).
    pub fn stream_producers(&self, k: KernelId) -> Vec<KernelId> {
        let mut out = BTreeSet::new();
        if let Some(node) = self.nodes.get(&k) {
            for b in node.inputs.iter().flatten() {
                if b.kind == PortKind::Stream {
                    out.insert(b.producer);
                }
            }
        }
        out.into_iter().collect()
    }

    fn find_block_cycle(&self) -> Option<Vec<KernelId>> {
        // DFS over block edges producer -> consumer
        let mut color: BTreeMap<KernelId, u8> = BTreeMap::new();
        let mut stack_trace: Vec<KernelId> = Vec::new();

        fn visit(
            g: &Dfg,
            k: KernelId,
            color: &mut BTreeMap<KernelId, u8>,
            trace: &mut Vec<KernelId>,
        ) -> Option<Vec<KernelId>> {
            color.insert(k, 1);
            trace.push(k);
            for node in g.nodes.values() {
                let consumes_block_of_k = node
                    .inputs
                    .iter()
                    .flatten()
                    .any(|b| b.kind == PortKind::Block && b.producer == k);
                if consumes_block_of_k {
                    match color.get(&node.kernel).copied().unwrap_or(0) {
                        0 => {
                            if let Some(c) = visit(g, node.kernel, color, trace) {
                                return Some(c);
                            }
                        }
                        1 => {
                            let pos = trace.iter().position(|x| *x == node.kernel).unwrap_or(0);
                            return Some(trace[pos..].to_vec());
                        }
                        _ => {}
                    }
                }
            }
            trace.pop();
            color.insert(k, 2);
            None
        }

        for k in self.nodes.keys().copied().collect::<Vec<_>>() {
            if color.get(&k).copied().unwrap_or(0) == 0 {
                if let Some(c) = visit(self, k, &mut color, &mut stack_trace) {
                    return Some(c);
                }
            }
        }
        None
    }

    // -- JSON file format ----------------------------------------------------

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DfgFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("DFG file: {e}")))?;
        file.into_dfg()
    }

    pub fn to_json(&self) -> String {
        DfgFile::from_dfg(self).render()
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DfgFile {
    pub kernels: Vec<DfgFileKernel>,
    #[serde(default)]
    pub edges: Vec<DfgFileEdge>,
    #[serde(default)]
    pub outputs: Vec<DfgFileOutput>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DfgFileKernel {
    pub id: KernelId,
    #[serde(rename = "impl")]
    pub impl_name: String,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DfgFileEdge {
    pub kind: PortKind,
    /// producer [kernel, port]
    pub from: [u32; 2],
    /// consumer [kernel, port]
    pub to: [u32; 2],
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DfgFileOutput {
    pub kernel: KernelId,
    pub port: PortIndex,
    pub kind: PortKind,
    #[serde(rename = "type")]
    pub elem_type: ElementType,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
}

impl DfgFile {
    pub fn into_dfg(self) -> Result<Dfg> {
        let mut g = Dfg::new();
        for k in &self.kernels {
            g.init_kernel(k.id, &k.impl_name, k.inputs, k.outputs)?;
        }
        // declare outputs before edges so producer port ranges are known
        for o in &self.outputs {
            g.add_output(o.kind, o.kernel, o.port, o.elem_type, o.length, o.depth)?;
        }
        for e in &self.edges {
            g.add_dependency(e.kind, e.to[0], e.to[1], e.from[0], e.from[1])?;
        }
        Ok(g)
    }

    pub fn from_dfg(g: &Dfg) -> Self {
        let mut kernels = Vec::new();
        let mut edges = Vec::new();
        let mut outputs = Vec::new();
        for node in g.nodes() {
            kernels.push(DfgFileKernel {
                id: node.kernel,
                impl_name: node.impl_ref.clone(),
                inputs: node.inputs.len(),
                outputs: node.outputs.len(),
            });
            for (i, b) in node.inputs.iter().enumerate() {
                if let Some(b) = b {
                    edges.push(DfgFileEdge {
                        kind: b.kind,
                        from: [b.producer, b.producer_port],
                        to: [node.kernel, i as PortIndex],
                    });
                }
            }
            for (i, o) in node.outputs.iter().enumerate() {
                if let Some(o) = o {
                    outputs.push(DfgFileOutput {
                        kernel: node.kernel,
                        port: i as PortIndex,
                        kind: o.kind,
                        elem_type: o.elem_type,
                        length: o.length,
                        depth: o.depth,
                    });
                }
            }
        }
        DfgFile {
            kernels,
            edges,
            outputs,
        }
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("DFG serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn listing2_graph() -> Dfg {
        let mut g = Dfg::new();
        g.init_kernel(2, "K2", 0, 1).unwrap();
        g.init_kernel(3, "K3", 0, 1).unwrap();
        g.init_kernel(4, "HW4", 2, 1).unwrap();
        g.add_output_stream(2, 0, ElementType::DOUBLE, 12).unwrap();
        g.add_output_block(3, 0, ElementType::DOUBLE, 4).unwrap();
        g.add_stream_dependency(4, 0, 2, 0).unwrap();
        g.add_block_dependency(4, 1, 3, 0).unwrap();
        // N=4, totalImages=3 -> declared length 12
        g.add_output_stream(4, 0, ElementType::DOUBLE, 12).unwrap();
        g
    }

    #[test]
    fn kernel4_wiring_matches_declaration() {
        let g = listing2_graph();
        let n4 = g.node(4).unwrap();
        assert_eq!(n4.inputs.len(), 2);
        assert_eq!(n4.outputs.len(), 1);
        assert_eq!(
            n4.inputs[0],
            Some(InputBinding {
                kind: PortKind::Stream,
                producer: 2,
                producer_port: 0
            })
        );
        assert_eq!(
            n4.inputs[1],
            Some(InputBinding {
                kind: PortKind::Block,
                producer: 3,
                producer_port: 0
            })
        );
        let out = n4.outputs[0].unwrap();
        assert_eq!(out.kind, PortKind::Stream);
        assert_eq!(out.elem_type, ElementType::DOUBLE);
        assert_eq!(out.length, 12);
        assert!(g.validate(|_| true).is_empty());
    }

    #[test]
    fn duplicate_kernel_rejected() {
        let mut g = Dfg::new();
        g.init_kernel(4, "HW4", 2, 1).unwrap();
        assert_eq!(
            g.init_kernel(4, "HW4", 2, 1),
            Err(Error::DuplicateKernel(4))
        );
    }

    #[test]
    fn source_node_has_no_inputs() {
        let mut g = Dfg::new();
        g.init_kernel(1, "SRC", 0, 1).unwrap();
        assert!(g.node(1).unwrap().inputs.is_empty());
    }

    #[test]
    fn port_range_and_rebinding_errors() {
        let mut g = listing2_graph();
        assert!(matches!(
            g.add_stream_dependency(4, 5, 2, 0),
            Err(Error::PortOutOfRange(_))
        ));
        assert!(matches!(
            g.add_stream_dependency(4, 0, 2, 0),
            Err(Error::Rebinding(_))
        ));
        assert!(matches!(
            g.add_output_stream(4, 0, ElementType::DOUBLE, 1),
            Err(Error::Rebinding(_))
        ));
        assert!(matches!(
            g.add_output_stream(4, 0, ElementType::DOUBLE, 0),
            Err(Error::Semantic(_))
        ));
    }

    #[test]
    fn unbound_port_detected() {
        let mut g = Dfg::new();
        g.init_kernel(1, "A", 1, 1).unwrap();
        g.add_output_stream(1, 0, ElementType::U32, 1).unwrap();
        let diags = g.validate(|_| true);
        assert!(diags.iter().any(|d| matches!(
            d,
            Diagnostic::UnboundPort { kernel: 1, port: 0, side: "input" }
        )));
    }

    #[test]
    fn kind_mismatch_detected() {
        let mut g = Dfg::new();
        g.init_kernel(1, "A", 0, 1).unwrap();
        g.init_kernel(2, "B", 1, 1).unwrap();
        // bound as block, later declared stream
        g.add_block_dependency(2, 0, 1, 0).unwrap();
        g.add_output_stream(1, 0, ElementType::U32, 4).unwrap();
        g.add_output_stream(2, 0, ElementType::U32, 4).unwrap();
        let diags = g.validate(|_| true);
        assert!(diags.iter().any(|d| matches!(d, Diagnostic::KindMismatch { .. })));
    }

    #[test]
    fn block_cycle_detected() {
        let mut g = Dfg::new();
        g.init_kernel(3, "A", 1, 1).unwrap();
        g.init_kernel(4, "B", 1, 1).unwrap();
        g.add_output_block(3, 0, ElementType::U32, 2).unwrap();
        g.add_output_block(4, 0, ElementType::U32, 2).unwrap();
        g.add_block_dependency(4, 0, 3, 0).unwrap();
        g.add_block_dependency(3, 0, 4, 0).unwrap();
        let diags = g.validate(|_| true);
        assert!(diags.iter().any(|d| matches!(d, Diagnostic::BlockCycle { .. })));
    }

    #[test]
    fn stream_single_consumer_rule_and_block_multi_reader() {
        let mut g = Dfg::new();
        g.init_kernel(1, "A", 0, 2).unwrap();
        g.init_kernel(2, "B", 2, 1).unwrap();
        g.init_kernel(3, "C", 2, 1).unwrap();
        g.add_output_stream(1, 0, ElementType::U32, 4).unwrap();
        g.add_output_block(1, 1, ElementType::U32, 4).unwrap();
        g.add_stream_dependency(2, 0, 1, 0).unwrap();
        g.add_stream_dependency(3, 0, 1, 0).unwrap();
        g.add_block_dependency(2, 1, 1, 1).unwrap();
        g.add_block_dependency(3, 1, 1, 1).unwrap();
        g.add_output_stream(2, 0, ElementType::U32, 4).unwrap();
        g.add_output_stream(3, 0, ElementType::U32, 4).unwrap();
        let diags = g.validate(|_| true);
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::MultipleStreamConsumers { producer: 1, port: 0, .. })));
        assert!(!diags
            .iter()
            .any(|d| matches!(d, Diagnostic::MultipleStreamConsumers { port: 1, .. })));
    }

    #[test]
    fn unresolved_impl_detected() {
        let g = listing2_graph();
        let diags = g.validate(|name| name != "HW4");
        assert_eq!(
            diags,
            vec![Diagnostic::UnresolvedImpl {
                kernel: 4,
                impl_ref: "HW4".into()
            }]
        );
    }

    #[test]
    fn json_round_trip() {
        let g = listing2_graph();
        let text = g.to_json();
        let g2 = Dfg::from_json(&text).unwrap();
        assert_eq!(g2.to_json(), text);
        assert!(g2.validate(|_| true).is_empty());
    }

    #[test]
    fn json_spec_example_parses() {
        let text = r#"{"kernels":[{"id":4,"impl":"HW4","inputs":2,"outputs":1},
                        {"id":2,"impl":"K2","inputs":0,"outputs":1},
                        {"id":3,"impl":"K3","inputs":0,"outputs":1}],
          "edges":[{"kind":"stream","from":[2,0],"to":[4,0]},
                   {"kind":"block","from":[3,0],"to":[4,1]}],
          "outputs":[{"kernel":4,"port":0,"kind":"stream","type":"DOUBLE","length":12},
                     {"kernel":2,"port":0,"kind":"stream","type":"DOUBLE","length":12},
                     {"kernel":3,"port":0,"kind":"block","type":"DOUBLE","length":4}]}"#;
        let g = Dfg::from_json(text).unwrap();
        assert!(g.validate(|_| true).is_empty());
        assert_eq!(g.node(4).unwrap().outputs[0].unwrap().length, 12);
    }
}
