//! Shared identifiers, element typing, and lifecycle enumerations.

use serde::{Deserialize, Serialize};
use std::fmt;

pub type KernelId = u32;
pub type StreamId = u32;
pub type BlockId = u32;
pub type CoreId = u32;
pub type SlotId = u32;
pub type PortIndex = u32;

/// Kernel id reserved for the environment (terminal outputs with no
/// consumer kernel are drained by the runtime itself).
pub const ENV_KERNEL: KernelId = KernelId::MAX;

/// The four machine-word types that flow through streams and blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementType {
    U32,
    U64,
    F32,
    DOUBLE,
}

impl ElementType {
    /// Fixed on-wire width per tag.
    pub fn width_bytes(self) -> usize {
        match self {
            ElementType::U32 | ElementType::F32 => 4,
            ElementType::U64 | ElementType::DOUBLE => 8,
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ElementType::U32 => "U32",
            ElementType::U64 => "U64",
            ElementType::F32 => "F32",
            ElementType::DOUBLE => "DOUBLE",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ElementType {
    type Err = Error;
    fn from_str(s: &str) -> std::result::Result<Self, Error> {
        match s {
            "U32" => Ok(ElementType::U32),
            "U64" => Ok(ElementType::U64),
            "F32" => Ok(ElementType::F32),
            "DOUBLE" => Ok(ElementType::DOUBLE),
            other => Err(Error::Semantic(format!("unknown element type `{other}`"))),
        }
    }
}

/// A typed machine word.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Element {
    U32(u32),
    U64(u64),
    F32(f32),
    Double(f64),
}

impl Element {
    pub fn element_type(&self) -> ElementType {
        match self {
            Element::U32(_) => ElementType::U32,
            Element::U64(_) => ElementType::U64,
            Element::F32(_) => ElementType::F32,
            Element::Double(_) => ElementType::DOUBLE,
        }
    }

    /// The zero value of a type; unwritten block cells read back as this.
    pub fn zero(t: ElementType) -> Element {
        match t {
            ElementType::U32 => Element::U32(0),
            ElementType::U64 => Element::U64(0),
            ElementType::F32 => Element::F32(0.0),
            ElementType::DOUBLE => Element::Double(0.0),
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Element::U32(v) => *v as f64,
            Element::U64(v) => *v as f64,
            Element::F32(v) => *v as f64,
            Element::Double(v) => *v,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::U32(v) => write!(f, "{v}"),
            Element::U64(v) => write!(f, "{v}"),
            Element::F32(v) => write!(f, "{v}"),
            Element::Double(v) => write!(f, "{v}"),
        }
    }
}

pub fn element_width_bytes(t: ElementType) -> usize {
    t.width_bytes()
}

pub fn check_type_match(a: ElementType, b: ElementType) -> bool {
    a == b
}

/// Kernel lifecycle; transitions are monotone in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KernelLifecycle {
    Pending,
    Ready,
    Configured,
    Running,
    Finished,
}

impl KernelLifecycle {
    /// Encoding used in the HWKI status word, bits [2:0].
    pub fn code(self) -> u32 {
        match self {
            KernelLifecycle::Pending => 0,
            KernelLifecycle::Ready => 1,
            KernelLifecycle::Configured => 2,
            KernelLifecycle::Running => 3,
            KernelLifecycle::Finished => 4,
        }
    }
}

impl fmt::Display for KernelLifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KernelLifecycle::Pending => "PENDING",
            KernelLifecycle::Ready => "READY",
            KernelLifecycle::Configured => "CONFIGURED",
            KernelLifecycle::Running => "RUNNING",
            KernelLifecycle::Finished => "FINISHED",
        };
        f.write_str(s)
    }
}

/// Errors shared across the runtime modules.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum Error {
    #[error("CAPACITY_EXHAUSTED: {0}")]
    CapacityExhausted(String),
    #[error("ILLEGAL_ROUTE: {0}")]
    IllegalRoute(String),
    #[error("BUSY: {0}")]
    Busy(String),
    #[error("TYPE_MISMATCH: expected {expected}, got {got}")]
    TypeMismatch {
        expected: ElementType,
        got: ElementType,
    },
    #[error("NOT_ENDPOINT: kernel {kernel} is not the {role} of stream {stream}")]
    NotEndpoint {
        kernel: KernelId,
        stream: StreamId,
        role: &'static str,
    },
    #[error("UNKNOWN_STREAM: {0}")]
    UnknownStream(StreamId),
    #[error("UNKNOWN_BLOCK: {0}")]
    UnknownBlock(BlockId),
    #[error("ENDPOINTS_ACTIVE: {0}")]
    EndpointsActive(String),
    #[error("OUT_OF_MEMORY: {0}")]
    OutOfMemory(String),
    #[error("INDEX_OUT_OF_RANGE: index {index} not below length {length}")]
    IndexOutOfRange { index: usize, length: usize },
    #[error("ACCESS_DENIED: kernel {kernel} has no grant on block {block}")]
    AccessDenied { kernel: KernelId, block: BlockId },
    #[error("DUPLICATE_KERNEL: {0}")]
    DuplicateKernel(KernelId),
    #[error("PORT_OUT_OF_RANGE: {0}")]
    PortOutOfRange(String),
    #[error("REBINDING: {0}")]
    Rebinding(String),
    #[error("CONFIG_MISMATCH: {0}")]
    ConfigMismatch(String),
    #[error("PORT_LIMIT: {0}")]
    PortLimit(String),
    #[error("INCOMPATIBLE_CORE: {0}")]
    IncompatibleCore(String),
    #[error("NO_CAPACITY: {0}")]
    NoCapacity(String),
    #[error("NOT_RUNNING")]
    NotRunning,
    #[error("NOT_PAUSED")]
    NotPaused,
    #[error("ALREADY_FINISHED: kernel {0}")]
    AlreadyFinished(KernelId),
    #[error("KERNEL_FINISHED: kernel {0} attempted I/O after finishing")]
    KernelFinished(KernelId),
    #[error("DUPLICATE_NAME: {0}")]
    DuplicateName(String),
    #[error("NOT_RESIDENT: kernel {0}")]
    NotResident(KernelId),
    #[error("PORT_BOUND: {0}")]
    PortBound(String),
    #[error("NO_CONVERGENCE: {0}")]
    NoConvergence(String),
    #[error("DIMENSION_MISMATCH: {0}")]
    DimensionMismatch(String),
    #[error("K_OUT_OF_RANGE: {0}")]
    KOutOfRange(String),
    #[error("EMPTY_REFERENCES")]
    EmptyReferences,
    #[error("PARSE_ERROR: {0}")]
    Parse(String),
    #[error("SEMANTIC_ERROR: {0}")]
    Semantic(String),
    #[error("IO_FAILURE: {0}")]
    Io(String),
    #[error("task aborted by the control kernel")]
    Aborted,
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_widths_are_fixed() {
        assert_eq!(element_width_bytes(ElementType::DOUBLE), 8);
        assert_eq!(element_width_bytes(ElementType::U32), 4);
        assert_eq!(element_width_bytes(ElementType::F32), 4);
        assert_eq!(element_width_bytes(ElementType::U64), 8);
        for t in [
            ElementType::U32,
            ElementType::U64,
            ElementType::F32,
            ElementType::DOUBLE,
        ] {
            let w = element_width_bytes(t);
            assert!(w == 4 || w == 8);
            assert_eq!(w, element_width_bytes(t));
        }
    }

    #[test]
    fn type_match() {
        assert!(check_type_match(ElementType::DOUBLE, ElementType::DOUBLE));
        assert!(!check_type_match(ElementType::DOUBLE, ElementType::U32));
        assert!(check_type_match(ElementType::U64, ElementType::U64));
    }

    #[test]
    fn lifecycle_order_is_monotone() {
        use KernelLifecycle::*;
        let order = [Pending, Ready, Configured, Running, Finished];
        for w in order.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert_eq!(Finished.code(), 4);
        assert_eq!(Pending.code(), 0);
    }

    #[test]
    fn zero_elements_match_their_type() {
        for t in [
            ElementType::U32,
            ElementType::U64,
            ElementType::F32,
            ElementType::DOUBLE,
        ] {
            assert_eq!(Element::zero(t).element_type(), t);
            assert_eq!(Element::zero(t).as_f64(), 0.0);
        }
    }
}
