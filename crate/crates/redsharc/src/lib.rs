//! A deterministic runtime for stream/block dataflow applications on
//! reconfigurable systems-on-chip: kernels exchange data over a stream
//! switch network (bounded FIFOs) and a block switch network (random-access
//! memory blocks), orchestrated by a control kernel that schedules a
//! dataflow graph onto processors and fabric slots.

pub mod bsn;
pub mod builtins;
pub mod control;
pub mod core;
pub mod dfg;
pub mod eigenfaces;
pub mod kernelapi;
pub mod perfmon;
pub mod ssn;
pub mod sysio;
