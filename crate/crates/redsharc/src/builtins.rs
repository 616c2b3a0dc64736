//! Generic kernel implementations that externally described graphs (the
//! CLI's `--dfg` files) can reference by name. Each body derives its work
//! entirely from the declared port lengths and element types, so one
//! implementation serves any wiring.
//!
//! - `source`: pushes `0..len` onto every output stream and writes `0..len`
//!   into every output block (value = index, in the port's element type).
//! - `sink`: pops every input stream dry and reads every input block fully.
//! - `copy`: forwards input stream `i` to output stream `i` element by
//!   element, and copies input block `i` to output block `i`.
//!
//! `source_hw`, `sink_hw`, and `copy_hw` are fabric-slot variants of the
//! same bodies (area 10 each).

use crate::core::{Element, ElementType, Result};
use crate::kernelapi::{KernelBody, KernelKind, Registry, TaskCtx};
use std::sync::Arc;

pub const BUILTIN_HW_AREA: u64 = 10;

fn element_at(t: ElementType, j: usize) -> Element {
    match t {
        ElementType::U32 => Element::U32(j as u32),
        ElementType::U64 => Element::U64(j as u64),
        ElementType::F32 => Element::F32(j as f32),
        ElementType::DOUBLE => Element::Double(j as f64),
    }
}

fn source_body(ctx: &mut TaskCtx) -> Result<()> {
    for (_, b, len) in ctx.output_blocks() {
        let t = ctx.block_elem_type(b)?;
        for j in 0..len {
            ctx.block_write(b, j, element_at(t, j))?;
        }
    }
    for (_, s, len) in ctx.output_streams() {
        let t = ctx.stream_elem_type(s)?;
        for j in 0..len {
            ctx.stream_push(s, element_at(t, j))?;
        }
    }
    ctx.finish()
}

fn sink_body(ctx: &mut TaskCtx) -> Result<()> {
    for (_, b, len) in ctx.input_blocks() {
        for j in 0..len {
            ctx.block_read(b, j)?;
        }
    }
    for (_, s, len) in ctx.input_streams() {
        for _ in 0..len {
            ctx.stream_pop(s)?;
        }
    }
    ctx.finish()
}

fn copy_body(ctx: &mut TaskCtx) -> Result<()> {
    let inputs = ctx.input_blocks();
    let outputs = ctx.output_blocks();
    for ((_, src, in_len), (_, dst, out_len)) in inputs.iter().zip(&outputs) {
        for j in 0..(*in_len).min(*out_len) {
            let e = ctx.block_read(*src, j)?;
            ctx.block_write(*dst, j, e)?;
        }
    }
    let inputs = ctx.input_streams();
    let outputs = ctx.output_streams();
    for ((_, src, in_len), (_, dst, out_len)) in inputs.iter().zip(&outputs) {
        for _ in 0..(*in_len).min(*out_len) {
            let e = ctx.stream_pop(*src)?;
            ctx.stream_push(*dst, e)?;
        }
    }
    ctx.finish()
}

pub fn builtin_registry() -> Registry {
    let mut reg = Registry::new();
    let bodies: [(&str, Arc<KernelBody>); 3] = [
        ("source", Arc::new(source_body)),
        ("sink", Arc::new(sink_body)),
        ("copy", Arc::new(copy_body)),
    ];
    for (name, body) in bodies {
        let sw = Arc::clone(&body);
        reg.register(name, KernelKind::Sw, move |ctx| sw(ctx))
            .expect("unique builtin names");
        let hw = Arc::clone(&body);
        reg.register_with_area(&format!("{name}_hw"), KernelKind::Hw, BUILTIN_HW_AREA, move |ctx| {
            hw(ctx)
        })
        .expect("unique builtin names");
    }
    reg
}
