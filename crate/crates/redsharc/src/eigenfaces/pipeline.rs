//! The six-kernel recognition pipeline: a source feeding pixels in, a
//! buffering feeder that exposes the gallery as a block, a mean kernel and
//! a PCA kernel in fabric, a mean-subtraction kernel, and a matcher whose
//! terminal streams carry the recognized subject ids and distances.
//!
//! Kernel ids: 1 source, 2 feeder, 3 mean (HW), 4 diff, 5 pca (HW), 6 match.

use super::dataset::Dataset;
use super::math;
use super::oracle::{component_count, MatchResult};
use crate::control::{run_system, Outcome, RunMode, RunReport, SchedulingPolicy};
use crate::core::{Element, ElementType, Error, KernelId, PortIndex, Result};
use crate::dfg::Dfg;
use crate::kernelapi::{KernelKind, Registry, TaskCtx};
use crate::sysio::{parse_config, SystemConfig};

pub const K_SRC: KernelId = 1;
pub const K_FEED: KernelId = 2;
pub const K_MEAN: KernelId = 3;
pub const K_DIFF: KernelId = 4;
pub const K_PCA: KernelId = 5;
pub const K_MATCH: KernelId = 6;

pub const MEAN_AREA: u64 = 30;
pub const PCA_AREA: u64 = 60;

/// A system the demo runs on out of the box: two processors sharing one
/// fabric slot large enough for the mean and PCA kernels.
pub fn demo_config() -> SystemConfig {
    parse_config(
        r#"{
          "cores": [
            {"id": 0, "kind": "processor", "dmaChannels": 4, "maxResident": 4},
            {"id": 1, "kind": "processor", "dmaChannels": 4, "maxResident": 4},
            {"id": 2, "kind": "fabric_slot", "area": 100, "streamPorts": 4, "blockPorts": 4}
          ],
          "memory": {"onChipWords": 4096, "offChipWords": 1048576}
        }"#,
    )
    .expect("demo config is well formed")
}

pub fn build_dfg(ds: &Dataset) -> Result<Dfg> {
    ds.validate()?;
    let n = ds.pixels_per_image();
    let (gallery, _) = ds.gallery();
    let m = gallery.len();
    let s = ds.samples.len();
    let total = (m + s) * n;
    let k = component_count(m);
    let mut g = Dfg::new();

    g.init_kernel(K_SRC, "efSrc", 0, 1)?;
    g.add_output_stream(K_SRC, 0, ElementType::DOUBLE, total)?;

    g.init_kernel(K_FEED, "efFeed", 1, 2)?;
    g.add_stream_dependency(K_FEED, 0, K_SRC, 0)?;
    g.add_output_block(K_FEED, 0, ElementType::DOUBLE, m * n)?;
    // replayed to the diff kernel, which launches only after the mean kernel
    // finishes; full depth lets the feeder complete without backpressure
    g.add_output_stream_with_depth(K_FEED, 1, ElementType::DOUBLE, total, total)?;

    g.init_kernel(K_MEAN, "efMean", 1, 1)?;
    g.add_block_dependency(K_MEAN, 0, K_FEED, 0)?;
    g.add_output_block(K_MEAN, 0, ElementType::DOUBLE, n)?;

    g.init_kernel(K_DIFF, "efDiff", 2, 1)?;
    g.add_stream_dependency(K_DIFF, 0, K_FEED, 1)?;
    g.add_block_dependency(K_DIFF, 1, K_MEAN, 0)?;
    g.add_output_stream(K_DIFF, 0, ElementType::DOUBLE, total)?;

    g.init_kernel(K_PCA, "efPca", 1, 2)?;
    g.add_stream_dependency(K_PCA, 0, K_DIFF, 0)?;
    g.add_output_block(K_PCA, 0, ElementType::DOUBLE, m * k)?;
    // sample weights; the matcher waits on the weight block, so the stream
    // must hold everything the PCA kernel pushes before it finishes
    g.add_output_stream_with_depth(K_PCA, 1, ElementType::DOUBLE, s * k, (s * k).max(1))?;

    g.init_kernel(K_MATCH, "efMatch", 2, 2)?;
    g.add_block_dependency(K_MATCH, 0, K_PCA, 0)?;
    g.add_stream_dependency(K_MATCH, 1, K_PCA, 1)?;
    g.add_output_stream(K_MATCH, 0, ElementType::U32, s)?;
    g.add_output_stream(K_MATCH, 1, ElementType::DOUBLE, s)?;
    Ok(g)
}

fn pop_f64(ctx: &mut TaskCtx, s: crate::core::StreamId) -> Result<f64> {
    Ok(ctx.stream_pop(s)?.as_f64())
}

pub fn build_registry(ds: &Dataset) -> Result<Registry> {
    ds.validate()?;
    let n = ds.pixels_per_image();
    let (gallery, labels) = ds.gallery();
    let m = gallery.len();
    let s_count = ds.samples.len();
    let total = (m + s_count) * n;
    let k = component_count(m);

    let mut reg = Registry::new();

    let mut all_pixels: Vec<f64> = gallery.iter().flatten().copied().collect();
    all_pixels.extend(ds.samples.iter().flatten().copied());
    reg.register("efSrc", KernelKind::Sw, move |ctx| {
        let out = ctx.stream(0);
        for &v in &all_pixels {
            ctx.stream_push(out, Element::Double(v))?;
        }
        ctx.finish()
    })?;

    reg.register("efFeed", KernelKind::Sw, move |ctx| {
        let input = ctx.stream(0);
        let replay = ctx.stream(1);
        let gallery_block = ctx.block(0);
        let mut buf = Vec::with_capacity(total);
        for _ in 0..total {
            buf.push(pop_f64(ctx, input)?);
        }
        for (j, &v) in buf[..m * n].iter().enumerate() {
            ctx.block_write(gallery_block, j, Element::Double(v))?;
        }
        for &v in &buf {
            ctx.stream_push(replay, Element::Double(v))?;
        }
        ctx.finish()
    })?;

    reg.register_hw("efMean", MEAN_AREA, move |ctx| {
        let gallery_block = ctx.block(0);
        let mean_block = ctx.block(1);
        let mut images = Vec::with_capacity(m);
        for i in 0..m {
            let mut img = Vec::with_capacity(n);
            for j in 0..n {
                img.push(ctx.block_read(gallery_block, i * n + j)?.as_f64());
            }
            images.push(img);
        }
        let mean = math::compute_mean(&images);
        for (j, &v) in mean.iter().enumerate() {
            ctx.block_write(mean_block, j, Element::Double(v))?;
        }
        ctx.finish()
    })?;

    reg.register("efDiff", KernelKind::Sw, move |ctx| {
        let input = ctx.stream(0);
        let out = ctx.stream(1);
        let mean_block = ctx.block(0);
        for _i in 0..(m + s_count) {
            for j in 0..n {
                let tmp0 = ctx.block_read(mean_block, j)?;
                let tmp1 = ctx.stream_pop(input)?;
                let tmp2 = tmp0.as_f64() - tmp1.as_f64();
                ctx.stream_push(out, Element::Double(tmp2))?;
            }
        }
        ctx.finish()
    })?;

    reg.register_hw("efPca", PCA_AREA, move |ctx| {
        let input = ctx.stream(0);
        let weights_out = ctx.stream(1);
        let weights_block = ctx.block(0);
        let mut diffs = Vec::with_capacity(m);
        for _ in 0..m {
            let mut col = Vec::with_capacity(n);
            for _ in 0..n {
                col.push(pop_f64(ctx, input)?);
            }
            diffs.push(col);
        }
        let f = math::svd(&diffs)?;
        let basis = math::select_components(&f, k)?;
        for (i, d) in diffs.iter().enumerate() {
            let w = math::project(&basis, d);
            for (j, &v) in w.iter().enumerate() {
                ctx.block_write(weights_block, i * k + j, Element::Double(v))?;
            }
        }
        for _ in 0..s_count {
            let mut d = Vec::with_capacity(n);
            for _ in 0..n {
                d.push(pop_f64(ctx, input)?);
            }
            let w = math::project(&basis, &d);
            for &v in &w {
                ctx.stream_push(weights_out, Element::Double(v))?;
            }
        }
        ctx.set_debug_status(k as u32)?;
        ctx.finish()
    })?;

    reg.register("efMatch", KernelKind::Sw, move |ctx| {
        let weights_in = ctx.stream(0);
        let subject_out = ctx.stream(1);
        let distance_out = ctx.stream(2);
        let weights_block = ctx.block(0);
        let mut refs = Vec::with_capacity(m);
        for i in 0..m {
            let mut w = Vec::with_capacity(k);
            for j in 0..k {
                w.push(ctx.block_read(weights_block, i * k + j)?.as_f64());
            }
            refs.push(w);
        }
        for _ in 0..s_count {
            let mut w = Vec::with_capacity(k);
            for _ in 0..k {
                w.push(pop_f64(ctx, weights_in)?);
            }
            let (idx, d) = math::classify(&w, &refs)?;
            ctx.stream_push(subject_out, Element::U32(labels[idx]))?;
            ctx.stream_push(distance_out, Element::Double(d))?;
        }
        ctx.finish()
    })?;

    Ok(reg)
}

/// Recognition results from a finished run's terminal captures.
pub fn extract_results(report: &RunReport) -> Result<Vec<MatchResult>> {
    if report.outcome != Outcome::Completed {
        return Err(Error::Semantic(format!(
            "pipeline run ended in {}: {}",
            report.outcome,
            report.diagnostics.join("; ")
        )));
    }
    let subjects = report
        .outputs
        .get(&(K_MATCH, 0 as PortIndex))
        .ok_or(Error::Semantic("missing subject output capture".into()))?;
    let distances = report
        .outputs
        .get(&(K_MATCH, 1 as PortIndex))
        .ok_or(Error::Semantic("missing distance output capture".into()))?;
    if subjects.len() != distances.len() {
        return Err(Error::Semantic("capture length mismatch".into()));
    }
    Ok(subjects
        .iter()
        .zip(distances)
        .map(|(s, d)| MatchResult {
            subject: match s {
                Element::U32(v) => *v,
                other => other.as_f64() as u32,
            },
            distance: d.as_f64(),
        })
        .collect())
}

pub fn run_pipeline(
    cfg: &SystemConfig,
    ds: &Dataset,
    policy: Box<dyn SchedulingPolicy>,
    mode: RunMode,
) -> Result<(Vec<MatchResult>, RunReport)> {
    let dfg = build_dfg(ds)?;
    let registry = build_registry(ds)?;
    let report = run_system(cfg, dfg, &registry, policy, mode)?;
    let results = extract_results(&report)?;
    Ok((results, report))
}

#[cfg(test)]
mod tests {
    use super::super::dataset::generate_synthetic_dataset;
    use super::super::oracle::sequential_oracle;
    use super::*;
    use crate::control::policy_fifo;

    #[test]
    fn dfg_validates_against_registry() {
        let ds = generate_synthetic_dataset(1, 3, 2, 1, 4, 4);
        let g = build_dfg(&ds).unwrap();
        let reg = build_registry(&ds).unwrap();
        assert!(g.validate(|name| reg.resolve(name).is_some()).is_empty());
    }

    #[test]
    fn small_pipeline_matches_oracle_exactly() {
        let ds = generate_synthetic_dataset(9, 4, 3, 2, 6, 6);
        let (results, report) =
            run_pipeline(&demo_config(), &ds, policy_fifo(), RunMode::Analysis).unwrap();
        let expected = sequential_oracle(&ds).unwrap();
        assert_eq!(results.len(), expected.len());
        for (got, want) in results.iter().zip(&expected) {
            assert_eq!(got.subject, want.subject);
            assert_eq!(got.distance.to_bits(), want.distance.to_bits());
        }
        assert_eq!(report.streams_created, report.streams_freed);
        assert_eq!(report.blocks_allocated, report.blocks_freed);
        assert_eq!(report.on_chip_used, 0);
        assert_eq!(report.off_chip_used, 0);
    }

    #[test]
    fn pipeline_recovers_ground_truth() {
        let ds = generate_synthetic_dataset(21, 5, 3, 2, 8, 8);
        let (results, _) =
            run_pipeline(&demo_config(), &ds, policy_fifo(), RunMode::Release).unwrap();
        for (r, truth) in results
            .iter()
            .zip(super::super::dataset::synthetic_truth(5, 2))
        {
            assert_eq!(r.subject, truth);
        }
    }
}
