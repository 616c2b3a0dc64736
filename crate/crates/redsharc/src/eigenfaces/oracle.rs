//! Sequential reference implementation of the recognition flow. It applies
//! exactly the arithmetic the pipeline kernels perform — including the
//! `mean - image` subtraction order — so a correct pipeline reproduces its
//! results bit for bit.

use super::dataset::Dataset;
use super::math;
use crate::core::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub subject: u32,
    pub distance: f64,
}

pub fn component_count(gallery_size: usize) -> usize {
    (gallery_size.saturating_sub(1)).min(8).max(1)
}

pub fn sequential_oracle(ds: &Dataset) -> Result<Vec<MatchResult>> {
    ds.validate()?;
    let (gallery, labels) = ds.gallery();
    let mean = math::compute_mean(&gallery);
    let diffs: Vec<Vec<f64>> = gallery
        .iter()
        .map(|img| math::mean_subtract(&mean, img))
        .collect();
    let f = math::svd(&diffs)?;
    let k = component_count(gallery.len());
    let basis = math::select_components(&f, k)?;
    let ref_weights: Vec<Vec<f64>> = diffs.iter().map(|d| math::project(&basis, d)).collect();
    let mut out = Vec::with_capacity(ds.samples.len());
    for sample in &ds.samples {
        let d = math::mean_subtract(&mean, sample);
        let w = math::project(&basis, &d);
        let (idx, distance) = math::classify(&w, &ref_weights)?;
        out.push(MatchResult {
            subject: labels[idx],
            distance,
        });
    }
    Ok(out)
}
